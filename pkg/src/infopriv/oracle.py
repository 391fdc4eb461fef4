"""Exact computations on finite distributions.

Everything here works on explicit probability tables: the joint law of the
observations and both hypotheses, the law of the sensor messages induced by
a mapping, Bayes errors, the minimum average of Type I and Type II errors,
the tail-mass constants ``c`` and ``c'`` and the privacy budgets derived from
them.  These functions serve as test oracles and back the ``certify`` report.

Label conventions: the public hypothesis H takes values ``(-1, +1)``; the
private hypothesis G takes ``(-1, +1)`` when binary and ``0..m-1`` otherwise.
Columns of every table follow the order of ``g_values``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import entr

from .exceptions import BudgetTooLarge, SupportMismatch, SupportTooLarge
from .kernels import PrivacyMapping, enumerate_messages
from .losses import get_loss

__all__ = [
    "JointModel",
    "MessageJoint",
    "PrivacyCertificate",
    "induced_joint",
    "bayes_error",
    "conditionals",
    "min_risk_R",
    "compute_c",
    "compute_c_prime",
    "budget_exact",
    "budget_weak",
    "binary_entropy",
    "fano_risk_bound",
    "posterior_ratio_extremes",
    "estimate_epsilon_hat",
    "table1_joint",
    "mapping_errors",
    "population_normalized_risk",
]

MAX_INDUCED_SUPPORT = 2**20
MASS_TOL = 1e-12
TIE_TOL = 1e-12


@dataclass
class JointModel:
    """Law of ``(X^1..X^s, H, G)`` with sensors independent given ``(H, G)``.

    ``prior[h, g]`` is ``p(H, G)`` with ``h`` indexing ``(-1, +1)`` and ``g``
    indexing ``g_values``; ``emissions[t, h, g, x - 1]`` is
    ``p(X^t = x | H, G)``.
    """

    prior: np.ndarray
    emissions: np.ndarray
    g_values: tuple = (-1, 1)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.prior = np.asarray(self.prior, dtype=float)
        self.emissions = np.asarray(self.emissions, dtype=float)
        self.g_values = tuple(int(g) for g in self.g_values)
        if self.prior.shape != (2, len(self.g_values)):
            raise ValueError("prior must have shape (2, number of G values)")
        if self.emissions.shape[1:3] != self.prior.shape:
            raise ValueError("emissions must have shape (s, 2, m, |X|)")
        if np.any(self.prior < 0) or np.any(self.emissions < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(self.prior.sum() - 1.0) > MASS_TOL:
            raise ValueError("prior does not sum to one")
        if np.any(np.abs(self.emissions.sum(axis=3) - 1.0) > MASS_TOL):
            raise ValueError("every emission row must sum to one")
        if np.any(self.p_G <= 0):
            raise ValueError("every private class needs positive prior mass")

    @property
    def s(self) -> int:
        return self.emissions.shape[0]

    @property
    def x_card(self) -> int:
        return self.emissions.shape[3]

    @property
    def m(self) -> int:
        return len(self.g_values)

    @property
    def p_H(self) -> np.ndarray:
        return self.prior.sum(axis=1)

    @property
    def p_G(self) -> np.ndarray:
        return self.prior.sum(axis=0)

    def g_index(self, gs) -> np.ndarray:
        lookup = {g: k for k, g in enumerate(self.g_values)}
        return np.array([lookup[int(g)] for g in np.ravel(gs)])

    def dense(self, limit: int = MAX_INDUCED_SUPPORT):
        """``(p[x, h, g], xs)`` over every observation vector (1-based)."""
        return induced_joint(PrivacyMapping.identity(self.s, self.x_card), self, limit).astuple()

    def sample(self, n: int, rng):
        """Draw ``(xs, hs, gs)``; ``xs`` is 1-based with shape ``(n, s)``."""
        flat = rng.choice(self.prior.size, size=n, p=self.prior.ravel())
        hi, gi = np.unravel_index(flat, self.prior.shape)
        cum = np.cumsum(self.emissions[:, hi, gi], axis=2)  # (s, n, |X|)
        u = rng.random((self.s, n, 1))
        xs = np.minimum((u > cum).sum(axis=2), self.x_card - 1).T + 1
        hs = np.where(hi == 1, 1, -1)
        gs = np.asarray(self.g_values)[gi]
        return xs, hs, gs

    def to_dict(self) -> dict:
        return {
            "prior": self.prior.tolist(),
            "emissions": self.emissions.tolist(),
            "g_values": list(self.g_values),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JointModel":
        return cls(
            np.array(d["prior"]),
            np.array(d["emissions"]),
            tuple(d["g_values"]),
            dict(d.get("meta", {})),
        )


@dataclass
class MessageJoint:
    """``p[k, h, g]`` over message vectors ``zs[k]`` (1-based)."""

    p: np.ndarray
    zs: np.ndarray
    g_values: tuple

    @property
    def p_zh(self) -> np.ndarray:
        return self.p.sum(axis=2)

    @property
    def p_zg(self) -> np.ndarray:
        return self.p.sum(axis=1)

    def astuple(self):
        return self.p, self.zs


def induced_joint(Q: PrivacyMapping, jm: JointModel, limit: int = MAX_INDUCED_SUPPORT) -> MessageJoint:
    """Exact law of ``(Z, H, G)`` when each sensor applies its table of ``Q``."""
    if Q.s != jm.s or Q.x_card != jm.x_card:
        raise ValueError("mapping and joint model disagree on s or |X|")
    if Q.z_card**Q.s > limit:
        raise SupportTooLarge(f"|Z|^s = {Q.z_card ** Q.s} exceeds {limit}")
    zs = enumerate_messages(Q.s, Q.z_card)
    # r[t, h, g, z] = sum_x Q^t(z | x) p_t(x | h, g)
    r = np.einsum("thgx,txz->thgz", jm.emissions, Q.tables)
    p = np.broadcast_to(jm.prior, (zs.shape[0],) + jm.prior.shape).copy()
    for t in range(Q.s):
        p *= np.moveaxis(r[t][:, :, zs[:, t] - 1], 2, 0)
    return MessageJoint(p, zs, jm.g_values)


def bayes_error(pzl) -> float:
    """Minimum error probability ``sum_z (p(z) - max_l p(z, l))``."""
    pzl = np.asarray(pzl, dtype=float)
    pzl = pzl.reshape(pzl.shape[0], -1)
    return float(np.sum(pzl.sum(axis=1) - pzl.max(axis=1)))


def conditionals(pzg) -> np.ndarray:
    """Columns ``p(z | g)`` from a joint table ``p(z, g)``."""
    pzg = np.asarray(pzg, dtype=float)
    mass = pzg.sum(axis=0)
    if np.any(mass <= 0):
        raise ValueError("every label needs positive mass")
    return pzg / mass


def _check_common_support(cond) -> np.ndarray:
    pos = cond > 0
    if not np.all(pos.all(axis=1) == pos.any(axis=1)):
        raise SupportMismatch("conditionals do not share a common support")
    return pos.all(axis=1)


def min_risk_R(pzg) -> float:
    """Smallest average of Type I and Type II errors over all detectors.

    ``pzg`` holds the conditionals ``[p(z | -1), p(z | +1)]`` as columns.
    The optimal detector declares ``+1`` on ``{p(z|1) >= p(z|-1)}``.
    """
    cond = np.asarray(pzg, dtype=float)
    _check_common_support(cond)
    p0, p1 = cond[:, 0], cond[:, 1]
    gamma = p1 >= p0
    return float(0.5 - 0.5 * np.sum(p1[gamma] - p0[gamma]))


def _tail_masses(p0, p1) -> float:
    ell = p1 / p0
    lo, hi = ell.min(), ell.max()
    at_min = np.abs(ell - lo) <= TIE_TOL * max(abs(lo), 1e-300)
    at_max = np.abs(ell - hi) <= TIE_TOL * max(abs(hi), 1e-300)
    return float(min(p0[at_min].sum(), p1[at_max].sum()))


def compute_c(pzg) -> float:
    """``min(P(l = min l | G=-1), P(l = max l | G=1))`` for ``l = p(z|1)/p(z|-1)``."""
    cond = np.asarray(pzg, dtype=float)
    support = _check_common_support(cond)
    return _tail_masses(cond[support, 0], cond[support, 1])


def compute_c_prime(cond) -> float:
    """Minimum of the pairwise constants between class ``0`` and each ``g >= 1``."""
    cond = np.asarray(cond, dtype=float)
    support = _check_common_support(cond)
    return min(
        _tail_masses(cond[support, 0], cond[support, g]) for g in range(1, cond.shape[1])
    )


@dataclass(frozen=True)
class PrivacyCertificate:
    theta: float
    c: float
    epsilon: float
    kind: str
    delta: float | None = None

    def __float__(self) -> float:
        return float(self.epsilon)

    def record(self) -> dict:
        """Flat record with a digest of the inputs that produced it."""
        out = asdict(self)
        inputs = json.dumps(
            [repr(self.theta), repr(self.c), self.kind, repr(self.delta)]
        ).encode()
        out["inputs_digest"] = hashlib.sha256(inputs).hexdigest()[:16]
        return out


def _log_ratio(c: float, den: float) -> float:
    # den <= c whenever theta <= 1/2; the clamp only absorbs rounding
    return max(float(np.log(c / den)), 0.0) if den > 0 else float("inf")


def budget_exact(theta: float, c: float, mary: bool = False) -> PrivacyCertificate:
    """``log(c / (c + 2 theta - 1)_+)``, doubled for an m-ary hypothesis."""
    eps = _log_ratio(c, c + 2.0 * theta - 1.0)
    return PrivacyCertificate(
        theta, c, 2.0 * eps if mary else eps, "mary_thm2" if mary else "exact_prop1"
    )


def budget_weak(theta, delta, loss, c, mary: bool = False) -> PrivacyCertificate:
    """Budget holding with probability ``1 - delta`` for a surrogate-risk level.

    The m-ary form uses the same factor 2 as :func:`budget_exact`.
    """
    spec = get_loss(loss)
    gap = max(spec.phi_at_zero - theta + delta, 0.0)
    eps = _log_ratio(c, c - 2.0 * spec.a * gap ** (1.0 / spec.r))
    kind = "mary_weak_thm3" if mary else "weak_thm1"
    return PrivacyCertificate(theta, c, 2.0 * eps if mary else eps, kind, delta)


def binary_entropy(theta):
    """Entropy in nats of a Bernoulli(theta) variable."""
    out = entr(np.asarray(theta, dtype=float)) + entr(1.0 - np.asarray(theta, dtype=float))
    return out if out.ndim else float(out)


def fano_risk_bound(epsilon: float, priors) -> float:
    """Lower bound on the minimum average error implied by budget ``epsilon``.

    Finds the largest ``theta`` in ``[0, 1/2]`` with
    ``H(theta) <= H(G) - epsilon`` and returns ``theta / (2 max p_G)``.
    """
    priors = np.asarray(priors, dtype=float)
    priors = priors[priors > 0]
    h_g = float(-np.sum(priors * np.log(priors)))
    if epsilon > h_g + 1e-15:
        raise BudgetTooLarge(f"epsilon={epsilon} exceeds H(G)={h_g}")
    target = h_g - epsilon
    if target >= np.log(2.0):
        theta = 0.5
    elif target <= 0:
        theta = 0.0
    else:
        theta = brentq(lambda x: binary_entropy(x) - target, 0.0, 0.5, xtol=1e-15)
    return float(theta / (2.0 * priors.max()))


def posterior_ratio_extremes(pzg) -> float:
    """Smallest ``eps`` with ``|log p(g|z)/p(g)| <= eps`` wherever ``p(z) > 0``."""
    pzg = np.asarray(pzg, dtype=float)
    pz = pzg.sum(axis=1)
    pg = pzg.sum(axis=0)
    rows = pzg[pz > 0][:, pg > 0]
    if np.any(rows == 0):
        return float("inf")
    ratio = rows / (pz[pz > 0][:, None] * pg[pg > 0][None, :])
    return float(np.max(np.abs(np.log(ratio))))


def estimate_epsilon_hat(gs, zs) -> float:
    """Plug-in budget ``max |log p(g,z) / (p(g) p(z))|`` over observed cells."""
    gs = np.asarray(gs)
    zs = np.asarray(zs)
    if gs.shape[0] == 0:
        raise ValueError("need at least one sample")
    zkeys = zs.reshape(zs.shape[0], -1) if zs.ndim > 1 else zs[:, None]
    _, zi = np.unique(zkeys, axis=0, return_inverse=True)
    _, gi = np.unique(gs, return_inverse=True)
    counts = np.zeros((zi.max() + 1, gi.max() + 1))
    np.add.at(counts, (zi.ravel(), gi.ravel()), 1.0)
    n = counts.sum()
    pz = counts.sum(axis=1, keepdims=True) / n
    pg = counts.sum(axis=0, keepdims=True) / n
    seen = counts > 0
    ratio = (counts / n) / (pz * pg)
    return float(np.max(np.abs(np.log(ratio[seen]))))


def table1_joint(p_minus: float, d: float) -> np.ndarray:
    """Two-message joint ``p(z, g)``; columns ``g = -1, +1``, rows ``z1, z2``."""
    if not 0 < p_minus < 0.5:
        raise ValueError("need 0 < p_G(-1) < 1/2")
    if d < 1:
        raise ValueError("d must be at least 1")
    return np.array(
        [[p_minus / d, 1.0 - 2.0 * p_minus], [(1.0 - 1.0 / d) * p_minus, p_minus]]
    )


def mapping_errors(Q: PrivacyMapping, jm: JointModel) -> dict:
    """Bayes errors for H and G plus privacy quantities of the induced law."""
    mj = induced_joint(Q, jm)
    pzg = mj.p_zg
    out = {
        "error_H": bayes_error(mj.p_zh),
        "error_G": bayes_error(pzg),
        "epsilon": posterior_ratio_extremes(pzg),
    }
    cond = conditionals(pzg)
    try:
        if jm.m == 2:
            out["min_risk_R"] = min_risk_R(cond)
            out["c"] = compute_c(cond)
        else:
            out["c_prime"] = compute_c_prime(cond)
    except SupportMismatch:
        pass
    return out


def population_normalized_risk(weights, Q: PrivacyMapping, jm: JointModel, loss) -> float:
    """``1/2 sum_g E[phi(g <w, Phi_Q(X)>) | G = g]`` for a binary private label.

    ``weights[t, z - 1]`` are the message-space coordinates of ``w`` under the
    count kernel, so ``<w, Phi_Q(x)> = sum_t sum_z weights[t, z] Q^t(z | x^t)``.
    """
    if jm.g_values != (-1, 1):
        raise ValueError("the normalized risk is defined for a binary private label")
    spec = get_loss(loss)
    p, xs = jm.dense()
    margins = np.einsum("nsz,sz->n", Q.rows(xs), np.asarray(weights, dtype=float))
    p_xg = p.sum(axis=1)
    cond = p_xg / p_xg.sum(axis=0)
    return float(0.5 * (cond[:, 0] @ spec.phi(-margins) + cond[:, 1] @ spec.phi(margins)))
