"""Regularized empirical risks, their duals, and gradients.

All risks share one weighted form.  For labels ``y_i`` in {-1, +1}, weights
``c_i`` and regularizer ``reg`` the primal is

    P(w) = sum_i c_i phi(y_i <w, Phi_Q(x_i)>) + reg/2 ||w||^2

and its dual in ``v`` (one entry per sample) is

    D(v) = -sum_i c_i psi(v_i / c_i) - 1/(2 reg) sum_ij v_i v_j y_i y_j K_Q(x_i, x_j)

with ``psi(x) = phi^*(-x)``.  The optimal primal point is
``w = (1/reg) sum_i v_i y_i Phi_Q(x_i)``.  The public H-risk uses
``c_i = 1/n`` and ``reg = lam``; the class-normalized G-risk uses
``c_i = 1 / (2 |S_{g_i}|)`` and ``reg = lam_n``.

With the count kernel every quadratic form factorizes per sensor:
``v' (yy' * K) v = sum_t || A_t' Q^t ||^2`` where ``A_t[x]`` sums ``v_i y_i``
over the samples with ``x_i^t = x``.  Solvers use this form and never build
the Gram matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, LengthMismatch, UnsupportedKernel
from .kernels import KernelSpec, PrivacyMapping, cross_gram_Q, gram_Q, parse_kernel
from .losses import LossSpec, get_loss

__all__ = [
    "TrainingSet",
    "RiskConfig",
    "DualTerm",
    "h_term",
    "g_term",
    "g_pair_term",
    "g_bayes_term",
    "private_terms",
    "quad_form",
    "dual_value",
    "dual_gradient",
    "primal_value",
    "dual_risk_G",
    "dual_risk_H",
    "primal_risk_H",
    "primal_risk_G",
    "grad_dual",
    "dual_block_gradient",
    "AnchoredExpansion",
    "anchored_primal",
    "barrier_objective",
    "f0_block_gradient",
    "grad_Q_sensor",
]


@dataclass
class TrainingSet:
    """Labeled observations ``(x_i, h_i, g_i)``.

    ``xs`` holds 1-based observation values, ``hs`` is in {-1, +1} and ``gs``
    is either binary in {-1, +1} or m-ary in {0, ..., m - 1}.
    """

    xs: np.ndarray
    hs: np.ndarray
    gs: np.ndarray
    x_card: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=int))
        self.hs = np.asarray(self.hs, dtype=int).ravel()
        self.gs = np.asarray(self.gs, dtype=int).ravel()
        n = self.xs.shape[0]
        if self.hs.shape[0] != n or self.gs.shape[0] != n:
            raise LengthMismatch("xs, hs and gs must have the same length")
        if n == 0:
            raise ValueError("training set is empty")
        if self.xs.min() < 1:
            raise ValueError("observations must be 1-based positive integers")
        if self.x_card is None:
            self.x_card = int(self.xs.max())
        elif self.xs.max() > self.x_card:
            raise ValueError("observation exceeds the declared alphabet size")
        if not np.all(np.isin(self.hs, (-1, 1))):
            raise ValueError("public labels must lie in {-1, +1}")
        if not self.is_binary_private and self.gs.min() < 0:
            raise ValueError("m-ary private labels must lie in {0, ..., m-1}")

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def s(self) -> int:
        return self.xs.shape[1]

    @property
    def is_binary_private(self) -> bool:
        return bool(np.all(np.isin(self.gs, (-1, 1))))

    @property
    def private_classes(self) -> np.ndarray:
        return np.unique(self.gs)

    @property
    def m(self) -> int:
        return 2 if self.is_binary_private else int(self.gs.max()) + 1

    def class_index_sets(self) -> dict[int, np.ndarray]:
        return {int(g): np.flatnonzero(self.gs == g) for g in self.private_classes}

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx)
        return TrainingSet(
            self.xs[idx], self.hs[idx], self.gs[idx], self.x_card, dict(self.meta)
        )


@dataclass(frozen=True)
class RiskConfig:
    """Regularization, loss and kernel.  ``None`` weights resolve from ``n``:
    ``lam = 1/n`` and ``lam_n = n**-0.5``."""

    lam: float | None = None
    lam_n: float | None = None
    loss: str = "logistic"
    kernel: str = "count"

    def __post_init__(self):
        for name in ("lam", "lam_n"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def loss_spec(self) -> LossSpec:
        return get_loss(self.loss)

    @property
    def kernel_spec(self) -> KernelSpec:
        return parse_kernel(self.kernel)

    def resolve(self, n: int) -> tuple[float, float]:
        lam = self.lam if self.lam is not None else 1.0 / n
        lam_n = self.lam_n if self.lam_n is not None else n ** -0.5
        return float(lam), float(lam_n)


@dataclass(frozen=True)
class DualTerm:
    """One weighted risk restricted to the rows ``idx`` of a training set."""

    idx: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    reg: float

    def box(self, loss: LossSpec, inset: float = 0.0):
        """Per-entry bounds for ``v``; ``inset`` keeps clear of open ends."""
        lo, hi = loss.dual_domain
        if loss.smooth_dual:
            lo = lo + inset if np.isfinite(lo) else lo
            hi = hi - inset if np.isfinite(hi) else hi
        return self.weight * lo, self.weight * hi

    def start(self, loss: LossSpec) -> np.ndarray:
        return self.weight * loss.dual_start


def h_term(ts: TrainingSet, cfg: RiskConfig) -> DualTerm:
    lam, _ = cfg.resolve(ts.n)
    return DualTerm(
        np.arange(ts.n), ts.hs.astype(float), np.full(ts.n, 1.0 / ts.n), lam
    )


def _normalized_weights(y: np.ndarray) -> np.ndarray:
    counts = {lab: int(np.sum(y == lab)) for lab in (-1, 1)}
    if min(counts.values()) == 0:
        raise ValueError("both private classes must be present")
    return np.array([1.0 / (2 * counts[int(lab)]) for lab in y])


def g_term(ts: TrainingSet, cfg: RiskConfig) -> DualTerm:
    """Class-normalized risk for a binary private hypothesis."""
    if not ts.is_binary_private:
        raise ValueError("g_term needs binary private labels; use g_pair_term")
    _, lam_n = cfg.resolve(ts.n)
    y = ts.gs.astype(float)
    return DualTerm(np.arange(ts.n), y, _normalized_weights(y), lam_n)


def g_pair_term(ts: TrainingSet, cfg: RiskConfig, g: int) -> DualTerm:
    """Normalized risk separating class ``0`` from class ``g`` (m-ary case)."""
    _, lam_n = cfg.resolve(ts.n)
    idx = np.flatnonzero((ts.gs == 0) | (ts.gs == g))
    y = np.where(ts.gs[idx] == 0, -1.0, 1.0)
    return DualTerm(idx, y, _normalized_weights(y), lam_n)


def g_bayes_term(ts: TrainingSet, cfg: RiskConfig) -> DualTerm:
    """Unnormalized risk ``(1/n) sum phi(g_i <w, Phi>) + lam/2 ||w||^2``."""
    if not ts.is_binary_private:
        raise ValueError("the Bayes-error metric is defined for binary G only")
    lam, _ = cfg.resolve(ts.n)
    return DualTerm(
        np.arange(ts.n), ts.gs.astype(float), np.full(ts.n, 1.0 / ts.n), lam
    )


def private_terms(ts: TrainingSet, cfg: RiskConfig, metric: str = "normalized"):
    """All privacy-constraint terms: one for binary G, ``m - 1`` otherwise."""
    if metric == "bayes":
        return [g_bayes_term(ts, cfg)]
    if ts.is_binary_private:
        return [g_term(ts, cfg)]
    return [g_pair_term(ts, cfg, g) for g in range(1, ts.m)]


def _sensor_sums(u, xs, x_card) -> np.ndarray:
    """``A[t, x - 1] = sum_{i : x_i^t = x} u_i``."""
    s = xs.shape[1]
    out = np.empty((s, x_card))
    for t in range(s):
        out[t] = np.bincount(xs[:, t] - 1, weights=u, minlength=x_card)
    return out


def _require_count(kernel: KernelSpec):
    if kernel.kind != "count":
        raise UnsupportedKernel("per-sensor updates need the count kernel")


def quad_form(u, xs, Q: PrivacyMapping, kernel, gram=None) -> float:
    """``u' K_Q u`` over the rows ``xs``."""
    kernel = parse_kernel(kernel)
    if gram is not None:
        return float(u @ gram @ u)
    if kernel.kind == "count":
        m = np.einsum("tx,txz->tz", _sensor_sums(u, xs, Q.x_card), Q.tables)
        return float(np.sum(m * m))
    return float(u @ gram_Q(xs, Q, kernel) @ u)


def _check_box(x: np.ndarray, loss: LossSpec):
    if not loss.in_domain(x):
        raise DomainError(f"dual iterate leaves the {loss.name} dual domain")


def dual_value(v, term: DualTerm, ts: TrainingSet, Q, loss, kernel, gram=None):
    loss = get_loss(loss)
    v = np.asarray(v, dtype=float)
    x = v / term.weight
    _check_box(x, loss)
    u = v * term.y
    quad = quad_form(u, ts.xs[term.idx], Q, kernel, gram)
    return float(-np.sum(term.weight * loss.psi(x)) - quad / (2.0 * term.reg))


def _kernel_times(u, xs, Q, kernel, gram=None) -> np.ndarray:
    """``K_Q u`` for the rows ``xs``."""
    kernel = parse_kernel(kernel)
    if gram is not None:
        return gram @ u
    if kernel.kind == "count":
        m = np.einsum("tx,txz->tz", _sensor_sums(u, xs, Q.x_card), Q.tables)
        rows = Q.rows(xs)  # (n, s, |Z|)
        return np.einsum("nsz,sz->n", rows, m)
    return gram_Q(xs, Q, kernel) @ u


def dual_gradient(v, term: DualTerm, ts: TrainingSet, Q, loss, kernel, gram=None):
    loss = get_loss(loss)
    v = np.asarray(v, dtype=float)
    x = v / term.weight
    _check_box(x, loss)
    if loss.smooth_dual:
        lo, hi = loss.dual_domain
        if np.any(x == lo) and np.isfinite(lo) or np.any(x == hi) and np.isfinite(hi):
            raise DomainError("dual gradient is unbounded on the box boundary")
    u = v * term.y
    kv = _kernel_times(u, ts.xs[term.idx], Q, kernel, gram)
    return -loss.dpsi(x) - term.y * kv / term.reg


def primal_value(coef, term: DualTerm, ts: TrainingSet, Q, loss, kernel):
    """Primal risk at ``w = sum_j coef_j y_j Phi_Q(x_j)`` over the term's rows."""
    loss = get_loss(loss)
    coef = np.asarray(coef, dtype=float)
    gram = gram_Q(ts.xs[term.idx], Q, kernel)
    yc = coef * term.y
    margins = gram @ yc
    return float(
        np.sum(term.weight * loss.phi(term.y * margins))
        + 0.5 * term.reg * yc @ gram @ yc
    )


def _g_term_for(ts, cfg, pair):
    return g_term(ts, cfg) if pair is None else g_pair_term(ts, cfg, pair)


def dual_risk_G(beta, Q, ts: TrainingSet, cfg: RiskConfig, pair: int | None = None):
    """Dual of the class-normalized private risk; ``pair`` selects ``(0, g)``."""
    term = _g_term_for(ts, cfg, pair)
    return dual_value(beta, term, ts, Q, cfg.loss, cfg.kernel_spec)


def dual_risk_H(alpha, Q, ts: TrainingSet, cfg: RiskConfig):
    return dual_value(alpha, h_term(ts, cfg), ts, Q, cfg.loss, cfg.kernel_spec)


def primal_risk_H(w_coeffs, Q, ts: TrainingSet, cfg: RiskConfig):
    return primal_value(w_coeffs, h_term(ts, cfg), ts, Q, cfg.loss, cfg.kernel_spec)


def primal_risk_G(w_coeffs, Q, ts: TrainingSet, cfg: RiskConfig, pair=None):
    term = _g_term_for(ts, cfg, pair)
    return primal_value(w_coeffs, term, ts, Q, cfg.loss, cfg.kernel_spec)


def grad_dual(vec, Q, ts: TrainingSet, cfg: RiskConfig, role: str = "beta", pair=None):
    """Gradient of :func:`dual_risk_G` (``role="beta"``) or :func:`dual_risk_H`."""
    if role == "alpha":
        term = h_term(ts, cfg)
    elif role == "beta":
        term = _g_term_for(ts, cfg, pair)
    else:
        raise ValueError("role must be 'alpha' or 'beta'")
    return dual_gradient(vec, term, ts, Q, cfg.loss, cfg.kernel_spec)


def dual_block_gradient(t: int, v, term: DualTerm, ts: TrainingSet, Q) -> np.ndarray:
    """d D(v, Q) / d Q^t for the count kernel; rank one in (x, z)."""
    xs = ts.xs[term.idx]
    a = np.bincount(xs[:, t] - 1, weights=v * term.y, minlength=Q.x_card)
    return -np.outer(a, a @ Q.tables[t]) / term.reg


class AnchoredExpansion:
    """An RKHS element ``w = (1/reg) sum_j v_j y_j Phi_A(x_j)`` frozen at ``A``.

    The anchor mapping ``A`` stays fixed while the mapping used to embed new
    observations changes, so ``<w, Phi_Q(x)>`` is linear in ``Q``.
    """

    def __init__(self, v, term: DualTerm, ts: TrainingSet, anchor: PrivacyMapping, kernel="count"):
        self.coef = np.asarray(v, dtype=float) * term.y / term.reg
        self.xs = ts.xs[term.idx]
        self.anchor = anchor.copy()
        self.kernel = parse_kernel(kernel)
        self._weights = None
        self._norm_sq = None

    @classmethod
    def zero(cls, ts: TrainingSet, anchor: PrivacyMapping, kernel="count"):
        term = DualTerm(np.arange(1), np.ones(1), np.ones(1), 1.0)
        return cls(np.zeros(1), term, ts, anchor, kernel)

    @property
    def weights(self) -> np.ndarray:
        """Message-space weights ``W[t, z]`` (count kernel only)."""
        _require_count(self.kernel)
        if self._weights is None:
            rows = self.anchor.rows(self.xs)
            self._weights = np.einsum("n,nsz->sz", self.coef, rows)
        return self._weights

    def margins(self, xs, Q: PrivacyMapping) -> np.ndarray:
        xs = np.atleast_2d(xs)
        if self.kernel.kind == "count":
            return np.einsum("nsz,sz->n", Q.rows(xs), self.weights)
        return cross_gram_Q(xs, Q, self.xs, self.anchor, self.kernel) @ self.coef

    @property
    def norm_sq(self) -> float:
        if self._norm_sq is None:
            if self.kernel.kind == "count":
                self._norm_sq = float(np.sum(self.weights**2))
            else:
                gram = gram_Q(self.xs, self.anchor, self.kernel)
                self._norm_sq = float(self.coef @ gram @ self.coef)
        return self._norm_sq


def anchored_primal(w: AnchoredExpansion, term: DualTerm, ts, Q, loss) -> float:
    loss = get_loss(loss)
    margins = w.margins(ts.xs[term.idx], Q)
    return float(
        np.sum(term.weight * loss.phi(term.y * margins)) + 0.5 * term.reg * w.norm_sq
    )


def barrier_objective(w, h, g_terms, betas, ts, Q, loss, kernel, theta, mu) -> float:
    """``F(w, Q) - (1/mu) sum_g log(D_g(beta_g, Q) - theta)``; ``inf`` if infeasible."""
    value = anchored_primal(w, h, ts, Q, loss)
    if theta is None or not np.isfinite(theta):
        return value
    for term, beta in zip(g_terms, betas):
        slack = dual_value(beta, term, ts, Q, loss, kernel) - theta
        if not slack > 0:
            return np.inf
        value -= np.log(slack) / mu
    return value


def _primal_block_gradient(t, w: AnchoredExpansion, term, ts, Q, loss):
    xs = ts.xs[term.idx]
    margins = w.margins(xs, Q)
    coeff = term.weight * loss.dphi(term.y * margins) * term.y
    a = np.bincount(xs[:, t] - 1, weights=coeff, minlength=Q.x_card)
    return np.outer(a, w.weights[t])


def f0_block_gradient(t, w, h, g_terms, betas, ts, Q, loss, kernel, theta, mu):
    """Block gradient of :func:`barrier_objective` with ``w`` held fixed."""
    grad = _primal_block_gradient(t, w, h, ts, Q, get_loss(loss))
    if theta is None or not np.isfinite(theta):
        return grad
    for term, b in zip(g_terms, betas):
        slack = dual_value(b, term, ts, Q, loss, kernel) - theta
        grad = grad - dual_block_gradient(t, b, term, ts, Q) / (mu * slack)
    return grad


def _as_beta_list(beta, n_terms):
    if n_terms == 1 and np.ndim(beta) == 1:
        return [np.asarray(beta, dtype=float)]
    return [np.asarray(b, dtype=float) for b in beta]


def grad_Q_sensor(
    t: int,
    Q: PrivacyMapping,
    ts: TrainingSet,
    cfg: RiskConfig,
    beta,
    alpha=None,
    barrier: tuple[float, float] | None = None,
    anchor: PrivacyMapping | None = None,
    metric: str = "normalized",
) -> np.ndarray:
    """Gradient with respect to the entries of ``Q^t``.

    With ``alpha=None`` this is the gradient of the private dual risk (the
    threshold-search objective).  Otherwise it is the gradient of
    ``F(w, Q) - (1/mu) sum log(D_g - theta)`` with ``w`` built from ``alpha``
    at ``anchor`` (default ``Q``) and ``barrier=(theta, mu)``; without a
    barrier only ``F`` is differentiated.  ``beta`` is a vector, or a list of
    vectors for an m-ary private hypothesis.
    """
    kernel = cfg.kernel_spec
    _require_count(kernel)
    g_terms = private_terms(ts, cfg, metric)
    betas = _as_beta_list(beta, len(g_terms))
    if alpha is None:
        return sum(
            dual_block_gradient(t, b, term, ts, Q) for term, b in zip(g_terms, betas)
        )
    h = h_term(ts, cfg)
    w = AnchoredExpansion(alpha, h, ts, Q if anchor is None else anchor, kernel)
    theta, mu = barrier if barrier is not None else (None, None)
    return f0_block_gradient(t, w, h, g_terms, betas, ts, Q, cfg.loss, kernel, theta, mu)
