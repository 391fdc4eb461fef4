"""Convex margin losses, their conjugate duals and surrogate-risk constants.

Every loss is stored as a :class:`LossSpec`.  Dual quantities are written in
terms of the dual point ``x`` so that ``phi_star_neg(x)`` evaluates
``phi^*(-x)``; this is the form in which the dual risks consume them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, xlog1py, xlogy

from .exceptions import DomainError

__all__ = [
    "LossSpec",
    "LOSSES",
    "get_loss",
    "loss_eval",
    "loss_dual_eval",
    "assumption3_constants",
    "optimal_conditional_risk",
]


@dataclass(frozen=True)
class LossSpec:
    """A margin loss together with everything the dual solvers need.

    Attributes
    ----------
    name : str
        One of ``exponential``, ``logistic``, ``hinge``, ``quadratic``.
    phi, dphi : callable
        The loss and a (sub)derivative.
    psi, dpsi : callable
        ``psi(x) = phi^*(-x)`` and its derivative on the dual domain.
    dual_domain : tuple of float
        Closed interval of valid dual points (may be unbounded).
    a, r : float
        Constants with ``a**r * (phi(0) - R*(eta)) >= |1/2 - eta|**r``.
    dual_start : float
        Minimizer of ``psi`` (midpoint of the domain for hinge); used to
        initialize dual iterates.
    excess : callable
        ``d -> phi(0) - R*_phi(1/2 + d)`` written to avoid cancellation.
    """

    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    psi: Callable[[np.ndarray], np.ndarray]
    dpsi: Callable[[np.ndarray], np.ndarray]
    dual_domain: tuple[float, float]
    a: float
    r: float
    dual_start: float
    excess: Callable[[np.ndarray], np.ndarray]
    smooth_dual: bool = True

    @property
    def phi_at_zero(self) -> float:
        return float(self.phi(np.float64(0.0)))

    def phi_star_neg(self, x):
        """Evaluate ``phi^*(-x)``; raises :class:`DomainError` off-domain."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.dual_domain
        if np.any((x < lo) | (x > hi)) or np.any(np.isnan(x)):
            raise DomainError(
                f"dual point outside [{lo}, {hi}] for {self.name} loss"
            )
        out = self.psi(x)
        return out if out.ndim else float(out)

    def in_domain(self, x) -> bool:
        lo, hi = self.dual_domain
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= lo) & (x <= hi)))


def _exp_excess(d):
    # 1 - 2 sqrt(eta (1 - eta)) == (2d)^2 / (1 + 2 sqrt(1/4 - d^2))
    d = np.asarray(d, dtype=float)
    return 4.0 * d * d / (1.0 + 2.0 * np.sqrt(np.maximum(0.25 - d * d, 0.0)))


def _logistic_excess(d):
    # log 2 - H(1/2 + d) written as KL(eta || 1/2)
    d = np.asarray(d, dtype=float)
    return xlog1py(0.5 + d, 2.0 * d) + xlog1py(0.5 - d, -2.0 * d)


def _hinge_dphi(u):
    return np.where(np.asarray(u) < 1.0, -1.0, 0.0)


LOSSES: dict[str, LossSpec] = {
    "exponential": LossSpec(
        name="exponential",
        phi=lambda u: np.exp(-np.asarray(u, dtype=float)),
        dphi=lambda u: -np.exp(-np.asarray(u, dtype=float)),
        psi=lambda x: xlogy(x, x) - x,
        dpsi=lambda x: np.log(x),
        dual_domain=(0.0, np.inf),
        a=1.0 / np.sqrt(2.0),
        r=2.0,
        dual_start=1.0,
        excess=_exp_excess,
    ),
    "logistic": LossSpec(
        name="logistic",
        phi=lambda u: np.logaddexp(0.0, -np.asarray(u, dtype=float)),
        dphi=lambda u: -expit(-np.asarray(u, dtype=float)),
        psi=lambda x: xlogy(x, x) + xlogy(1.0 - x, 1.0 - x),
        dpsi=lambda x: np.log(x) - np.log1p(-x),
        dual_domain=(0.0, 1.0),
        a=1.0 / np.sqrt(2.0),
        r=2.0,
        dual_start=0.5,
        excess=_logistic_excess,
    ),
    "hinge": LossSpec(
        name="hinge",
        phi=lambda u: np.maximum(1.0 - np.asarray(u, dtype=float), 0.0),
        dphi=_hinge_dphi,
        psi=lambda x: -np.asarray(x, dtype=float),
        dpsi=lambda x: -np.ones_like(np.asarray(x, dtype=float)),
        dual_domain=(0.0, 1.0),
        a=0.5,
        r=1.0,
        dual_start=0.5,
        excess=lambda d: 2.0 * np.abs(np.asarray(d, dtype=float)),
        smooth_dual=False,
    ),
    "quadratic": LossSpec(
        name="quadratic",
        phi=lambda u: (1.0 - np.asarray(u, dtype=float)) ** 2,
        dphi=lambda u: -2.0 * (1.0 - np.asarray(u, dtype=float)),
        psi=lambda x: np.asarray(x, dtype=float) ** 2 / 4.0 - x,
        dpsi=lambda x: np.asarray(x, dtype=float) / 2.0 - 1.0,
        dual_domain=(-np.inf, np.inf),
        a=0.5,
        r=2.0,
        dual_start=2.0,
        excess=lambda d: 4.0 * np.asarray(d, dtype=float) ** 2,
    ),
}


def get_loss(name: str | LossSpec = "logistic") -> LossSpec:
    if isinstance(name, LossSpec):
        return name
    try:
        return LOSSES[name]
    except KeyError:
        raise ValueError(
            f"unknown loss {name!r}; expected one of {sorted(LOSSES)}"
        ) from None


def loss_eval(loss, u):
    """Return ``phi(u)``."""
    out = get_loss(loss).phi(u)
    return out if np.ndim(out) else float(out)


def loss_dual_eval(loss, xstar):
    """Return ``phi^*(-xstar)`` with ``0 log 0 = 0`` at the domain boundary."""
    return get_loss(loss).phi_star_neg(xstar)


def assumption3_constants(loss) -> tuple[float, float]:
    spec = get_loss(loss)
    return spec.a, spec.r


def optimal_conditional_risk(loss, eta):
    """``R*_phi(eta) = inf_g eta phi(g) + (1 - eta) phi(-g)`` in closed form.

    For the logistic loss this is the binary entropy of ``eta`` in nats.
    """
    spec = get_loss(loss)
    eta = np.asarray(eta, dtype=float)
    out = spec.phi_at_zero - spec.excess(eta - 0.5)
    return out if out.ndim else float(out)
