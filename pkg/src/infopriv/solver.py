"""Threshold search and barrier optimization of the sensor privacy mappings.

Two block Gauss-Seidel loops are implemented:

* :func:`find_theta_star` alternates an exact-ish maximization over the dual
  vector ``beta`` with per-sensor ascent steps in ``Q^t`` restricted to the
  set ``Q'`` (simplex rows, column mass ``>= delta1``, entries at least
  ``delta2`` away from ``1/|Z|``).  Its final objective is ``theta*``.
* :func:`optimize_npo` minimizes ``F(w_H, Q) - (1/mu) log(D_G(beta, Q) - theta)``
  over ``(alpha, beta, Q^1, ..., Q^s)`` starting from the threshold search.

Every block update only accepts non-worsening steps, so both traces are
monotone.  The public fusion rule ``w_H`` is held as an
:class:`~infopriv.risk.AnchoredExpansion` while the mappings move.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BarrierViolation, InfeasibleProjection, UnsupportedKernel
from .kernels import PrivacyMapping, cross_gram_Q
from .risk import (
    AnchoredExpansion,
    DualTerm,
    RiskConfig,
    TrainingSet,
    anchored_primal,
    barrier_objective,
    dual_block_gradient,
    dual_gradient,
    dual_value,
    f0_block_gradient,
    g_bayes_term,
    g_pair_term,
    g_term,
    h_term,
    private_terms,
)

log = logging.getLogger(__name__)

__all__ = [
    "InnerConfig",
    "SolverConfig",
    "ThresholdResult",
    "SolveResult",
    "project_simplex_rows",
    "repair_band",
    "project_q_prime",
    "initial_mapping",
    "maximize_beta",
    "maximize_alpha",
    "update_Q_block_alg1",
    "update_Q_block_alg2",
    "find_theta_star",
    "joint_warm_start",
    "optimize_npo",
    "optimize_ndd",
    "solve",
    "optimize_npo_mary",
    "optimize_bayes_metric",
    "predict_H",
    "decision_scores",
]


@dataclass(frozen=True)
class InnerConfig:
    max_iter: int = 500
    tol: float = 1e-10
    shrink: float = 0.5
    slope: float = 1e-4
    max_backtrack: int = 50


@dataclass(frozen=True)
class SolverConfig:
    delta1: float = 0.005
    delta2: float = 0.005
    mu: float = 100.0
    p_ratio: float = 0.999
    stop_tol: float = 1e-4
    max_outer: int = 200
    inner: InnerConfig = field(default_factory=InnerConfig)
    seed: int = 0
    box_inset: float = 1e-9
    repair_passes: int = 10

    def __post_init__(self):
        if self.delta1 < 0 or self.delta2 < 0:
            raise ValueError("delta1 and delta2 must be nonnegative")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not 0 < self.p_ratio < 1:
            raise ValueError("p_ratio must lie in (0, 1)")

    def check_alphabet(self, z_card: int):
        if not self.delta2 < 1.0 / z_card - self.delta2:
            raise ValueError(f"delta2={self.delta2} leaves no room for |Z|={z_card}")


@dataclass
class ThresholdResult:
    theta_star: float
    beta: np.ndarray
    Q: PrivacyMapping
    trace: list[float]
    converged: bool

    def __iter__(self):
        return iter((self.theta_star, self.beta, self.Q))


@dataclass
class SolveResult:
    """Output of a full fit.

    ``beta`` is one vector for a binary private hypothesis and a list of
    ``m - 1`` vectors otherwise.  ``trace`` holds the barrier objective per
    outer iteration; ``theta_trace`` the threshold-search objective.
    """

    alpha: np.ndarray
    beta: np.ndarray | list
    Q: PrivacyMapping
    theta_star: float
    theta: float
    trace: list[float]
    converged: bool
    ts: TrainingSet
    rcfg: RiskConfig
    theta_trace: list[float] = field(default_factory=list)
    pair_theta_stars: dict = field(default_factory=dict)
    slack_trace: list[float] = field(default_factory=list)
    metric: str = "normalized"

    def trace_records(self):
        """Per-iteration rows ``(iteration, objective, constraint_slack)``."""
        slacks = self.slack_trace or [float("nan")] * len(self.trace)
        return [
            {"iteration": k, "objective": f, "constraint_slack": sl}
            for k, (f, sl) in enumerate(zip(self.trace, slacks))
        ]


# ---------------------------------------------------------------- projections


def project_simplex_rows(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    shape = v.shape
    rows = v.reshape(-1, shape[-1])
    u = -np.sort(-rows, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, rows.shape[1] + 1)
    cond = u - css / ind > 0
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(rows.shape[0]), rho] / (rho + 1)
    return np.maximum(rows - tau[:, None], 0.0).reshape(shape)


def repair_band(table: np.ndarray, delta2: float, passes: int = 10):
    """Push entries out of ``(1/|Z| - delta2, 1/|Z| + delta2)``.

    Entries inside the band move to the nearer edge, then each row is
    renormalized through its largest entry.  Returns ``None`` when a row
    cannot be repaired within ``passes`` rounds.
    """
    out = np.array(table, dtype=float)
    if delta2 <= 0:
        return out
    centre = 1.0 / out.shape[-1]
    lo, hi = centre - delta2, centre + delta2
    for _ in range(passes):
        inside = (out > lo) & (out < hi)
        if not inside.any():
            return out if np.all(out >= 0) else None
        out = np.where(inside, np.where(out < centre, lo, hi), out)
        resid = 1.0 - out.sum(axis=-1)
        top = np.argmax(out, axis=-1)
        np.put_along_axis(
            out,
            top[..., None],
            np.take_along_axis(out, top[..., None], -1) + resid[..., None],
            axis=-1,
        )
        if np.any(out < 0):
            return None
    inside = (out > lo) & (out < hi)
    return None if inside.any() else out


def project_q_prime(table, delta1: float, delta2: float, passes: int = 10):
    """Simplex projection followed by the band repair and column-mass check."""
    proj = repair_band(project_simplex_rows(table), delta2, passes)
    if proj is None or np.any(proj.sum(axis=0) < delta1):
        return None
    return proj


def initial_mapping(s: int, x_card: int, z_card: int, scfg: SolverConfig, rng):
    """Rows uniform on the simplex, repaired into ``Q'``."""
    scfg.check_alphabet(z_card)
    tables = np.empty((s, x_card, z_card))
    for t in range(s):
        for _ in range(100):
            cand = project_q_prime(
                rng.dirichlet(np.ones(z_card), size=x_card),
                scfg.delta1,
                scfg.delta2,
                scfg.repair_passes,
            )
            if cand is not None:
                tables[t] = cand
                break
        else:
            raise InfeasibleProjection("could not draw an initial mapping in Q'")
    return PrivacyMapping(tables)


# -------------------------------------------------------------- inner solver


def _ascend(f, grad, project, x0, inner: InnerConfig, f0=None):
    """Monotone projected gradient ascent with Armijo backtracking.

    ``project`` may return ``None`` to reject a trial point.  Trial steps use
    the Barzilai-Borwein length when available.
    """
    x = x0
    fx = f(x) if f0 is None else f0
    step = 1.0
    prev_x = prev_g = None
    for _ in range(inner.max_iter):
        g = grad(x)
        if prev_g is not None:
            sx = (x - prev_x).ravel()
            sy = (g - prev_g).ravel()
            curv = sx @ sy
            if curv < 0:
                step = float(np.clip(-(sx @ sx) / curv, 1e-12, 1e12))
        accepted = False
        for _ in range(inner.max_backtrack):
            cand = project(x + step * g)
            if cand is None:
                step *= inner.shrink
                continue
            d = cand - x
            if not np.any(d):
                break
            fc = f(cand)
            lin = float(g.ravel() @ d.ravel())
            if fc >= fx + inner.slope * max(lin, 0.0) and fc >= fx:
                accepted = True
                break
            step *= inner.shrink
        if not accepted:
            break
        gain = fc - fx
        prev_x, prev_g = x, g
        x, fx = cand, fc
        if gain <= inner.tol * max(1.0, abs(fx)):
            break
    return x, fx


def _maximize_dual(term: DualTerm, ts, Q, rcfg: RiskConfig, scfg: SolverConfig, v0=None):
    loss = rcfg.loss_spec
    kernel = rcfg.kernel_spec
    lo, hi = term.box(loss, scfg.box_inset)
    v0 = term.start(loss) if v0 is None else np.clip(np.asarray(v0, float), lo, hi)
    gram = None
    if kernel.kind != "count":
        from .kernels import gram_Q

        gram = gram_Q(ts.xs[term.idx], Q, kernel)

    def f(v):
        return dual_value(v, term, ts, Q, loss, kernel, gram)

    def grad(v):
        return dual_gradient(v, term, ts, Q, loss, kernel, gram)

    v, _ = _ascend(f, grad, lambda v: np.clip(v, lo, hi), v0, scfg.inner)
    return v


def maximize_beta(Q, ts, scfg: SolverConfig, rcfg: RiskConfig, beta0=None, term=None):
    """``argmax_beta D_G(beta, Q)`` by projected gradient over the dual box."""
    term = g_term(ts, rcfg) if term is None else term
    return _maximize_dual(term, ts, Q, rcfg, scfg, beta0)


def maximize_alpha(Q, ts, scfg: SolverConfig, rcfg: RiskConfig, alpha0=None):
    return _maximize_dual(h_term(ts, rcfg), ts, Q, rcfg, scfg, alpha0)


def _require_count(rcfg: RiskConfig):
    if rcfg.kernel_spec.kind != "count":
        raise UnsupportedKernel("mapping updates need the count kernel")


def update_Q_block_alg1(t, beta, Q, ts, scfg: SolverConfig, rcfg: RiskConfig, term=None):
    """Ascend ``D_G(beta, Q)`` in ``Q^t`` over ``Q'``; returns a new mapping.

    ``beta`` and ``term`` may be lists, in which case the sum of the dual
    risks is ascended.
    """
    _require_count(rcfg)
    term = g_term(ts, rcfg) if term is None else term
    terms = term if isinstance(term, (list, tuple)) else [term]
    betas = beta if isinstance(term, (list, tuple)) else [beta]
    pieces = [
        (np.bincount(ts.xs[tm.idx, t] - 1, weights=b * tm.y, minlength=Q.x_card), tm.reg)
        for tm, b in zip(terms, betas)
    ]

    def f(table):
        return -sum(float((a @ table) @ (a @ table)) / (2.0 * reg) for a, reg in pieces)

    def grad(table):
        return -sum(np.outer(a, a @ table) / reg for a, reg in pieces)

    def project(table):
        return project_q_prime(table, scfg.delta1, scfg.delta2, scfg.repair_passes)

    table, _ = _ascend(f, grad, project, Q.tables[t].copy(), scfg.inner)
    return Q.with_block(t, table)


def update_Q_block_alg2(
    t, w, betas, Q, ts, theta, scfg: SolverConfig, rcfg: RiskConfig, g_terms=None, h=None
):
    """Descend the barrier objective in ``Q^t`` over simplex rows.

    ``w`` is the fixed public fusion rule (an :class:`AnchoredExpansion`, or
    a dual vector ``alpha`` anchored at ``Q``).  ``theta=-inf`` drops the
    barrier.
    """
    _require_count(rcfg)
    loss = rcfg.loss_spec
    kernel = rcfg.kernel_spec
    h = h_term(ts, rcfg) if h is None else h
    g_terms = private_terms(ts, rcfg) if g_terms is None else g_terms
    if not isinstance(w, AnchoredExpansion):
        w = AnchoredExpansion(w, h, ts, Q, kernel)
    if isinstance(betas, np.ndarray) and betas.ndim == 1:
        betas = [betas]
    tables = Q.tables.copy()

    def mapping(table):
        tables[t] = table
        return PrivacyMapping(tables)

    def f(table):
        return -barrier_objective(
            w, h, g_terms, betas, ts, mapping(table), loss, kernel, theta, scfg.mu
        )

    def grad(table):
        return -f0_block_gradient(
            t, w, h, g_terms, betas, ts, mapping(table), loss, kernel, theta, scfg.mu
        )

    start = Q.tables[t].copy()
    f0 = f(start)
    if not np.isfinite(f0):
        raise BarrierViolation("privacy constraint is not strictly satisfied")
    table, _ = _ascend(f, grad, project_simplex_rows, start, scfg.inner, f0)
    return Q.with_block(t, table)


# ----------------------------------------------------------- outer routines


def _relative_change(new, old) -> float:
    return (new - old) / max(abs(old), 1e-300)


def find_theta_star(
    ts: TrainingSet,
    scfg: SolverConfig,
    rcfg: RiskConfig,
    z_card: int = 2,
    term: DualTerm | None = None,
    Q0: PrivacyMapping | None = None,
) -> ThresholdResult:
    """Maximize ``D_G(beta, Q)`` over ``beta`` and ``Q in Q'``.

    Stops once the relative gain of an outer sweep is at most ``stop_tol``.
    The result unpacks as ``theta_star, beta, Q``.
    """
    _require_count(rcfg)
    term = g_term(ts, rcfg) if term is None else term
    loss = rcfg.loss_spec
    kernel = rcfg.kernel_spec
    rng = np.random.default_rng(scfg.seed)
    Q = initial_mapping(ts.s, ts.x_card, z_card, scfg, rng) if Q0 is None else Q0.copy()
    beta = term.start(loss)
    value = dual_value(beta, term, ts, Q, loss, kernel)
    trace = [value]
    converged = False
    for k in range(scfg.max_outer):
        beta = _maximize_dual(term, ts, Q, rcfg, scfg, beta)
        for t in range(ts.s):
            Q = update_Q_block_alg1(t, beta, Q, ts, scfg, rcfg, term)
        new = dual_value(beta, term, ts, Q, loss, kernel)
        trace.append(new)
        if _relative_change(new, value) <= scfg.stop_tol:
            converged = True
            value = new
            break
        value = new
    log.debug("threshold search: theta*=%.6g after %d sweeps", value, len(trace) - 1)
    return ThresholdResult(value, beta, Q, trace, converged)


def _slack(g_terms, betas, ts, Q, rcfg, theta):
    return min(
        dual_value(b, term, ts, Q, rcfg.loss, rcfg.kernel_spec) - theta
        for term, b in zip(g_terms, betas)
    )


def optimize_npo(
    ts: TrainingSet,
    theta: float,
    warm,
    scfg: SolverConfig,
    rcfg: RiskConfig,
    g_terms: list[DualTerm] | None = None,
    theta_star: float = float("nan"),
    metric: str = "normalized",
) -> SolveResult:
    """Barrier-constrained block descent from ``warm = (beta, Q)``.

    ``theta=-inf`` removes the privacy constraint.  For an m-ary private
    hypothesis ``beta`` is a list with one vector per term in ``g_terms``.
    """
    _require_count(rcfg)
    loss = rcfg.loss_spec
    kernel = rcfg.kernel_spec
    g_terms = private_terms(ts, rcfg, metric) if g_terms is None else g_terms
    beta0, Q = warm
    Q = Q.copy()
    betas = [np.asarray(beta0, float)] if np.ndim(beta0[0]) == 0 else [np.asarray(b, float) for b in beta0]
    constrained = theta is not None and np.isfinite(theta)
    if constrained and not _slack(g_terms, betas, ts, Q, rcfg, theta) > 0:
        raise BarrierViolation("warm start does not satisfy D_G(beta, Q) > theta")
    h = h_term(ts, rcfg)
    alpha = h.start(loss)
    w = AnchoredExpansion.zero(ts, Q, kernel)

    def objective(Q):
        return barrier_objective(w, h, g_terms, betas, ts, Q, loss, kernel, theta, scfg.mu)

    value = objective(Q)
    trace = [value]
    slacks = [_slack(g_terms, betas, ts, Q, rcfg, theta) if constrained else np.inf]
    converged = False
    for k in range(scfg.max_outer):
        alpha = _maximize_dual(h, ts, Q, rcfg, scfg, alpha)
        cand = AnchoredExpansion(alpha, h, ts, Q, kernel)
        if anchored_primal(cand, h, ts, Q, loss) <= anchored_primal(w, h, ts, Q, loss):
            w = cand
        if constrained:
            betas = [
                _maximize_dual(term, ts, Q, rcfg, scfg, b)
                for term, b in zip(g_terms, betas)
            ]
        for t in range(ts.s):
            Q = update_Q_block_alg2(t, w, betas, Q, ts, theta, scfg, rcfg, g_terms, h)
        new = objective(Q)
        trace.append(new)
        slacks.append(_slack(g_terms, betas, ts, Q, rcfg, theta) if constrained else np.inf)
        if -_relative_change(new, value) <= scfg.stop_tol:
            converged = True
            value = new
            break
        value = new
    alpha = _maximize_dual(h, ts, Q, rcfg, scfg, alpha)
    beta_out = betas[0] if len(betas) == 1 else betas
    return SolveResult(
        alpha=alpha,
        beta=beta_out,
        Q=Q,
        theta_star=theta_star,
        theta=theta,
        trace=trace,
        converged=converged,
        ts=ts,
        rcfg=rcfg,
        slack_trace=slacks,
        metric=metric,
    )


def optimize_ndd(ts, scfg: SolverConfig, rcfg: RiskConfig, z_card=2, Q0=None):
    """Unconstrained minimization of the public risk over ``(alpha, Q)``."""
    rng = np.random.default_rng(scfg.seed)
    Q = initial_mapping(ts.s, ts.x_card, z_card, scfg, rng) if Q0 is None else Q0
    g_terms = [h_term(ts, rcfg)]
    res = optimize_npo(
        ts, -np.inf, (np.zeros(ts.n), Q), scfg, rcfg, g_terms=g_terms, metric="none"
    )
    res.beta = np.zeros(0)
    return res


def _pick_warm_start(candidates, g_terms, ts, scfg, rcfg):
    """Among threshold-search outputs, keep the mapping whose weakest
    constraint is largest after re-maximizing every ``beta_g``."""
    best = None
    for cand in candidates:
        betas = [
            _maximize_dual(term, ts, cand.Q, rcfg, scfg, None) for term in g_terms
        ]
        worst = min(
            dual_value(b, term, ts, cand.Q, rcfg.loss, rcfg.kernel_spec)
            for term, b in zip(g_terms, betas)
        )
        if best is None or worst > best[0]:
            best = (worst, betas, cand.Q)
    return best


def joint_warm_start(ts, g_terms, theta, betas, Q, scfg: SolverConfig, rcfg: RiskConfig):
    """Ascend ``sum_g D_g(beta_g, Q)`` over ``Q'`` until every ``D_g > theta``.

    Needed for an m-ary private hypothesis: each pairwise threshold search
    returns a mapping that is feasible for its own pair only.
    """
    for _ in range(scfg.max_outer):
        betas = [_maximize_dual(term, ts, Q, rcfg, scfg, b) for term, b in zip(g_terms, betas)]
        if _slack(g_terms, betas, ts, Q, rcfg, theta) > 0:
            return betas, Q
        for t in range(ts.s):
            Q = update_Q_block_alg1(t, betas, Q, ts, scfg, rcfg, g_terms)
    raise BarrierViolation("no mapping in Q' satisfies every pairwise constraint")


def solve(
    ts: TrainingSet,
    scfg: SolverConfig | None = None,
    rcfg: RiskConfig | None = None,
    z_card: int = 2,
    metric: str = "normalized",
) -> SolveResult:
    """Threshold search followed by the barrier optimization.

    ``metric`` selects the privacy constraint: ``"normalized"`` (class
    balanced; m-ary labels give one constraint per pair ``(0, g)``),
    ``"bayes"`` (unnormalized risk) or ``"none"`` (no constraint).
    """
    scfg = SolverConfig() if scfg is None else scfg
    rcfg = RiskConfig() if rcfg is None else rcfg
    if metric == "none":
        return optimize_ndd(ts, scfg, rcfg, z_card)
    g_terms = private_terms(ts, rcfg, metric)
    searches = [find_theta_star(ts, scfg, rcfg, z_card, term) for term in g_terms]
    theta_stars = [r.theta_star for r in searches]
    theta = scfg.p_ratio * min(theta_stars)
    if len(g_terms) == 1:
        betas, Q = [searches[0].beta], searches[0].Q
    else:
        _, betas, Q = _pick_warm_start(searches, g_terms, ts, scfg, rcfg)
        betas, Q = joint_warm_start(ts, g_terms, theta, betas, Q, scfg, rcfg)
    res = optimize_npo(
        ts,
        theta,
        (betas if len(betas) > 1 else betas[0], Q),
        scfg,
        rcfg,
        g_terms=g_terms,
        theta_star=min(theta_stars),
        metric=metric,
    )
    res.theta_trace = searches[int(np.argmin(theta_stars))].trace
    if len(g_terms) > 1:
        res.pair_theta_stars = {g + 1: v for g, v in enumerate(theta_stars)}
    return res


def optimize_npo_mary(ts, scfg=None, rcfg=None, z_card=2) -> SolveResult:
    if ts.is_binary_private:
        raise ValueError("m-ary optimization needs labels in {0, ..., m-1}")
    return solve(ts, scfg, rcfg, z_card, "normalized")


def optimize_bayes_metric(ts, scfg=None, rcfg=None, z_card=2) -> SolveResult:
    """Same pipeline with the unnormalized private risk as the constraint."""
    return solve(ts, scfg, rcfg, z_card, "bayes")


# ---------------------------------------------------------------- prediction


def decision_scores(result: SolveResult, xs, mode: str = "expected", rng=None):
    """Fusion-center scores ``sum_i alpha_i h_i kappa(., .)`` for new rows."""
    xs = np.atleast_2d(np.asarray(xs, dtype=int))
    ts = result.ts
    coef = result.alpha * ts.hs
    kernel = result.rcfg.kernel_spec
    if mode == "expected":
        return cross_gram_Q(xs, result.Q, ts.xs, result.Q, kernel) @ coef
    if mode == "sampled":
        if kernel.kind != "count":
            raise UnsupportedKernel("sampled scoring uses the count kernel")
        rng = np.random.default_rng(rng)
        z = result.Q.sample(xs, rng)
        weights = np.einsum("n,nsz->sz", coef, result.Q.rows(ts.xs))
        return weights[np.arange(result.Q.s)[None, :], z - 1].sum(axis=1)
    raise ValueError("mode must be 'expected' or 'sampled'")


def predict_H(result: SolveResult, x, mode: str = "expected", seed=None):
    """Public-hypothesis decisions in {-1, +1}; a zero score maps to +1."""
    scores = decision_scores(result, x, mode, seed)
    labels = np.where(scores >= 0, 1, -1)
    return int(labels[0]) if np.ndim(x) == 1 else labels
