import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from infopriv.exceptions import DomainError, LengthMismatch, UnsupportedKernel
from infopriv.kernels import PrivacyMapping, gram_Q
from infopriv.losses import get_loss
from infopriv.risk import (
    AnchoredExpansion,
    RiskConfig,
    TrainingSet,
    anchored_primal,
    barrier_objective,
    dual_risk_G,
    dual_risk_H,
    dual_value,
    g_bayes_term,
    g_term,
    grad_dual,
    grad_Q_sensor,
    h_term,
    primal_risk_G,
    primal_risk_H,
    primal_value,
)
from infopriv.solver import SolverConfig, maximize_alpha, maximize_beta

LOG2 = np.log(2.0)


def random_instance(rng, n=None, s=None, x_card=None, z_card=2):
    n = n or int(rng.integers(4, 10))
    s = s or int(rng.integers(1, 4))
    x_card = x_card or int(rng.integers(2, 5))
    xs = rng.integers(1, x_card + 1, size=(n, s))
    hs = rng.choice([-1, 1], size=n)
    gs = rng.choice([-1, 1], size=n)
    gs[:2] = (-1, 1)
    ts = TrainingSet(xs, hs, gs, x_card)
    return ts, PrivacyMapping.random(s, x_card, z_card, rng)


def interior_point(term, loss, rng, margin=0.1):
    lo, hi = term.box(get_loss(loss))
    lo = np.where(np.isfinite(lo), lo, -3 * term.weight)
    hi = np.where(np.isfinite(hi), hi, 3 * term.weight)
    u = rng.uniform(margin, 1 - margin, size=lo.shape)
    return lo + u * (hi - lo)


def test_training_set_validation():
    with pytest.raises(LengthMismatch):
        TrainingSet([[1], [2]], [1], [1, -1])
    with pytest.raises(ValueError):
        TrainingSet([[0]], [1], [1])
    with pytest.raises(ValueError):
        TrainingSet([[1]], [2], [1])
    with pytest.raises(ValueError):
        TrainingSet([[1], [2]], [1, -1], [0, -3])
    ts = TrainingSet([[1], [2], [1]], [1, -1, 1], [0, 1, 2])
    assert ts.m == 3 and not ts.is_binary_private
    assert {k: list(v) for k, v in ts.class_index_sets().items()} == {0: [0], 1: [1], 2: [2]}


def test_regularizer_defaults():
    assert RiskConfig().resolve(100) == (0.01, 0.1)
    assert RiskConfig(lam=0.5, lam_n=0.25).resolve(7) == (0.5, 0.25)
    with pytest.raises(ValueError):
        RiskConfig(lam=0.0)


@pytest.mark.parametrize("loss", ["logistic", "hinge"])
def test_dual_G_at_zero(loss, rng):
    ts, Q = random_instance(rng)
    assert dual_risk_G(np.zeros(ts.n), Q, ts, RiskConfig(loss=loss)) == 0.0


def test_dual_G_two_points_independent_evaluation(rng):
    ts = TrainingSet([[1], [2]], [1, -1], [-1, 1], 2)
    Q = PrivacyMapping.random(1, 2, 2, rng)
    cfg = RiskConfig(lam_n=0.3)
    beta = np.array([0.17, 0.41])  # 2|S_g| beta_i = 2 beta_i in [0, 1]
    k = Q.tables[0] @ Q.tables[0].T
    psi = lambda x: x * np.log(x) + (1 - x) * np.log(1 - x)
    quad = beta[0] ** 2 * k[0, 0] + beta[1] ** 2 * k[1, 1] - 2 * beta[0] * beta[1] * k[0, 1]
    expected = -psi(2 * beta[0]) / 2 - psi(2 * beta[1]) / 2 - quad / (2 * 0.3)
    assert dual_risk_G(beta, Q, ts, cfg) == pytest.approx(expected, abs=1e-14)


def test_dual_H_single_point_hand_value():
    ts = TrainingSet([[1, 1, 1, 1]], [1], [1], 2)
    Q = PrivacyMapping.uniform(4, 2, 2)
    lam, a = 0.2, 0.3
    psi = a * np.log(a) + (1 - a) * np.log(1 - a)
    expected = -psi - a**2 * 2.0 / (2 * lam)
    assert dual_risk_H(np.array([a]), Q, ts, RiskConfig(lam=lam)) == pytest.approx(expected, abs=1e-14)
    assert dual_risk_H(np.zeros(1), Q, ts, RiskConfig(lam=lam)) == 0.0


def test_gram_identity_fixture(rng):
    ts, Q = random_instance(rng, n=5)
    term = h_term(ts, RiskConfig(lam=0.5))
    v = interior_point(term, "logistic", rng)
    x = v / term.weight
    expected = -np.sum(term.weight * (x * np.log(x) + (1 - x) * np.log(1 - x))) - v @ v / (2 * 0.5)
    assert dual_value(v, term, ts, Q, "logistic", "count", gram=np.eye(5)) == pytest.approx(expected)


def test_dual_domain_error(rng):
    ts, Q = random_instance(rng)
    with pytest.raises(DomainError):
        dual_risk_G(np.full(ts.n, 5.0), Q, ts, RiskConfig())


@pytest.mark.parametrize("loss", ["logistic", "hinge", "exponential", "quadratic"])
def test_primal_at_zero_is_phi0(loss, rng):
    ts, Q = random_instance(rng)
    cfg = RiskConfig(loss=loss)
    phi0 = get_loss(loss).phi_at_zero
    assert primal_risk_H(np.zeros(ts.n), Q, ts, cfg) == pytest.approx(phi0)
    assert primal_risk_G(np.zeros(ts.n), Q, ts, cfg) == pytest.approx(phi0)


def test_balanced_normalized_equals_unnormalized(rng):
    ts, Q = random_instance(rng, n=6)
    ts = TrainingSet(ts.xs, ts.hs, [-1, 1, -1, 1, -1, 1], ts.x_card)
    cfg = RiskConfig(lam=0.3, lam_n=0.3)
    coef = rng.normal(size=6)
    a = primal_value(coef, g_term(ts, cfg), ts, Q, "logistic", "count")
    b = primal_value(coef, g_bayes_term(ts, cfg), ts, Q, "logistic", "count")
    assert a == pytest.approx(b, abs=1e-14)


@given(seed=st.integers(0, 10**6), loss=st.sampled_from(["logistic", "hinge", "exponential", "quadratic"]))
def test_weak_duality(seed, loss):
    rng = np.random.default_rng(seed)
    ts, Q = random_instance(rng)
    cfg = RiskConfig(loss=loss, lam=0.3, lam_n=0.2)
    for term in (h_term(ts, cfg), g_term(ts, cfg)):
        v = interior_point(term, loss, rng, margin=0.0)
        coef = rng.normal(scale=2.0, size=ts.n)
        d = dual_value(v, term, ts, Q, loss, "count")
        p = primal_value(coef, term, ts, Q, loss, "count")
        assert d <= p + 1e-9


@pytest.mark.parametrize("loss", ["logistic", "exponential", "quadratic", "hinge"])
def test_strong_duality_at_dual_optimum(loss, rng):
    ts, Q = random_instance(rng, n=3, s=2)
    ts = TrainingSet(ts.xs, ts.hs, [-1, 1, 1], ts.x_card)
    cfg = RiskConfig(loss=loss, lam=0.4, lam_n=0.3)
    scfg = SolverConfig()
    v = maximize_beta(Q, ts, scfg, cfg)
    term = g_term(ts, cfg)
    d = dual_value(v, term, ts, Q, loss, "count")
    p = primal_value(v / term.reg, term, ts, Q, loss, "count")
    assert abs(p - d) <= 1e-3
    a = maximize_alpha(Q, ts, scfg, cfg)
    term = h_term(ts, cfg)
    assert abs(primal_value(a / term.reg, term, ts, Q, loss, "count")
               - dual_value(a, term, ts, Q, loss, "count")) <= 1e-3


def _central_diff(f, x, h=1e-6):
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        out[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8)


@pytest.mark.parametrize("loss", ["logistic", "exponential", "quadratic", "hinge"])
@pytest.mark.parametrize("role", ["alpha", "beta"])
def test_grad_dual_finite_difference(loss, role, rng):
    ts, Q = random_instance(rng)
    cfg = RiskConfig(loss=loss, lam=0.3, lam_n=0.2)
    term = h_term(ts, cfg) if role == "alpha" else g_term(ts, cfg)
    v = interior_point(term, loss, rng)
    f = dual_risk_H if role == "alpha" else dual_risk_G
    fd = _central_diff(lambda u: f(u, Q, ts, cfg), v)
    assert _rel_err(grad_dual(v, Q, ts, cfg, role), fd) <= 1e-5


def test_grad_dual_hinge_at_zero(rng):
    ts, Q = random_instance(rng)
    g = grad_dual(np.zeros(ts.n), Q, ts, RiskConfig(loss="hinge"), "beta")
    assert np.allclose(g, 1.0)


def test_grad_dual_boundary_raises(rng):
    ts, Q = random_instance(rng)
    with pytest.raises(DomainError):
        grad_dual(np.zeros(ts.n), Q, ts, RiskConfig(loss="logistic"), "beta")


def test_grad_dual_exchanging_points_permutes(rng):
    ts = TrainingSet([[1], [2]], [1, -1], [-1, 1], 2)
    swapped = TrainingSet([[2], [1]], [-1, 1], [1, -1], 2)
    Q = PrivacyMapping.random(1, 2, 2, rng)
    cfg = RiskConfig()
    b = np.array([0.2, 0.35])
    assert np.allclose(grad_dual(b, Q, ts, cfg), grad_dual(b[::-1], Q, swapped, cfg)[::-1])


def test_grad_Q_zero_beta(rng):
    ts, Q = random_instance(rng)
    assert np.all(grad_Q_sensor(0, Q, ts, RiskConfig(), np.zeros(ts.n)) == 0)


def test_grad_Q_requires_count_kernel(rng):
    ts, Q = random_instance(rng)
    with pytest.raises(UnsupportedKernel):
        grad_Q_sensor(0, Q, ts, RiskConfig(kernel="gaussian:1"), np.zeros(ts.n))


def test_grad_Q_dual_finite_difference(rng):
    for _ in range(5):
        ts, Q = random_instance(rng)
        cfg = RiskConfig(lam_n=0.2)
        beta = interior_point(g_term(ts, cfg), "logistic", rng)
        t = int(rng.integers(ts.s))
        f = lambda T: dual_risk_G(beta, Q.with_block(t, T), ts, cfg)
        fd = _central_diff(f, Q.tables[t].copy())
        assert _rel_err(grad_Q_sensor(t, Q, ts, cfg, beta), fd) <= 1e-5


def test_grad_Q_barrier_finite_difference(rng):
    for _ in range(5):
        ts, Q = random_instance(rng)
        cfg = RiskConfig(lam=0.3, lam_n=0.2)
        h, g = h_term(ts, cfg), g_term(ts, cfg)
        beta = interior_point(g, "logistic", rng)
        alpha = interior_point(h, "logistic", rng)
        theta = dual_risk_G(beta, Q, ts, cfg) - 0.05
        anchor = Q.copy()
        w = AnchoredExpansion(alpha, h, ts, anchor)
        t = int(rng.integers(ts.s))
        f = lambda T: barrier_objective(w, h, [g], [beta], ts, Q.with_block(t, T), "logistic", cfg.kernel_spec, theta, 10.0)
        fd = _central_diff(f, Q.tables[t].copy())
        got = grad_Q_sensor(t, Q, ts, cfg, beta, alpha, barrier=(theta, 10.0), anchor=anchor)
        assert _rel_err(got, fd) <= 1e-5


def test_duplicate_sensors_same_gradient(rng):
    xs = rng.integers(1, 4, size=(8, 1))
    ts = TrainingSet(np.hstack([xs, xs]), rng.choice([-1, 1], 8), [-1, 1] * 4, 3)
    table = PrivacyMapping.random(1, 3, 2, rng).tables[0]
    Q = PrivacyMapping(np.stack([table, table]))
    beta = interior_point(g_term(ts, RiskConfig()), "logistic", rng)
    g0 = grad_Q_sensor(0, Q, ts, RiskConfig(), beta)
    g1 = grad_Q_sensor(1, Q, ts, RiskConfig(), beta)
    assert np.allclose(g0, g1)


@given(seed=st.integers(0, 10**6))
def test_negated_dual_convex_along_chords(seed):
    rng = np.random.default_rng(seed)
    ts, Q = random_instance(rng)
    cfg = RiskConfig()
    beta = interior_point(g_term(ts, cfg), "logistic", rng)
    t = int(rng.integers(ts.s))
    A, B = PrivacyMapping.random(1, ts.x_card, 2, rng).tables[0], PrivacyMapping.random(1, ts.x_card, 2, rng).tables[0]
    lam = rng.uniform()
    f = lambda T: -dual_risk_G(beta, Q.with_block(t, T), ts, cfg)
    assert f(lam * A + (1 - lam) * B) <= lam * f(A) + (1 - lam) * f(B) + 1e-12


def test_anchored_margins_match_gram(rng):
    ts, Q = random_instance(rng)
    cfg = RiskConfig(lam=0.3)
    h = h_term(ts, cfg)
    alpha = interior_point(h, "logistic", rng)
    w = AnchoredExpansion(alpha, h, ts, Q)
    coef = alpha * ts.hs / h.reg
    G = gram_Q(ts.xs, Q)
    assert np.allclose(w.margins(ts.xs, Q), G @ coef)
    assert w.norm_sq == pytest.approx(coef @ G @ coef)
    assert anchored_primal(w, h, ts, Q, "logistic") == pytest.approx(
        primal_value(alpha / h.reg, h, ts, Q, "logistic", "count")
    )
