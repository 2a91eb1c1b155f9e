import math

import numpy as np
import pytest

from vallois.embedding import build_psi
from vallois.errors import ConfigError, DomainExceeded
from vallois.hedging import (ConvexPayoff, analytic_price, build_sub_hedge, build_super_hedge,
                             check_relations, eval_delta, eval_u)

CALL1 = 1.5 * math.exp(-2.0)  # int_1^inf e^{-2 sqrt l} dl


def call_price(k):
    # int_k^inf e^{-2 sqrt l} dl
    return math.exp(-2 * math.sqrt(k)) * (math.sqrt(k) + 0.5)


# --- payoff data --------------------------------------------------------------

def test_parse_forms():
    assert ConvexPayoff.parse("linear") == ConvexPayoff(0.0, 1.0)
    assert ConvexPayoff.parse("call_on_L:K=1") == ConvexPayoff(0.0, 0.0, ((1.0, 1.0),))
    assert ConvexPayoff.parse("constant:c=2.5") == ConvexPayoff(2.5, 0.0)
    p = ConvexPayoff.parse("pwl:[(2,0.5),(1,1)];slope0=-1;f0=3")
    assert p.atoms == ((1.0, 1.0), (2.0, 0.5))
    assert (p.f0, p.slope0, p.slope_inf, p.lipschitz) == (3.0, -1.0, 0.5, 1.0)


@pytest.mark.parametrize("text", ["", "call", "call_on_L:S=1", "pwl:[(1,-1)]",
                                  "pwl:[(1,1),(1,2)]", "pwl:[(0,1)]", "pwl:oops",
                                  "pwl:[(1,1)];g=2", "linear:3"])
def test_parse_rejects(text):
    with pytest.raises(ConfigError):
        ConvexPayoff.parse(text)


def test_payoff_values():
    F = ConvexPayoff(1.0, 0.5, ((1.0, 2.0),))
    assert np.allclose(F(np.array([0.0, 1.0, 3.0])), [1.0, 1.5, 6.5])
    assert np.allclose(F.derivative(np.array([0.5, 1.0, 2.0])), [0.5, 2.5, 2.5])


# --- super side ---------------------------------------------------------------

def test_linear_super(sym_map):
    p = build_super_hedge(ConvexPayoff.linear(), sym_map)
    l = np.array([0.0, 0.3, 2.0])
    assert np.all(p.A_plus(l) == 1.0) and np.all(p.A_minus(l) == -1.0)
    x = np.array([-2.0, -0.5, 0.0, 0.7, 3.0])
    assert np.allclose(p.H(x), np.abs(x), atol=1e-12)
    assert p.price == pytest.approx(0.5, abs=1e-9)


def test_constant_super(sym_map):
    p = build_super_hedge(ConvexPayoff(1.7, 0.0), sym_map)
    assert np.all(p.A_plus(np.array([0.0, 5.0])) == 0.0)
    assert np.allclose(p.H(np.array([-1.0, 0.0, 2.0])), 1.7)
    assert p.price == pytest.approx(1.7, abs=1e-12)
    assert np.all(eval_delta(p, np.array([-0.3, 0.3]), 0.7) == 0.0)


def test_call_super_ratio_closed_form(sym_map):
    p = build_super_hedge(ConvexPayoff.call(1.0), sym_map)
    l = np.array([0.0, 0.25, 0.81, 1.0, 4.0])
    assert np.allclose(p.A_plus(l), np.exp(2 * (np.sqrt(np.minimum(l, 1)) - 1)), rtol=1e-9)
    assert p.price == pytest.approx(CALL1, abs=1e-6)


@pytest.mark.parametrize("k", [0.25, 1.0, 4.0])
def test_duality_calls(sym_map, k):
    F = ConvexPayoff.call(k)
    p = build_super_hedge(F, sym_map)
    assert p.price == pytest.approx(call_price(k), abs=1e-6)
    assert analytic_price(F, sym_map) == pytest.approx(call_price(k), abs=1e-8)


def _random_payoffs(rng, l_hi, n=20):
    out = []
    for _ in range(n):
        m = rng.integers(1, 5)
        ks = np.sort(rng.uniform(0.02, l_hi, m))
        ws = rng.uniform(0.1, 2.0, m)
        out.append(ConvexPayoff(rng.normal(), rng.normal(), tuple(zip(ks, ws))))
    return out


@pytest.mark.parametrize("which", ["sym_map", "mu2"])
def test_duality_random(which, sym_map, bimodal):
    e = sym_map if which == "sym_map" else build_psi(bimodal)
    rng = np.random.default_rng(7)
    for F in _random_payoffs(rng, 6.0):
        p = build_super_hedge(F, e)
        assert abs(p.price - analytic_price(F, e)) < 1e-6, F


def test_super_bounds_and_convexity(sym_map, bimodal):
    rng = np.random.default_rng(3)
    for e in (sym_map, build_psi(bimodal)):
        for F in _random_payoffs(rng, 4.0, n=6):
            p = build_super_hedge(F, e)
            a, _ = p.sup_norms()
            assert a <= 3 * F.lipschitz + 1e-12
            y = np.linspace(0.0, 0.9 * e.x_max, 2001)
            d = np.diff(p.H(y)) / np.diff(y)
            assert np.all(np.diff(d) > -1e-7)
            d = np.diff(p.H(-y)) / np.diff(-y)
            assert np.all(np.diff(d) < 1e-7)


def test_relations(sym_map, bimodal):
    r = check_relations(build_super_hedge(ConvexPayoff.linear(), sym_map))
    assert r.max_residual < 1e-12
    r = check_relations(build_super_hedge(ConvexPayoff(2.0, 0.0), sym_map))
    assert r.max_residual < 1e-12
    r = check_relations(build_super_hedge(ConvexPayoff.call(1.0), sym_map))
    assert r.max_residual < 1e-6
    r = check_relations(build_super_hedge(ConvexPayoff.call(0.3), build_psi(bimodal)))
    assert r.max_residual < 1e-6


def test_domain_exceeded(sym_map):
    with pytest.raises(DomainExceeded):
        build_super_hedge(ConvexPayoff.call(2 * sym_map.l_max), sym_map)


def test_side_mismatch(sym_map, sym_reversed):
    with pytest.raises(ConfigError):
        build_super_hedge(ConvexPayoff.linear(), sym_reversed)
    with pytest.raises(ConfigError):
        build_sub_hedge(ConvexPayoff.linear(), sym_map)


# --- delta and value function -------------------------------------------------

def test_delta_signs(sym_map):
    p = build_super_hedge(ConvexPayoff.linear(), sym_map)
    # shares = spatial derivative of u: -A+ on the right, -A- on the left
    assert eval_delta(p, 0.3, 0.7) == -1.0
    assert eval_delta(p, -0.3, 0.7) == 1.0
    assert eval_delta(p, 0.0, 0.7) == 1.0


def test_value_function(sym_map):
    p = build_super_hedge(ConvexPayoff.linear(), sym_map)
    l = np.array([0.04, 0.5, 2.0])
    assert np.allclose(eval_u(p, np.sqrt(l), l), l - np.sqrt(l), atol=1e-10)
    q = build_super_hedge(ConvexPayoff.call(1.0), sym_map)
    x = np.linspace(-6, 6, 4801)
    for lv in (0.25, 1.0, 2.25):
        gap = eval_u(q, x, lv) - (q.payoff(lv) - q.H(x))
        assert gap.min() > -1e-7
        phi = math.sqrt(lv)
        at = eval_u(q, np.array([phi, -phi]), lv) - (q.payoff(lv) - q.H(np.array([phi, -phi])))
        assert np.max(np.abs(at)) < 1e-7


# --- sub side -----------------------------------------------------------------

def test_linear_sub(sym_reversed):
    p = build_sub_hedge(ConvexPayoff.linear(), sym_reversed)
    assert np.all(p.A_plus(np.array([0.1, 0.5])) == 1.0)
    assert np.allclose(p.H(np.array([-1.0, 0.4])), [1.0, 0.4], atol=1e-9)
    assert p.price == pytest.approx(0.5, abs=1e-9)


def test_constant_sub(sym_reversed):
    assert build_sub_hedge(ConvexPayoff(0.8, 0.0), sym_reversed).price == pytest.approx(0.8)


def test_sub_below_super(sym_map, sym_reversed, bimodal):
    from vallois.embedding import build_reversed_psi
    rb, sb = build_reversed_psi(bimodal), build_psi(bimodal)
    rng = np.random.default_rng(11)
    for F in [ConvexPayoff.call(k) for k in (0.1, 0.25, 0.5, 0.8)] + _random_payoffs(rng, 0.8, 8):
        assert build_sub_hedge(F, sym_reversed).price <= build_super_hedge(F, sym_map).price + 1e-9
        assert build_sub_hedge(F, rb).price <= build_super_hedge(F, sb).price + 1e-9


def test_sub_concave(sym_reversed):
    p = build_sub_hedge(ConvexPayoff.call(0.25), sym_reversed)
    y = np.linspace(0.0, 6.0, 1201)
    d = np.diff(p.H(y)) / np.diff(y)
    assert np.all(np.diff(d) < 1e-7)


def test_sub_call_value(sym_reversed):
    # E[(L - k)^+] = int_k^{l_max} P(L > l) dl under the reversed rule
    from scipy import integrate
    k = 0.25
    p = build_sub_hedge(ConvexPayoff.call(k), sym_reversed)
    want, _ = integrate.quad(lambda l: float(sym_reversed.local_time_tail(np.array([l]))[0]),
                             k, sym_reversed.l_max, epsabs=1e-12, limit=200)
    assert p.price == pytest.approx(want, abs=1e-6)
