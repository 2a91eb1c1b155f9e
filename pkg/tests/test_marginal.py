import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from vallois.errors import ConfigError, NonFiniteDensity
from vallois.marginal import (Bimodal, DeltaMu, DensitySpec, Gaussian, SymExp, SymmetricMarginal,
                              TwoSidedExponential, convex_order_check, lower_tail_mass,
                              solve_alpha, tail_mass, validate_marginal)

# closed forms
SYM_EXP_TAIL_1 = math.exp(-2.0) / 2          # 0.06766764161830635
BIMODAL_TAIL_1 = math.exp(-1.25) / 2         # 0.14325239843009505
ALPHA = (2.5 * math.exp(-1.25) - math.exp(-2.0)) / ((math.exp(-1.25) - math.exp(-2.0)) / 2)


def test_frozen_constants():
    assert SYM_EXP_TAIL_1 == pytest.approx(0.0676676416183, abs=1e-12)
    assert BIMODAL_TAIL_1 == pytest.approx(0.1432523984301, abs=1e-12)
    assert ALPHA == pytest.approx(7.685765403207, abs=1e-11)


@pytest.mark.parametrize("m", [SymExp(), Gaussian(), Bimodal(),
                               Gaussian(DensitySpec.builtin("gaussian", t=0.25))])
def test_tail_mass_at_zero_is_half(m):
    assert tail_mass(m, 0.0) == pytest.approx(0.5, rel=1e-8)


def test_tail_mass_examples(sym_exp, bimodal):
    assert tail_mass(sym_exp, 1.0) == pytest.approx(SYM_EXP_TAIL_1, rel=1e-8)
    assert tail_mass(bimodal, 1.0) == pytest.approx(BIMODAL_TAIL_1, rel=1e-8)
    assert sym_exp.tail(np.array([1.0]))[0] == pytest.approx(SYM_EXP_TAIL_1, rel=1e-14)


def test_tail_mass_rejects_negative_x(sym_exp):
    with pytest.raises(ValueError):
        tail_mass(sym_exp, -1.0)


class _NanDensity(SymExp):
    def density(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 2.0, np.nan, np.exp(-2 * x))


def test_tail_mass_raises_on_nan_density():
    with pytest.raises(NonFiniteDensity):
        tail_mass(_NanDensity(), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 6.0), st.sampled_from(["sym_exp", "gaussian", "bimodal"]))
def test_tail_plus_lower_is_half(x, name):
    m = SymmetricMarginal.from_spec(name)
    assert tail_mass(m, x) + lower_tail_mass(m, x) == pytest.approx(0.5, abs=1e-8)


# the interpolant has a kink at every node, which quad reports as roundoff
@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("name", ["sym_exp", "gaussian", "bimodal"])
def test_tabulated_copy_matches_builtin(name):
    m = SymmetricMarginal.from_spec(name)
    x = np.geomspace(1e-4, m.x_max, 2000)
    tab = SymmetricMarginal.from_spec(DensitySpec.tabulated(x, m.density(x)))
    probe = np.array([0.0, 0.1, 0.5, 1.0, 1.7, 3.0])
    assert np.max(np.abs(tab.tail(probe) - m.tail(probe))) < 1e-6
    for p in probe[1:4]:
        assert tail_mass(tab, p) == pytest.approx(float(m.tail(np.array([p]))[0]), abs=1e-6)


def test_validate_builtins_pass():
    for m in (SymExp(), Gaussian(), Bimodal()):
        rep = validate_marginal(m)
        assert rep.passed, rep.failures()


def test_validate_negative_entry_fails_positivity():
    x = np.linspace(0.0, 10.0, 200)
    d = np.exp(-2 * x)
    d[50] = -0.1
    rep = validate_marginal(SymmetricMarginal.from_spec(DensitySpec.tabulated(x, d)))
    assert not rep.checks["positivity"].passed
    assert "positivity" in rep.failures()


def test_validate_reports_unnormalised_mass():
    x = np.linspace(0.0, 10.0, 200)
    rep = validate_marginal(SymmetricMarginal.from_spec(DensitySpec.tabulated(x, 3 * np.exp(-2 * x))))
    assert not rep.checks["unit_mass"].passed
    assert rep.checks["unit_mass"].value == pytest.approx(3.0, rel=1e-6)


def test_abs_moments(sym_exp, gauss1):
    assert sym_exp.abs_moment == pytest.approx(0.5, rel=1e-10)
    assert gauss1.abs_moment == pytest.approx(math.sqrt(2 / math.pi), rel=1e-10)


def test_bimodal_alpha_root():
    assert abs(solve_alpha() - ALPHA) < 1e-10


def test_bimodal_density_continuous_at_one(bimodal):
    lo, hi = bimodal.density(np.array([1 - 1e-12, 1 + 1e-12]))
    assert lo == pytest.approx(hi, rel=1e-9)
    assert bimodal.density(np.array([0.0]))[0] == 0.0


def test_gaussian_scaling():
    g = Gaussian(DensitySpec.builtin("gaussian", t=0.5))
    x = np.array([0.3, 1.0, 2.0])
    assert np.allclose(g.tail(x), Gaussian().tail(x / math.sqrt(0.5)), rtol=1e-14)


def test_delta_mu_tail_vanishes_at_zero(pair):
    assert abs(pair.delta_tail(np.array([0.0]))[0]) < 1e-15
    # exact excess agrees with the plain difference where it is well conditioned
    x = np.array([0.3, 0.9, 1.2])
    plain = pair.mu2.tail(x) - pair.mu1.tail(x)
    assert np.allclose(pair.delta_tail(x), plain, rtol=1e-12, atol=1e-16)
    plain_d = pair.mu2.density(x) - pair.mu1.density(x)
    assert np.allclose(pair.delta_density(x), plain_d, rtol=1e-12, atol=1e-16)


def test_convex_order_identical_pair_is_zero(sym_exp):
    rep = convex_order_check(DeltaMu(sym_exp, sym_exp), [0.0, 0.5, 1.0, 2.0])
    assert np.all(rep.differences == 0.0) and rep.passed


def test_convex_order_example_pair_passes(pair):
    assert convex_order_check(pair, np.linspace(-4, 4, 33)).passed


def test_convex_order_decreasing_variance_fails(gauss1):
    small = Gaussian(DensitySpec.builtin("gaussian", t=0.5))
    rep = convex_order_check(DeltaMu(gauss1, small), np.linspace(-3, 3, 25))
    assert not rep.passed
    # oracle: call price difference at K=0 is E|X|/2 difference
    k0 = rep.differences[12]
    assert k0 == pytest.approx((math.sqrt(0.5) - 1.0) / math.sqrt(2 * math.pi), rel=1e-7)


def test_convex_order_needs_strikes(pair):
    with pytest.raises(ValueError):
        convex_order_check(pair, [])


def test_spec_json_round_trip(tmp_path):
    doc = {"kind": "builtin", "name": "gaussian", "params": {"t": 0.5}}
    spec = DensitySpec.from_json(doc)
    assert DensitySpec.from_json(json.dumps(spec.to_json())) == spec
    assert DensitySpec.parse("gaussian:t=0.5") == spec
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"kind": "tabulated", "points": [[0, 2], [1, 1], [2, 0.5]]}))
    assert DensitySpec.parse(str(p)).kind == "tabulated"


@pytest.mark.parametrize("bad", ["nosuch", "gaussian:s=1", "gaussian:t=-1", "gaussian:t"])
def test_spec_rejects_bad_input(bad):
    with pytest.raises(ConfigError):
        DensitySpec.parse(bad)


def test_spec_rejects_unsorted_table():
    with pytest.raises(ConfigError):
        DensitySpec.tabulated([0.0, 2.0, 1.0], [1.0, 1.0, 1.0])
    with pytest.raises(ConfigError):
        DensitySpec.from_json({"kind": "tabulated", "points": [[0, 1], [1, 1]], "extra": 1})


def test_sampling_matches_law(sym_exp, rng):
    s = sym_exp.sample(20000, rng)
    assert abs(s.mean()) < 4 * 0.5 * math.sqrt(2) / math.sqrt(s.size)
    assert np.mean(np.abs(s)) == pytest.approx(0.5, rel=0.03)


def test_two_sided_exponential_is_centered():
    law = TwoSidedExponential(2.0, 1.0)
    f = lambda x: float(law.density(np.array([x]))[0])
    mass = quad(f, -np.inf, 0)[0] + quad(f, 0, np.inf)[0]
    mean = quad(lambda x: x * f(x), -np.inf, 0)[0] + quad(lambda x: x * f(x), 0, np.inf)[0]
    assert mass == pytest.approx(1.0, abs=1e-10)
    assert mean == pytest.approx(0.0, abs=1e-10)
    assert law.upper_tail(np.array([0.0]))[0] == pytest.approx(2.0 / 3.0)
