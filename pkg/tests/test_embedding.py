import math

import numpy as np
import pytest

from vallois.embedding import (build_phi_general, build_psi, build_reversed_psi, local_time_tail,
                               read_embedding_csv, write_embedding_csv)
from vallois.errors import AssumptionViolation, GammaDivergence
from vallois.marginal import DensitySpec, RealLine, SymExp, SymmetricMarginal, TwoSidedExponential

E2 = 0.1353352832366127   # e^{-2}
E4 = 0.01831563888873418  # e^{-4}


def test_sym_exp_psi_is_square(sym_map):
    x = sym_map.x
    assert np.max(np.abs(sym_map.psi(x) - x**2)) < 1e-8
    q = np.linspace(0, 8, 97)
    assert np.max(np.abs(sym_map.psi(q) - q**2) / np.maximum(q**2, 1e-300)) < 1e-8


def test_sym_exp_gamma_is_twice_sqrt(sym_map):
    l = np.array([0.01, 0.25, 1.0, 4.0, 30.0])
    assert np.allclose(sym_map.gamma(l), 2 * np.sqrt(l), rtol=1e-9)


def test_psi_zero_at_origin(sym_map, bimodal, gauss1):
    for e in (sym_map, build_psi(bimodal), build_psi(gauss1)):
        assert e.psi(np.array([0.0]))[0] == 0.0
        assert e.gamma(np.array([0.0]))[0] == 0.0


def test_local_time_tail_examples(sym_map):
    assert local_time_tail(sym_map, np.array([0.0]))[0] == 1.0
    assert local_time_tail(sym_map, np.array([1.0]))[0] == pytest.approx(E2, rel=1e-9)
    assert local_time_tail(sym_map, np.array([4.0]))[0] == pytest.approx(E4, rel=1e-9)


def test_bimodal_psi_is_fifth_power_below_one(bimodal):
    e = build_psi(bimodal)
    x = np.linspace(0.0, 1.0, 41)
    assert np.max(np.abs(e.psi(x) - x**5)) < 1e-9


@pytest.mark.parametrize("name", ["sym_exp", "bimodal", "gaussian"])
def test_tail_identity(name):
    m = SymmetricMarginal.from_spec(name)
    e = build_psi(m)
    x = m.grid(512)[1:]
    x = x[m.tail(x) > 1e-12]
    rel = np.abs(np.exp(-e.gamma_at_psi(x)) / (2 * m.tail(x)) - 1)
    assert rel.max() < 1e-6


def test_round_trip_and_monotone(sym_map, bimodal):
    for e in (sym_map, build_psi(bimodal)):
        x = e.x[1:]
        assert np.all(np.diff(e.psi_values) > 0)
        assert np.max(np.abs(e.phi(e.psi(x)) - x) / x) < 1e-8


def test_gamma_large_at_l_max(sym_map):
    assert math.exp(-sym_map.gamma(np.array([sym_map.l_max]))[0]) < 1e-12


def test_log_ratio_method_agrees(gauss1):
    a = build_psi(gauss1)
    b = build_psi(gauss1, method="log_ratio")
    x = np.linspace(0.0, 6.0, 61)
    assert np.max(np.abs(a.psi(x) - b.psi(x)) / np.maximum(a.psi(x), 1e-12)) < 1e-8


def test_exp_gamma_integral_closed_form(sym_map):
    # int_0^l e^{2 sqrt z} dz = e^{2 sqrt l}(sqrt l - 1/2) + 1/2
    l = np.array([0.25, 1.0, 9.0])
    want = np.exp(2 * np.sqrt(l)) * (np.sqrt(l) - 0.5) + 0.5
    assert np.allclose(sym_map.exp_gamma_integral(l), want, rtol=1e-9)


class _NanHazard(SymExp):
    def density(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x > 0.5) & (x < 0.6), np.inf, np.exp(-2 * x))

    def hazard(self, x):
        return self.density(x) / self.tail(x)


def test_gamma_divergence_on_non_finite_hazard():
    with pytest.raises(GammaDivergence):
        build_psi(_NanHazard(), validate=False)


def test_invalid_marginal_rejected():
    x = np.linspace(0, 10, 100)
    m = SymmetricMarginal.from_spec(DensitySpec.tabulated(x, 5 * np.exp(-2 * x)))
    with pytest.raises(AssumptionViolation):
        build_psi(m)


# --- reversed map -------------------------------------------------------------

def test_reversed_map_top_level(sym_reversed):
    # psi(0) = int_0^inf 2 y e^{-2y} / (1 - e^{-2y}) dy = pi^2 / 12
    assert sym_reversed.l_max == pytest.approx(math.pi**2 / 12, rel=1e-9)
    assert sym_reversed.kappa == pytest.approx(1.0, rel=1e-3)
    assert sym_reversed.metadata["derived"] is True


def test_reversed_map_law(sym_exp, sym_reversed):
    # P(L > psi(x)) = mu([0, x]) / mu([0, x_max])
    x = np.array([0.05, 0.3, 1.0, 2.5])
    lhs = np.exp(-sym_reversed.gamma_at_psi(x))
    rhs = sym_exp.lower_mass(x) / sym_exp.lower_mass(np.array([sym_reversed.x_max]))
    assert np.allclose(lhs, rhs, rtol=1e-9)
    l = sym_reversed.psi(x)
    assert np.all(np.diff(l) < 0)
    assert np.allclose(sym_reversed.phi(l), x, rtol=1e-8)


def test_reversed_map_tail_identity_bimodal(bimodal):
    r = build_reversed_psi(bimodal)
    x = np.array([0.2, 0.8, 1.3])
    lhs = np.exp(-r.gamma_at_psi(x))
    assert np.allclose(lhs, bimodal.lower_mass(x) / bimodal.lower_mass(np.array([r.x_max])),
                       rtol=1e-8)


# --- asymmetric laws ----------------------------------------------------------

@pytest.fixture(scope="module")
def general_sym():
    return build_phi_general(RealLine(SymExp()))


def test_general_solver_recovers_symmetric_map(general_sym):
    l = np.array([0.01, 0.5, 1.0, 4.0, 16.0])
    assert np.allclose(general_sym.phi_plus(l), np.sqrt(l), rtol=1e-8)
    assert np.allclose(general_sym.phi_minus(l), -np.sqrt(l), rtol=1e-8)
    assert np.allclose(general_sym.gamma(l), 2 * np.sqrt(l), rtol=1e-8)


def test_general_two_sided_exponential():
    law = TwoSidedExponential(2.0, 1.0)
    g = build_phi_general(law)
    l = np.geomspace(1e-3, 0.5 * g.l_max, 40)
    up, dn = g.phi_plus(l), g.phi_minus(l)
    assert np.all(np.diff(up) > 0) and np.all(np.diff(dn) < 0)
    outside = law.upper_tail(up) + law.lower_tail(dn)
    assert np.max(np.abs(np.exp(-g.gamma(l)) / outside - 1)) < 1e-7


def test_csv_round_trip(tmp_path, sym_map, sym_reversed):
    p = tmp_path / "m.csv"
    write_embedding_csv(sym_map, p, extra_points=[0.25, 0.5, 1.0])
    header = p.read_text().splitlines()[0]
    assert header == "x,psi,gamma_at_psi"
    back = read_embedding_csv(p)
    x = np.array([0.1, 1.0, 3.0])
    assert np.allclose(back.psi(x), x**2, rtol=1e-8)
    assert np.allclose(back.gamma_at_psi(x), 2 * x, rtol=1e-8)
    write_embedding_csv(sym_reversed, p)
    rb = read_embedding_csv(p)
    assert rb.reversed and rb.l_max == pytest.approx(sym_reversed.l_max, rel=1e-15)


@pytest.mark.parametrize("name", ["sym_exp", "bimodal", "gaussian"])
def test_expected_local_time_is_mean_abs(name):
    # int_0^inf e^{-gamma(l)} dl = E|X| = 2 int_0^inf x mu(x) dx
    from scipy import integrate
    from vallois.hedging import ConvexPayoff, analytic_price
    m = SymmetricMarginal.from_spec(name)
    e = build_psi(m)
    pts = [b for b in m.breakpoints if 0 < b < m.x_max]
    want = 2 * integrate.quad(lambda x: x * m.density(np.array([x]))[0], 0, m.x_max,
                              points=pts or None, epsabs=1e-13, limit=200)[0]
    assert analytic_price(ConvexPayoff.linear(), e) == pytest.approx(want, abs=1e-6)


# --- Monte-Carlo oracles --------------------------------------------------------

def _ks(barrier, law, cfg):
    from vallois.simulate import EmpiricalCDF, ks_distance, simulate_stopped
    s = simulate_stopped(barrier, cfg)
    return ks_distance(EmpiricalCDF.from_samples(s), law, (-0.1, 0.1))


@pytest.mark.slow
def test_reversed_map_mc_refined(sym_reversed):
    from vallois.simulate import SimConfig
    cfg = SimConfig(dt=1 / 16000, eps=0.02, n_paths=2**16, seed=3)
    assert _ks(sym_reversed, RealLine(SymExp()), cfg) <= 0.02


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="discretisation overshoot at default dt/eps (KS about 0.021)")
def test_reversed_map_mc_default(sym_reversed):
    from vallois.simulate import SimConfig
    assert _ks(sym_reversed, RealLine(SymExp()), SimConfig()) <= 0.02


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="near-zero deficit of the window scheme, as for the "
                   "symmetric map")
def test_general_map_mc_default():
    from vallois.simulate import SimConfig
    law = TwoSidedExponential(2.0, 1.0)
    assert _ks(build_phi_general(law), law, SimConfig()) <= 0.02
