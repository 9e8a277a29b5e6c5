import math

import numpy as np
import pytest
import scipy.integrate

from qelab import anderson, esd, graphs
from qelab.errors import ConfigError

SPEC = anderson.PotentialSpec()


def test_kesten_mckay_values():
    assert esd.kesten_mckay_density(0.0, 2) == pytest.approx(math.sqrt(2) / (3 * math.pi), abs=1e-12)
    assert esd.kesten_mckay_density(0.0, 2) == pytest.approx(0.15005, abs=1e-5)
    assert esd.kesten_mckay_density(2 * math.sqrt(2), 2) == 0.0
    assert esd.kesten_mckay_density(-5.0, 2) == 0.0


def test_kesten_mckay_two_forms_agree():
    for q in (2, 3):
        for lam in np.linspace(-2 * math.sqrt(q) + 1e-9, 2 * math.sqrt(q) - 1e-9, 101):
            a = esd.kesten_mckay_density(float(lam), q)
            b = esd.kesten_mckay_density_rational(float(lam), q)
            assert abs(a - b) < 1e-10


def test_kesten_mckay_normalization():
    for q in (2, 3):
        edge = 2 * math.sqrt(q)
        total, err = scipy.integrate.quad(
            lambda x: esd.kesten_mckay_density(x, q), -edge, edge, limit=200
        )
        assert abs(total - 1.0) < 1e-6


def test_kesten_mckay_cdf_monotone():
    cdf = esd.kesten_mckay_cdf(2)
    xs = np.linspace(-3.0, 3.0, 50)
    vals = cdf(xs)
    assert vals[0] == 0.0 and vals[-1] == 1.0
    assert np.all(np.diff(vals) >= 0)


def test_ids_density_free_closed_form():
    est = esd.ids_density(2, SPEC, 0.0, 0.0, 0.0, samples=10, seed=1)
    assert est.density == pytest.approx(esd.kesten_mckay_density(0.0, 2), abs=1e-14)
    assert est.stderr == 0.0
    # smoothed at eta > 0 against the closed complex form
    est2 = esd.ids_density(2, SPEC, 0.0, 0.5, 0.1, samples=10, seed=1)
    from qelab import tree_green as tg

    zeta = tg.free_forward_green_complex(0.5 + 0.1j, 2)
    diag = tg.green_diagonal([zeta] * 3, 0.0, 0.0, 0.5 + 0.1j)
    assert est2.density == pytest.approx(diag.imag / math.pi, abs=1e-10)


def test_ids_density_mc_consistency():
    a = esd.ids_density(2, SPEC, 0.2, 0.0, 0.1, samples=2500, seed=3, depth=10)
    b = esd.ids_density(2, SPEC, 0.2, 0.0, 0.1, samples=10000, seed=4, depth=10)
    assert abs(a.density - b.density) <= 3 * math.hypot(a.stderr, b.stderr)


def test_ids_density_symmetric_potential():
    a = esd.ids_density(2, SPEC, 0.2, 0.8, 0.1, samples=4000, seed=5, depth=10)
    b = esd.ids_density(2, SPEC, 0.2, -0.8, 0.1, samples=4000, seed=6, depth=10)
    assert abs(a.density - b.density) <= 3 * math.hypot(a.stderr, b.stderr)


def test_histogram_counts_and_cdf():
    g = graphs.generate_random_regular(200, 2, seed=1)
    pot = anderson.sample_potential(200, SPEC, 0.2, seed=1)
    sd = anderson.eigendecompose(anderson.assemble(g, pot))
    hist = esd.spectral_histogram(sd, 2, 0.2, 1.0)
    assert hist.n == 200
    assert hist.cdf(-10.0) == 0.0 and hist.cdf(10.0) == 1.0


def test_esd_compare_self_and_k4():
    g = graphs.generate_random_regular(200, 2, seed=1)
    pot = anderson.sample_potential(200, SPEC, 0.0, seed=1)
    sd = anderson.eigendecompose(anderson.assemble(g, pot))
    # self comparison: empirical CDF against itself
    vals = sd.eigenvalues

    def empirical(x):
        return np.searchsorted(vals, x, side="right") / vals.size

    assert esd.esd_compare(sd, empirical) <= 1.0 / vals.size + 1e-12
    # K4 is far from the tree law
    k4 = graphs.generate_random_regular(4, 2, seed=1)
    sd4 = anderson.eigendecompose(
        anderson.assemble(k4, anderson.sample_potential(4, SPEC, 0.0, seed=1))
    )
    assert esd.esd_compare(sd4, esd.kesten_mckay_cdf(2)) > 0.3


def test_tree_return_moments_free():
    assert esd.tree_return_moment(2, 1, 0.0, SPEC) == 0.0
    assert esd.tree_return_moment(2, 2, 0.0, SPEC) == 3.0
    assert esd.tree_return_moment(2, 3, 0.0, SPEC) == 0.0
    assert esd.tree_return_moment(2, 4, 0.0, SPEC) == 15.0
    assert esd.tree_return_moment(3, 2, 0.0, SPEC) == 4.0


def test_tree_return_moments_match_kesten_mckay():
    for k in (2, 4, 6, 8):
        walk = esd.tree_return_moment(2, k, 0.0, SPEC)
        quad, _ = scipy.integrate.quad(
            lambda x: x**k * esd.kesten_mckay_density(x, 2),
            -2 * math.sqrt(2), 2 * math.sqrt(2), limit=400,
        )
        assert walk == pytest.approx(quad, rel=1e-6)


def test_tree_return_moment_with_disorder():
    got = esd.tree_return_moment(2, 2, 0.2, SPEC)
    assert got == pytest.approx(3 + 0.04 / 3, abs=1e-14)
    # k = 4: A-walks + stay patterns; cross-check against a small dense MC
    from qelab import tree_green as tg

    h, _, _ = tg.materialized_tree_operator(2, 2, 3, 0.2, SPEC, seed=1)
    rng = np.random.default_rng(1)
    acc = 0.0
    m = 4000
    for _ in range(m):
        om = rng.uniform(-1, 1, size=h.shape[0])
        hh = h.copy()
        hh[np.arange(len(om)), np.arange(len(om))] = 0.2 * om
        acc += np.linalg.matrix_power(hh, 4)[0, 0]
    mc = acc / m
    exact = esd.tree_return_moment(2, 4, 0.2, SPEC)
    assert abs(exact - mc) < 0.05


def test_tree_return_moment_cap():
    with pytest.raises(ConfigError):
        esd.tree_return_moment(2, 13, 0.0, SPEC)


def test_lln_moment_check_zero_disorder_below_girth():
    g = graphs.generate_random_regular(500, 2, seed=2)
    pot = anderson.sample_potential(500, SPEC, 0.0, seed=2)
    gr = graphs.girth(g)
    rows = esd.lln_moment_check(g, pot, min(gr - 1, 6))
    for row in rows:
        assert row.abs_diff == 0.0


def test_lln_moment_check_k1_k2():
    g = graphs.generate_random_regular(500, 2, seed=3)
    pot = anderson.sample_potential(500, SPEC, 0.2, seed=3)
    rows = esd.lln_moment_check(g, pot, 2)
    k1, k2 = rows
    assert k1.graph_moment == pytest.approx(0.2 * pot.omega.mean(), rel=1e-12)
    assert k1.tree_moment == 0.0
    assert k2.graph_moment == pytest.approx(3 + 0.04 * (pot.omega**2).mean(), rel=1e-12)
    assert k2.tree_moment == pytest.approx(3 + 0.04 / 3, abs=1e-14)
    fluctuation = 0.04 * (pot.omega**2).std() / math.sqrt(500)
    assert k2.abs_diff <= 3 * fluctuation
