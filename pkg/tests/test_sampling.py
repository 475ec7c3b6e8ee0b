import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from bevproj.sampling import (
    SIGMA_MIN,
    Deterministic,
    Gauss2,
    Stochastic,
    bilinear_sample,
    bilinear_sample_many,
    draw_locations,
    draw_samples,
    gaussian_pdf2,
    keyed_uniforms,
    parse_mode,
    standard_normal_pairs,
)

FIELD = np.array([[[0.0, 1.0], [2.0, 3.0]]])


# --- bilinear -------------------------------------------------------------------

def test_bilinear_centre_of_2x2():
    val, inb = bilinear_sample(FIELD, (0.5, 0.5))
    assert inb and val[0] == 1.5


def test_bilinear_at_integer_pixel():
    val, inb = bilinear_sample(FIELD, (0.0, 0.0))
    assert inb and val[0] == 0.0
    val, _ = bilinear_sample(FIELD, (1.0, 1.0))
    assert val[0] == 3.0


def test_bilinear_out_of_bounds():
    val, inb = bilinear_sample(FIELD, (-0.1, 0.0))
    assert not inb and val[0] == 0.0
    _, inb = bilinear_sample(FIELD, (1.0 + 1e-12, 0.0))
    assert not inb


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3),
       st.floats(0, 11), st.floats(0, 7))
def test_bilinear_exact_on_affine(a, b, c, u, v):
    vv, uu = np.mgrid[0:8, 0:12].astype(float)
    f = a + b * uu + c * vv
    val, inb = bilinear_sample(f[None], (u, v))
    assert inb
    assert abs(val[0] - (a + b * u + c * v)) < 1e-12


def test_bilinear_many_channels_and_shape(rng):
    f = rng.standard_normal((4, 6, 9))
    u = rng.uniform(0, 8, (3, 5))
    v = rng.uniform(0, 5, (3, 5))
    vals, inb = bilinear_sample_many(f, u, v)
    assert vals.shape == (4, 3, 5) and inb.all()
    one, _ = bilinear_sample(f, (u[1, 2], v[1, 2]))
    np.testing.assert_allclose(vals[:, 1, 2], one)


# --- density ------------------------------------------------------------------------

@pytest.mark.parametrize("loc, chol, expected", [
    ((0.0, 0.0), (1.0, 0.0, 1.0), 1 / (2 * math.pi)),
    ((1.0, 0.0), (1.0, 0.0, 1.0), math.exp(-0.5) / (2 * math.pi)),
    ((0.0, 0.0), (2.0, 0.0, 2.0), 1 / (8 * math.pi)),
])
def test_pdf_analytic_values(loc, chol, expected):
    assert gaussian_pdf2(loc, Gauss2((0.0, 0.0), chol)) == pytest.approx(expected, abs=1e-12)
    assert gaussian_pdf2(loc, Gauss2((0.0, 0.0), chol)) == pytest.approx(expected, rel=1e-9)


cholesky = st.tuples(st.floats(0.2, 3.0), st.floats(-2.0, 2.0), st.floats(0.2, 3.0))


@given(cholesky, st.floats(-5, 5), st.floats(-5, 5))
def test_pdf_matches_scipy(chol, dx, dy):
    g = Gauss2((1.0, -2.0), chol)
    ref = stats.multivariate_normal(mean=g.mean, cov=g.cov).pdf([1.0 + dx, -2.0 + dy])
    assert gaussian_pdf2((1.0 + dx, -2.0 + dy), g) == pytest.approx(ref, rel=1e-9, abs=1e-300)


@given(cholesky)
def test_pdf_integrates_to_one(chol):
    g = Gauss2((0.0, 0.0), chol)
    s = float(np.sqrt(np.max(np.linalg.eigvalsh(g.cov))))
    step = s / 20
    ax = np.arange(-6 * s, 6 * s + step / 2, step)
    X, Y = np.meshgrid(ax, ax)
    from bevproj.sampling import gaussian_pdf2_many
    mass = gaussian_pdf2_many(X, Y, *chol).sum() * step * step
    assert abs(mass - 1) < 0.01


def test_gauss2_rejects_small_diagonal():
    with pytest.raises(ValueError):
        Gauss2((0, 0), (SIGMA_MIN / 2, 0.0, 1.0))


# --- sampling -------------------------------------------------------------------------

def test_deterministic_k1_is_mean():
    locs = draw_samples(Gauss2((3.0, 4.0), (2.0, 0.5, 1.0)), 1, Deterministic())
    np.testing.assert_array_equal(locs, [[3.0, 4.0]])


def test_deterministic_k5_axes():
    locs = draw_samples(Gauss2((3.0, 4.0)), 5, Deterministic())
    expected = [[3, 4], [4, 4], [3, 5], [2, 4], [3, 3]]
    np.testing.assert_allclose(locs, expected, atol=1e-15)


def test_deterministic_pattern_goes_through_cholesky():
    g = Gauss2((0.0, 0.0), (2.0, 1.0, 3.0))
    locs = draw_samples(g, 5, Deterministic())
    z = np.array([[0, 0], [1, 0], [0, 1], [-1, 0], [0, -1]], float)
    np.testing.assert_allclose(locs, z @ g.L.T, atol=1e-15)


def test_k_zero_rejected():
    with pytest.raises(ValueError):
        draw_samples(Gauss2((0, 0)), 0, Deterministic())


def test_stochastic_mean_lln():
    locs = draw_samples(Gauss2((5.0, -3.0)), 100_000, Stochastic(11))
    assert np.all(np.abs(locs.mean(0) - (5.0, -3.0)) < 0.02)


@pytest.mark.parametrize("chol", [(1.0, 0.0, 1.0), (2.0, 1.5, 0.5), (0.3, -0.4, 1.2)])
def test_stochastic_covariance(chol):
    g = Gauss2((0.0, 0.0), chol)
    locs = draw_samples(g, 100_000, Stochastic(3))
    emp = np.cov(locs.T)
    assert np.linalg.norm(emp - g.cov) / np.linalg.norm(g.cov) < 0.03


def test_normals_pass_ks_test():
    z = standard_normal_pairs(5, 0, np.arange(200), 100).ravel()
    assert stats.kstest(z, "norm").pvalue > 1e-3


# independent pure-Python SplitMix64 keyed generator (oracle for keyed_uniforms)
_MASK = (1 << 64) - 1


def _mix(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _oracle_uniform(seed, stream, cell, ctr):
    key = _mix(_mix((seed + 0x9E3779B97F4A7C15) & _MASK) ^ ((stream * 0xD1B54A32D192ED03) & _MASK))
    x = _mix(key ^ ((cell * 0xA24BAED4963EE407) & _MASK))
    x = _mix((x + ctr * 0x9E3779B97F4A7C15) & _MASK)
    return ((x >> 11) + 0.5) / 2.0**53


@given(st.integers(0, 2**63), st.integers(0, 1000), st.integers(0, 10**6), st.integers(0, 200))
def test_keyed_uniforms_match_reference(seed, stream, cell, ctr):
    got = float(keyed_uniforms(seed, stream, np.array([cell]), np.array([ctr]))[0])
    assert got == _oracle_uniform(seed, stream, cell, ctr)
    assert 0.0 < got < 1.0


def test_samples_are_order_independent():
    mean = np.zeros((50, 2))
    chol = np.tile([1.0, 0.0, 1.0], (50, 1))
    ids = np.arange(50)
    full = draw_locations(mean, chol, 8, Stochastic(9), ids, stream=2)
    perm = np.random.default_rng(0).permutation(50)
    shuffled = draw_locations(mean[perm], chol[perm], 8, Stochastic(9), ids[perm], stream=2)
    assert shuffled.tobytes() == full[perm].tobytes()
    # the first K samples of a longer draw are the same draws
    longer = draw_locations(mean, chol, 16, Stochastic(9), ids, stream=2)
    assert longer[:, :8].tobytes() == full.tobytes()


def test_seed_and_stream_change_draws():
    g = Gauss2((0.0, 0.0))
    a = draw_samples(g, 8, Stochastic(1))
    assert not np.array_equal(a, draw_samples(g, 8, Stochastic(2)))
    assert not np.array_equal(a, draw_samples(g, 8, Stochastic(1), stream=1))
    assert not np.array_equal(a, draw_samples(g, 8, Stochastic(1), cell_id=1))
    assert np.array_equal(a, draw_samples(g, 8, Stochastic(1)))


def test_parse_mode():
    assert parse_mode("stochastic", 4) == Stochastic(4)
    assert parse_mode("Deterministic") == Deterministic()
    with pytest.raises(ValueError):
        parse_mode("halton")
