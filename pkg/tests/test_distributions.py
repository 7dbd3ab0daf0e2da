import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtebounds.distributions import (
    CopulaGrid,
    StepCdf,
    ecdf,
    empirical_copula,
    frechet_lower_copula,
    frechet_upper_copula,
    independence_copula,
    kendall_tau,
    quantile,
    spearman_rho,
    tie_fraction,
)
from dtebounds.errors import (
    DegenerateVariance,
    EmptySample,
    LengthMismatch,
    TauOutOfRange,
)


class TestEcdf:
    def test_counting(self):
        f = ecdf([1, 2, 2, 4])
        assert f(2) == 0.75
        assert f(3) == 0.75
        assert f(4) == 1.0
        assert f(0.5) == 0.0

    def test_single_point(self):
        f = ecdf([5.0])
        assert f(4.9) == 0.0
        assert f(5.0) == 1.0

    def test_empty(self):
        with pytest.raises(EmptySample):
            ecdf([])

    def test_dkw_uniform(self):
        # sup |F(y) - y| on a large uniform sample stays within DKW-scale error
        rng = np.random.default_rng(1234)
        u = rng.uniform(size=10_000)
        f = ecdf(u)
        assert np.max(np.abs(f(f.grid) - f.grid)) < 0.03

    def test_determinism(self):
        sample = np.random.default_rng(7).normal(size=50)
        f1, f2 = ecdf(sample), ecdf(sample)
        assert np.array_equal(f1.grid, f2.grid)
        assert np.array_equal(f1.probs, f2.probs)


class TestQuantile:
    def test_basic(self):
        f = ecdf([1, 2, 2, 4])
        assert quantile(f, 0.75) == 2
        assert quantile(f, 0.76) == 4
        assert quantile(f, 1.0) == 4
        assert quantile(f, 0.25) == 1

    def test_out_of_range(self):
        f = ecdf([1, 2])
        for tau in (0.0, -0.1, 1.001):
            with pytest.raises(TauOutOfRange):
                f.quantile(tau)

    def test_galois_random_stepcdf(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            sample = rng.normal(size=rng.integers(1, 40))
            f = ecdf(sample)
            taus = np.linspace(0.01, 1.0, 97)
            q = f.quantile(taus)
            # Q(tau) <= y  iff  tau <= F(y), checked on grid points
            for y in f.grid:
                assert np.array_equal(q <= y, taus <= f(y))

    def test_mean_matches_sample_mean(self):
        sample = np.random.default_rng(3).normal(size=500)
        assert ecdf(sample).mean() == pytest.approx(sample.mean(), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-100, 100), min_size=1, max_size=30, unique=True),
    st.floats(0.001, 1.0),
)
def test_galois_property_hypothesis(values, tau):
    f = ecdf(np.asarray(values))
    q = f.quantile(tau)
    assert tau <= f(q)
    for y in f.grid:
        assert (q <= y) == (tau <= f(y))


class TestStepCdfValidation:
    def test_rejects_decreasing_probs(self):
        with pytest.raises(ValueError):
            StepCdf(np.array([0.0, 1.0]), np.array([0.7, 0.5]))

    def test_rejects_unsorted_grid(self):
        with pytest.raises(ValueError):
            StepCdf(np.array([1.0, 0.0]), np.array([0.5, 1.0]))

    def test_rejects_final_prob_not_one(self):
        with pytest.raises(ValueError):
            StepCdf(np.array([0.0, 1.0]), np.array([0.2, 0.8]))

    def test_monotone_evaluation(self):
        f = ecdf(np.random.default_rng(0).normal(size=100))
        ys = np.linspace(-4, 4, 200)
        assert np.all(np.diff(f(ys)) >= 0)


class TestSpearman:
    def test_comonotone(self):
        x = np.array([3.0, 1.0, 2.0, 5.0, 4.0])
        assert spearman_rho(x, x) == pytest.approx(1.0)

    def test_antimonotone(self):
        x = np.array([3.0, 1.0, 2.0, 5.0, 4.0])
        assert spearman_rho(x, -x) == pytest.approx(-1.0)

    def test_gaussian_copula_closed_form(self):
        # for a Gaussian copula with parameter r, rho_S = (6/pi) asin(r/2)
        rng = np.random.default_rng(2024)
        r = 0.8
        z1 = rng.normal(size=5000)
        z2 = r * z1 + np.sqrt(1 - r**2) * rng.normal(size=5000)
        rho = spearman_rho(z1, z2)
        assert rho == pytest.approx(6 / np.pi * np.arcsin(r / 2), abs=0.03)

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            spearman_rho([1, 2, 3], [1, 2])
        with pytest.raises(LengthMismatch):
            spearman_rho([1, 2], [1, 2])
        with pytest.raises(DegenerateVariance):
            spearman_rho([1, 1, 1], [1, 2, 3])


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(-5000, 5000), min_size=4, max_size=25, unique=True),
    st.sampled_from(["exp", "cube", "affine"]),
)
def test_spearman_invariant_to_increasing_transforms(xs, kind):
    rng = np.random.default_rng(abs(hash(tuple(xs))) % 2**32)
    x = np.asarray(xs, dtype=float) / 100.0
    y = rng.permutation(x)
    transforms = {
        "exp": lambda a: np.exp(a / 50.0),
        "cube": lambda a: a**3 + a,
        "affine": lambda a: 2.5 * a + 7.0,
    }
    base = spearman_rho(x, y)
    assert spearman_rho(transforms[kind](x), y) == pytest.approx(base, abs=1e-12)


class TestKendall:
    def test_monotone_transform_gives_one(self):
        x = np.array([0.3, -1.2, 2.2, 0.9, -0.4])
        assert kendall_tau(x, np.exp(x)) == pytest.approx(1.0)


class TestEmpiricalCopula:
    def test_comonotone_near_upper_bound(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=400)
        grid = empirical_copula(x, 2 * x + 1, resolution=21)
        assert grid.max_abs_diff(frechet_upper_copula(21)) <= 1.0 / 400 + 1e-12

    def test_antimonotone_near_lower_bound(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=400)
        grid = empirical_copula(x, -x, resolution=21)
        assert grid.max_abs_diff(frechet_lower_copula(21)) <= 1.0 / 400 + 1e-12

    def test_independent_near_product(self):
        rng = np.random.default_rng(77)
        x = rng.normal(size=10_000)
        y = rng.normal(size=10_000)
        grid = empirical_copula(x, y, resolution=101)
        assert grid.max_abs_diff(independence_copula(101)) < 0.03

    def test_margins_within_one_over_n(self):
        rng = np.random.default_rng(8)
        n = 250
        grid = empirical_copula(rng.normal(size=n), rng.normal(size=n))
        assert np.max(np.abs(grid.values[:, -1] - grid.u)) <= 1.0 / n + 1e-12
        assert np.max(np.abs(grid.values[-1, :] - grid.v)) <= 1.0 / n + 1e-12

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            empirical_copula([1, 2, 3], [1, 2, 3], resolution=5)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            empirical_copula([1, 2, 3], [1, 2])


class TestCopulaGridValidation:
    def test_exact_grids_validate_strictly(self):
        for grid in (
            independence_copula(51),
            frechet_upper_copula(51),
            frechet_lower_copula(51),
        ):
            grid.validate(tol=1e-9)

    def test_detects_negative_volume(self):
        lattice = np.linspace(0, 1, 11)
        values = np.minimum.outer(lattice, lattice)
        values = values.copy()
        values[5, 5] += 0.2
        with pytest.raises(ValueError):
            CopulaGrid(lattice, lattice, values).validate(tol=1e-9)


def test_tie_fraction():
    assert tie_fraction([1.0, 2.0, 3.0]) == 0.0
    assert tie_fraction([1.0, 1.0, 3.0, 4.0]) == 0.5
