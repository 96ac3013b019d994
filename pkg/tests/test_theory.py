import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patchseg import (
    BoundParams,
    ContractViolation,
    Lattice,
    Neighborhood,
    NoiseSpec,
    build_block_model,
    monte_carlo_error,
    required_gap,
    required_n,
    theorem1_bound,
)
from patchseg.theory import binomial_ci, bound_terms, is_vacuous

EXAMPLE = BoundParams(n_pixels=64, c_max=2, n=200, rho_min=0.2, n_neighbors=9, gap=400.0, sigma=1.0)

positive = st.floats(1e-3, 1e3)
params = st.builds(
    BoundParams,
    n_pixels=st.integers(1, 10_000),
    c_max=st.integers(1, 50),
    n=st.integers(1, 5_000),
    rho_min=st.floats(1e-3, 1.0),
    n_neighbors=st.integers(1, 200),
    gap=st.floats(0.0, 1e4),
    sigma=positive,
)


class TestBound:
    def test_example(self):
        t1, t2 = bound_terms(EXAMPLE)
        assert t1 == pytest.approx(128 * math.exp(-5), rel=1e-14)
        assert t2 == pytest.approx(1800 * math.exp(-25), rel=1e-14)
        assert theorem1_bound(EXAMPLE) == pytest.approx(0.86246, abs=5e-6)
        assert not is_vacuous(theorem1_bound(EXAMPLE))

    def test_infinite_gap_keeps_first_term(self):
        p = BoundParams(64, 2, 200, 0.2, 9, math.inf, 1.0)
        assert theorem1_bound(p) == bound_terms(p)[0]

    def test_vacuous_returned_as_is(self):
        value = theorem1_bound(BoundParams(64, 2, 1, 0.2, 9, 0.0, 1.0))
        assert value > 1 and is_vacuous(value)

    @pytest.mark.parametrize(
        "kwargs", [dict(rho_min=0.0), dict(rho_min=1.5), dict(n=0), dict(gap=-1.0), dict(sigma=-1.0), dict(c_max=0)]
    )
    def test_invalid(self, kwargs):
        base = dict(n_pixels=64, c_max=2, n=200, rho_min=0.2, n_neighbors=9, gap=400.0, sigma=1.0)
        with pytest.raises(ContractViolation):
            BoundParams(**{**base, **kwargs})

    @given(params, st.floats(0.0, 1e3), st.floats(0.0, 1.0))
    def test_monotone_in_gap_and_rho(self, p, dgap, drho):
        more_gap = BoundParams(p.n_pixels, p.c_max, p.n, p.rho_min, p.n_neighbors, p.gap + dgap, p.sigma)
        more_rho = BoundParams(p.n_pixels, p.c_max, p.n, min(1.0, p.rho_min + drho), p.n_neighbors, p.gap, p.sigma)
        assert theorem1_bound(more_gap) <= theorem1_bound(p)
        assert theorem1_bound(more_rho) <= theorem1_bound(p)

    def test_non_monotone_in_n(self):
        values = [theorem1_bound(BoundParams(64, 2, n, 0.2, 9, 200.0, 1.0)) for n in range(1, 20_001, 50)]
        diffs = np.diff(values)
        assert np.any(diffs < 0) and np.any(diffs > 0)
        best = int(np.argmin(values))
        assert 0 < best < len(values) - 1
        # far enough out the linear second term dominates
        assert theorem1_bound(BoundParams(64, 2, 10**9, 0.2, 9, 200.0, 1.0)) > 1


class TestSolvers:
    def test_required_n_example(self):
        assert required_n(0.1, 64, 2, 0.2) == 314 == math.ceil(40 * math.log(2560))

    def test_required_gap_example(self):
        assert required_gap(0.1, 9, 314, 1.0) == pytest.approx(16 * math.log(56520), rel=1e-14)
        assert required_gap(0.1, 9, 314, 1.0) == pytest.approx(175.08, abs=5e-3)

    def test_sigma_doubling(self):
        assert required_gap(0.1, 9, 314, 2.0) == pytest.approx(4 * required_gap(0.1, 9, 314, 1.0), rel=1e-14)

    @given(st.floats(0.01, 0.9), st.integers(1, 5_000), st.integers(1, 25), st.floats(0.01, 1.0))
    def test_c_max_doubling(self, eps, n_pixels, c_max, rho):
        shift = 8 / rho * math.log(2)
        diff = required_n(eps, n_pixels, 2 * c_max, rho) - required_n(eps, n_pixels, c_max, rho)
        assert abs(diff - shift) <= 1.0 + 1e-9

    @given(st.floats(0.001, 0.99), st.integers(1, 5_000), st.integers(1, 25), st.floats(0.01, 1.0))
    def test_required_n_is_smallest(self, eps, n_pixels, c_max, rho):
        n = required_n(eps, n_pixels, c_max, rho)
        term = lambda m: bound_terms(BoundParams(n_pixels, c_max, m, rho, 1, math.inf, 1.0))[0]
        assert term(n) <= eps / 2 * (1 + 1e-12)
        if n > 1:
            assert term(n - 1) > eps / 2 * (1 - 1e-12)

    @given(st.floats(0.001, 0.99), st.integers(1, 200), st.integers(1, 5_000), positive)
    def test_required_gap_identity(self, eps, nbrs, n, sigma):
        gap = required_gap(eps, nbrs, n, sigma)
        t2 = bound_terms(BoundParams(1, 1, n, 1.0, nbrs, gap, sigma))[1]
        assert t2 == pytest.approx(eps / 2, rel=1e-9)

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.5])
    def test_eps_range(self, eps):
        with pytest.raises(ContractViolation):
            required_n(eps, 64, 2, 0.2)
        with pytest.raises(ContractViolation):
            required_gap(eps, 9, 10, 1.0)


class TestBinomialCi:
    def test_zero_errors_clopper_pearson(self):
        lo, hi = binomial_ci(0, 100)
        assert lo == 0.0
        assert hi == pytest.approx(1 - 0.025 ** (1 / 100), rel=1e-10)

    def test_normal_approximation(self):
        half = 1.959963984540054 * math.sqrt(0.05 * 0.95 / 100)
        assert binomial_ci(5, 100) == pytest.approx((0.05 - half, 0.05 + half), rel=1e-10)

    def test_clipped_to_unit_interval(self):
        lo, hi = binomial_ci(100, 100)
        assert lo == hi == 1.0

    @given(st.integers(1, 1_000).flatmap(lambda t: st.tuples(st.integers(0, t), st.just(t))))
    def test_well_formed(self, pair):
        errors, total = pair
        lo, hi = binomial_ci(errors, total)
        assert 0.0 <= lo <= errors / total <= hi <= 1.0

    def test_needs_observations(self):
        with pytest.raises(ContractViolation):
            binomial_ci(0, 0)


def four_block_model(table, sigma):
    return build_block_model(Lattice((4, 4)), 2, [table] * 4, NoiseSpec("gaussian", sigma))


class TestMonteCarlo:
    def test_noiseless_is_error_free(self):
        model = four_block_model([(0.5, 0.0, 1), (0.5, 5.0, -1)], 0.0)
        for algorithm in ("nn", "wmv"):
            report = monte_carlo_error(model, algorithm, 8, Neighborhood.box(2), trials=20, seed=0, workers=1)
            assert report.mean_error == 0.0 and report.ci_low == 0.0
            assert report.error_rates == [0.0] * 20

    def test_conflicting_means_vacuous(self):
        model = four_block_model([(0.5, 1.0, 1), (0.5, 1.0, -1)], 0.5)
        report = monte_carlo_error(model, "nn", 5, Neighborhood.box(2), trials=10, seed=0, workers=1)
        assert report.vacuous and report.bound > 1
        assert 0.0 < report.mean_error <= 1.0

    def test_bound_uses_smallest_gap(self):
        model = four_block_model([(0.5, 0.0, 1), (0.5, 3.0, -1)], 0.5)
        report = monte_carlo_error(model, "wmv", 6, Neighborhood.box(2), trials=15, seed=4, workers=1)
        assert report.params["gap"] == min(report.gaps)
        assert report.bound == theorem1_bound(BoundParams(**report.params))
        assert report.theta == pytest.approx(0.5)

    def test_refuses_small_neighborhood(self):
        model = four_block_model([(0.5, 0.0, 1), (0.5, 5.0, -1)], 0.5)
        with pytest.raises(ContractViolation):
            monte_carlo_error(model, "nn", 4, Neighborhood.box(1), trials=2)

    def test_refuses_jigsaw_violation(self):
        model = build_block_model(
            Lattice((2, 2)), 1, [[(0.5, 0.0, 1), (0.5, 0.0, -1)]] + [[(1.0, 0.0, 1)]] * 3,
            NoiseSpec("gaussian", 0.5), jigsaw_radius=0,
        )
        from dataclasses import replace

        model = replace(model, jigsaw=Neighborhood.explicit([(0, 1)]))
        with pytest.raises(ContractViolation):
            monte_carlo_error(model, "nn", 4, Neighborhood.box(1), trials=2)

    def test_unknown_algorithm(self):
        model = four_block_model([(1.0, 0.0, 1)], 0.5)
        with pytest.raises(ContractViolation):
            monte_carlo_error(model, "admm", 4, Neighborhood.box(2), trials=2)

    def test_reproducible_and_serializable(self):
        model = four_block_model([(0.5, 0.0, 1), (0.5, 2.0, -1)], 0.5)
        a = monte_carlo_error(model, "nn", 6, Neighborhood.box(2), trials=12, seed=9, workers=1)
        b = monte_carlo_error(model, "nn", 6, Neighborhood.box(2), trials=12, seed=9, workers=3)
        assert a.to_json() == b.to_json()
        doc = json.loads(a.to_json())
        assert doc["theta"] == "inf" and len(doc["error_rates"]) == 12
        assert all(0.0 <= r <= 1.0 for r in doc["error_rates"])
        rows = list(csv.DictReader(io.StringIO(a.to_csv())))
        assert len(rows) == 1 and rows[0]["algorithm"] == "nn"
        assert float(rows[0]["min_gap"]) == min(a.gaps)
