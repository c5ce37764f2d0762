import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from errorlayers.mixture import (
    CapacityError,
    ErrorSchedule,
    GaussianSpec,
    ScaleMixture,
    aggregate_multipliers,
    binomial_multipliers,
    density,
    enumerate_multipliers,
    log_density_curve,
    mixture_from,
    sign_matrix,
)
from errorlayers.tail_risk import schedule_exceedance

PHI0 = 1.0 / math.sqrt(2.0 * math.pi)


def brute_force_multipliers(epsilons, probs):
    """Reference enumeration with plain Python products over explicit sign tuples."""
    out = []
    for row in sign_matrix(len(epsilons)):
        m, w = 1.0, 1.0
        for sign, e, p in zip(row, epsilons, probs):
            m *= 1.0 + e * sign
            w *= p if sign > 0 else 1.0 - p
        out.append((w, m))
    return out


class TestValidation:
    def test_gaussian_spec_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            GaussianSpec(0.0, 0.0)
        with pytest.raises(ValueError):
            GaussianSpec(math.inf, 1.0)

    @pytest.mark.parametrize("layers", [[(1.0, 0.5)], [(-0.1, 0.5)], [(0.1, 1.5)]])
    def test_schedule_rejects_out_of_range(self, layers):
        with pytest.raises(ValueError):
            ErrorSchedule(tuple(layers))

    def test_mixture_rejects_unnormalised_weights(self):
        with pytest.raises(ValueError):
            ScaleMixture(0.0, np.array([0.5, 0.4]), np.array([1.0, 2.0]))


class TestSignMatrix:
    def test_n3_order(self):
        t = sign_matrix(3)
        assert t.shape == (8, 3)
        assert t[0].tolist() == [-1, -1, -1]
        assert t[-1].tolist() == [1, 1, 1]

    @pytest.mark.parametrize("n", range(0, 8))
    def test_rows_are_all_distinct_tuples(self, n):
        t = sign_matrix(n)
        assert len({tuple(r) for r in t}) == 2**n
        assert set(np.unique(t)) <= {-1, 1}

    def test_cap(self):
        with pytest.raises(CapacityError):
            sign_matrix(31)


class TestEnumerate:
    def test_first_row_is_all_underestimates(self):
        eps = (0.1, 0.2, 0.3)
        w, m = enumerate_multipliers(ErrorSchedule(tuple((e, 0.5) for e in eps)))
        assert m[0] == pytest.approx(0.9 * 0.8 * 0.7, rel=1e-15)
        assert m[-1] == pytest.approx(1.1 * 1.2 * 1.3, rel=1e-15)
        np.testing.assert_allclose(w, 1 / 8)

    def test_empty_schedule(self):
        w, m = enumerate_multipliers(ErrorSchedule())
        assert w.tolist() == [1.0] and m.tolist() == [1.0]

    def test_matches_brute_force_with_general_p(self):
        eps = (0.05, 0.3, 0.12, 0.0)
        probs = (0.2, 0.5, 0.9, 0.4)
        w, m = enumerate_multipliers(ErrorSchedule(tuple(zip(eps, probs))))
        ref = brute_force_multipliers(eps, probs)
        np.testing.assert_allclose(w, [r[0] for r in ref], rtol=1e-15)
        np.testing.assert_allclose(m, [r[1] for r in ref], rtol=1e-15)

    def test_n5_groups_into_binomial_multiplicities(self):
        w, m = enumerate_multipliers(ErrorSchedule.constant(0.1, 5))
        assert w.size == 32
        np.testing.assert_allclose(w, 1 / 32, rtol=0, atol=0)
        groups = defaultdict(int)
        for v in m:
            groups[round(v, 12)] += 1
        expected = {round(1.1**j * 0.9 ** (5 - j), 12): math.comb(5, j) for j in range(6)}
        assert dict(groups) == expected

    def test_capacity_error(self):
        with pytest.raises(CapacityError):
            enumerate_multipliers(ErrorSchedule.constant(0.1, 31))

    @pytest.mark.parametrize("n", [0, 1, 5, 12, 20])
    def test_weights_sum_to_one(self, n):
        sched = ErrorSchedule(tuple((0.1, p) for p in np.linspace(0.1, 0.9, n)))
        w, _ = enumerate_multipliers(sched)
        assert abs(w.sum() - 1.0) <= 1e-12


class TestBinomial:
    def test_single_layer(self):
        w, m = binomial_multipliers(0.1, 1, 0.5)
        assert sorted(zip(m.tolist(), w.tolist())) == [(0.9, 0.5), (1.1, 0.5)]

    def test_zero_error_collapses(self):
        w, m = binomial_multipliers(0.0, 7, 0.5)
        np.testing.assert_array_equal(m, 1.0)
        assert w.sum() == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("n", range(0, 13))
    @pytest.mark.parametrize("eps,p", [(0.1, 0.5), (0.3, 0.5), (0.01, 0.5), (0.2, 0.3)])
    def test_agrees_with_enumeration(self, n, eps, p):
        we, me = aggregate_multipliers(*enumerate_multipliers(ErrorSchedule.constant(eps, n, p)))
        wb, mb = binomial_multipliers(eps, n, p)
        np.testing.assert_allclose(me, mb, rtol=1e-12)
        np.testing.assert_allclose(we, wb, rtol=1e-12)

    def test_large_n_has_no_cap(self):
        w, m = binomial_multipliers(0.01, 5000, 0.5)
        assert w.size == 5001
        assert abs(w.sum() - 1.0) < 1e-12


class TestMixtureFrom:
    def test_empty_schedule_is_the_normal(self):
        mix = mixture_from(GaussianSpec(0, 1), ErrorSchedule())
        assert mix.count == 1
        assert mix.scales.tolist() == [1.0]

    def test_one_layer(self):
        mix = mixture_from(GaussianSpec(0, 1), ErrorSchedule.constant(0.1, 1))
        assert sorted(zip(mix.scales.tolist(), mix.weights.tolist())) == [(0.9, 0.5), (1.1, 0.5)]

    def test_two_layers_scaled(self):
        mix = mixture_from(GaussianSpec(2, 3), ErrorSchedule.constant(0.1, 2))
        got = dict(zip(np.round(mix.scales, 12).tolist(), mix.weights.tolist()))
        assert got == pytest.approx({round(3 * 0.81, 12): 0.25, round(3 * 0.99, 12): 0.5,
                                     round(3 * 1.21, 12): 0.25})
        assert mix.mu == 2

    def test_count_for_paths(self):
        assert mixture_from(GaussianSpec(), ErrorSchedule.constant(0.1, 6)).count == 7
        assert mixture_from(GaussianSpec(), ErrorSchedule.geometric(0.2, 0.9, 6)).count == 64


class TestDensity:
    def test_standard_normal_at_zero(self):
        mix = mixture_from(GaussianSpec(), ErrorSchedule())
        assert density(mix, 0.0) == pytest.approx(0.3989423, abs=5e-8)

    def test_one_layer_at_zero(self):
        mix = mixture_from(GaussianSpec(), ErrorSchedule.constant(0.1, 1))
        expected = 0.5 * (PHI0 / 1.1 + PHI0 / 0.9)
        assert density(mix, 0.0) == pytest.approx(expected, rel=1e-15)
        assert density(mix, 0.0) == pytest.approx(0.402972, abs=5e-7)

    @settings(max_examples=50, deadline=None)
    @given(mu=st.floats(-5, 5), eps=st.floats(0, 0.5), n=st.integers(0, 12),
           t=st.floats(0, 30))
    def test_symmetry(self, mu, eps, n, t):
        mix = mixture_from(GaussianSpec(mu, 1.3), ErrorSchedule.constant(eps, n))
        a, b = density(mix, mu + t), density(mix, mu - t)
        # mu +/- t rounds by an ulp; the log-density slope (~t/s^2) amplifies it
        assert abs(a - b) <= 1e-12 * max(a, 1e-300) or a == b

    @pytest.mark.parametrize("n", [0, 3, 10])
    @pytest.mark.parametrize("eps", [0.05, 0.3])
    def test_normalisation(self, n, eps):
        mix = mixture_from(GaussianSpec(1.0, 2.0), ErrorSchedule.constant(eps, n))
        half = 60 * mix.max_scale
        val, _ = integrate.quad(lambda x: density(mix, x), 1.0 - half, 1.0 + half,
                                points=[1.0], limit=400, epsabs=1e-13)
        assert abs(val - 1.0) < 1e-9

    def test_normalisation_general_schedule(self):
        mix = mixture_from(GaussianSpec(), ErrorSchedule.geometric(0.3, 0.8, 10))
        half = 60 * mix.max_scale
        val, _ = integrate.quad(lambda x: density(mix, x), -half, half, points=[0.0], limit=400)
        assert abs(val - 1.0) < 1e-9


class TestLogDensity:
    def test_normal_at_zero(self):
        mix = mixture_from(GaussianSpec(), ErrorSchedule())
        curve = log_density_curve(mix, [0.0])
        assert curve[0, 1] == pytest.approx(-0.9189385, abs=5e-8)

    def test_tail_thickens_with_n(self):
        base = GaussianSpec()
        vals = [log_density_curve(mixture_from(base, ErrorSchedule.constant(0.1, n)), [10.0])[0, 1]
                for n in (0, 5, 10, 20)]
        assert all(np.diff(vals) > 0)

    def test_n10_above_n0_at_six(self):
        base = GaussianSpec()
        g10 = log_density_curve(mixture_from(base, ErrorSchedule.constant(0.1, 10)), [6.0])[0, 1]
        g0 = log_density_curve(mixture_from(base, ErrorSchedule()), [6.0])[0, 1]
        assert g10 - g0 > 0

    def test_matches_log_of_density_in_the_bulk(self):
        mix = mixture_from(GaussianSpec(), ErrorSchedule.constant(0.2, 8))
        x = np.linspace(-10, 10, 81)
        np.testing.assert_allclose(log_density_curve(mix, x)[:, 1], np.log(density(mix, x)), rtol=1e-13)

    def test_far_tail_stays_finite(self):
        mix = mixture_from(GaussianSpec(), ErrorSchedule.constant(0.1, 5))
        assert density(mix, 80.0) == 0.0
        assert np.isfinite(log_density_curve(mix, [80.0])[0, 1])

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            log_density_curve(mixture_from(GaussianSpec(), ErrorSchedule()), [])


def test_tail_monotone_in_n():
    base = GaussianSpec()
    probs = [schedule_exceedance(base, ErrorSchedule.constant(0.1, n), 10.0)
             for n in (0, 5, 10, 15, 20, 25)]
    assert all(np.diff(probs) > 0)
