import numpy as np
import pytest

from rmq.affine_schemes import AffineUpdate, euler_update
from rmq.distributions import Ncx2Params, ncx2_1_funcs, std_normal_funcs
from rmq.engine import (
    BoundaryMode,
    MixtureProblem,
    QuantizationSequence,
    Schedule,
    implied_marginal_cdf,
    mixture_centroids,
    mixture_distortion,
    normalized_bounds,
    rmq_newton_step,
    rmq_run,
    transition_set,
)
from rmq.errors import ConfigError, InvalidGridError, NegativeCodewordError, NumericalFailure
from rmq.vq1d import (
    Quantizer,
    RegionBounds,
    distortion_gradient,
    distortion_hessian,
    initial_guess,
    newton_quantize,
    region_boundaries,
)

STOCHASTIC_TOL = 1e-10
FD_REL = 1e-5

NAN = np.nan


def _updates(m, c, lam=None):
    m = np.asarray(m, dtype=float)
    lam = np.full_like(m, NAN) if lam is None else np.asarray(lam, dtype=float)
    return AffineUpdate(m, np.asarray(c, dtype=float), lam, np.zeros(m.size, dtype=bool))


def _mixed_instance():
    prev = Quantizer([0.9, 1.0, 1.1], [0.25, 0.45, 0.3])
    updates = _updates([0.35, 0.04, -0.05], [1.0, 0.9, 1.3], [NAN, 12.0, 9.0])
    return prev, updates


class TestNormalizedBounds:
    def test_positive_scale(self):
        bounds = RegionBounds(np.array([-np.inf, 12.0]), np.array([12.0, np.inf]))
        lower, upper = normalized_bounds(_updates([2.0], [10.0]), bounds)
        np.testing.assert_array_equal(lower, [[-np.inf, 1.0]])
        np.testing.assert_array_equal(upper, [[1.0, np.inf]])

    def test_negative_scale_reverses_roles(self):
        bounds = RegionBounds(np.array([-np.inf, 12.0]), np.array([12.0, np.inf]))
        lower, upper = normalized_bounds(_updates([-2.0], [10.0]), bounds)
        np.testing.assert_array_equal(lower, [[-1.0, -np.inf]])
        np.testing.assert_array_equal(upper, [[np.inf, -1.0]])

    def test_zero_boundary_maps_to_truncation_point(self):
        bounds = RegionBounds(np.array([0.0, 2.0]), np.array([2.0, np.inf]))
        lower, _ = normalized_bounds(_updates([0.5], [1.5]), bounds)
        assert lower[0, 0] == -1.5 / 0.5

    def test_zero_scale_rejected(self):
        bounds = RegionBounds(np.array([-np.inf]), np.array([np.inf]))
        with pytest.raises(NumericalFailure):
            normalized_bounds(_updates([0.0], [1.0]), bounds)


class TestTransitionSet:
    def test_single_region_takes_all_mass(self):
        prev = Quantizer([1.0, 2.0], [0.5, 0.5])
        ts = transition_set(prev, _updates([0.3, 0.4], [1.0, 2.0]), [1.5])
        np.testing.assert_allclose(ts.P, [[1.0], [1.0]], atol=1e-15)

    def test_free_rows_are_stochastic(self):
        prev, updates = _mixed_instance()
        ts = transition_set(prev, updates, [0.6, 0.9, 1.2, 1.6])
        np.testing.assert_allclose(ts.row_sums, 1.0, atol=STOCHASTIC_TOL)
        assert np.all(ts.P >= 0) and np.all(ts.P <= 1)

    def test_rows_match_law_masses_for_both_scale_signs(self):
        prev, updates = _mixed_instance()
        gamma = np.array([0.6, 0.9, 1.2, 1.6])
        ts = transition_set(prev, updates, gamma)
        lower, upper = normalized_bounds(updates, region_boundaries(gamma))
        laws = [std_normal_funcs(), ncx2_1_funcs(Ncx2Params(12.0)), ncx2_1_funcs(Ncx2Params(9.0))]
        for i, law in enumerate(laws):
            np.testing.assert_allclose(ts.P[i], law.mass(lower[i], upper[i]), rtol=1e-12, atol=1e-15)
            np.testing.assert_allclose(ts.M[i], law.partial_mean(lower[i], upper[i]), rtol=1e-12, atol=1e-14)
        z_interior = (0.5 * (gamma[1:] + gamma[:-1]) - updates.c[2]) / updates.m[2]
        np.testing.assert_allclose(ts.f[2], laws[2].pdf(z_interior), rtol=1e-12)

    def test_absorbed_mass(self):
        prev = Quantizer([1.0], [1.0])
        ts = transition_set(prev, _updates([1.0], [1.0]), [0.5, 1.5, 2.5], BoundaryMode.ABSORBING)
        assert ts.row_sums[0] == pytest.approx(0.8413447460685429, abs=1e-12)

    def test_reflecting_rows_are_stochastic(self):
        prev, updates = _mixed_instance()
        ts = transition_set(prev, updates, [0.6, 0.9, 1.2, 1.6], BoundaryMode.REFLECTING)
        np.testing.assert_allclose(ts.row_sums, 1.0, atol=STOCHASTIC_TOL)

    def test_rejects_non_positive_codewords_under_boundary(self):
        prev = Quantizer([1.0], [1.0])
        with pytest.raises(InvalidGridError):
            transition_set(prev, _updates([1.0], [1.0]), [-0.5, 1.0], BoundaryMode.ABSORBING)

    def test_rejects_misaligned_updates(self):
        with pytest.raises(InvalidGridError):
            transition_set(Quantizer([1.0, 2.0], [0.5, 0.5]), _updates([1.0], [1.0]), [1.0])


def _random_mixture_grid(seed):
    """Increasing positive grid whose region boundaries avoid the chi-squared rows' origin."""
    rng = np.random.default_rng(seed)
    singular = np.array([0.9, 1.3])
    while True:
        n = int(rng.integers(3, 8))
        gamma = 0.3 + np.cumsum(rng.uniform(0.05, 0.4, n))
        mid = 0.5 * (gamma[1:] + gamma[:-1])
        if np.min(np.abs(mid[:, None] - singular[None, :])) > 0.01:
            return gamma


class TestMixtureDerivatives:
    @pytest.mark.parametrize("seed", range(50))
    @pytest.mark.parametrize("boundary", list(BoundaryMode))
    def test_gradient_matches_finite_differences(self, boundary, seed):
        prev, updates = _mixed_instance()
        problem = MixtureProblem(prev, updates, boundary)
        gamma = _random_mixture_grid(seed)
        h = 1e-6
        fd = np.empty_like(gamma)
        for j in range(gamma.size):
            e = np.zeros_like(gamma)
            e[j] = h
            fd[j] = (problem.distortion(gamma + e) - problem.distortion(gamma - e)) / (2 * h)
        np.testing.assert_allclose(problem.gradient(gamma), fd, rtol=FD_REL, atol=1e-8)

    @pytest.mark.parametrize("seed", range(50))
    @pytest.mark.parametrize("boundary", list(BoundaryMode))
    def test_hessian_matches_finite_differences(self, boundary, seed):
        prev, updates = _mixed_instance()
        problem = MixtureProblem(prev, updates, boundary)
        gamma = _random_mixture_grid(seed)
        h = 1e-7
        fd = np.empty((gamma.size, gamma.size))
        for j in range(gamma.size):
            e = np.zeros_like(gamma)
            e[j] = h
            fd[:, j] = (problem.gradient(gamma + e) - problem.gradient(gamma - e)) / (2 * h)
        np.testing.assert_allclose(problem.hessian(gamma).to_dense(), fd, rtol=FD_REL, atol=1e-7)

    def test_threads_do_not_change_derivatives(self):
        prev = Quantizer(np.linspace(0.5, 1.5, 150), np.full(150, 1.0 / 150))
        updates = _updates(np.full(150, 0.2), np.linspace(0.5, 1.5, 150))
        gamma = np.linspace(0.2, 1.8, 9)
        serial = MixtureProblem(prev, updates).derivatives(gamma)
        pooled = MixtureProblem(prev, updates, threads=3).derivatives(gamma)
        np.testing.assert_array_equal(serial[0], pooled[0])
        np.testing.assert_array_equal(serial[1].to_dense(), pooled[1].to_dense())

    def test_single_component_reduces_to_vq(self):
        m, c = 0.5, 1.0
        prev = Quantizer([1.0], [1.0])
        problem = MixtureProblem(prev, _updates([m], [c]))
        gamma = np.array([0.2, 0.8, 1.1, 1.9])
        z = (gamma - c) / m
        law = std_normal_funcs()
        np.testing.assert_allclose(problem.gradient(gamma), m * distortion_gradient(law, z), rtol=1e-10, atol=1e-13)
        np.testing.assert_allclose(
            problem.hessian(gamma).to_dense(), distortion_hessian(law, z).to_dense(), rtol=1e-10, atol=1e-13
        )

    def test_stationary_grid_is_newton_fixed_point(self):
        m, c = 0.5, 1.0
        q = newton_quantize(std_normal_funcs(), initial_guess("normal", 8), 50)
        gamma = m * q.codewords + c
        out = rmq_newton_step(gamma, Quantizer([1.0], [1.0]), _updates([m], [c]))
        np.testing.assert_allclose(out, gamma, atol=1e-9)

    def test_centroids_of_single_component(self):
        prev = Quantizer([1.0], [1.0])
        cent = mixture_centroids([1.0], prev, _updates([0.5], [1.0]))
        assert cent[0] == pytest.approx(1.0, abs=1e-14)

    def test_negligible_rows_are_skipped(self):
        prev = Quantizer([1.0, 50.0], [1.0, 1e-20])
        problem = MixtureProblem(prev, _updates([0.5, 0.5], [1.0, 50.0]))
        assert problem.weights.size == 1


class TestImpliedCdf:
    def test_single_gaussian_median(self):
        prev = Quantizer([1.0], [1.0])
        assert implied_marginal_cdf(3.0, prev, _updates([2.0], [3.0])) == pytest.approx(0.5, abs=1e-15)

    def test_gbm_one_step_median(self, gbm):
        u = euler_update(gbm, 100.0, 1.0 / 12.0)
        value = implied_marginal_cdf(100.0 + 5.0 / 12.0, Quantizer([100.0], [1.0]), u)
        assert value == pytest.approx(0.5, abs=1e-12)

    def test_negative_scale_uses_upper_tail(self):
        prev = Quantizer([1.0], [1.0])
        updates = _updates([-0.1], [0.5], [4.0])
        x = np.linspace(-2.0, 0.5, 50)
        values = implied_marginal_cdf(x, prev, updates)
        assert np.all(np.diff(values) >= -1e-15)
        assert values[-1] == pytest.approx(1.0, abs=1e-12)

    def test_absorbing_mass_at_zero(self):
        prev = Quantizer([1.0], [0.9])
        updates = _updates([1.0], [1.0])
        below = implied_marginal_cdf(-0.1, prev, updates, BoundaryMode.ABSORBING, zero_mass=0.1)
        at_zero = implied_marginal_cdf(0.0, prev, updates, BoundaryMode.ABSORBING, zero_mass=0.1)
        assert below == 0.0
        assert at_zero == pytest.approx(0.1 + 0.9 * 0.15865525393145707, abs=1e-12)

    def test_monotone_with_limits_on_sequence(self, small_sequence):
        for k in range(1, small_sequence.K + 1):
            x = np.linspace(0.0, 400.0, 1000)
            values = small_sequence.implied_cdf(k, x)
            assert np.all(np.diff(values) >= -1e-14)
            assert small_sequence.implied_cdf(k, -1e6) == pytest.approx(0.0, abs=1e-12)
            assert small_sequence.implied_cdf(k, 1e6) == pytest.approx(1.0, abs=1e-12)


class TestSchedule:
    def test_uniform(self):
        s = Schedule.uniform(T=1.0, K=12, N=200)
        assert s.dt == pytest.approx(1.0 / 12.0)
        assert s.n_per_step == (200,) * 12
        assert (s.n_max_vq, s.n_max_rmq) == (50, 5)

    @pytest.mark.parametrize("kwargs", [{"K": 0}, {"N": 0}, {"T": -1.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            Schedule.uniform(**kwargs)

    def test_boundary_parse(self):
        assert BoundaryMode.parse("Reflecting") is BoundaryMode.REFLECTING
        with pytest.raises(ConfigError):
            BoundaryMode.parse("sticky")


class TestRecursion:
    def test_single_step_is_vq_of_first_update(self, gbm):
        seq = rmq_run(gbm, "euler", 100.0, Schedule.uniform(T=1.0, K=1, N=10))
        u = euler_update(gbm, 100.0, 1.0)
        q = newton_quantize(std_normal_funcs(), initial_guess("normal", 10), 50)
        np.testing.assert_allclose(seq.step(1).quantizer.codewords, u.m[0] * q.codewords + u.c[0], rtol=1e-14)
        np.testing.assert_allclose(seq.step(1).quantizer.probabilities, q.probabilities, atol=1e-12)

    def test_markov_consistency(self, small_sequence):
        for k in range(1, small_sequence.K + 1):
            propagated = small_sequence.probabilities(k - 1) @ small_sequence.kernel(k)
            np.testing.assert_allclose(propagated, small_sequence.probabilities(k), atol=STOCHASTIC_TOL)
            assert small_sequence.probabilities(k).sum() == pytest.approx(1.0, abs=STOCHASTIC_TOL)

    def test_codewords_increase(self, small_sequence):
        for step in small_sequence.steps:
            assert np.all(np.diff(step.quantizer.codewords) > 0)

    def test_newton_lowers_distortion(self, small_sequence):
        for k in range(2, small_sequence.K + 1):
            prev = small_sequence.step(k - 1).quantizer
            updates = small_sequence.step(k).updates
            before = mixture_distortion(prev.codewords, prev, updates)
            after = mixture_distortion(small_sequence.step(k).quantizer.codewords, prev, updates)
            assert after <= before * (1 + 1e-12)

    def test_first_moment_gbm(self, gbm_sequences):
        seq = gbm_sequences["euler"]
        assert seq.step(12).quantizer.expectation() == pytest.approx(100.0 * np.exp(0.05), rel=2e-3)

    def test_milstein_first_moment_telescopes(self, gbm, gbm_sequences):
        seq = gbm_sequences["milstein"]
        for k in range(1, seq.K):
            q = seq.step(k).quantizer
            drifted = q.probabilities @ (q.codewords + gbm.a(q.codewords) * seq.schedule.dt)
            assert seq.step(k + 1).quantizer.expectation() == pytest.approx(drifted, rel=1e-3)

    def test_thread_count_does_not_change_result(self, gbm):
        schedule = Schedule.uniform(T=0.5, K=3, N=150)
        serial = rmq_run(gbm, "milstein", 100.0, schedule, threads=1)
        pooled = rmq_run(gbm, "milstein", 100.0, schedule, threads=4)
        for a, b in zip(serial.steps, pooled.steps):
            np.testing.assert_array_equal(a.quantizer.codewords, b.quantizer.codewords)
            np.testing.assert_array_equal(a.quantizer.probabilities, b.quantizer.probabilities)

    def test_variable_cardinality(self, gbm):
        schedule = Schedule(T=1.0, K=3, n_per_step=(10, 20, 15))
        seq = rmq_run(gbm, "weak2", 100.0, schedule)
        assert [len(s.quantizer) for s in seq.steps] == [10, 20, 15]
        assert seq.kernel(2).shape == (10, 20)

    def test_unknown_scheme(self, gbm):
        with pytest.raises(ValueError):
            rmq_run(gbm, "heun", 100.0, Schedule.uniform(K=1, N=5))

    def test_to_dict_shapes(self, small_sequence):
        data = small_sequence.to_dict()
        assert len(data["steps"]) == small_sequence.K
        assert len(data["steps"][1]["transitions"]) == 40
        assert data["boundary"] == "free"


class TestBoundaryModes:
    def test_absorbing_conserves_probability(self, absorbing_cev_sequence):
        seq = absorbing_cev_sequence
        zero = [seq.step(k).zero_mass for k in range(1, seq.K + 1)]
        assert np.all(np.diff(zero) >= 0)
        for k in range(1, seq.K + 1):
            assert seq.probabilities(k).sum() == pytest.approx(1.0, abs=STOCHASTIC_TOL)
            assert seq.step(k).quantizer.codewords[0] > 0
            np.testing.assert_allclose(
                seq.probabilities(k - 1) @ seq.kernel(k), seq.probabilities(k), atol=STOCHASTIC_TOL
            )

    def test_absorbing_kernel_traps_zero_state(self, absorbing_cev_sequence):
        kernel = absorbing_cev_sequence.kernel(3)
        assert kernel[0, 0] == 1.0 and np.all(kernel[0, 1:] == 0.0)
        np.testing.assert_allclose(kernel.sum(axis=1), 1.0, atol=STOCHASTIC_TOL)
        assert absorbing_cev_sequence.states(3)[0] == 0.0

    def test_reflecting_completes(self, cev_low_alpha):
        p, model = cev_low_alpha
        seq = rmq_run(model, "euler", p.s0, Schedule.uniform(T=1.0, K=12, N=50), boundary="reflecting")
        for k in range(1, seq.K + 1):
            assert seq.step(k).quantizer.codewords[0] > 0
            assert seq.probabilities(k).sum() == pytest.approx(1.0, abs=STOCHASTIC_TOL)

    @pytest.mark.slow
    def test_free_mode_leaves_positive_domain(self, cev_low_alpha):
        p, model = cev_low_alpha
        with pytest.raises(NegativeCodewordError) as info:
            rmq_run(model, "euler", p.s0, Schedule.uniform(T=1.0, K=12, N=200))
        assert info.value.step >= 1
        assert "reflecting" in str(info.value)

    @pytest.mark.slow
    @pytest.mark.parametrize("boundary", ["absorbing", "reflecting"])
    @pytest.mark.parametrize("scheme", ["euler", "milstein", "weak2"])
    def test_boundary_modes_complete_at_default_size(self, cev_low_alpha, boundary, scheme):
        p, model = cev_low_alpha
        seq = rmq_run(model, scheme, p.s0, Schedule.uniform(T=1.0, K=12, N=200), boundary=boundary)
        for k in range(1, seq.K + 1):
            assert seq.step(k).quantizer.codewords[0] > 0
            assert seq.probabilities(k).sum() == pytest.approx(1.0, abs=STOCHASTIC_TOL)
        if boundary == "absorbing":
            zero = [s.zero_mass for s in seq.steps]
            assert np.all(np.diff(zero) >= 0)


class TestSchemeAgreement:
    @pytest.mark.slow
    def test_small_step_first_moments_agree(self, gbm):
        schedule = Schedule.uniform(T=1.0, K=192, N=100)
        target = 100.0 * np.exp(0.05)
        means = [rmq_run(gbm, s, 100.0, schedule).step(192).quantizer.expectation() for s in ("euler", "milstein", "weak2")]
        np.testing.assert_allclose(means, target, rtol=1e-2)


def test_sequence_rejects_out_of_range_step(small_sequence):
    assert isinstance(small_sequence, QuantizationSequence)
    with pytest.raises(IndexError):
        small_sequence.step(small_sequence.K + 1)
