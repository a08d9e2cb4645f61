import math

import numpy as np
import pytest

from lazysmc.dists import Gaussian1D, UniformBox, log_sum_exp
from lazysmc.graph import Normal
from lazysmc.inference import (
    ParticleDegeneracyError,
    ess,
    importance_sample,
    particle_filter,
    particle_stream,
    systematic_resample,
)
from lazysmc.model import ObservationSchedule, Random, StateSpaceModel, run_ssm
from lazysmc.ssm import LinearGaussianProgram, LinearGaussianSSMSpec, kalman_filter


def lgssm_factory(spec, mode="delayed", **kwargs):
    def factory(schedule, rng):
        return run_ssm(LinearGaussianProgram(spec, mode, **kwargs), schedule,
                       spec.T, rng)
    return factory


class TestEss:
    def test_equal_weights(self):
        assert ess(np.zeros(8)) == pytest.approx(8.0, rel=1e-12)

    def test_single_survivor(self):
        lw = np.full(5, -math.inf)
        lw[2] = -1.0
        assert ess(lw) == pytest.approx(1.0, rel=1e-12)

    def test_weights_211(self):
        lw = np.log([2.0, 1.0, 1.0])
        assert ess(lw) == pytest.approx(16.0 / 6.0, rel=1e-12)

    def test_all_zero_raises(self):
        with pytest.raises(ValueError):
            ess([-math.inf, -math.inf])


class TestSystematicResample:
    def test_hand_stepped_grid(self):
        # u=0.1, N=2: grid points 0.05 and 0.55 against cumsum [0.5, 1.0]
        out = systematic_resample([0.5, 0.5], u=0.1)
        assert list(out) == [0, 1]

    def test_degenerate_weight(self):
        out = systematic_resample([1.0, 0.0], u=0.7)
        assert list(out) == [0, 0]

    def test_counts_within_one_of_expectation(self):
        g = np.random.default_rng(0)
        for _ in range(1000):
            n = int(g.integers(2, 60))
            w = g.random(n) + 1e-9
            probs = w / w.sum()
            anc = systematic_resample(probs, u=float(g.random()))
            assert list(anc) == sorted(anc)
            counts = np.bincount(anc, minlength=n)
            assert np.all(counts >= np.floor(n * probs) - 1e-9)
            assert np.all(counts <= np.ceil(n * probs) + 1e-9)


class _FlatModel(StateSpaceModel):
    """One latent per step, no observations: every weight is zero."""

    def initial(self, ctx, params):
        return ctx.draw(Gaussian1D(0.0, 1.0))

    def transition(self, ctx, state, params, t):
        return ctx.draw(Gaussian1D(state, 1.0))

    def observation(self, ctx, state, params, t, given):
        pass

    def extract(self, ctx):
        return "sample"


class _PointObsModel(StateSpaceModel):
    """Deterministic observation density, no latent randomness."""

    def initial(self, ctx, params):
        return 0.0

    def transition(self, ctx, state, params, t):
        return 0.0

    def observation(self, ctx, state, params, t, given):
        ctx.factor(given, Gaussian1D(0.0, 2.0))


class _DoomedModel(StateSpaceModel):
    """Out-of-support observation at step 3 kills every particle."""

    def initial(self, ctx, params):
        return 0.0

    def transition(self, ctx, state, params, t):
        return 0.0

    def observation(self, ctx, state, params, t, given):
        value = np.array([0.5]) if t < 3 else np.array([7.0])
        ctx.factor(value, UniformBox([0.0], [1.0]))


class TestImportanceSampling:
    def test_no_observations_gives_zero_weights(self):
        def factory(schedule, rng):
            return run_ssm(_FlatModel(), schedule, 4, rng)
        samples, log_w, log_z = importance_sample(factory, None, 16, seed=0)
        assert np.all(log_w == 0.0)
        assert log_z == 0.0
        assert samples == ["sample"] * 16

    def test_deterministic_observation_weight_is_loglik(self):
        ys = [0.4, -0.2]
        def factory(schedule, rng):
            return run_ssm(_PointObsModel(), schedule, 2, rng)
        _, log_w, log_z = importance_sample(factory, ObservationSchedule(ys), 8, seed=0)
        expected = sum(Gaussian1D(0.0, 2.0).log_pdf(y) for y in ys)
        assert np.allclose(log_w, expected)
        assert log_z == pytest.approx(expected, rel=1e-12)

    def test_lgssm_log_z_within_bootstrap_ci(self):
        # horizon kept short: prior-proposal importance sampling on this
        # model has vanishing effective sample size for longer series
        spec = LinearGaussianSSMSpec(theta=0.6, T=4)
        data_rng = np.random.default_rng(21)
        _, _, ys = __import__("lazysmc").simulate_lgssm(spec, data_rng)
        oracle = kalman_filter(spec, ys).log_lik
        n = 100_000
        _, log_w, log_z = importance_sample(
            lgssm_factory(spec, "eager", track_path=False),
            ObservationSchedule(list(ys)), n, seed=0)
        boots = []
        g = np.random.default_rng(0)
        for _ in range(200):
            idx = g.integers(n, size=n)
            boots.append(log_sum_exp(log_w[idx]) - math.log(n))
        lo, hi = np.percentile(boots, [0.5, 99.5])
        assert lo <= oracle <= hi

    def test_degenerate_weights_warn_not_raise(self):
        def factory(schedule, rng):
            return run_ssm(_DoomedModel(), schedule, 4, rng)
        with pytest.warns(UserWarning, match="degenerate"):
            _, log_w, log_z = importance_sample(factory, None, 4, seed=0)
        assert log_z == -math.inf


class TestParticleFilter:
    def test_delayed_n1_reproduces_kalman(self):
        spec = LinearGaussianSSMSpec(theta=0.9, T=30)
        ys = list(np.random.default_rng(4).normal(size=30))
        oracle = kalman_filter(spec, ys)
        result = particle_filter(lgssm_factory(spec), ObservationSchedule(ys),
                                 1, 0.5, seed=0)
        assert result.evidence.log_z == pytest.approx(oracle.log_lik, abs=1e-10)

    def test_threshold_zero_equals_importance_sampling(self):
        spec = LinearGaussianSSMSpec(theta=0.6, T=8)
        ys = list(np.random.default_rng(5).normal(size=8))
        schedule = ObservationSchedule(ys)
        factory = lgssm_factory(spec, "eager")
        result = particle_filter(factory, schedule, 64, 0.0, seed=11)
        _, _, log_z = importance_sample(factory, schedule, 64, seed=11)
        assert result.evidence.log_z == log_z  # bit-identical

    def test_evidence_telescopes(self):
        spec = LinearGaussianSSMSpec(theta=0.6, T=12)
        ys = list(np.random.default_rng(6).normal(size=12))
        for threshold in (0.0, 0.5, 0.9):
            result = particle_filter(lgssm_factory(spec, "eager"),
                                     ObservationSchedule(ys), 32, threshold, seed=2)
            assert sum(result.evidence.per_step_log_increments) == pytest.approx(
                result.evidence.log_z, abs=1e-12)

    def test_resampling_threshold_invariance_of_evidence(self):
        # 200 runs on a 3-step toy model: mean exp(log_Z) agrees between
        # adaptive and never-resample within overlapping bootstrap CIs
        spec = LinearGaussianSSMSpec(theta=0.5, T=3)
        ys = [0.6, -0.3, 0.8]
        schedule = ObservationSchedule(ys)
        factory = lgssm_factory(spec, "eager", track_path=False)
        z = {0.0: [], 0.5: []}
        for threshold in z:
            for run in range(200):
                result = particle_filter(factory, schedule, 32, threshold,
                                         seed=1000 + run, collect_posterior=False)
                z[threshold].append(math.exp(result.evidence.log_z))
        g = np.random.default_rng(0)
        cis = {}
        for threshold, values in z.items():
            values = np.array(values)
            boots = [values[g.integers(200, size=200)].mean() for _ in range(500)]
            cis[threshold] = np.percentile(boots, [2.5, 97.5])
        assert cis[0.0][0] <= cis[0.5][1] and cis[0.5][0] <= cis[0.0][1]

    def test_clone_divergence_after_resample(self):
        spec = LinearGaussianSSMSpec(theta=0.9, T=10)
        ys = list(np.random.default_rng(7).normal(size=10))
        result = particle_filter(lgssm_factory(spec, "eager"),
                                 ObservationSchedule(ys), 16, 0.9, seed=3)
        assert result.system.ancestors  # at least one resample fired
        states = [tuple(p.program.states) for p in result.system.particles]
        assert len(set(states)) > 1  # duplicated ancestors have diverged

    def test_no_arena_aliasing_between_clones(self):
        spec = LinearGaussianSSMSpec(theta=0.9, T=4)
        ys = [0.5, 0.1, -0.2, 0.3]

        def factory(schedule, rng):
            return run_ssm(LinearGaussianProgram(spec, "delayed"), schedule,
                           spec.T, rng)

        result = particle_filter(factory, ObservationSchedule(ys), 8, 1.0, seed=5,
                                 collect_posterior=False)
        particles = result.system.particles
        mutated = particles[0]
        sibling = particles[1]
        mutated.program.states[-1].value()
        assert sibling.program.states[-1].stored_value is None

    def test_delayed_filter_has_zero_variance(self):
        spec = LinearGaussianSSMSpec(theta=0.7, T=15)
        ys = list(np.random.default_rng(8).normal(size=15))
        values = []
        for seed in range(5):
            result = particle_filter(lgssm_factory(spec), ObservationSchedule(ys),
                                     4, 0.5, seed=seed, collect_posterior=False)
            values.append(result.evidence.log_z)
        assert max(values) - min(values) <= 1e-10

    def test_degeneracy_error_names_step(self):
        def factory(schedule, rng):
            return run_ssm(_DoomedModel(), schedule, 5, rng)
        with pytest.raises(ParticleDegeneracyError) as err:
            particle_filter(factory, None, 8, 0.5, seed=0)
        assert err.value.step == 3

    def test_posterior_sample_proportional_to_weights(self):
        # two deterministic particles with known weights: the pick frequency
        # over seeds tracks the weight ratio
        class TwoWeight(StateSpaceModel):
            def initial(self, ctx, params):
                heavy = ctx.draw(Gaussian1D(0.0, 1.0)) > 0  # coin flip per particle
                self.heavy = heavy
                return 0.0

            def transition(self, ctx, state, params, t):
                return state

            def observation(self, ctx, state, params, t, given):
                ctx.add_log_weight(math.log(9.0) if self.heavy else 0.0)

            def extract(self, ctx):
                return self.heavy

        def factory(schedule, rng):
            return run_ssm(TwoWeight(), schedule, 1, rng)

        picks = []
        for seed in range(300):
            result = particle_filter(factory, None, 2, 0.0, seed=seed)
            picks.append(result.posterior.payload)
        freq = np.mean(picks)
        # each particle is heavy w.p. 1/2; conditional pick of a heavy one has
        # probability 0.9 when mixed; overall P(heavy) = 0.5*1 + ... averaged
        # over configurations = 0.5 + 0.5*(2*0.5*0.5)*(0.9 - 0.5)*2 -> just
        # check it is biased well above one half
        assert freq > 0.6

    def test_ess_trace_in_range(self):
        spec = LinearGaussianSSMSpec(theta=0.6, T=10)
        ys = list(np.random.default_rng(9).normal(size=10))
        result = particle_filter(lgssm_factory(spec, "eager"),
                                 ObservationSchedule(ys), 32, 0.5, seed=0)
        assert len(result.ess_trace) == 10
        assert all(1.0 - 1e-9 <= e <= 32.0 + 1e-9 for e in result.ess_trace)

    def test_particle_stream_deterministic(self):
        a = particle_stream(42, 0, 1).random()
        b = particle_stream(42, 0, 1).random()
        c = particle_stream(42, 0, 2).random()
        assert a == b and a != c
