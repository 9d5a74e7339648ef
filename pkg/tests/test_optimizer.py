import numpy as np
import pytest

from spgd.data import Dataset, gen_double_circle
from spgd.diagnostics import empirical_loss
from spgd.ensemble import ParticleEnsemble, apply_transport, init_ensemble
from spgd.loss import LossSpec
from spgd.model import ModelSpec, targets_for
from spgd.optimizer import (
    DivergenceError,
    MomentumState,
    TrainConfig,
    TrainTrace,
    learning_rate_at,
    spgd_step,
    stochastic_update_direction,
    train_practical,
    train_resampling,
)

EXP = LossSpec("exponential")


def _circle():
    return gen_double_circle(25, 0.1, seed=4)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(EXP, steps=10, lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(EXP, steps=10, lr=0.1, momentum=1.0)
        with pytest.raises(ValueError):
            TrainConfig(EXP, steps=10, lr=0.1, precond=0.0)
        with pytest.raises(ValueError):
            TrainConfig(EXP, steps=10, lr=0.1, schedule="linear")

    def test_schedules(self):
        c = TrainConfig(EXP, steps=10, lr=0.4)
        assert learning_rate_at(c, 99) == 0.4
        c2 = TrainConfig(EXP, steps=10, lr=0.4, schedule="inverse_sqrt")
        assert learning_rate_at(c2, 0) == 0.4
        assert learning_rate_at(c2, 3) == pytest.approx(0.2)


class TestUpdateDirection:
    def test_origin_linear_tanh(self):
        # theta = 0, exp loss: h = 0, a = l'(0) = 1, direction = y * x
        spec = ModelSpec("linear_tanh", 2, use_bias=False)
        ens = ParticleEnsemble(spec, np.zeros((1, 2)))
        direction, a = stochastic_update_direction(ens, EXP, (np.array([1.0, 0.0]), 1.0))
        assert a == 1.0
        assert np.allclose(direction, [[1.0, 0.0]], atol=1e-15)
        cfg = TrainConfig(EXP, steps=1, lr=0.1, seed=0)
        stepped, _ = spgd_step(ens, MomentumState.zeros(1, 2), cfg,
                               (np.array([1.0, 0.0]), 1.0), 0)
        assert np.allclose(stepped.particles, [[0.1, 0.0]], atol=1e-15)

    def test_symmetric_pair_cancels(self):
        spec = ModelSpec("linear_tanh", 2, use_bias=False)
        ens = ParticleEnsemble(spec, np.zeros((3, 2)))
        x = np.array([0.5, -1.0])
        d_pos, _ = stochastic_update_direction(ens, EXP, (x, 1.0))
        d_neg, _ = stochastic_update_direction(ens, EXP, (x, -1.0))
        assert np.allclose(d_pos + d_neg, 0.0, atol=1e-15)

    def test_identical_particles_identical_directions(self):
        spec = ModelSpec("logreg", 3, num_classes=3)
        theta = np.random.default_rng(0).normal(size=spec.param_dim)
        ens = ParticleEnsemble(spec, np.tile(theta, (4, 1)))
        direction, _ = stochastic_update_direction(
            ens, EXP, (np.array([1.0, 0.5, -0.5]), np.eye(3)[1]))
        assert np.allclose(direction, direction[0][None, :], atol=0)


class TestStep:
    def test_zero_lr_rejected_but_tiny_ok(self):
        with pytest.raises(ValueError):
            TrainConfig(EXP, steps=1, lr=0.0)

    def test_momentum_off_equals_plain_arithmetic(self):
        spec = ModelSpec("linear_tanh", 2)
        ens = init_ensemble(spec, 3, seed=1)
        x, y = np.array([0.2, -0.4]), -1.0
        direction, a = stochastic_update_direction(ens, EXP, (x, y))
        cfg = TrainConfig(EXP, steps=1, lr=0.25, seed=0)
        stepped, vel = spgd_step(ens, MomentumState.zeros(3, 3), cfg, (x, y), 0)
        manual = ens.particles + (0.25 * a) * (direction / a)
        assert np.allclose(stepped.particles, manual, atol=1e-16)

    def test_preconditioner_halves_step(self):
        spec = ModelSpec("linear_tanh", 2)
        ens = init_ensemble(spec, 2, seed=2)
        x, y = np.array([1.0, 1.0]), 1.0
        c1 = TrainConfig(EXP, steps=1, lr=0.1, precond=1.0, seed=0)
        c2 = TrainConfig(EXP, steps=1, lr=0.1, precond=2.0, seed=0)
        s1, _ = spgd_step(ens, MomentumState.zeros(2, 3), c1, (x, y), 0)
        s2, _ = spgd_step(ens, MomentumState.zeros(2, 3), c2, (x, y), 0)
        d1 = s1.particles - ens.particles
        d2 = s2.particles - ens.particles
        assert np.allclose(d2, d1 / 2, atol=1e-18)

    def test_nonfinite_update_reported(self):
        # overflow the update product: coeff ~ 1e308 times gradient 2 -> inf
        spec = ModelSpec("linear_tanh", 1, use_bias=False)
        ens = ParticleEnsemble(spec, np.array([[0.0]]))
        cfg = TrainConfig(EXP, steps=1, lr=1e308, seed=0)
        with np.errstate(over="ignore"):
            with pytest.raises(DivergenceError, match="step 0.*particles \\[0\\]"):
                spgd_step(ens, MomentumState.zeros(1, 1), cfg, (np.array([2.0]), 1.0), 0)


class TestTrainPractical:
    def test_zero_steps(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        cfg = TrainConfig(EXP, steps=0, lr=0.1, seed=6)
        ens, tmap, trace = train_practical(spec, ds, cfg, 4)
        assert np.array_equal(ens.particles, init_ensemble(spec, 4, 6).particles)
        assert tmap.layers == []
        assert len(trace.records) == 1

    def test_deterministic_reruns(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        cfg = TrainConfig(EXP, steps=200, lr=0.1, momentum=0.5, seed=8, eval_every=50)
        a = train_practical(spec, ds, cfg, 5)
        b = train_practical(spec, ds, cfg, 5)
        assert np.array_equal(a[0].particles, b[0].particles)
        assert a[2].records == b[2].records

    def test_trace_record_cadence(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        cfg = TrainConfig(EXP, steps=100, lr=0.1, seed=0, eval_every=30)
        _, _, trace = train_practical(spec, ds, cfg, 2)
        assert [r["step"] for r in trace.records] == [0, 30, 60, 90, 100]

    def test_map_layer_count_equals_steps(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        cfg = TrainConfig(EXP, steps=37, lr=0.1, seed=0)
        _, tmap, _ = train_practical(spec, ds, cfg, 3)
        assert len(tmap.layers) == 37 and tmap.replayable

    def test_momentum_map_not_replayable(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        cfg = TrainConfig(EXP, steps=10, lr=0.1, momentum=0.9, seed=0)
        _, tmap, _ = train_practical(spec, ds, cfg, 3)
        assert not tmap.replayable and tmap.layers == []

    def test_batch_map_not_replayable(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        cfg = TrainConfig(EXP, steps=10, lr=0.1, batch_size=4, seed=0)
        _, tmap, _ = train_practical(spec, ds, cfg, 3)
        assert not tmap.replayable

    def test_identical_particles_stay_identical(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        theta = np.random.default_rng(3).normal(size=3)

        # collapse all particles onto one point, then train
        from spgd.optimizer import _step_inplace, sample_stream

        particles = np.tile(theta, (6, 1))
        velocity = np.zeros_like(particles)
        rng = sample_stream(0)
        targets = targets_for(spec, ds.labels)
        for k in range(50):
            idx = rng.integers(0, ds.n_samples, size=1)
            _step_inplace(spec, particles, velocity, EXP, 0.1, 0.9, 1.0,
                          ds.features[idx], targets[idx], k)
        assert np.all(particles == particles[0][None, :])

    def test_batch_averages_directions(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        cfg = TrainConfig(EXP, steps=5, lr=0.1, batch_size=8, seed=12)
        ens, _, trace = train_practical(spec, ds, cfg, 3)
        assert np.isfinite(ens.particles).all()

    def test_expected_descent_ten_seeds(self):
        ds = gen_double_circle(50, 0.1, seed=0)
        spec = ModelSpec("linear_tanh", 2)
        for seed in range(10):
            cfg = TrainConfig(EXP, steps=3000, lr=0.02, seed=seed)
            _, _, trace = train_practical(spec, ds, cfg, 8)
            assert trace.records[-1]["loss"] < trace.records[0]["loss"]


class TestTrainResampling:
    def test_requires_plain_sgd(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        with pytest.raises(ValueError):
            train_resampling(spec, ds, TrainConfig(EXP, steps=1, lr=0.1, momentum=0.5), 2)
        with pytest.raises(ValueError):
            train_resampling(spec, ds, TrainConfig(EXP, steps=1, lr=0.1, batch_size=2), 2)

    def test_layer_count(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        tmap, _, _ = train_resampling(spec, ds, TrainConfig(EXP, steps=25, lr=0.1, seed=0), 3)
        assert len(tmap.layers) == 25

    def test_single_step_equals_one_update_of_fresh_seeds(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        cfg = TrainConfig(EXP, steps=1, lr=0.1, seed=5)
        tmap, ens, _ = train_resampling(spec, ds, cfg, 4)
        seeds = init_ensemble(spec, 4, 5).particles  # same stream, first draw
        replayed = apply_transport(tmap, seeds, ds)
        assert np.allclose(replayed, ens.particles, atol=0)

    def test_matches_practical_without_resampling(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        cfg = TrainConfig(EXP, steps=500, lr=0.05, seed=3)
        ens_p, _, _ = train_practical(spec, ds, cfg, 4)
        _, ens_r, _ = train_resampling(spec, ds, cfg, 4, resample=False)
        assert np.max(np.abs(ens_p.particles - ens_r.particles)) <= 1e-10

    def test_resampling_draws_fresh_particles(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        cfg = TrainConfig(EXP, steps=3, lr=0.1, seed=3)
        tmap_a, ens_a, _ = train_resampling(spec, ds, cfg, 4, resample=True)
        _, ens_b, _ = train_resampling(spec, ds, cfg, 4, resample=False)
        assert not np.allclose(ens_a.particles, ens_b.particles)


class TestReplayConsistency:
    def test_recorded_map_reproduces_final_particles(self):
        ds = _circle()
        spec = ModelSpec("linear_tanh", 2)
        cfg = TrainConfig(EXP, steps=300, lr=0.1, seed=9)
        ens, tmap, _ = train_practical(spec, ds, cfg, 5)
        seeds = init_ensemble(spec, 5, 9).particles
        replayed = apply_transport(tmap, seeds, ds)
        assert np.max(np.abs(replayed - ens.particles)) <= 1e-10

    def test_multiclass_replay(self):
        rng = np.random.default_rng(1)
        ds = Dataset(rng.normal(size=(30, 3)), rng.integers(0, 3, 30), 3, "one_hot")
        spec = ModelSpec("mlp3", 3, num_classes=3)
        cfg = TrainConfig(LossSpec("logistic"), steps=200, lr=0.2, seed=2)
        ens, tmap, _ = train_practical(spec, ds, cfg, 4)
        seeds = init_ensemble(spec, 4, 2).particles
        replayed = apply_transport(tmap, seeds, ds)
        assert np.max(np.abs(replayed - ens.particles)) <= 1e-10
