"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
report. Budgets: the whole module is sized to finish in well under ten
minutes on a laptop-class CPU.
"""
import time

import numpy as np
import pytest

from spgd.baseline import BaselineConfig, train_single
from spgd.cli import RunConfig, run_cv
from spgd.data import Dataset, gen_double_circle, load_builtin
from spgd.diagnostics import (
    margin_report,
    optimality_norm,
    smooth_margin_from_margins,
    taylor_residual,
)
from spgd.ensemble import (
    ParticleEnsemble,
    apply_transport,
    classify_many,
    init_ensemble,
    load_checkpoint,
    load_transport_map,
    save_checkpoint,
    save_transport_map,
)
from spgd.loss import LossSpec, eval_loss
from spgd.model import (
    ModelSpec,
    bias_indices,
    grad_margin,
    margin,
    targets_for,
)
from spgd.optimizer import TrainConfig, train_practical, train_resampling

EXP = LossSpec("exponential")
LOG = LossSpec("logistic")


def _report(num: int, ok: bool, detail: str) -> None:
    print(f"[acceptance] criterion {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}")


def test_c01_gradient_oracle():
    """Analytic update integrand matches central finite differences."""
    t0 = time.time()
    kinds = [ModelSpec("linear_tanh", 3),
             ModelSpec("logreg", 3, num_classes=3),
             ModelSpec("mlp3", 3, num_classes=3, hidden_dim=4)]
    h = 1e-5
    worst = 0.0
    try:
        for spec in kinds:
            for loss in (EXP, LOG):
                rng = np.random.default_rng(101)
                for _ in range(100):
                    theta = rng.normal(size=spec.param_dim)
                    x = rng.normal(size=spec.input_dim)
                    lab = int(rng.integers(0, spec.num_classes))
                    y = targets_for(spec, np.array([lab]))[0]
                    m = margin(spec, theta, x, y)
                    s = -float(eval_loss(loss, -m)[1]) * grad_margin(spec, theta, x, y)
                    fd = np.empty(spec.param_dim)
                    for i in range(spec.param_dim):
                        tp, tm = theta.copy(), theta.copy()
                        tp[i] += h
                        tm[i] -= h
                        fp = float(eval_loss(loss, -margin(spec, tp, x, y))[0])
                        fm = float(eval_loss(loss, -margin(spec, tm, x, y))[0])
                        fd[i] = (fp - fm) / (2 * h)
                    rel = np.abs(s - fd) / np.maximum(1e-3, np.maximum(np.abs(s), np.abs(fd)))
                    worst = max(worst, float(rel.max()))
                    assert rel.max() < 1e-5
        dt = time.time() - t0
        assert dt < 5.0, f"runtime {dt:.1f}s exceeds 5s"
    except AssertionError:
        _report(1, False, "gradient oracle")
        raise
    _report(1, True, f"gradient vs finite differences, worst rel err {worst:.2e}, "
                     f"{time.time() - t0:.1f}s")


def test_c02_taylor_slope():
    """Risk-expansion residual scales quadratically in the step size."""
    t0 = time.time()
    rng = np.random.default_rng(0)
    specs = [ModelSpec("logreg", 3, num_classes=3),
             ModelSpec("mlp3", 4, num_classes=3, hidden_dim=4),
             ModelSpec("linear_tanh", 5)]
    slopes = []
    try:
        for _ in range(20):
            spec = specs[int(rng.integers(0, 3))]
            assert spec.param_dim <= 40
            ens = ParticleEnsemble(spec, rng.normal(size=(8, spec.param_dim)))
            n = int(rng.integers(10, 30))
            labels = rng.integers(0, spec.num_classes, size=n)
            ds = Dataset(rng.normal(size=(n, spec.input_dim)), labels, spec.num_classes,
                         "binary" if spec.num_classes == 2 else "one_hot")
            xi = rng.normal(size=ens.particles.shape)
            xi /= np.sqrt(np.mean(np.sum(xi * xi, axis=1)))
            _, slope = taylor_residual(ens, ds, EXP, xi, [1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
            slopes.append(slope)
            assert 1.8 <= slope <= 2.2
        dt = time.time() - t0
        assert dt < 10.0, f"runtime {dt:.1f}s exceeds 10s"
    except AssertionError:
        _report(2, False, "Taylor residual slope")
        raise
    _report(2, True, f"20 ensembles, slopes in [{min(slopes):.3f}, {max(slopes):.3f}], "
                     f"{time.time() - t0:.1f}s")


def test_c03_smooth_margin_sandwich():
    """Soft-min margin sits between the min margin and min + alpha log N."""
    rng = np.random.default_rng(7)
    try:
        for _ in range(1000):
            n = int(rng.integers(1, 80))
            margins = rng.uniform(-1, 1, size=n)
            for alpha in (0.01, 0.1, 1.0):
                psi = smooth_margin_from_margins(margins, alpha)
                m_min = margins.min()
                assert m_min - 1e-9 <= psi <= m_min + alpha * np.log(n) + 1e-9
    except AssertionError:
        _report(3, False, "smooth-margin sandwich")
        raise
    _report(3, True, "sandwich holds on 1000 random margin vectors x 3 alphas at 1e-9")


def test_c04_margin_distribution_bound():
    """Empirical margin CDF never exceeds the distribution bound below psi."""
    rng = np.random.default_rng(13)
    checked = 0
    attempts = 0
    try:
        while checked < 100:
            attempts += 1
            assert attempts < 2000, "could not assemble 100 valid trials"
            m = int(rng.integers(2, 6))
            spec = ModelSpec("linear_tanh", 2)
            ens = ParticleEnsemble(spec, rng.normal(size=(m, 3)))
            X = rng.normal(scale=1.5, size=(int(rng.integers(15, 40)), 2))
            labels = classify_many(ens, X)
            if len(set(labels.tolist())) < 2:
                continue
            ds = Dataset(X, labels, 2, "binary")
            alpha = float(rng.uniform(0.02, 0.5))
            rep = margin_report(ens, ds, alpha)
            if rep.psi_alpha <= 0:
                continue
            valid = rep.rho_grid < rep.psi_alpha
            assert np.all(rep.cdf[valid] <= rep.bound[valid] + 1e-12)
            checked += 1
    except AssertionError:
        _report(4, False, "margin-distribution bound")
        raise
    _report(4, True, f"bound respected on {checked} positive-margin trials "
                     f"({attempts} attempts)")


def test_c05_dirac_equals_vanilla_sgd():
    """Single-particle training is bitwise vanilla SGD under a shared seed."""
    ds = gen_double_circle(30, 0.1, seed=5)
    spec = ModelSpec("linear_tanh", 2)
    try:
        for steps in (1, 10, 100, 1000):
            cfg = TrainConfig(EXP, steps=steps, lr=0.1, seed=42)
            ens, _, _ = train_practical(spec, ds, cfg, 1)
            bcfg = BaselineConfig(spec=spec, steps=steps, lr=0.1,
                                  loss="exponential", seed=42)
            params, _ = train_single(bcfg, ds)
            assert np.array_equal(ens.particles[0], params), f"mismatch at {steps} steps"
    except AssertionError:
        _report(5, False, "Dirac / vanilla-SGD equivalence")
        raise
    _report(5, True, "bitwise-equal trajectories at 1, 10, 100, 1000 steps")


def test_c06_resampling_consistency():
    """Map-replay training matches direct training when seeds are shared."""
    ds = gen_double_circle(25, 0.1, seed=4)
    spec = ModelSpec("linear_tanh", 2)
    cfg = TrainConfig(EXP, steps=500, lr=0.05, seed=3)
    try:
        ens_p, _, _ = train_practical(spec, ds, cfg, 4)
        _, ens_r, _ = train_resampling(spec, ds, cfg, 4, resample=False)
        diff = float(np.max(np.abs(ens_p.particles - ens_r.particles)))
        assert diff <= 1e-10
    except AssertionError:
        _report(6, False, "resampling/practical consistency")
        raise
    _report(6, True, f"500 steps, max particle difference {diff:.1e}")


def test_c08_table1_replication():
    """Desk-scale 10-run protocol on bundled UCI data meets loose gates."""
    t0 = time.time()
    grid = {"lr": [0.1, 0.3], "momentum": [0.9], "particles": [10], "epochs": [10]}
    results = {}
    try:
        cfg_bc_spgd = RunConfig(
            data={"builtin": "breast-cancer"}, model={"kind": "mlp3"},
            method="spgd_practical",
            train={"loss": "exponential"}, seed=17, out_dir="", standardize=True,
            grid=grid)
        results["bc SPGD(exp)"] = (run_cv(cfg_bc_spgd, 10), 0.971, 0.92)
        cfg_bc_lr = RunConfig(
            data={"builtin": "breast-cancer"}, model={"kind": "logreg"},
            method="baseline",
            train={"loss": "cross_entropy"}, seed=17, out_dir="", standardize=True,
            grid=grid)
        results["bc LogReg"] = (run_cv(cfg_bc_lr, 10), 0.966, 0.92)
        cfg_wine = RunConfig(
            data={"builtin": "wine"}, model={"kind": "mlp3"},
            method="spgd_practical",
            train={"loss": "logistic"}, seed=17, out_dir="", standardize=True,
            grid=grid)
        results["wine SPGD(log)"] = (run_cv(cfg_wine, 10), 0.984, 0.92)
        lines = []
        for name, (report, paper_mean, gate) in results.items():
            mean, std = report["mean_test_accuracy"], report["std_test_accuracy"]
            lines.append(f"{name} {mean:.3f}({std:.3f}) vs paper {paper_mean}")
            assert mean >= gate, f"{name}: {mean:.3f} < {gate}"
        dt = time.time() - t0
        assert dt < 300.0, f"runtime {dt:.0f}s exceeds 5 min"
    except AssertionError:
        _report(8, False, "Table-1 replication")
        raise
    _report(8, True, "; ".join(lines) + f"; {time.time() - t0:.0f}s")


def test_c09_expected_descent():
    """Constant small step strictly reduces the full-batch risk, 10/10 seeds."""
    ds = gen_double_circle(50, 0.1, seed=0)
    spec = ModelSpec("linear_tanh", 2)
    drops = []
    try:
        for seed in range(10):
            cfg = TrainConfig(EXP, steps=3000, lr=0.02, seed=seed)
            _, _, trace = train_practical(spec, ds, cfg, 8)
            first, last = trace.records[0]["loss"], trace.records[-1]["loss"]
            drops.append(first - last)
            assert last < first, f"seed {seed}: {last} !< {first}"
    except AssertionError:
        _report(9, False, "expected descent")
        raise
    _report(9, True, f"10/10 seeds descend; loss drop range "
                     f"[{min(drops):.4f}, {max(drops):.4f}]")


def test_c10_optimality_norm_convergence():
    """Single-particle logistic regression drives the optimality estimate to ~0."""
    rng = np.random.default_rng(21)
    n = 60
    a = rng.normal((0.7, 0.4), 1.0, size=(n, 2))
    b = rng.normal((-0.7, -0.4), 1.0, size=(n, 2))
    ds = Dataset(np.vstack([a, b]), np.array([1] * n + [0] * n), 2, "binary")
    spec = ModelSpec("logreg", 2, num_classes=2)
    cfg = TrainConfig(LOG, steps=400, lr=1.0, batch_size=ds.n_samples, seed=3,
                      eval_every=40)
    try:
        ens, _, trace = train_practical(spec, ds, cfg, 1)
        vals = [r["optimality_norm"] for r in trace.records]
        assert vals[-1] < 1e-3, f"final optimality norm {vals[-1]:.2e}"
        for i in range(len(vals) - 1):
            assert vals[i + 1] <= vals[i] * 1.1, f"rise at record {i}"
    except AssertionError:
        _report(10, False, "optimality-norm convergence")
        raise
    _report(10, True, f"final value {vals[-1]:.2e}, monotone within 10% over "
                      f"{len(vals)} records")


def test_c11_persistence(tmp_path):
    """Checkpoint round-trip is bitwise; replayed map reproduces the particles."""
    ds = gen_double_circle(25, 0.1, seed=8)
    spec = ModelSpec("linear_tanh", 2)
    cfg = TrainConfig(EXP, steps=300, lr=0.1, seed=11)
    try:
        ens, tmap, _ = train_practical(spec, ds, cfg, 5)
        ck, mp = tmp_path / "ck.json", tmp_path / "map.json"
        save_checkpoint(ens, ck, {"seed": 11})
        save_transport_map(tmap, mp)
        ens2, _ = load_checkpoint(ck)
        assert np.array_equal(ens2.particles, ens.particles)
        tmap2 = load_transport_map(mp)
        seeds = init_ensemble(spec, 5, 11).particles
        replayed = apply_transport(tmap2, seeds, ds)
        diff = float(np.max(np.abs(replayed - ens.particles)))
        assert diff <= 1e-10
    except AssertionError:
        _report(11, False, "persistence")
        raise
    _report(11, True, f"checkpoint bitwise, map replay diff {diff:.1e}")
