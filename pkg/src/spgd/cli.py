"""Command-line front end.

Subcommands: ``gen-data``, ``train``, ``eval``, ``diag``, ``cv``. Reports
are written as CSV/JSON plus rendered PNG figures in the chosen output
directory. Exit codes: 0 ok, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baseline as bl
from . import data as dmod
from . import diagnostics as diag
from . import ensemble as emod
from . import optimizer as opt
from .loss import LossSpec
from .model import ModelSpec, bias_indices, cross_entropy_many

DEFAULT_GRID = {
    "lr": [0.3, 0.1, 0.03, 0.01],
    "momentum": [0.0, 0.9],
    "particles": [10, 30],
    "epochs": [50, 200],
}

METHODS = ("spgd_practical", "spgd_resampling", "baseline")


@dataclass
class RunConfig:
    """Everything needed to reproduce one run (together with its seed)."""

    data: dict
    model: dict
    method: str
    train: dict
    seed: int
    out_dir: str
    standardize: bool = False
    diagnostics: dict = field(default_factory=dict)
    grid: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)


def _load_dataset(source: dict) -> dmod.Dataset:
    if "path" in source:
        return dmod.load_table(source["path"], source.get("format", "csv"),
                               source.get("label_column"))
    if "synthetic" in source:
        if source["synthetic"] != "double_circle":
            raise ValueError(f"unknown synthetic recipe {source['synthetic']!r}")
        return dmod.gen_double_circle(int(source.get("n_per_class", 100)),
                                      float(source.get("noise", 0.1)),
                                      int(source.get("data_seed", 0)))
    if "builtin" in source:
        return dmod.load_builtin(source["builtin"])
    raise ValueError("dataset source needs one of: path, synthetic, builtin")


def _build_spec(model: dict, ds: dmod.Dataset) -> ModelSpec:
    kind = model.get("kind", "linear_tanh")
    output = model.get("output")
    if output is None:
        output = "tanh" if kind == "linear_tanh" else "softmax"
    return ModelSpec(kind=kind, input_dim=ds.n_features, num_classes=ds.num_classes,
                     hidden_dim=model.get("hidden_dim"), output=output,
                     use_bias=bool(model.get("use_bias", True)))


def _steps_for(train: dict, n_train: int) -> int:
    if train.get("steps") is not None:
        return int(train["steps"])
    if train.get("epochs") is not None:
        return int(train["epochs"]) * n_train
    raise ValueError("train config needs steps or epochs")


def _train_one(cfg: RunConfig, ds: dmod.Dataset, seed: int):
    """Dispatch on method; returns (ensemble, transport map or None, trace)."""
    spec = _build_spec(cfg.model, ds)
    tr = cfg.train
    steps = _steps_for(tr, ds.n_samples)
    common = dict(steps=steps, lr=float(tr.get("lr", 0.1)),
                  schedule=tr.get("schedule", "constant"),
                  momentum=float(tr.get("momentum", 0.0)),
                  batch_size=int(tr.get("batch_size", 1)), seed=seed,
                  eval_every=int(tr.get("eval_every", 0)),
                  alpha=float(tr.get("alpha", 0.05)))
    if cfg.method == "baseline":
        bcfg = bl.BaselineConfig(spec=spec, loss=tr.get("loss", "cross_entropy"), **common)
        params, trace = bl.train_single(bcfg, ds)
        return emod.ParticleEnsemble(spec, params[None, :]), None, trace
    tcfg = opt.TrainConfig(loss=LossSpec(tr.get("loss", "exponential")),
                           precond=float(tr.get("precond", 1.0)), **common)
    m = int(tr.get("particles", 10))
    init = _seed_particles(spec, m, seed, tr.get("bias_spread"))
    if cfg.method == "spgd_practical":
        ens, tmap, trace = opt.train_practical(spec, ds, tcfg, m, init=init)
    elif cfg.method == "spgd_resampling":
        tmap, ens, trace = opt.train_resampling(spec, ds, tcfg, m, init=init,
                                                resample=init is None)
    else:
        raise ValueError(f"unknown method {cfg.method!r}")
    return ens, tmap, trace


def _seed_particles(spec: ModelSpec, m: int, seed: int, bias_spread):
    """Seed measure override: widen the bias draw to the given stddev.

    The standard init uses stddev 0.01 for biases; tasks whose decision
    boundary sits away from the origin (the concentric-circles toy) need
    initial unit offsets on the scale of the data.
    """
    if bias_spread is None:
        return None
    particles = emod.init_ensemble(spec, m, seed).particles
    idx = bias_indices(spec)
    particles[:, idx] *= float(bias_spread) / 0.01
    return particles


def _stats_to_meta(stats) -> dict:
    return {"mean": stats.mean.tolist(), "std": stats.std.tolist()}


def _stats_from_meta(meta: dict):
    st = meta.get("standardization")
    if not st:
        return None
    return dmod.StandardizationStats(np.array(st["mean"]), np.array(st["std"]))


def cmd_train(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = _load_dataset(cfg.data)
    stats = None
    if cfg.standardize:
        ds, _, stats = dmod.standardize(ds)
    ens, tmap, trace = _train_one(cfg, ds, cfg.seed)
    meta = {"step": trace.records[-1]["step"], "seed": cfg.seed,
            "loss": cfg.train.get("loss", "exponential" if cfg.method != "baseline"
                                  else "cross_entropy"),
            "method": cfg.method,
            "standardization": _stats_to_meta(stats) if stats else None}
    emod.save_checkpoint(ens, out / "checkpoint.json", meta)
    if tmap is not None:
        emod.save_transport_map(tmap, out / "map.json")
    trace.write_jsonl(out / "trace.jsonl")
    with open(out / "run_config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
    summary = {"config": cfg.to_dict(), "n_train": ds.n_samples,
               "final": trace.records[-1]}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    from . import figures

    figures.save_trace_figure(trace.records, out / "trace.png")
    if ds.n_features == 2:
        figures.save_decision_regions(ens, ds, out / "decision_regions.png")
    final = trace.records[-1]
    print(f"trained {cfg.method} for {final['step']} steps: "
          f"loss {final['loss']:.6f}, accuracy {final['accuracy']:.4f} -> {out}")
    return 0


def _objective_value(ens, ds, loss_kind: str) -> float:
    if loss_kind == "cross_entropy":
        onehot = np.eye(ens.spec.num_classes)[ds.labels]
        return float(cross_entropy_many(ens.spec, ens.particles, ds.features, onehot).mean())
    return diag.empirical_loss(ens, ds, LossSpec(loss_kind))


def cmd_eval(args) -> int:
    ens, meta = emod.load_checkpoint(args.checkpoint)
    ds = dmod.load_table(args.data, args.format, args.label_column)
    stats = _stats_from_meta(meta)
    if stats is not None:
        ds = dmod.apply_standardization(ds, stats)
    loss_kind = meta.get("loss", "logistic")
    result = {"accuracy": diag.accuracy(ens, ds),
              "loss": _objective_value(ens, ds, loss_kind),
              "loss_kind": loss_kind, "n_samples": ds.n_samples}
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def _write_margin_csv(report, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "cdf", "bound_rhs"])
        for rho, c, b in zip(report.rho_grid, report.cdf, report.bound):
            w.writerow([f"{rho:.6g}", f"{c:.10g}", "" if np.isnan(b) else f"{b:.10g}"])


def _write_decision_grid(ens, ds, path, grid_n: int) -> None:
    (x0, y0), (x1, y1) = ds.features.min(axis=0), ds.features.max(axis=0)
    pad_x, pad_y = 0.1 * (x1 - x0 + 1e-9), 0.1 * (y1 - y0 + 1e-9)
    gx = np.linspace(x0 - pad_x, x1 + pad_x, grid_n)
    gy = np.linspace(y0 - pad_y, y1 + pad_y, grid_n)
    xx, yy = np.meshgrid(gx, gy)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    labels = emod.classify_many(ens, pts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x0", "x1", "label"])
        for (a, b), lab in zip(pts, labels):
            w.writerow([f"{a:.6g}", f"{b:.6g}", int(lab)])


def cmd_diag(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ens, meta = emod.load_checkpoint(args.checkpoint)
    ds = dmod.load_table(args.data, args.format, args.label_column)
    stats = _stats_from_meta(meta)
    if stats is not None:
        ds = dmod.apply_standardization(ds, stats)
    grid = np.linspace(1.0 / args.rho_points, 1.0, args.rho_points)
    report = diag.margin_report(ens, ds, args.alpha, grid)
    _write_margin_csv(report, out / "margin.csv")
    loss_kind = meta.get("loss", "logistic")
    surrogate = LossSpec(loss_kind if loss_kind in ("exponential", "logistic") else "logistic")
    summary = {
        "alpha": args.alpha,
        "psi_alpha": report.psi_alpha,
        "min_margin": float(report.margins.min()),
        "max_margin": float(report.margins.max()),
        "accuracy": diag.accuracy(ens, ds),
        "optimality_norm": diag.optimality_norm(ens, ds, surrogate),
        "surrogate": surrogate.kind,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    from . import figures

    figures.save_margin_figure(report, out / "margin_cdf.png")
    if ds.n_features == 2:
        _write_decision_grid(ens, ds, out / "decision_grid.csv", args.grid_n)
        figures.save_decision_regions(ens, ds, out / "decision_regions.png")
        if ens.spec.kind == "linear_tanh":
            figures.save_particle_scatter(ens, out / "particles.png")
    print(f"diagnostics written to {out}: psi_alpha={report.psi_alpha:.4f}, "
          f"accuracy={summary['accuracy']:.4f}")
    return 0


def _run_seed(seed: int, run_index: int) -> int:
    return int(np.random.SeedSequence([seed, run_index]).generate_state(1)[0])


def _grid_entries(grid: dict, method: str) -> list:
    entries = []
    particles = grid.get("particles", [1]) if method != "baseline" else [1]
    for lr in grid["lr"]:
        for mom in grid.get("momentum", [0.0]):
            for m in particles:
                for ep in grid.get("epochs", [50]):
                    entries.append({"lr": float(lr), "momentum": float(mom),
                                    "particles": int(m), "epochs": int(ep)})
    return entries


def run_cv(cfg: RunConfig, k: int) -> dict:
    """The rotating k-run protocol with validation-based grid selection."""
    if k < 3:
        raise ValueError("k must be >= 3")
    full = _load_dataset(cfg.data)
    grid = cfg.grid or DEFAULT_GRID
    entries = _grid_entries(grid, cfg.method)
    if not entries:
        raise ValueError("empty hyper-parameter grid")
    runs = []
    for run_index in range(k):
        train, valid, test = dmod.kfold_protocol(full, k, run_index, cfg.seed)
        if cfg.standardize:
            train, (valid, test), _ = dmod.standardize(train, (valid, test))
        seed_i = _run_seed(cfg.seed, run_index)
        best = None
        for entry in entries:
            trial = RunConfig(data=cfg.data, model=cfg.model, method=cfg.method,
                              train={**cfg.train, "lr": entry["lr"],
                                     "momentum": entry["momentum"],
                                     "particles": entry["particles"],
                                     "epochs": entry["epochs"], "steps": None},
                              seed=seed_i, out_dir=cfg.out_dir)
            ens, _, _ = _train_one(trial, train, seed_i)
            vacc = diag.accuracy(ens, valid)
            # ties resolved toward the smaller learning rate
            key = (vacc, -entry["lr"])
            if best is None or key > best[0]:
                best = (key, entry, ens)
        _, entry, ens = best
        runs.append({"run": run_index, "selected": entry,
                     "valid_accuracy": diag.accuracy(ens, valid),
                     "test_accuracy": diag.accuracy(ens, test)})
    accs = np.array([r["test_accuracy"] for r in runs])
    return {"method": cfg.method, "k": k, "seed": cfg.seed,
            "mean_test_accuracy": float(accs.mean()),
            "std_test_accuracy": float(accs.std(ddof=1)) if k > 1 else 0.0,
            "runs": runs}


def cmd_cv(cfg: RunConfig, k: int) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = run_cv(cfg, k)
    with open(out / "cv_report.json", "w") as fh:
        json.dump({"config": cfg.to_dict(), **report}, fh, indent=2)
    with open(out / "cv_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "lr", "momentum", "particles", "epochs",
                    "valid_accuracy", "test_accuracy"])
        for r in report["runs"]:
            s = r["selected"]
            w.writerow([r["run"], s["lr"], s["momentum"], s["particles"], s["epochs"],
                        f"{r['valid_accuracy']:.6f}", f"{r['test_accuracy']:.6f}"])
    print(f"{cfg.method}: {report['mean_test_accuracy']:.3f} "
          f"({report['std_test_accuracy']:.4f}) over {k} runs -> {out}")
    return 0


def cmd_gen_data(args) -> int:
    if args.recipe == "circle":
        ds = dmod.gen_double_circle(args.n_per_class, args.noise, args.seed)
    else:
        ds = dmod.load_builtin(args.name)
    dmod.write_csv(ds, args.out)
    print(f"wrote {ds.n_samples} x {ds.n_features} dataset ({ds.num_classes} classes) "
          f"to {args.out}")
    return 0


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    if p.suffix == ".toml":
        import tomllib

        with open(p, "rb") as fh:
            return tomllib.load(fh)
    with open(p) as fh:
        return json.load(fh)


def _data_source_from_args(args) -> dict:
    if getattr(args, "uci", None):
        return {"builtin": args.uci}
    if getattr(args, "circle", False):
        return {"synthetic": "double_circle", "n_per_class": args.n_per_class,
                "noise": args.noise, "data_seed": args.data_seed}
    if getattr(args, "data", None):
        return {"path": args.data, "format": args.format,
                "label_column": args.label_column}
    raise ValueError("no dataset given: use --data, --uci, or --circle")


def _run_config_from_args(args) -> RunConfig:
    base: dict = {}
    if getattr(args, "config", None):
        base = _load_config_file(args.config)
    cfg = RunConfig(
        data=base.get("data") or _data_source_from_args(args),
        model=base.get("model") or {"kind": args.model, "hidden_dim": args.hidden_dim,
                                    "output": args.output,
                                    "use_bias": not args.no_bias},
        method=args.method or base.get("method", "spgd_practical"),
        train=base.get("train") or {"loss": args.loss, "steps": args.steps,
                                    "epochs": args.epochs, "lr": args.lr,
                                    "schedule": args.schedule,
                                    "momentum": args.momentum,
                                    "precond": args.precond,
                                    "batch_size": args.batch_size,
                                    "particles": args.particles,
                                    "eval_every": args.eval_every,
                                    "bias_spread": args.bias_spread,
                                    "alpha": args.alpha},
        seed=args.seed if args.seed is not None else base.get("seed"),
        out_dir=args.out_dir or base.get("out_dir", "run_out"),
        standardize=args.standardize if args.standardize is not None
        else bool(base.get("standardize", False)),
        grid=_load_config_file(args.grid) if getattr(args, "grid", None) else base.get("grid"),
    )
    if cfg.seed is None:
        raise ValueError("--seed is required")
    if cfg.method not in METHODS:
        raise ValueError(f"unknown method {cfg.method!r}")
    return cfg


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="CSV or LIBSVM file")
    p.add_argument("--format", default="csv", choices=["csv", "libsvm"])
    p.add_argument("--label-column", type=int, default=None, dest="label_column")
    p.add_argument("--uci", help="builtin dataset name (breast-cancer, wine, iris)")
    p.add_argument("--circle", action="store_true", help="synthetic double circle")
    p.add_argument("--n-per-class", type=int, default=100, dest="n_per_class")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--data-seed", type=int, default=0, dest="data_seed")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON/TOML run config; flags override")
    p.add_argument("--model", default="linear_tanh",
                   choices=["linear_tanh", "logreg", "mlp3"])
    p.add_argument("--hidden-dim", type=int, default=None, dest="hidden_dim")
    p.add_argument("--output", default=None, choices=["tanh", "softmax"])
    p.add_argument("--no-bias", action="store_true", dest="no_bias")
    p.add_argument("--method", default=None, choices=list(METHODS))
    p.add_argument("--loss", default="exponential",
                   choices=["exponential", "logistic", "cross_entropy"])
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--schedule", default="constant", choices=list(opt.SCHEDULES))
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--precond", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=1, dest="batch_size")
    p.add_argument("--particles", type=int, default=10)
    p.add_argument("--eval-every", type=int, default=0, dest="eval_every")
    p.add_argument("--bias-spread", type=float, default=None, dest="bias_spread",
                   help="stddev for initial bias entries (seed-measure override)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=None, required=False)
    p.add_argument("--out-dir", default=None, dest="out_dir")
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spgd",
                                     description="Particle-ensemble training and diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-data", help="write a dataset CSV")
    gsub = p_gen.add_subparsers(dest="recipe", required=True)
    p_circle = gsub.add_parser("circle")
    p_circle.add_argument("--n-per-class", type=int, default=100, dest="n_per_class")
    p_circle.add_argument("--noise", type=float, default=0.1)
    p_circle.add_argument("--seed", type=int, default=0)
    p_circle.add_argument("--out", required=True)
    p_uci = gsub.add_parser("uci")
    p_uci.add_argument("--name", required=True)
    p_uci.add_argument("--out", required=True)

    p_train = sub.add_parser("train", help="train one model/ensemble")
    _add_data_flags(p_train)
    _add_train_flags(p_train)

    p_cv = sub.add_parser("cv", help="rotating k-fold protocol with grid selection")
    _add_data_flags(p_cv)
    _add_train_flags(p_cv)
    p_cv.add_argument("--k", type=int, default=10)
    p_cv.add_argument("--grid", default=None, help="JSON file with lr/momentum/particles/epochs lists")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--format", default="csv", choices=["csv", "libsvm"])
    p_eval.add_argument("--label-column", type=int, default=None, dest="label_column")
    p_eval.add_argument("--out", default=None)

    p_diag = sub.add_parser("diag", help="margin report, decision grid, figures")
    p_diag.add_argument("--checkpoint", required=True)
    p_diag.add_argument("--data", required=True)
    p_diag.add_argument("--format", default="csv", choices=["csv", "libsvm"])
    p_diag.add_argument("--label-column", type=int, default=None, dest="label_column")
    p_diag.add_argument("--alpha", type=float, default=0.05)
    p_diag.add_argument("--rho-points", type=int, default=50, dest="rho_points")
    p_diag.add_argument("--grid-n", type=int, default=120, dest="grid_n")
    p_diag.add_argument("--out-dir", required=True, dest="out_dir")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            cfg = _run_config_from_args(args)
            if cfg.train.get("steps") is None and cfg.train.get("epochs") is None:
                cfg.train["epochs"] = 50
            return cmd_train(cfg)
        if args.command == "cv":
            cfg = _run_config_from_args(args)
            return cmd_cv(cfg, args.k)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "diag":
            return cmd_diag(args)
        raise ValueError(f"unknown command {args.command!r}")
    except (FileNotFoundError, dmod.ParseError, emod.CheckpointError,
            emod.FingerprintError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except opt.DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
