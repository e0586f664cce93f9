"""Command-line harness: synth, train, eval-loo and predict subcommands.

Every command takes one YAML config (--config), echoes the resolved
settings into the output directory and writes delimited outputs there;
report figures are rendered alongside unless figures are disabled.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import data as welldata
from .cascade import build_plan, cascade_predict_windows, cascade_train
from .checkpoint import load_checkpoint, save_checkpoint, spec_difference
from .config import ExperimentConfig, dump_resolved, load_config
from .network import NetworkTemplate
from .perturb import PerturbationConfig
from .seeding import derive_seed

MODEL_FILE = "model.json"
MODEL_FORMAT = "enlstm-model"
MODEL_VERSION = 1


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _load_records(cfg: ExperimentConfig):
    if cfg.data_csv is not None:
        records = welldata.load_csv(cfg.data_csv)
    else:
        s = cfg.synth
        records = welldata.synth_generate(
            derive_seed(cfg.seed, "synth"), s.n_wells, s.length, s.n_in, s.n_out,
            noise_std=s.noise_std,
        )
    needed = set(cfg.input_channels) | set(cfg.target_channels)
    for rec in records:
        missing = needed - set(rec.channels)
        if missing:
            raise ValueError(
                f"well '{rec.well_id}' is missing channel(s) {sorted(missing)}"
            )
    return records


def _perturbation_config(cfg: ExperimentConfig, stats: welldata.ChannelStats):
    return PerturbationConfig(
        alpha=cfg.perturb_alpha,
        h=cfg.perturb_h,
        eps_real_std=cfg.train.eps_real_std,
        channel_stats={t: stats.pair(t) for t in cfg.target_channels},
        h_decay=cfg.perturb_h_decay,
    )


def _train_once(cfg: ExperimentConfig, records, seed: int, threads: int):
    """Fit stats on the given wells, train the full cascade on them."""
    channels = cfg.input_channels + cfg.target_channels
    stats = welldata.zscore_fit(records, channels)
    normalized = [welldata.zscore_apply(r, stats) for r in records]
    plan = build_plan(cfg.input_channels, cfg.target_channels, cfg.network)
    tcfg = replace(cfg.train, seed=seed, threads=threads)
    pcfg = _perturbation_config(cfg, stats)
    result = cascade_train(
        plan, normalized, tcfg, pcfg, cfg.window_length, cfg.window_stride,
        feed_observed=cfg.feed_observed_intermediates,
    )
    return plan, stats, result


def _metrics_rows(result):
    rows = []
    for k, metrics in enumerate(result.metrics):
        for m in metrics:
            rows.append(
                (k + 1, m.epoch + 1, m.data_mismatch, m.spread, m.lam,
                 m.accepted, m.rejected)
            )
    return rows


def cmd_synth(cfg: ExperimentConfig, out: Path) -> None:
    if cfg.synth is None:
        raise ValueError("the synth command needs a data.synth section")
    records = _load_records(cfg)
    path = out / "synthetic.csv"
    welldata.write_csv(records, path)
    n_rows = sum(len(r) for r in records)
    print(f"wrote {path}: {len(records)} wells, {n_rows} data rows")


def cmd_train(cfg: ExperimentConfig, out: Path, threads: int) -> None:
    records = _load_records(cfg)
    plan, stats, result = _train_once(cfg, records, cfg.seed, threads)

    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for k, state in enumerate(result.states):
        save_checkpoint(
            ckpt_dir / f"stage_{k + 1:02d}.npz",
            plan.specs[k],
            state,
            rng_states=result.rng_states[k],
            meta={"stage": k + 1, "targets": list(plan.stages[k])},
        )
    model = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "base_inputs": list(plan.base_inputs),
        "stages": [list(s) for s in plan.stages],
        "window_length": cfg.window_length,
        "eval_window_length": cfg.eval_window_length,
        "network": {
            "lstm_hidden": cfg.network.lstm_hidden,
            "dense_hidden": cfg.network.dense_hidden,
            "dropout": cfg.network.dropout,
            "batchnorm": cfg.network.batchnorm,
        },
        "stats": {
            "mean": stats.mean,
            "std": stats.std,
        },
        "seed": cfg.seed,
    }
    with open(out / MODEL_FILE, "w", encoding="utf-8") as fh:
        json.dump(model, fh, indent=2, sort_keys=True)

    _write_rows(
        out / "metrics.csv",
        ["stage", "epoch", "data_mismatch", "spread", "lambda", "accepted", "rejected"],
        _metrics_rows(result),
    )
    if cfg.figures:
        from . import report

        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        report.save_training_curves(result.metrics, fig_dir / "training_metrics.png")
    final = [m[-1].data_mismatch for m in result.metrics]
    print(f"trained {len(result.states)} stage(s); final mismatch per stage: "
          + ", ".join(f"{v:.4f}" for v in final))
    print(f"checkpoints in {ckpt_dir}, metrics in {out / 'metrics.csv'}")


def summarize_eval(rows: list[dict]) -> dict:
    """Per-target and overall mean/median of the evaluation MSE table."""
    targets = []
    for row in rows:
        if row["target"] not in targets:
            targets.append(row["target"])
    per_target = {}
    for t in targets:
        vals = [row["mse"] for row in rows if row["target"] == t]
        per_target[t] = {
            "count": len(vals),
            "mean": float(statistics.mean(vals)),
            "median": float(statistics.median(vals)),
        }
    all_vals = [row["mse"] for row in rows]
    return {
        "per_target": per_target,
        "overall": {
            "count": len(all_vals),
            "mean": float(statistics.mean(all_vals)),
            "median": float(statistics.median(all_vals)),
        },
    }


def cmd_eval_loo(cfg: ExperimentConfig, out: Path, threads: int) -> None:
    records = _load_records(cfg)
    folds = welldata.loo_splits(records)
    rows: list[dict] = []
    for fold_idx, (train_wells, test_well) in enumerate(folds):
        for rep in range(cfg.repeats):
            seed = derive_seed(cfg.seed, "fold", fold_idx, "repeat", rep)
            plan, stats, result = _train_once(cfg, train_wells, seed, threads)
            test_norm = welldata.zscore_apply(test_well, stats)
            x = test_norm.matrix(cfg.input_channels)
            truth = test_norm.matrix(cfg.target_channels)
            eval_len = cfg.eval_window_length or len(test_well)
            preds, _ = cascade_predict_windows(plan, result.states, x, eval_len)
            # plan.targets preserves the config target order
            for col, target in enumerate(cfg.target_channels):
                rows.append({
                    "fold": test_well.well_id,
                    "repeat": rep + 1,
                    "target": target,
                    "mse": welldata.mse(preds[:, col], truth[:, col]),
                })
            print(f"fold {test_well.well_id} repeat {rep + 1}: "
                  + ", ".join(f"{r['target']}={r['mse']:.4f}"
                              for r in rows[-len(cfg.target_channels):]))

    _write_rows(
        out / "eval.csv",
        ["fold", "repeat", "target", "mse"],
        [(r["fold"], r["repeat"], r["target"], r["mse"]) for r in rows],
    )
    summary = summarize_eval(rows)
    with open(out / "summary.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(summary, fh, sort_keys=False)
    if cfg.figures:
        from . import report

        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        report.save_mse_boxplot(rows, fig_dir / "mse_boxplot.png")
    print(f"overall MSE mean {summary['overall']['mean']:.4f}, "
          f"median {summary['overall']['median']:.4f} "
          f"({summary['overall']['count']} evaluations)")


def _load_model(cfg: ExperimentConfig, ckpt_dir: Path):
    model_path = ckpt_dir / MODEL_FILE
    if not model_path.exists():
        model_path = ckpt_dir.parent / MODEL_FILE
    if not model_path.exists():
        raise ValueError(f"no {MODEL_FILE} found near {ckpt_dir}")
    with open(model_path, encoding="utf-8") as fh:
        model = json.load(fh)
    if model.get("format") != MODEL_FORMAT:
        raise ValueError(f"{model_path}: not a model description")

    template = NetworkTemplate(**model["network"])
    plan = build_plan(
        model["base_inputs"],
        [t for stage in model["stages"] for t in stage],
        template,
    )
    stats = welldata.ChannelStats(model["stats"]["mean"], model["stats"]["std"])

    expected_plan = build_plan(cfg.input_channels, cfg.target_channels, cfg.network)
    if expected_plan.base_inputs != plan.base_inputs:
        raise ValueError(
            f"checkpoint mismatch: base_inputs: expected "
            f"{list(expected_plan.base_inputs)}, found {list(plan.base_inputs)}"
        )
    if expected_plan.stages != plan.stages:
        raise ValueError(
            f"checkpoint mismatch: stages: expected "
            f"{[list(s) for s in expected_plan.stages]}, "
            f"found {[list(s) for s in plan.stages]}"
        )

    states = []
    for k in range(len(plan.stages)):
        path = ckpt_dir / f"stage_{k + 1:02d}.npz"
        if not path.exists():
            raise ValueError(f"missing checkpoint {path}")
        spec, state, _ = load_checkpoint(path)
        diff = spec_difference(expected_plan.specs[k], spec)
        if diff:
            raise ValueError(f"checkpoint mismatch at stage {k + 1}: {diff}")
        states.append(state)
    return plan, stats, states, int(model.get("eval_window_length", 0))


def cmd_predict(cfg: ExperimentConfig, ckpt_dir: Path, input_csv: str,
                out: Path) -> None:
    plan, stats, states, eval_window = _load_model(cfg, ckpt_dir)
    records = welldata.load_csv(input_csv)
    targets = list(plan.targets)
    for rec in records:
        missing = set(plan.base_inputs) - set(rec.channels)
        if missing:
            raise ValueError(
                f"well '{rec.well_id}' is missing input channel(s) {sorted(missing)}"
            )
        mu = np.array([stats.mean[n] for n in plan.base_inputs])
        sigma = np.array([stats.std[n] for n in plan.base_inputs])
        norm_inputs = (rec.matrix(list(plan.base_inputs)) - mu) / sigma
        preds_norm, stds_norm = cascade_predict_windows(
            plan, states, norm_inputs, eval_window or len(rec)
        )
        preds = welldata.zscore_invert(preds_norm, targets, stats)
        stds = stds_norm * np.array([stats.std[t] for t in targets])

        header = ["depth"] + targets + [f"{t}_std" for t in targets]
        rows = [
            tuple([rec.depth[i]] + list(preds[i]) + list(stds[i]))
            for i in range(len(rec))
        ]
        path = out / f"predictions_{rec.well_id}.csv"
        _write_rows(path, header, rows)
        if cfg.figures:
            from . import report

            fig_dir = out / "figures"
            fig_dir.mkdir(exist_ok=True)
            truth = None
            if all(t in rec.channels for t in targets):
                truth = rec.matrix(targets)
            report.save_prediction_grid(
                rec.depth, preds, stds, targets,
                fig_dir / f"predictions_{rec.well_id}.png", truth=truth,
            )
        print(f"wrote {path} ({len(rec)} depth samples, {len(targets)} targets)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enlstm",
        description="Ensemble-trained LSTM well-log synthesis harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed (overrides config)")
        p.add_argument("--threads", type=int, default=0,
                       help="worker cap (0 = automatic); never changes results")

    p = sub.add_parser("synth", help="generate a synthetic well CSV")
    common(p)
    p = sub.add_parser("train", help="train the cascade on all wells")
    common(p)
    p = sub.add_parser("eval-loo", help="leave-one-out evaluation with repeats")
    common(p)
    p = sub.add_parser("predict", help="predict logs for an input CSV")
    common(p)
    p.add_argument("--checkpoints", required=True, help="checkpoint directory")
    p.add_argument("--input", required=True, help="input well CSV")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, output_dir=args.out)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_resolved(cfg, out / "config_resolved.yaml")
        if args.command == "synth":
            cmd_synth(cfg, out)
        elif args.command == "train":
            cmd_train(cfg, out, args.threads)
        elif args.command == "eval-loo":
            cmd_eval_loo(cfg, out, args.threads)
        elif args.command == "predict":
            cmd_predict(cfg, Path(args.checkpoints), args.input, out)
    except Exception as exc:  # CLI boundary: fail with a message, not a trace
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
