"""One YAML experiment config drives every command; resolved defaults are
echoed into the output directory so runs stay self-documenting."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import yaml

from .enrml import TrainConfig
from .network import NetworkTemplate


@dataclass(frozen=True)
class SynthSpec:
    n_wells: int = 6
    length: int = 800
    n_in: int = 4
    n_out: int = 3
    noise_std: float = 0.05


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/out"
    data_csv: str | None = None
    synth: SynthSpec | None = None
    input_channels: list[str] = field(default_factory=list)
    target_channels: list[str] = field(default_factory=list)
    network: NetworkTemplate = field(default_factory=NetworkTemplate)
    train: TrainConfig = field(default_factory=TrainConfig)
    perturb_alpha: float = 0.99
    perturb_h: float = 0.1
    perturb_h_decay: float = 1.0
    window_length: int = 130
    window_stride: int = 40
    eval_window_length: int = 0  # 0 = single full-sequence pass
    repeats: int = 1
    figures: bool = True
    feed_observed_intermediates: bool = False

    def __post_init__(self):
        if self.data_csv is None and self.synth is None:
            raise ValueError("config needs a data source: data.csv or data.synth")
        if self.data_csv is not None and self.synth is not None:
            raise ValueError("config must pick one data source, not both")
        if self.synth is not None and not self.input_channels:
            self.input_channels = [f"in{i + 1:02d}" for i in range(self.synth.n_in)]
            self.target_channels = [f"out{k + 1:02d}" for k in range(self.synth.n_out)]
        if not self.input_channels or not self.target_channels:
            raise ValueError("config needs channels.inputs and channels.targets")
        overlap = set(self.input_channels) & set(self.target_channels)
        if overlap:
            raise ValueError(f"channels cannot be both input and target: {sorted(overlap)}")
        if self.window_length < 1 or self.window_stride < 1:
            raise ValueError("window length and stride must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


def _take(section: dict, allowed: dict, where: str) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ValueError(f"unknown key(s) {sorted(unknown)} in config section '{where}'")
    return {k: allowed[k](v) for k, v in section.items()}


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    top_allowed = {
        "seed", "output_dir", "data", "channels", "network",
        "train", "perturb", "window", "evaluation", "figures", "cascade",
    }
    unknown = set(raw) - top_allowed
    if unknown:
        raise ValueError(f"unknown top-level config key(s) {sorted(unknown)}")

    data = raw.get("data", {}) or {}
    data_csv = None
    synth = None
    if "csv" in data:
        data_csv = str(data["csv"])
    if "synth" in data:
        synth = SynthSpec(**_take(
            data["synth"] or {},
            {"n_wells": int, "length": int, "n_in": int, "n_out": int, "noise_std": float},
            "data.synth",
        ))
    extra = set(data) - {"csv", "synth"}
    if extra:
        raise ValueError(f"unknown key(s) {sorted(extra)} in config section 'data'")

    channels = raw.get("channels", {}) or {}
    ch = _take(channels, {"inputs": list, "targets": list}, "channels")

    network = NetworkTemplate(**_take(
        raw.get("network", {}) or {},
        {"lstm_hidden": int, "dense_hidden": int, "dropout": float, "batchnorm": bool},
        "network",
    ))

    train = TrainConfig(**_take(
        raw.get("train", {}) or {},
        {
            "n_realizations": int, "batch_size": int, "eps_real_std": float,
            "epochs": int, "lambda_init": float, "lambda_factor": float,
            "prior_std": float, "redraw_observations": bool,
        },
        "train",
    ))

    pert = _take(
        raw.get("perturb", {}) or {},
        {"alpha": float, "h": float, "h_decay": float},
        "perturb",
    )
    wind = _take(
        raw.get("window", {}) or {},
        {"length": int, "stride": int, "eval_length": int},
        "window",
    )
    evaluation = _take(raw.get("evaluation", {}) or {}, {"repeats": int}, "evaluation")
    casc = _take(
        raw.get("cascade", {}) or {},
        {"feed_observed_intermediates": bool},
        "cascade",
    )

    return ExperimentConfig(
        seed=int(raw.get("seed", 0)),
        output_dir=str(raw.get("output_dir", "runs/out")),
        data_csv=data_csv,
        synth=synth,
        input_channels=[str(c) for c in ch.get("inputs", [])],
        target_channels=[str(c) for c in ch.get("targets", [])],
        network=network,
        train=train,
        perturb_alpha=pert.get("alpha", 0.99),
        perturb_h=pert.get("h", 0.1),
        perturb_h_decay=pert.get("h_decay", 1.0),
        window_length=wind.get("length", 130),
        window_stride=wind.get("stride", 40),
        eval_window_length=wind.get("eval_length", 0),
        repeats=evaluation.get("repeats", 1),
        figures=bool(raw.get("figures", True)),
        feed_observed_intermediates=casc.get("feed_observed_intermediates", False),
    )


def resolved_dict(cfg: ExperimentConfig) -> dict:
    """Full configuration with every default made explicit."""
    data: dict = {}
    if cfg.data_csv is not None:
        data["csv"] = cfg.data_csv
    if cfg.synth is not None:
        data["synth"] = asdict(cfg.synth)
    return {
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "data": data,
        "channels": {"inputs": cfg.input_channels, "targets": cfg.target_channels},
        "network": asdict(cfg.network),
        "train": {
            "n_realizations": cfg.train.n_realizations,
            "batch_size": cfg.train.batch_size,
            "eps_real_std": cfg.train.eps_real_std,
            "epochs": cfg.train.epochs,
            "lambda_init": cfg.train.lambda_init,
            "lambda_factor": cfg.train.lambda_factor,
            "prior_std": cfg.train.prior_std,
            "redraw_observations": cfg.train.redraw_observations,
        },
        "perturb": {
            "alpha": cfg.perturb_alpha,
            "h": cfg.perturb_h,
            "h_decay": cfg.perturb_h_decay,
        },
        "window": {
            "length": cfg.window_length,
            "stride": cfg.window_stride,
            "eval_length": cfg.eval_window_length,
        },
        "evaluation": {"repeats": cfg.repeats},
        "figures": cfg.figures,
        "cascade": {"feed_observed_intermediates": cfg.feed_observed_intermediates},
    }


def dump_resolved(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(resolved_dict(cfg), fh, sort_keys=False)
