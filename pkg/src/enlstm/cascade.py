"""Cascaded multi-target prediction: two targets per stage, each stage's
inputs widened by the previous stages' predictions.

During training, stages are fed the ensemble-mean PREDICTIONS of earlier
stages (not the measured values), so error accumulation matches
deployment; a config switch restores the measured-feed alternative.
All intermediate channels stay on the normalized scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import data as welldata
from . import enrml
from .enrml import EnsembleState, TrainConfig, TrainResult
from .network import NetworkSpec, NetworkTemplate
from .perturb import PerturbationConfig
from .seeding import derive_seed

# Target order of the 12-output field case: Young's moduli first, then
# cohesion/UCS, density/tensile strength, brittleness, Poisson's ratios,
# neutron porosity and total organic carbon.
CASE_STUDY_TARGET_ORDER = (
    "E_x", "E_y", "C", "UCS", "RHO", "TS",
    "BI_x", "BI_y", "NU_x", "NU_y", "NPR", "TOC",
)

FED_PREFIX = "fed::"


@dataclass(frozen=True)
class CascadePlan:
    base_inputs: tuple[str, ...]
    stages: tuple[tuple[str, ...], ...]
    specs: tuple[NetworkSpec, ...]

    def __post_init__(self):
        seen = set()
        for stage in self.stages:
            for name in stage:
                if name in seen:
                    raise ValueError(f"duplicate target '{name}'")
                seen.add(name)
        if len(self.specs) != len(self.stages):
            raise ValueError("one spec per stage required")
        width = len(self.base_inputs)
        for k, (stage, spec) in enumerate(zip(self.stages, self.specs)):
            if spec.input_dim != width + 2 * k:
                raise ValueError(
                    f"stage {k} input_dim {spec.input_dim} != {width + 2 * k}"
                )
            if spec.output_dim != len(stage):
                raise ValueError(
                    f"stage {k} output_dim {spec.output_dim} != {len(stage)}"
                )

    @property
    def targets(self) -> tuple[str, ...]:
        return tuple(t for stage in self.stages for t in stage)


@dataclass
class CascadeResult:
    states: list[EnsembleState]
    metrics: list[list[enrml.EpochMetrics]]
    rng_states: list[dict] = field(default_factory=list)


def build_plan(
    base_inputs: list[str],
    ordered_targets: list[str],
    template: NetworkTemplate,
) -> CascadePlan:
    """Pair targets two at a time in the given order (a trailing odd target
    becomes a single-output stage) and widen each stage's inputs by 2."""
    if not ordered_targets:
        raise ValueError("at least one target required")
    if len(set(ordered_targets)) != len(ordered_targets):
        dup = next(t for t in ordered_targets if ordered_targets.count(t) > 1)
        raise ValueError(f"duplicate target '{dup}'")
    stages = tuple(
        tuple(ordered_targets[i:i + 2]) for i in range(0, len(ordered_targets), 2)
    )
    width = len(base_inputs)
    specs = tuple(
        template.build(width + 2 * k, len(stage)) for k, stage in enumerate(stages)
    )
    return CascadePlan(tuple(base_inputs), stages, specs)


def stage_input_names(plan: CascadePlan, stage_index: int) -> list[str]:
    """Channel names consumed by a stage: base inputs plus the fed-forward
    prediction channels of all earlier stages."""
    names = list(plan.base_inputs)
    for earlier in plan.stages[:stage_index]:
        names.extend(FED_PREFIX + t for t in earlier)
    return names


def cascade_train(
    plan: CascadePlan,
    records: list,
    cfg: TrainConfig,
    pcfg: PerturbationConfig,
    window_length: int,
    stride: int,
    feed_observed: bool = False,
) -> CascadeResult:
    """Train the stages in order on normalized well records.

    Each stage trains on windows cut from the records augmented with the
    earlier stages' fed-forward channels; errors are re-raised tagged
    with the failing stage index.
    """
    augmented = list(records)
    states: list[EnsembleState] = []
    metrics = []
    rng_states = []
    for k, stage_targets in enumerate(plan.stages):
        input_names = stage_input_names(plan, k)
        dataset = welldata.build_windows(
            augmented, input_names, list(stage_targets), window_length, stride
        )
        stage_cfg = replace(cfg, seed=derive_seed(cfg.seed, "stage", k))
        try:
            result: TrainResult = enrml.train(plan.specs[k], dataset, stage_cfg, pcfg)
        except Exception as exc:
            raise RuntimeError(f"stage {k} failed: {exc}") from exc
        states.append(result.state)
        metrics.append(result.metrics)
        rng_states.append(result.rng_states)
        if k + 1 < len(plan.stages):
            augmented = _feed_stage(
                augmented, plan, k, result.state, feed_observed
            )
    return CascadeResult(states=states, metrics=metrics, rng_states=rng_states)


def _feed_stage(records, plan, stage_index, state, feed_observed):
    """Append the stage's fed-forward channels to every record."""
    stage_targets = plan.stages[stage_index]
    input_names = stage_input_names(plan, stage_index)
    out = []
    for rec in records:
        if feed_observed:
            fed = rec.matrix(list(stage_targets))
        else:
            fed, _ = enrml.predict(state, plan.specs[stage_index], rec.matrix(input_names))
        out.append(
            rec.with_channels(
                {FED_PREFIX + t: fed[:, i] for i, t in enumerate(stage_targets)}
            )
        )
    return out


def cascade_predict(
    plan: CascadePlan,
    states: list[EnsembleState],
    x: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate all stages on a base-input sequence (T, n_base_inputs).

    Returns the concatenated target matrix and the per-target ensemble
    std, columns ordered like ``plan.targets``. Mean predictions are fed
    forward between stages, exactly as during training.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(states) != len(plan.stages):
        raise ValueError(
            f"{len(states)} states for {len(plan.stages)} stages"
        )
    if x.ndim != 2 or x.shape[1] != len(plan.base_inputs):
        raise ValueError("input width does not match the plan's base inputs")
    cur = x
    means = []
    stds = []
    for spec, state in zip(plan.specs, states):
        mean, std = enrml.predict(state, spec, cur)
        means.append(mean)
        stds.append(std)
        cur = np.hstack([cur, mean])
    return np.hstack(means), np.hstack(stds)


def cascade_predict_windows(
    plan: CascadePlan,
    states: list[EnsembleState],
    x: np.ndarray,
    window_length: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Stitched prediction over non-overlapping windows (stride = length);
    a shorter tail window is evaluated as-is."""
    x = np.asarray(x, dtype=np.float64)
    means = []
    stds = []
    for start in range(0, x.shape[0], window_length):
        mean, std = cascade_predict(plan, states, x[start:start + window_length])
        means.append(mean)
        stds.append(std)
    return np.vstack(means), np.vstack(stds)
