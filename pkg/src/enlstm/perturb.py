"""The two perturbation methods that keep ensemble training healthy.

Parameter smoothing contracts every member toward the ensemble mean and
adds variance-proportional noise, so the ensemble neither collapses
(over-convergence) nor diverges. Observation perturbation applies a
relative real-world disturbance on the normalized scale; the additive
compensation term ``(mean / std) * eps`` makes the disturbance the same
size before and after z-score normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class PerturbationConfig:
    """Knobs for both perturbation methods.

    ``channel_stats`` maps an output channel name to its real-scale
    ``(mean, std)``, computed from training wells only.
    """

    alpha: float = 0.99
    h: float = 0.1
    eps_real_std: float = 0.02
    channel_stats: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    h_decay: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.h < 0:
            raise ValueError("h must be >= 0")
        if self.eps_real_std < 0:
            raise ValueError("eps_real_std must be >= 0")
        if not 0.0 < self.h_decay <= 1.0:
            raise ValueError("h_decay must be in (0, 1]")
        for name, (_, std) in self.channel_stats.items():
            if std <= 0:
                raise ValueError(f"degenerate channel '{name}'")


def smooth_perturb(
    ensemble: np.ndarray,
    cfg: PerturbationConfig,
    rng,
    iteration: int = 0,
) -> np.ndarray:
    """Kernel-smoothing perturbation of the member matrix.

    Per coordinate: ``m' = alpha * m + (1 - alpha) * mean + tau`` with
    ``tau ~ N(0, h * var)``, mean and sample variance taken over the
    ensemble before perturbation. ``h`` may decay multiplicatively with
    the iteration index (``h_decay`` defaults to 1, i.e. off).
    """
    members = np.asarray(ensemble, dtype=np.float64)
    if members.ndim != 2 or members.shape[0] < 2:
        raise ValueError("variance undefined for fewer than 2 realizations")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    if cfg.alpha == 1.0:
        out = members.copy()
    else:
        mean = members.mean(axis=0)
        out = cfg.alpha * members + (1.0 - cfg.alpha) * mean
    h_eff = cfg.h * cfg.h_decay**iteration
    if h_eff > 0:
        var = members.var(axis=0, ddof=1)
        out += rng.standard_normal(members.shape) * np.sqrt(h_eff * var)
    return out


def compensation_term(eps_real: float, mean: float, std: float) -> float:
    """Additive correction ``(mean / std) * eps_real`` that keeps a relative
    disturbance the same size on the normalized scale."""
    if std == 0:
        raise ValueError("degenerate channel")
    return (mean / std) * eps_real


def apply_disturbance(d_obs, eps, mean, std):
    """Disturb normalized observations with a fixed relative error:
    ``(1 + eps) * d_obs + (mean / std) * eps``. Pure and vectorized."""
    d_obs = np.asarray(d_obs, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise ValueError("degenerate channel")
    return (1.0 + eps) * d_obs + (np.asarray(mean) / std) * eps


def perturb_observations(
    d_obs: np.ndarray,
    channels: Sequence[str],
    cfg: PerturbationConfig,
    realization: int,
    rng_seed: int,
) -> np.ndarray:
    """Perturbed observations for one realization.

    ``d_obs`` is a normalized array whose LAST axis is tagged by
    ``channels``. Every element gets an independent
    ``eps ~ N(0, eps_real_std^2)`` drawn from the stream
    ``(rng_seed, realization)``, so the draw is reproducible and
    realization streams never overlap.
    """
    d_obs = np.asarray(d_obs, dtype=np.float64)
    names = list(channels)
    if d_obs.shape[-1] != len(names):
        raise ValueError("channel tags must match the last axis of d_obs")
    missing = [n for n in names if n not in cfg.channel_stats]
    if missing:
        raise ValueError(f"missing channel stats for {missing}")
    mean = np.array([cfg.channel_stats[n][0] for n in names])
    std = np.array([cfg.channel_stats[n][1] for n in names])
    rng = np.random.default_rng([int(rng_seed), int(realization)])
    eps = rng.normal(0.0, cfg.eps_real_std, size=d_obs.shape)
    return apply_disturbance(d_obs, eps, mean, std)
