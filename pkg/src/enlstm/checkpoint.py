"""Self-describing ensemble checkpoints.

A checkpoint is an ``.npz`` archive with a JSON header (format tag,
version, network description, iteration, multiplier, RNG stream states,
free-form metadata) plus the member matrix, the frozen prior anchors,
the diagonal prior variance and per-member batchnorm running statistics
(``aux_mean_<layer>`` / ``aux_var_<layer>`` per batchnorm layer index).
"""

from __future__ import annotations

import json

import numpy as np

from .enrml import EnsembleState
from .network import BatchNorm, NetworkAux, NetworkSpec, spec_from_dict, spec_to_dict

FORMAT_TAG = "enlstm-ensemble-checkpoint"
FORMAT_VERSION = 1


def save_checkpoint(
    path,
    spec: NetworkSpec,
    state: EnsembleState,
    rng_states: dict | None = None,
    meta: dict | None = None,
) -> None:
    header = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "spec": spec_to_dict(spec),
        "iteration": state.iteration,
        "lambda": state.lam,
        "rng_states": rng_states or {},
        "meta": meta or {},
    }
    aux_arrays = {}
    for idx in state.aux.mean:
        aux_arrays[f"aux_mean_{idx}"] = state.aux.mean[idx]
        aux_arrays[f"aux_var_{idx}"] = state.aux.var[idx]
    np.savez_compressed(
        path,
        header=np.array(json.dumps(header)),
        members=state.members,
        priors=state.priors,
        prior_var=state.prior_var,
        **aux_arrays,
    )


def load_checkpoint(path) -> tuple[NetworkSpec, EnsembleState, dict]:
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive["header"]))
        if header.get("format") != FORMAT_TAG:
            raise ValueError(f"{path}: not an ensemble checkpoint")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        spec = spec_from_dict(header["spec"])
        members = archive["members"]
        priors = archive["priors"]
        prior_var = archive["prior_var"]
        mean = {}
        var = {}
        for idx, layer in enumerate(spec.layers):
            if isinstance(layer, BatchNorm):
                mean[idx] = archive[f"aux_mean_{idx}"]
                var[idx] = archive[f"aux_var_{idx}"]
    state = EnsembleState(
        members=members,
        priors=priors,
        iteration=int(header["iteration"]),
        lam=float(header["lambda"]),
        prior_var=prior_var,
        aux=NetworkAux(mean, var),
    )
    return spec, state, header


def spec_difference(expected: NetworkSpec, found: NetworkSpec) -> str | None:
    """Human-readable description of the first differing field, or None."""
    if expected.input_dim != found.input_dim:
        return f"input_dim: expected {expected.input_dim}, found {found.input_dim}"
    if len(expected.layers) != len(found.layers):
        return (
            f"layer count: expected {len(expected.layers)}, found {len(found.layers)}"
        )
    for idx, (a, b) in enumerate(zip(expected.layers, found.layers)):
        if type(a) is not type(b):
            return (
                f"layers[{idx}].kind: expected {type(a).__name__.lower()}, "
                f"found {type(b).__name__.lower()}"
            )
        if a != b:
            fields = vars(a)
            for name, value in fields.items():
                if getattr(b, name) != value:
                    return (
                        f"layers[{idx}].{name}: expected {value}, "
                        f"found {getattr(b, name)}"
                    )
    return None
