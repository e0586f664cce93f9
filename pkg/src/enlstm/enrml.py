"""Ensemble randomized maximum likelihood training of the network stack.

The update moves every member with the same ensemble covariances:

    m_j <- m_j - (1 / (1 + lam)) * [C_mm - C_md K^-1 C_md^T] C_prior^-1 (m_j - m_pr_j)
              - C_md K^-1 (g(m_j) - d_obs_j),      K = (1 + lam) C_d + C_dd

where C_mm, C_md, C_dd are sample (cross-)covariances of the current
members and their predictions, C_prior is the diagonal prior covariance
and C_d the diagonal observation-error covariance. Two mathematically
identical routes are provided: a dense one that forms the covariance
matrices explicitly (small data vectors), and a factored one that keeps
all products in the ensemble subspace and never materializes a matrix
larger than (n_data, n_ens). Both are exercised against each other in
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg, perturb
from .network import NetworkAux, NetworkSpec, forward_ensemble, param_count
from .perturb import PerturbationConfig
from .seeding import derive_seed, stream

LAMBDA_FLOOR = 1e-8
MAX_STEP_RETRIES = 3
DIRECT_ROUTE_MAX_NDATA = 512


@dataclass
class TrainConfig:
    n_realizations: int = 100
    batch_size: int = 64
    eps_real_std: float = 0.02
    epochs: int = 5
    lambda_init: float = 1.0
    lambda_factor: float = 10.0
    prior_std: float = 0.1
    seed: int = 0
    redraw_observations: bool = False
    threads: int = 0
    step_method: str = "auto"

    def __post_init__(self):
        if self.n_realizations < 2:
            raise ValueError("n_realizations must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.eps_real_std < 0:
            raise ValueError("eps_real_std must be >= 0")
        if self.lambda_init <= 0 or self.lambda_factor < 1:
            raise ValueError("lambda_init must be > 0 and lambda_factor >= 1")


@dataclass
class EnsembleState:
    members: np.ndarray  # (n_ens, n_params)
    priors: np.ndarray  # frozen copies of the initial members
    iteration: int
    lam: float
    prior_var: np.ndarray  # (n_params,) diagonal prior covariance
    aux: NetworkAux

    def __post_init__(self):
        if self.members.shape != self.priors.shape:
            raise ValueError("members and priors must have equal shapes")
        if self.prior_var.shape != (self.members.shape[1],):
            raise ValueError("prior_var length must match the parameter count")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")

    @property
    def n_ens(self) -> int:
        return self.members.shape[0]


@dataclass
class EpochMetrics:
    epoch: int
    data_mismatch: float
    spread: float
    lam: float
    accepted: int
    rejected: int


@dataclass
class TrainResult:
    state: EnsembleState
    metrics: list[EpochMetrics]
    rng_states: dict = field(default_factory=dict)


def init_ensemble(spec: NetworkSpec, cfg: TrainConfig) -> EnsembleState:
    """Draw members i.i.d. N(0, prior_std^2) per coordinate and freeze them
    as the prior anchors."""
    n_params = param_count(spec)
    rng = stream(cfg.seed, "init")
    members = cfg.prior_std * rng.standard_normal((cfg.n_realizations, n_params))
    prior_var = np.full(n_params, cfg.prior_std**2)
    return EnsembleState(
        members=members,
        priors=members.copy(),
        iteration=0,
        lam=cfg.lambda_init,
        prior_var=prior_var,
        aux=NetworkAux.initial(spec, cfg.n_realizations),
    )


def _solve_k_factored(rhs, centered_pred, c_d_diag, lam):
    """Apply K^-1 to columns of rhs without forming K (Woodbury on the
    ensemble subspace; exact for diagonal positive C_d)."""
    n_ens = centered_pred.shape[0]
    a = (1.0 + lam) * c_d_diag  # diagonal of the full-rank part
    u = centered_pred.T / np.sqrt(n_ens - 1)  # (n_data, n_ens)
    ai_rhs = rhs / a[:, None]
    ai_u = u / a[:, None]
    inner = np.eye(n_ens) + u.T @ ai_u
    coef, _ = linalg.spd_solve(inner, u.T @ ai_rhs)
    return ai_rhs - ai_u @ coef


def _step_direct(members, priors, prior_var, predictions, observations, c_d_diag, lam):
    c_md = linalg.cross_covariance(members, predictions)
    c_dd = linalg.cross_covariance(predictions, predictions)
    k = (1.0 + lam) * np.diag(c_d_diag) + c_dd
    with np.errstate(divide="ignore", invalid="ignore"):
        w = (members - priors) / prior_var
    residual = predictions - observations
    n_data = predictions.shape[1]
    solved, _ = linalg.spd_solve(k, np.hstack([c_md.T, residual.T]))
    kinv_cmd_t = solved[:, : c_md.shape[0]]
    kinv_resid_t = solved[:, c_md.shape[0]:]
    bracket = linalg.cross_covariance(members, members) - c_md @ kinv_cmd_t
    model_term = (w @ bracket.T) / (1.0 + lam)
    data_term = kinv_resid_t.T @ c_md.T
    return members - model_term - data_term


def _step_factored(members, priors, prior_var, predictions, observations, c_d_diag, lam):
    n_ens = members.shape[0]
    s = 1.0 / (n_ens - 1)
    centered_m = members - members.mean(axis=0)
    centered_g = predictions - predictions.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = (members - priors) / prior_var
    residual = predictions - observations

    t_mm = w @ centered_m.T  # (n_ens, n_ens)
    cmm_w = s * (t_mm @ centered_m)  # rows: (C_mm w_j)^T
    w_cmd = s * (t_mm @ centered_g)  # rows: w_j^T C_md
    stacked = np.hstack([w_cmd.T, residual.T])  # (n_data, 2 n_ens)
    kinv = _solve_k_factored(stacked, centered_g, c_d_diag, lam)
    kinv_wcmd = kinv[:, :n_ens].T
    kinv_resid = kinv[:, n_ens:].T
    model_term = (cmm_w - s * ((kinv_wcmd @ centered_g.T) @ centered_m)) / (1.0 + lam)
    data_term = s * ((kinv_resid @ centered_g.T) @ centered_m)
    return members - model_term - data_term


def enrml_step(
    state: EnsembleState,
    predictions: np.ndarray,
    observations: np.ndarray,
    c_d_diag: np.ndarray,
    method: str = "auto",
) -> np.ndarray:
    """One simultaneous update of all members; returns the new member matrix.

    ``method`` selects the dense route ("direct"), the ensemble-subspace
    route ("factored"), or picks by problem size ("auto": dense for small
    data vectors or degenerate observation variance).
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    observations = np.asarray(observations, dtype=np.float64)
    c_d_diag = np.asarray(c_d_diag, dtype=np.float64)
    n_ens = state.n_ens
    if n_ens < 2:
        raise ValueError("covariance undefined")
    if predictions.shape != observations.shape or predictions.shape[0] != n_ens:
        raise ValueError("predictions and observations must both be (n_ens, n_data)")
    if c_d_diag.shape != (predictions.shape[1],):
        raise ValueError("c_d_diag length must match the data vector")
    if method == "auto":
        small = predictions.shape[1] <= DIRECT_ROUTE_MAX_NDATA
        method = "direct" if small or np.min(c_d_diag) <= 0 else "factored"
    if method == "direct":
        new = _step_direct(
            state.members, state.priors, state.prior_var,
            predictions, observations, c_d_diag, state.lam,
        )
    elif method == "factored":
        new = _step_factored(
            state.members, state.priors, state.prior_var,
            predictions, observations, c_d_diag, state.lam,
        )
    else:
        raise ValueError(f"unknown step method '{method}'")
    if not np.all(np.isfinite(new)):
        raise RuntimeError("update diverged")
    return new


def lambda_update(
    state: EnsembleState,
    mismatch_before: float,
    mismatch_after: float,
    factor: float = 10.0,
) -> tuple[float, bool]:
    """Levenberg-Marquardt style multiplier schedule.

    Improvement divides the multiplier (floored at 1e-8) and accepts the
    step; otherwise the multiplier grows and the step is rejected.
    """
    if mismatch_before < 0 or mismatch_after < 0:
        raise ValueError("mismatches must be >= 0")
    if mismatch_after < mismatch_before:
        return max(state.lam / factor, LAMBDA_FLOOR), True
    return state.lam * factor, False


def _data_mismatch(predictions, observations):
    return float(np.mean((predictions - observations) ** 2))


def _prediction_spread(predictions):
    if predictions.shape[0] < 2:
        return 0.0
    return float(np.mean(predictions.std(axis=0, ddof=1)))


def _perturbed_targets(targets, target_names, pcfg, cfg, epoch):
    """Per-realization perturbed copies of the full windowed target tensor.

    Drawn once per run (Algorithm-style one-time draws) unless
    ``redraw_observations`` asks for fresh draws every epoch.
    """
    if cfg.redraw_observations:
        obs_seed = derive_seed(cfg.seed, "observation", epoch)
    else:
        obs_seed = derive_seed(cfg.seed, "observation")
    out = np.empty((cfg.n_realizations,) + targets.shape)
    for j in range(cfg.n_realizations):
        out[j] = perturb.perturb_observations(targets, target_names, pcfg, j, obs_seed)
    return out


def train(
    spec: NetworkSpec,
    dataset,
    cfg: TrainConfig,
    pcfg: PerturbationConfig,
) -> TrainResult:
    """Train the ensemble on a windowed dataset.

    Per batch: forward every member (train mode), update all members
    simultaneously from the batch covariances, adjust the multiplier from
    the ensemble-mean data mismatch (restoring members on rejection, with
    up to 3 retries before forced acceptance), then apply the smoothing
    perturbation to the accepted members.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.inputs.shape[2] != spec.input_dim:
        raise ValueError("dataset input width does not match spec input_dim")
    if dataset.targets.shape[2] != spec.output_dim:
        raise ValueError("dataset target width does not match spec output_dim")

    state = init_ensemble(spec, cfg)
    shuffle_rng = stream(cfg.seed, "shuffle")
    dropout_rng = stream(cfg.seed, "dropout")
    smooth_rng = stream(cfg.seed, "smoothing")
    n_windows = len(dataset)
    c_d_scale = cfg.eps_real_std**2

    observations = _perturbed_targets(
        dataset.targets, dataset.target_names, pcfg, cfg, epoch=0
    )
    metrics: list[EpochMetrics] = []
    for epoch in range(cfg.epochs):
        if cfg.redraw_observations and epoch > 0:
            observations = _perturbed_targets(
                dataset.targets, dataset.target_names, pcfg, cfg, epoch=epoch
            )
        order = shuffle_rng.permutation(n_windows)
        epoch_mismatch = []
        epoch_spread = []
        accepted_count = 0
        rejected_count = 0
        for lo in range(0, n_windows, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb = dataset.inputs[idx]
            db = observations[:, idx].reshape(cfg.n_realizations, -1)
            batch_seed = int(dropout_rng.integers(2**63 - 1))

            g_before, _ = forward_ensemble(
                spec, state.members, xb, "train", batch_seed, state.aux, cfg.threads
            )
            g_before = g_before.reshape(cfg.n_realizations, -1)
            mismatch_before = _data_mismatch(g_before, db)
            c_d = np.full(g_before.shape[1], c_d_scale)

            for attempt in range(1 + MAX_STEP_RETRIES):
                candidate = enrml_step(state, g_before, db, c_d, cfg.step_method)
                g_after, aux_after = forward_ensemble(
                    spec, candidate, xb, "train", batch_seed, state.aux, cfg.threads
                )
                g_after = g_after.reshape(cfg.n_realizations, -1)
                mismatch_after = _data_mismatch(g_after, db)
                new_lam, ok = lambda_update(
                    state, mismatch_before, mismatch_after, cfg.lambda_factor
                )
                state.lam = new_lam
                if ok or attempt == MAX_STEP_RETRIES:
                    accepted_count += 1 if ok else 0
                    rejected_count += 0 if ok else 1
                    state.members = candidate
                    state.aux = aux_after
                    break
                rejected_count += 1

            state.members = perturb.smooth_perturb(
                state.members, pcfg, smooth_rng, state.iteration
            )
            state.iteration += 1
            epoch_mismatch.append(mismatch_after)
            epoch_spread.append(_prediction_spread(g_after))
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                data_mismatch=float(np.mean(epoch_mismatch)),
                spread=float(np.mean(epoch_spread)),
                lam=state.lam,
                accepted=accepted_count,
                rejected=rejected_count,
            )
        )
    rng_states = {
        "shuffle": shuffle_rng.bit_generator.state,
        "dropout": dropout_rng.bit_generator.state,
        "smoothing": smooth_rng.bit_generator.state,
    }
    return TrainResult(state=state, metrics=metrics, rng_states=rng_states)


def predict(
    state: EnsembleState,
    spec: NetworkSpec,
    x: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble-mean prediction and per-step sample std over members.

    ``x`` is (n_steps, input_dim); both outputs are (n_steps, output_dim).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(
            f"input width {x.shape[-1] if x.ndim else '?'} does not match "
            f"spec input_dim {spec.input_dim}"
        )
    outs, _ = forward_ensemble(spec, state.members, x[None], "infer", 0, state.aux)
    seqs = outs[:, 0]
    return seqs.mean(axis=0), seqs.std(axis=0, ddof=1)
