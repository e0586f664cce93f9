"""Well-record ingestion, normalization, windowing, splits and metrics."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DEPTH_STEP_TOLERANCE = 1e-6  # relative non-uniformity allowed in depth spacing

SYNTH_LAGS = (0, 5, 20)


@dataclass
class WellRecord:
    """Depth-indexed multichannel series for one well."""

    well_id: str
    depth: np.ndarray
    channels: dict[str, np.ndarray]

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim != 1 or len(self.depth) < 1:
            raise ValueError("depth must be a non-empty 1-d series")
        self.channels = {k: np.asarray(v, dtype=np.float64) for k, v in self.channels.items()}
        n = len(self.depth)
        for name, series in self.channels.items():
            if series.shape != (n,):
                raise ValueError(f"channel '{name}' length does not match depth")
        if n >= 2:
            steps = np.diff(self.depth)
            if np.any(steps <= 0):
                raise ValueError(f"non-monotone depth in well '{self.well_id}'")
            ref = np.median(steps)
            if np.any(np.abs(steps - ref) > DEPTH_STEP_TOLERANCE * max(ref, 1e-300)):
                raise ValueError(f"non-uniform depth spacing in well '{self.well_id}'")

    def __len__(self) -> int:
        return len(self.depth)

    def matrix(self, names: list[str]) -> np.ndarray:
        """(n_samples, len(names)) column stack of the named channels."""
        missing = [n for n in names if n not in self.channels]
        if missing:
            raise ValueError(f"well '{self.well_id}' has no channel {missing}")
        return np.column_stack([self.channels[n] for n in names])

    def with_channels(self, extra: dict[str, np.ndarray]) -> "WellRecord":
        merged = dict(self.channels)
        merged.update({k: np.asarray(v, dtype=np.float64) for k, v in extra.items()})
        return WellRecord(self.well_id, self.depth, merged)


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and population standard deviation (training wells)."""

    mean: dict[str, float]
    std: dict[str, float]

    def pair(self, name: str) -> tuple[float, float]:
        return self.mean[name], self.std[name]


@dataclass
class WindowedBatch:
    """Fixed-length windows cut from one or more wells."""

    inputs: np.ndarray  # (n_windows, length, n_inputs)
    targets: np.ndarray  # (n_windows, length, n_targets)
    wells: list[str]
    starts: np.ndarray
    length: int
    input_names: list[str]
    target_names: list[str]
    n_skipped: int = 0

    def __len__(self) -> int:
        return self.inputs.shape[0]


# ---------------------------------------------------------------------------
# CSV interface: header row `well_id,depth,<channel>...`, one row per depth
# sample, UTF-8, plain decimal numbers.
# ---------------------------------------------------------------------------


def load_csv(path) -> list[WellRecord]:
    """Parse a well CSV into one record per well (grouped by well_id).

    Rows with any missing (empty) cell are dropped and counted; parse
    problems raise errors that carry the 1-based file line number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for required in ("well_id", "depth"):
            if required not in header:
                raise ValueError(f"{path}: missing required column '{required}'")
        channel_names = [h for h in header if h not in ("well_id", "depth")]
        id_col = header.index("well_id")
        depth_col = header.index("depth")
        chan_cols = [header.index(c) for c in channel_names]

        order: list[str] = []
        depths: dict[str, list[float]] = {}
        values: dict[str, list[list[float]]] = {}
        last_line: dict[str, int] = {}
        dropped = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: wrong field count at line {line_no}")
            if any(row[c].strip() == "" for c in [id_col, depth_col] + chan_cols):
                dropped += 1
                continue
            well = row[id_col].strip()
            try:
                depth = float(row[depth_col])
                vals = [float(row[c]) for c in chan_cols]
            except ValueError:
                bad = next(
                    header[c]
                    for c in [depth_col] + chan_cols
                    if not _is_number(row[c])
                )
                raise ValueError(
                    f"{path}: non-numeric value for column '{bad}' at line {line_no}"
                ) from None
            if well not in depths:
                order.append(well)
                depths[well] = []
                values[well] = []
            elif depth <= depths[well][-1]:
                raise ValueError(f"{path}: non-monotone depth at line {line_no}")
            depths[well].append(depth)
            values[well].append(vals)
            last_line[well] = line_no

    if dropped:
        log.warning("%s: dropped %d rows with missing values", path, dropped)
    records = []
    for well in order:
        mat = np.array(values[well])
        channels = {name: mat[:, i] for i, name in enumerate(channel_names)}
        records.append(WellRecord(well, np.array(depths[well]), channels))
    return records


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def write_csv(records: list[WellRecord], path) -> None:
    """Write records in the `well_id,depth,<channel>...` layout with
    shortest round-trip float formatting (load_csv inverts it exactly)."""
    if not records:
        raise ValueError("nothing to write")
    names = list(records[0].channels)
    for rec in records:
        if list(rec.channels) != names:
            raise ValueError("all records must share the same channel set")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["well_id", "depth"] + names)
        for rec in records:
            cols = [rec.channels[n] for n in names]
            for i in range(len(rec)):
                writer.writerow(
                    [rec.well_id, repr(float(rec.depth[i]))]
                    + [repr(float(c[i])) for c in cols]
                )


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def zscore_fit(records: list[WellRecord], channels: list[str]) -> ChannelStats:
    """Mean and population std per channel over the given (training) wells."""
    mean = {}
    std = {}
    for name in channels:
        series = np.concatenate([rec.channels[name] for rec in records])
        if len(series) < 2:
            raise ValueError(f"need at least 2 samples to fit channel '{name}'")
        mu = float(series.mean())
        sigma = float(series.std())  # population (divide by N)
        if sigma == 0:
            raise ValueError(f"degenerate channel '{name}'")
        mean[name] = mu
        std[name] = sigma
    return ChannelStats(mean, std)


def zscore_apply(record: WellRecord, stats: ChannelStats) -> WellRecord:
    """Return a copy of the record with every channel standardized."""
    out = {}
    for name, series in record.channels.items():
        if name not in stats.mean:
            raise ValueError(f"no statistics for channel '{name}'")
        out[name] = (series - stats.mean[name]) / stats.std[name]
    return WellRecord(record.well_id, record.depth, out)


def zscore_invert(values: np.ndarray, names: list[str], stats: ChannelStats) -> np.ndarray:
    """De-normalize columns of ``values`` tagged by ``names``."""
    values = np.asarray(values, dtype=np.float64)
    mu = np.array([stats.mean[n] for n in names])
    sigma = np.array([stats.std[n] for n in names])
    return values * sigma + mu


# ---------------------------------------------------------------------------
# Windowing and splits
# ---------------------------------------------------------------------------


def window(
    record: WellRecord,
    input_names: list[str],
    target_names: list[str],
    length: int,
    stride: int,
) -> WindowedBatch:
    return build_windows([record], input_names, target_names, length, stride)


def build_windows(
    records: list[WellRecord],
    input_names: list[str],
    target_names: list[str],
    length: int,
    stride: int,
) -> WindowedBatch:
    """Cut windows starting at 0, stride, 2*stride, ... while they fit.

    Wells shorter than ``length`` contribute no windows; they are counted
    in ``n_skipped`` rather than raising.
    """
    if length < 1 or stride < 1:
        raise ValueError("length and stride must be >= 1")
    xs, ys, wells, starts = [], [], [], []
    skipped = 0
    for rec in records:
        if len(rec) < length:
            skipped += 1
            continue
        x = rec.matrix(input_names)
        y = rec.matrix(target_names)
        for start in range(0, len(rec) - length + 1, stride):
            xs.append(x[start:start + length])
            ys.append(y[start:start + length])
            wells.append(rec.well_id)
            starts.append(start)
    if skipped:
        log.warning("%d well(s) shorter than window length %d", skipped, length)
    n_in, n_out = len(input_names), len(target_names)
    inputs = np.array(xs) if xs else np.empty((0, length, n_in))
    targets = np.array(ys) if ys else np.empty((0, length, n_out))
    return WindowedBatch(
        inputs, targets, wells, np.array(starts, dtype=int), length,
        list(input_names), list(target_names), skipped,
    )


def loo_splits(records: list[WellRecord]) -> list[tuple[list[WellRecord], WellRecord]]:
    """One fold per well, ordered by well_id: (training wells, test well)."""
    if len(records) < 2:
        raise ValueError("leave-one-out needs at least 2 wells")
    by_id = sorted(records, key=lambda r: r.well_id)
    folds = []
    for i, test in enumerate(by_id):
        folds.append(([r for j, r in enumerate(by_id) if j != i], test))
    return folds


# ---------------------------------------------------------------------------
# Synthetic benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthCoefficients:
    """Target map of the synthetic generator: for output k,
    ``y_k(t) = scale_k * (tanh(sum_lag w_lag[k] . x(t - lag)) + noise) + offset_k``
    with lags (0, 5, 20) clamped at the series start."""

    w_lag: dict[int, np.ndarray]  # lag -> (n_out, n_in)
    scale: np.ndarray  # (n_out,)
    offset: np.ndarray  # (n_out,)


def synth_coefficients(seed: int, n_in: int, n_out: int) -> SynthCoefficients:
    rng = np.random.default_rng([int(seed), 0])
    gain = 1.5
    w_lag = {
        lag: rng.normal(0.0, gain / np.sqrt(3 * n_in), size=(n_out, n_in))
        for lag in SYNTH_LAGS
    }
    scale = rng.uniform(0.8, 2.5, size=n_out)
    offset = rng.uniform(-1.5, 1.5, size=n_out)
    return SynthCoefficients(w_lag, scale, offset)


def synth_targets(
    inputs: np.ndarray,
    coeffs: SynthCoefficients,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Apply the documented target map to an input matrix (T, n_in)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    t = np.arange(inputs.shape[0])
    z = np.zeros((inputs.shape[0], coeffs.scale.shape[0]))
    for lag, w in coeffs.w_lag.items():
        z += inputs[np.maximum(t - lag, 0)] @ w.T
    y = np.tanh(z)
    if noise_std > 0:
        if rng is None:
            raise ValueError("noise requires a generator")
        y = y + rng.normal(0.0, noise_std, size=y.shape)
    return y * coeffs.scale + coeffs.offset


def synth_generate(
    seed: int,
    n_wells: int,
    length: int,
    n_in: int,
    n_out: int,
    noise_std: float = 0.05,
) -> list[WellRecord]:
    """Seeded synthetic wells whose targets genuinely need sequence context.

    Inputs are independent per-well mixtures of 4 random sinusoids
    (periods 30..400 samples, amplitudes 0.2..0.5) plus AR(1) noise
    (coefficient 0.9, innovation std 0.2). Targets follow the
    ``SynthCoefficients`` map of lagged inputs; depth spacing is 0.1 m.
    Channel names are ``in01..`` and ``out01..``.
    """
    if min(n_wells, length, n_in, n_out) < 1:
        raise ValueError("all counts must be >= 1")
    coeffs = synth_coefficients(seed, n_in, n_out)
    input_names = [f"in{i + 1:02d}" for i in range(n_in)]
    target_names = [f"out{k + 1:02d}" for k in range(n_out)]
    records = []
    for w in range(n_wells):
        rng = np.random.default_rng([int(seed), 1 + w])
        t = np.arange(length)
        x = np.empty((length, n_in))
        for i in range(n_in):
            series = np.zeros(length)
            for _ in range(4):
                period = rng.uniform(30, 400)
                amp = rng.uniform(0.2, 0.5)
                phase = rng.uniform(0, 2 * np.pi)
                series += amp * np.sin(2 * np.pi * t / period + phase)
            ar = np.empty(length)
            innov = rng.normal(0.0, 0.2, size=length)
            ar[0] = innov[0]
            for s in range(1, length):
                ar[s] = 0.9 * ar[s - 1] + innov[s]
            x[:, i] = series + ar
        y = synth_targets(x, coeffs, noise_std=noise_std, rng=rng) if noise_std > 0 \
            else synth_targets(x, coeffs)
        channels = {name: x[:, i] for i, name in enumerate(input_names)}
        channels.update({name: y[:, k] for k, name in enumerate(target_names)})
        records.append(WellRecord(f"well{w + 1:02d}", 0.1 * np.arange(length), channels))
    return records


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def mse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth shapes differ")
    if pred.size == 0:
        raise ValueError("empty series")
    return float(np.mean((pred - truth) ** 2))
