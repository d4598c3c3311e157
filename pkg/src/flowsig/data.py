"""Synthetic 3-axis accelerometer windows, CSV ingest/export, normalization
and subject-aware splitting.

Windows follow the fixed 30 Hz x 10 s convention: 3 channels x 300 steps.
Changing WINDOW_LEN/CHANNELS is a recompile-level decision; checkpoints
depend on these extents.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

CHANNELS = 3
WINDOW_LEN = 300
SAMPLE_RATE_HZ = 30.0

CSV_HEADER = ["window_id", "class_id", "subject_id", "step", "ax", "ay", "az"]


class DataError(ValueError):
    pass


@dataclass
class SignalWindow:
    samples: np.ndarray  # [CHANNELS, WINDOW_LEN]
    class_id: int
    subject_id: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.shape != (CHANNELS, WINDOW_LEN):
            raise DataError(
                f"window must be [{CHANNELS}x{WINDOW_LEN}], got {self.samples.shape}"
            )
        if not np.isfinite(self.samples).all():
            raise DataError("window contains non-finite values")
        if self.class_id < 0 or self.subject_id < 0:
            raise DataError("class_id and subject_id must be >= 0")


@dataclass
class NormStats:
    mean: np.ndarray  # [CHANNELS]
    std: np.ndarray   # [CHANNELS]

    @staticmethod
    def identity() -> "NormStats":
        return NormStats(np.zeros(CHANNELS), np.ones(CHANNELS))


@dataclass
class SignalBatch:
    windows: list[SignalWindow]
    normalization: Optional[NormStats] = None

    def __len__(self):
        return len(self.windows)

    def stacked(self) -> np.ndarray:
        """All windows as one [N, CHANNELS, WINDOW_LEN] array."""
        if not self.windows:
            return np.zeros((0, CHANNELS, WINDOW_LEN))
        return np.stack([w.samples for w in self.windows])

    def class_ids(self) -> np.ndarray:
        return np.array([w.class_id for w in self.windows], dtype=np.int64)

    def subject_ids(self) -> np.ndarray:
        return np.array([w.subject_id for w in self.windows], dtype=np.int64)

    def num_classes(self) -> int:
        return int(self.class_ids().max()) + 1 if self.windows else 0


@dataclass
class SynthSpec:
    num_classes: int = 3
    subjects_per_class: int = 4
    windows_per_subject: int = 24
    base_freqs: tuple = (1.0, 2.0, 3.0)
    noise_std: float = 0.8
    seed: int = 0
    amp_jitter: float = 0.4          # subject amplitude spread around 1
    harmonic_ratio: float = 0.4      # 2nd harmonic amplitude relative to fundamental

    def __post_init__(self):
        if self.num_classes < 2:
            raise DataError("need at least 2 classes")
        if len(self.base_freqs) != self.num_classes:
            raise DataError("base_freqs must have one entry per class")
        if len(set(self.base_freqs)) != len(self.base_freqs):
            raise DataError("base_freqs must be pairwise distinct")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")
        if self.subjects_per_class < 1 or self.windows_per_subject < 1:
            raise DataError("need at least one subject and one window")


def standard_spec(noise_std: float = 0.8, seed: int = 0) -> SynthSpec:
    """The default 3-class task used by CLI defaults and the test suite."""
    return SynthSpec(noise_std=noise_std, seed=seed)


def synthesize(spec: SynthSpec) -> SignalBatch:
    """Class k windows: fundamental base_freqs[k] plus its 2nd harmonic,
    with per-(class, subject) amplitude and phase offsets, plus white noise.
    Subjects are shared across classes (subject s performs every class)."""
    rng = np.random.default_rng(spec.seed)
    t = np.arange(WINDOW_LEN) / SAMPLE_RATE_HZ
    windows = []
    for k in range(spec.num_classes):
        f = spec.base_freqs[k]
        for s in range(spec.subjects_per_class):
            a1 = 1.0 + spec.amp_jitter * rng.uniform(-1, 1, size=CHANNELS)
            a2 = spec.harmonic_ratio * (1.0 + spec.amp_jitter * rng.uniform(-1, 1, size=CHANNELS))
            p1 = rng.uniform(0, 2 * np.pi, size=CHANNELS)
            p2 = rng.uniform(0, 2 * np.pi, size=CHANNELS)
            base = (
                a1[:, None] * np.sin(2 * np.pi * f * t[None, :] + p1[:, None])
                + a2[:, None] * np.sin(2 * np.pi * 2 * f * t[None, :] + p2[:, None])
            )
            for _ in range(spec.windows_per_subject):
                noise = spec.noise_std * rng.standard_normal((CHANNELS, WINDOW_LEN))
                windows.append(SignalWindow(base + noise, class_id=k, subject_id=s))
    return SignalBatch(windows)


def fft_magnitudes(x: np.ndarray) -> np.ndarray:
    """|rfft| over the time axis; accepts [C,L] or [N,C,L]."""
    return np.abs(np.fft.rfft(x, axis=-1))


def dominant_bin(samples: np.ndarray) -> int:
    """Index of the strongest non-DC rfft bin of the channel-mean spectrum."""
    mag = fft_magnitudes(samples).mean(axis=0)
    return int(np.argmax(mag[1:])) + 1


def freq_to_bin(freq_hz: float) -> int:
    return int(round(freq_hz * WINDOW_LEN / SAMPLE_RATE_HZ))


# --------------------------------------------------------------------------
# CSV round trip
# --------------------------------------------------------------------------

def save_csv(batch: SignalBatch, path, origin: Optional[str] = None,
             header_lines: Optional[list[str]] = None) -> None:
    """Write the documented schema; optional origin column and '#' header."""
    cols = CSV_HEADER + (["origin"] if origin is not None else [])
    with open(path, "w", newline="\n") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for wid, w in enumerate(batch.windows):
            for step in range(WINDOW_LEN):
                row = [wid, w.class_id, w.subject_id, step,
                       repr(w.samples[0, step]), repr(w.samples[1, step]),
                       repr(w.samples[2, step])]
                if origin is not None:
                    row.append(origin)
                writer.writerow(row)


def load_csv(path) -> SignalBatch:
    """Parse the documented schema; extra trailing columns (origin) are
    ignored, '#' lines are skipped. Errors carry the 1-based line number."""
    windows = []
    current = None  # (window_id, class_id, subject_id, samples, next_step)

    def finish(lineno):
        nonlocal current
        if current is None:
            return
        wid, cid, sid, samples, next_step = current
        if next_step != WINDOW_LEN:
            raise DataError(
                f"line {lineno}: window {wid} has {next_step} rows, expected {WINDOW_LEN}"
            )
        windows.append(SignalWindow(samples, class_id=cid, subject_id=sid))
        current = None

    with open(path, newline="") as fh:
        lineno = 0
        header_seen = False
        for raw in fh:
            lineno += 1
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if not header_seen:
                if [p.strip() for p in parts[: len(CSV_HEADER)]] != CSV_HEADER:
                    raise DataError(f"line {lineno}: bad header, expected {','.join(CSV_HEADER)}")
                header_seen = True
                continue
            if len(parts) < len(CSV_HEADER):
                raise DataError(f"line {lineno}: expected >= {len(CSV_HEADER)} columns, got {len(parts)}")
            try:
                wid, cid, sid, step = (int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]))
                vals = [float(parts[4]), float(parts[5]), float(parts[6])]
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            if not all(np.isfinite(v) for v in vals):
                raise DataError(f"line {lineno}: non-finite value in window {wid}")
            if current is not None and current[0] != wid:
                finish(lineno)
            if current is None:
                if step != 0:
                    raise DataError(f"line {lineno}: window {wid} starts at step {step}, expected 0")
                current = [wid, cid, sid, np.zeros((CHANNELS, WINDOW_LEN)), 0]
            if step != current[4]:
                raise DataError(f"line {lineno}: window {wid} step {step} out of order, expected {current[4]}")
            if step >= WINDOW_LEN:
                raise DataError(f"line {lineno}: window {wid} step {step} exceeds {WINDOW_LEN - 1}")
            current[3][:, step] = vals
            current[4] += 1
        if not header_seen:
            raise DataError("line 1: empty file or missing header")
        finish(lineno + 1)
    return SignalBatch(windows)


# --------------------------------------------------------------------------
# normalization and splitting
# --------------------------------------------------------------------------

def normalize(batch: SignalBatch) -> tuple[SignalBatch, NormStats]:
    """Fit per-channel z-score stats on this batch and apply them."""
    if not batch.windows:
        raise DataError("cannot fit normalization on an empty batch")
    stacked = batch.stacked()
    mean = stacked.mean(axis=(0, 2))
    std = stacked.std(axis=(0, 2))
    if (std < 1e-12).any():
        warnings.warn("zero-variance channel; std clamped to 1e-8", RuntimeWarning)
        std = np.where(std < 1e-12, 1e-8, std)
    stats = NormStats(mean, std)
    return apply_stats(batch, stats), stats


def apply_stats(batch: SignalBatch, stats: NormStats) -> SignalBatch:
    out = [
        SignalWindow((w.samples - stats.mean[:, None]) / stats.std[:, None],
                     w.class_id, w.subject_id)
        for w in batch.windows
    ]
    return SignalBatch(out, normalization=stats)


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Map normalized arrays [.., C, L] back to data units."""
    return x * stats.std[:, None] + stats.mean[:, None]


def split(batch: SignalBatch, train_frac: float, seed: int) -> tuple[SignalBatch, SignalBatch]:
    """Subject-disjoint split when every class has >= 2 subjects, else a
    plain window-level split. Deterministic per seed."""
    if not 0 < train_frac < 1:
        raise DataError("train_frac must be in (0, 1)")
    if len(batch) < 2:
        raise DataError("batch too small to split")
    rng = np.random.default_rng(seed)
    cids = batch.class_ids()
    sids = batch.subject_ids()

    per_class_subjects = [
        set(sids[cids == c]) for c in np.unique(cids)
    ]
    if all(len(s) >= 2 for s in per_class_subjects):
        subjects = np.array(sorted(set(sids)))
        order = rng.permutation(len(subjects))
        n_train = int(round(train_frac * len(subjects)))
        n_train = max(1, min(len(subjects) - 1, n_train))
        train_subjects = set(subjects[order[:n_train]])
        train_idx = [i for i, s in enumerate(sids) if s in train_subjects]
        eval_idx = [i for i, s in enumerate(sids) if s not in train_subjects]
    else:
        order = rng.permutation(len(batch))
        n_train = int(round(train_frac * len(batch)))
        n_train = max(1, min(len(batch) - 1, n_train))
        train_idx = sorted(order[:n_train].tolist())
        eval_idx = sorted(order[n_train:].tolist())
    if not train_idx or not eval_idx:
        raise DataError("split left one side empty")
    train = SignalBatch([batch.windows[i] for i in train_idx], batch.normalization)
    evalb = SignalBatch([batch.windows[i] for i in eval_idx], batch.normalization)
    return train, evalb
