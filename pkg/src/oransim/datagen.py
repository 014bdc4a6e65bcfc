"""Synthetic spectrogram and KPM datasets.

I/Q frames are one 10 ms LTE frame at 7.68 Msps: an OFDM-like uplink signal
(300 QPSK subcarriers on a 512-point grid, i.e. 25 PRBs) in white noise, plus an
optional continuous-wave tone for the jammed class. Spectrograms are log-magnitude
STFTs min-max scaled to [0, 1] and resized to 128x128 (rows are frequency bins,
columns are time).

KPM windows stack ``t`` consecutive link reports of four metrics (UL SINR,
bitrate, BLER, MCS), each min-max scaled with fixed bounds recorded in the
dataset manifest.

Dataset directory layout::

    manifest.txt      key=value lines (counts, seeds, bounds, shapes)
    samples.f32       float32 little-endian, row-major (N, *sample_shape)
    labels.u8         one uint8 label per sample (0 = SOI, 1 = CWI)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import zoom
from scipy.signal import get_window

log = logging.getLogger(__name__)

SAMPLE_RATE = 7.68e6
FRAME_SAMPLES = 76_800
CARRIER_HZ = 2.56e9
OFDM_FFT = 512
ACTIVE_SUBCARRIERS = 300
SNR_DB = 20.0
TONE_REF_AMPLITUDE = 3.0

STFT_NFFT = 256
STFT_HOP = 600
LOG_FLOOR = 1e-12
DYNAMIC_RANGE_DECADES = 4.0
SPEC_SIZE = 128

SOI = 0
CWI = 1

KPM_FEATURES = ("ul_sinr", "bitrate", "bler", "mcs")
# fixed (min, max) per KPM feature used for normalization
KPM_BOUNDS = ((-10.0, 35.0), (0.0, 20.0), (0.0, 1.0), (0.0, 28.0))


@dataclass(frozen=True)
class JammerProfile:
    kind: str = "CWI"
    gain_db: float = 40.0
    on: bool = False

    def __post_init__(self):
        if self.on and not 30.0 <= self.gain_db <= 40.0:
            raise ValueError(f"jammer gain {self.gain_db} dB outside [30, 40]")


@dataclass
class IqFrame:
    samples: np.ndarray  # complex64, FRAME_SAMPLES long
    sample_rate: float = SAMPLE_RATE
    carrier_hz: float = CARRIER_HZ

    def __post_init__(self):
        if self.samples.shape != (FRAME_SAMPLES,):
            raise ValueError(f"an I/Q frame holds exactly {FRAME_SAMPLES} samples")

    @property
    def duration_s(self) -> float:
        return FRAME_SAMPLES / self.sample_rate

    def to_bytes(self) -> bytes:
        """Interleaved little-endian float32 I/Q, 8 bytes per sample."""
        inter = np.empty(2 * FRAME_SAMPLES, dtype="<f4")
        inter[0::2] = self.samples.real
        inter[1::2] = self.samples.imag
        return inter.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "IqFrame":
        if len(data) != 8 * FRAME_SAMPLES:
            raise ValueError(f"I/Q payload must be {8 * FRAME_SAMPLES} bytes, got {len(data)}")
        inter = np.frombuffer(data, dtype="<f4")
        return cls((inter[0::2] + 1j * inter[1::2]).astype(np.complex64))


@dataclass(frozen=True)
class KpmSample:
    ul_sinr: float
    bitrate: float
    bler: float
    mcs: int

    def __post_init__(self):
        if not 0.0 <= self.bler <= 1.0:
            raise ValueError("bler must lie in [0, 1]")
        if not 0 <= self.mcs <= 28:
            raise ValueError("mcs must lie in [0, 28]")

    def as_array(self) -> np.ndarray:
        return np.array([self.ul_sinr, self.bitrate, self.bler, self.mcs], dtype=np.float64)


# -- I/Q and spectrograms -------------------------------------------------------

def synth_iq_frame(label: int, jammer: JammerProfile, seed: int) -> IqFrame:
    """One 10 ms frame of uplink signal, plus a CW tone when ``label`` is CWI."""
    if (label == CWI) != jammer.on:
        raise ValueError("label must be CWI exactly when the jammer is on")
    rng = np.random.default_rng(seed)
    n_sym = FRAME_SAMPLES // OFDM_FFT
    half = ACTIVE_SUBCARRIERS // 2
    active = np.r_[1:half + 1, OFDM_FFT - half:OFDM_FFT]  # DC left empty
    grid = np.zeros((n_sym, OFDM_FFT), dtype=np.complex128)
    bits = rng.integers(0, 2, size=(n_sym, ACTIVE_SUBCARRIERS, 2))
    grid[:, active] = ((2 * bits[..., 0] - 1) + 1j * (2 * bits[..., 1] - 1)) / np.sqrt(2)
    x = np.fft.ifft(grid, axis=1).ravel() * np.sqrt(OFDM_FFT ** 2 / ACTIVE_SUBCARRIERS)
    noise_std = np.sqrt(10 ** (-SNR_DB / 10) / 2)
    x = x + noise_std * (rng.standard_normal(FRAME_SAMPLES) + 1j * rng.standard_normal(FRAME_SAMPLES))
    if jammer.on:
        occupied = half * SAMPLE_RATE / OFDM_FFT
        f0 = rng.uniform(-occupied, occupied)
        phase = rng.uniform(0, 2 * np.pi)
        amp = 10 ** (jammer.gain_db / 20) * TONE_REF_AMPLITUDE
        n = np.arange(FRAME_SAMPLES)
        x = x + amp * np.exp(1j * (2 * np.pi * f0 * n / SAMPLE_RATE + phase))
    return IqFrame(x.astype(np.complex64))


def iq_to_spectrogram(frame: IqFrame) -> np.ndarray:
    """128x128x1 log-magnitude spectrogram scaled to [0, 1]."""
    x = np.asarray(frame.samples, dtype=np.complex128)
    win = get_window("hann", STFT_NFFT)
    starts = np.arange(0, FRAME_SAMPLES - STFT_NFFT + 1, STFT_HOP)
    segs = x[starts[:, None] + np.arange(STFT_NFFT)] * win
    mag = np.abs(np.fft.fftshift(np.fft.fft(segs, axis=1), axes=1)).T  # (freq, time)
    # clamp to a fixed dynamic range below the peak so noise nulls do not set the scale
    img = np.log10(np.maximum(mag, max(LOG_FLOOR, mag.max() * 10.0 ** -DYNAMIC_RANGE_DECADES)))
    lo, hi = img.min(), img.max()
    if not np.any(mag > LOG_FLOOR) or hi - lo <= 0:
        return np.zeros((SPEC_SIZE, SPEC_SIZE, 1))
    img = (img - lo) / (hi - lo)
    img = zoom(img, (SPEC_SIZE / img.shape[0], SPEC_SIZE / img.shape[1]), order=1, mode="nearest")
    return np.clip(img, 0.0, 1.0)[..., None]


def ridge_ratio(spec: np.ndarray) -> float:
    """Brightest frequency-row mean over the median row mean."""
    rows = np.asarray(spec)[..., 0].mean(axis=1)
    med = np.median(rows)
    return float(rows.max() / med) if med > 0 else float("inf")


def random_jammer(rng: np.random.Generator, gain_range=(30.0, 40.0)) -> JammerProfile:
    return JammerProfile("CWI", float(rng.uniform(*gain_range)), True)


def spectrogram_arrays(n_soi: int, n_cwi: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Generate labeled spectrograms in memory, SOI first then CWI."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2 ** 63 - 1, size=n_soi + n_cwi)
    X = np.empty((n_soi + n_cwi, SPEC_SIZE, SPEC_SIZE, 1), dtype=np.float64)
    y = np.array([SOI] * n_soi + [CWI] * n_cwi, dtype=np.int64)
    for i, s in enumerate(seeds):
        if y[i] == CWI:
            jam = random_jammer(np.random.default_rng(s + 1))
        else:
            jam = JammerProfile(on=False)
        X[i] = iq_to_spectrogram(synth_iq_frame(int(y[i]), jam, int(s)))
    return X, y


# -- KPMs -------------------------------------------------------------------------

def normalize_kpms(raw: np.ndarray, bounds: Sequence = KPM_BOUNDS) -> np.ndarray:
    """Min-max scale ``(..., 4)`` raw KPMs with fixed bounds, clipped into [0, 1]."""
    b = np.asarray(bounds, dtype=np.float64)
    return np.clip((np.asarray(raw, dtype=np.float64) - b[:, 0]) / (b[:, 1] - b[:, 0]), 0.0, 1.0)


def denormalize_kpms(norm: np.ndarray, bounds: Sequence = KPM_BOUNDS) -> np.ndarray:
    b = np.asarray(bounds, dtype=np.float64)
    return np.asarray(norm, dtype=np.float64) * (b[:, 1] - b[:, 0]) + b[:, 0]


def gen_kpm_window(history: Sequence, t: int, m: int = 4, bounds: Sequence = KPM_BOUNDS) -> np.ndarray:
    """Stack the last ``t`` reports into a normalized vector of length ``m * t``.

    ``history`` holds :class:`KpmSample` records or objects exposing ``kpm()``
    (link states), oldest first.
    """
    if m != len(KPM_FEATURES):
        raise ValueError(f"only m={len(KPM_FEATURES)} metrics are reported")
    if t < 1 or len(history) < t:
        raise ValueError(f"need at least {t} reports, have {len(history)}")
    recs = [h if isinstance(h, KpmSample) else h.kpm() for h in history[-t:]]
    raw = np.stack([r.as_array() for r in recs])
    return normalize_kpms(raw, bounds).ravel()


def kpm_arrays(n_clean: int, n_jammed: int, seed: int, t: int = 15,
               segment: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """KPM windows drawn from simulated link traces.

    Each trace segment runs ``segment`` reports under one jammer state and one MCS
    policy (fixed or adaptive, chosen at random); windows are cut at random offsets.
    """
    from .simnet import LinkState, link_step

    rng = np.random.default_rng(seed)
    out_X, out_y = [], []
    for label, count in ((SOI, n_clean), (CWI, n_jammed)):
        made = 0
        while made < count:
            jam = random_jammer(rng) if label == CWI else JammerProfile(on=False)
            policy = int(rng.integers(0, 2))
            state = LinkState(jammer=jam, policy=policy, mcs=28)
            hist = []
            for _ in range(segment + t):
                state = link_step(state, 1000, rng)
                hist.append(state.kpm())
            per_segment = min(count - made, 4)
            for off in rng.choice(segment, size=per_segment, replace=False):
                out_X.append(gen_kpm_window(hist[off:off + t + 1][:t], t))
                out_y.append(label)
            made += per_segment
    return np.array(out_X), np.array(out_y, dtype=np.int64)


# -- on-disk datasets --------------------------------------------------------------

KINDS = ("spectrogram", "kpm")
DESK_COUNTS = {"spectrogram": (2000, 2000), "kpm": (6000, 4000)}
FULL_COUNTS = {"spectrogram": (5000, 5000), "kpm": (15032, 10254)}


@dataclass(frozen=True)
class DatasetManifest:
    kind: str
    n_class0: int
    n_class1: int
    seed: int
    sample_shape: tuple
    kpm_t: int = 15
    bounds: tuple = KPM_BOUNDS

    def to_text(self) -> str:
        lines = [f"kind={self.kind}", f"n_soi={self.n_class0}", f"n_cwi={self.n_class1}",
                 f"seed={self.seed}", "sample_shape=" + ",".join(map(str, self.sample_shape)),
                 "dtype=float32-le", "label_dtype=uint8", "classes=SOI,CWI",
                 f"class_balance={self.n_class1 / (self.n_class0 + self.n_class1):.6f}"]
        if self.kind == "kpm":
            lines.append(f"kpm_t={self.kpm_t}")
            lines.append("kpm_features=" + ",".join(KPM_FEATURES))
            for name, (lo, hi) in zip(KPM_FEATURES, self.bounds):
                lines.append(f"bounds.{name}={lo!r},{hi!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        kind = kv["kind"]
        bounds = KPM_BOUNDS
        if kind == "kpm":
            bounds = tuple(tuple(float(v) for v in kv[f"bounds.{n}"].split(",")) for n in KPM_FEATURES)
        return cls(kind, int(kv["n_soi"]), int(kv["n_cwi"]), int(kv["seed"]),
                   tuple(int(v) for v in kv["sample_shape"].split(",")),
                   int(kv.get("kpm_t", 15)), bounds)


def build_dataset(kind: str, counts: tuple[int, int], seed: int, out_dir, kpm_t: int = 15) -> DatasetManifest:
    """Generate a labeled dataset and write it under ``out_dir``.

    Args:
        kind: ``"spectrogram"`` or ``"kpm"``.
        counts: (SOI/clean count, CWI/jammed count), each >= 1.
        seed: generator seed; the same seed rebuilds byte-identical files.
        out_dir: target directory, created if missing.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    n0, n1 = (int(c) for c in counts)
    if n0 < 1 or n1 < 1:
        raise ValueError("need at least one sample per class")
    if kind == "spectrogram":
        X, y = spectrogram_arrays(n0, n1, seed)
    else:
        X, y = kpm_arrays(n0, n1, seed, t=kpm_t)
    manifest = DatasetManifest(kind, n0, n1, seed, tuple(X.shape[1:]), kpm_t)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "samples.f32").write_bytes(X.astype("<f4").tobytes())
        (out / "labels.u8").write_bytes(y.astype(np.uint8).tobytes())
        (out / "manifest.txt").write_text(manifest.to_text())
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc}") from exc
    log.info("wrote %s dataset (%d + %d samples) to %s", kind, n0, n1, out)
    return manifest


def load_dataset(path) -> tuple[np.ndarray, np.ndarray, DatasetManifest]:
    p = Path(path)
    try:
        manifest = DatasetManifest.from_text((p / "manifest.txt").read_text())
        X = np.frombuffer((p / "samples.f32").read_bytes(), dtype="<f4")
        y = np.frombuffer((p / "labels.u8").read_bytes(), dtype=np.uint8)
    except OSError as exc:
        raise OSError(f"cannot read dataset at {p}: {exc}") from exc
    X = X.reshape((-1,) + manifest.sample_shape).astype(np.float64)
    if len(X) != len(y) or len(y) != manifest.n_class0 + manifest.n_class1:
        raise ValueError(f"dataset at {p} is inconsistent with its manifest")
    return X, y.astype(np.int64), manifest


def split_dataset(X: np.ndarray, y: np.ndarray, test_fraction: float = 0.2,
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stratified seeded split; returns (X_train, y_train, X_test, y_test)."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        k = int(round(test_fraction * len(idx)))
        test_idx.append(idx[:k])
        train_idx.append(idx[k:])
    tr = rng.permutation(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return X[tr], y[tr], X[te], y[te]
