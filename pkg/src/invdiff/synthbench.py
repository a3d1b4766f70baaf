"""Synthetic feature-space anomaly benchmark and the FTEN tensor format.

Normal samples are z = M + rho * blur(eps): a fixed low-frequency sinusoid
mean field M (drawn once per config seed, so every location has structure
worth learning) plus spatially smoothed unit Gaussian noise. The blur is a
separable box filter of the configured radius with circular boundary, so
the noise field is stationary and its per-element variance is exactly
rho^2 / (2r+1)^2.

Anomalies are axis-aligned rectangles whose pixel ratio falls inside a
named size bucket; all channels inside the rectangle receive an additive
offset of magnitude delta along a random unit direction in channel space.
The mask records the rectangle. Generation is a pure function of
(config, seed): sample i of each split draws from its own child stream.

FTEN interchange format (little-endian): magic "FTEN", u32 version = 1,
u32 N, C, h, w, then N*C*h*w float32 values in (n, c, y, x) row-major
order. The reader rejects bad magic, version, or truncation with the byte
offset of the problem.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .numerics import Rng

# child-stream purposes
_MEAN_FIELD, _TRAIN, _TEST_NORMAL, _TEST_ANOM = 0, 1, 2, 3

DEFAULT_BUCKETS = {
    "tiny": (0.01, 0.03),
    "small": (0.03, 0.08),
    "medium": (0.08, 0.20),
    "large": (0.20, 0.45),
}


@dataclass(frozen=True)
class BenchConfig:
    C: int = 8
    h: int = 8
    w: int = 8
    n_train: int = 512
    n_test_normal: int = 48
    n_test_anomalous: int = 48
    smoothness: int = 1          # box-blur radius
    noise_scale: float = 0.35    # rho
    anomaly_magnitude: float = 2.0
    buckets: dict = field(default_factory=lambda: dict(DEFAULT_BUCKETS))
    out_h: int = 32              # resolution for pixel-level evaluation
    out_w: int = 32
    seed: int = 0

    def __post_init__(self):
        if min(self.C, self.h, self.w, self.n_train) < 1:
            raise ValueError("dimensions and train count must be positive")
        if self.n_test_normal < 0 or self.n_test_anomalous < 0:
            raise ValueError("test counts must be non-negative")
        if self.smoothness < 0:
            raise ValueError("smoothness radius must be >= 0")
        for name, (lo, hi) in self.buckets.items():
            if not (0.0 < lo < hi <= 1.0):
                raise ValueError(f"bucket {name!r} range must satisfy 0 < lo < hi <= 1")


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray  # (C, h, w)
    label: int            # 1 iff mask is non-empty
    mask: np.ndarray      # (h, w) binary
    bucket: str | None = None


def box_blur(x: np.ndarray, radius: int) -> np.ndarray:
    """Separable box blur with circular boundary over the last two axes."""
    if radius == 0:
        return np.array(x, dtype=np.float64)
    out = np.asarray(x, dtype=np.float64)
    k = 2 * radius + 1
    for axis in (-2, -1):
        out = sum(np.roll(out, s, axis=axis) for s in range(-radius, radius + 1)) / k
    return out


def mean_field(cfg: BenchConfig) -> np.ndarray:
    """Fixed per-config mean field: three sinusoid components per channel."""
    rng = Rng(cfg.seed).child(_MEAN_FIELD)
    y = np.arange(cfg.h)[:, None] / cfg.h
    x = np.arange(cfg.w)[None, :] / cfg.w
    m = np.zeros((cfg.C, cfg.h, cfg.w))
    for c in range(cfg.C):
        for _ in range(3):
            amp = 0.8 * rng.normal()
            fy = rng.integers(0, 3)
            fx = rng.integers(0, 3)
            phase = 2.0 * math.pi * rng.uniform()
            m[c] += amp * np.sin(2.0 * math.pi * (fy * y + fx * x) + phase)
    return m


def gen_normal(cfg: BenchConfig, rng: Rng, m: np.ndarray | None = None) -> np.ndarray:
    """One normal sample, deterministic in the supplied stream.

    ``m`` may carry a precomputed mean_field(cfg) to avoid rebuilding it
    per sample; it does not affect the result.
    """
    if m is None:
        m = mean_field(cfg)
    eps = rng.normal((cfg.C, cfg.h, cfg.w))
    return m + cfg.noise_scale * box_blur(eps, cfg.smoothness)


def feasible_rects(h: int, w: int, lo: float, hi: float) -> list[tuple[int, int]]:
    """All (rect_h, rect_w) whose pixel ratio lies in (lo, hi]."""
    total = h * w
    return [(rh, rw) for rh in range(1, h + 1) for rw in range(1, w + 1)
            if lo < (rh * rw) / total <= hi]


def inject_anomaly(z: np.ndarray, bucket: tuple[float, float], rng: Rng,
                   magnitude: float) -> tuple[np.ndarray, np.ndarray]:
    """Add a rectangular offset anomaly; returns (features, mask)."""
    c, h, w = z.shape
    lo, hi = bucket
    rects = feasible_rects(h, w, lo, hi)
    if not rects:
        raise ValueError(f"no feasible rectangle for bucket ({lo}, {hi}] on {h}x{w}")
    rh, rw = rects[rng.integers(0, len(rects))]
    y0 = rng.integers(0, h - rh + 1)
    x0 = rng.integers(0, w - rw + 1)
    direction = rng.normal(c)
    direction /= np.linalg.norm(direction)
    out = np.array(z, dtype=np.float64)
    out[:, y0:y0 + rh, x0:x0 + rw] += magnitude * direction[:, None, None]
    mask = np.zeros((h, w), dtype=np.int64)
    mask[y0:y0 + rh, x0:x0 + rw] = 1
    return out, mask


def make_dataset(cfg: BenchConfig) -> tuple[np.ndarray, list[LabeledSample]]:
    """Normal-only training array plus a labelled test set.

    Anomalous test samples cycle through the configured buckets round-robin.
    """
    base = Rng(cfg.seed)
    m = mean_field(cfg)
    train = np.stack([gen_normal(cfg, base.child(_TRAIN, i), m) for i in range(cfg.n_train)])
    test: list[LabeledSample] = []
    empty_mask = np.zeros((cfg.h, cfg.w), dtype=np.int64)
    for i in range(cfg.n_test_normal):
        z = gen_normal(cfg, base.child(_TEST_NORMAL, i), m)
        test.append(LabeledSample(features=z, label=0, mask=empty_mask.copy()))
    names = sorted(cfg.buckets)
    for i in range(cfg.n_test_anomalous):
        stream = base.child(_TEST_ANOM, i)
        z = gen_normal(cfg, stream, m)
        bucket = names[i % len(names)]
        feats, mask = inject_anomaly(z, cfg.buckets[bucket], stream,
                                     cfg.anomaly_magnitude)
        test.append(LabeledSample(features=feats, label=1, mask=mask, bucket=bucket))
    return train, test


# ------------------------------------------------------------------- FTEN

_FTEN_MAGIC = b"FTEN"
_FTEN_VERSION = 1


def write_ften(path, tensors: np.ndarray) -> None:
    """Write an (N, C, h, w) stack as an FTEN file (float32 payload)."""
    arr = np.asarray(tensors)
    if arr.ndim != 4:
        raise ValueError(f"expected (N, C, h, w), got shape {arr.shape}")
    n, c, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(_FTEN_MAGIC)
        fh.write(struct.pack("<IIIII", _FTEN_VERSION, n, c, h, w))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_ften(path) -> np.ndarray:
    """Read an FTEN file back as float64 (N, C, h, w)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != _FTEN_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}", offset=0)
    if len(blob) < 24:
        raise FormatError("header truncated", offset=len(blob))
    version, n, c, h, w = struct.unpack_from("<IIIII", blob, 4)
    if version != _FTEN_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    need = n * c * h * w * 4
    if len(blob) - 24 != need:
        raise FormatError(f"payload length {len(blob) - 24} != expected {need}",
                          offset=24)
    data = np.frombuffer(blob, dtype="<f4", count=n * c * h * w, offset=24)
    return data.reshape(n, c, h, w).astype(np.float64)
