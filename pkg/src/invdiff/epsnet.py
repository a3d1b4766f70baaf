"""Noise-prediction models and the ε-prediction training loop.

Two implementations of the ε-predictor interface (``predict(x, t)`` plus a
``sched`` attribute):

* :class:`AnalyticGaussianModel` — the closed-form optimal predictor when
  the data are Gaussian N(μ, σ²I). The step-t marginal is then
  N(√ᾱ_t μ, (ᾱ_t σ² + 1 - ᾱ_t) I), whose score gives

      ε*(x, t) = √(1-ᾱ_t) · (x - √ᾱ_t μ) / (ᾱ_t σ² + 1 - ᾱ_t).

  It serves as the verification oracle for training and inversion.

* :class:`MlpEpsModel` — a trainable network over the flattened C·h·w
  latent. Each residual block modulates its input with a scale/shift/gate
  triple predicted from a sinusoidal time embedding; the modulation head is
  zero-initialized so every block starts as the identity map. Gradients
  come from the reverse-mode engine in ``numerics`` and are gated against
  central finite differences by :func:`grad_check`.

Training minimizes the per-element mean squared error between the
predicted and injected noise, with timesteps drawn uniformly over the
trained range and unit loss weighting. The optimizer is Adam with
decoupled weight decay under a warmup-then-cosine learning-rate schedule;
defaults are sized for small CPU fixtures.
"""

from __future__ import annotations

import logging
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .diffusion import q_sample
from .errors import FormatError, NumericError
from .numerics import (Rng, Var, add, add_row, backward, col_slice,
                       finite_diff_grad, matmul, mean_sq_err, mul, shift,
                       silu)
from .schedule import NoiseSchedule, linear_schedule

log = logging.getLogger(__name__)


@dataclass
class AnalyticGaussianModel:
    """Exact ε-predictor for N(μ, σ²I) data (see module docstring)."""

    sched: NoiseSchedule
    mu: float | np.ndarray = 0.0
    var: float = 1.0

    def __post_init__(self):
        if self.var <= 0:
            raise ValueError("variance must be positive")

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if isinstance(self.mu, np.ndarray) and self.mu.shape != x.shape:
            raise ValueError(f"input shape {x.shape} != mean shape {self.mu.shape}")
        abar = self.sched.abar(int(t))
        return math.sqrt(1.0 - abar) * (x - math.sqrt(abar) * self.mu) \
            / (abar * self.var + 1.0 - abar)


def time_embedding(t, T: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of 0-indexed timesteps normalized to [0, 1].

    dim/2 frequencies log-spaced over [1, 1e4]; returns (B, dim).
    """
    if dim < 2 or dim % 2:
        raise ValueError("embedding dim must be even and >= 2")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    u = t / max(T - 1, 1)
    k = dim // 2
    freqs = np.logspace(0.0, 4.0, k) if k > 1 else np.ones(1)
    ang = u[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class MlpEpsModel:
    """Residual MLP ε-predictor with time-conditioned scale-shift gating."""

    def __init__(self, shape: tuple[int, int, int], sched: NoiseSchedule,
                 width: int = 256, depth: int = 2, temb_dim: int = 64,
                 rng: Rng | None = None, zero_init_gates: bool = True):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        if width < 1:
            raise ValueError("width must be >= 1")
        if temb_dim < 2 or temb_dim % 2:
            raise ValueError("temb_dim must be even and >= 2")
        c, h, w = shape
        self.shape = (int(c), int(h), int(w))
        self.sched = sched
        self.width = int(width)
        self.depth = int(depth)
        self.temb_dim = int(temb_dim)
        d = c * h * w
        rng = rng if rng is not None else Rng(0)
        init = rng.child(101)

        def dense(n_in, n_out):
            return Var(init.normal((n_in, n_out)) / math.sqrt(n_in))

        self.w_in = dense(d, width)
        self.b_in = Var(np.zeros(width))
        self.blocks = []
        for _ in range(depth):
            if zero_init_gates:
                u_mod = Var(np.zeros((temb_dim, 3 * width)))
                c_mod = Var(np.zeros(3 * width))
            else:
                u_mod = Var(init.normal((temb_dim, 3 * width)) / math.sqrt(temb_dim))
                c_mod = Var(0.1 * init.normal(3 * width))
            self.blocks.append({
                "u_mod": u_mod, "c_mod": c_mod,
                "w1": dense(width, width), "b1": Var(np.zeros(width)),
                "w2": dense(width, width), "b2": Var(np.zeros(width)),
            })
        self.w_out = dense(width, d)
        self.b_out = Var(np.zeros(d))

    _BLOCK_KEYS = ("u_mod", "c_mod", "w1", "b1", "w2", "b2")

    def parameters(self) -> list[Var]:
        """All parameters in the fixed serialization order."""
        params = [self.w_in, self.b_in]
        for blk in self.blocks:
            params.extend(blk[k] for k in self._BLOCK_KEYS)
        params.extend([self.w_out, self.b_out])
        return params

    def n_params(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def forward(self, x_flat: np.ndarray, t) -> Var:
        """Batched forward pass: (B, C*h*w) plus per-sample steps -> Var."""
        temb = Var(time_embedding(t, self.sched.T, self.temb_dim))
        h = add_row(matmul(Var(np.asarray(x_flat, dtype=np.float64)), self.w_in), self.b_in)
        wd = self.width
        for blk in self.blocks:
            mods = add_row(matmul(temb, blk["u_mod"]), blk["c_mod"])
            s = col_slice(mods, 0, wd)
            b = col_slice(mods, wd, 2 * wd)
            g = col_slice(mods, 2 * wd, 3 * wd)
            u = add(mul(h, shift(s, 1.0)), b)
            y = add_row(matmul(silu(add_row(matmul(u, blk["w1"]), blk["b1"])), blk["w2"]), blk["b2"])
            h = add(h, mul(g, y))
        return add_row(matmul(h, self.w_out), self.b_out)

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.shape:
            raise ValueError(f"input shape {x.shape} != model shape {self.shape}")
        t = int(t)
        if not 0 <= t < self.sched.T:
            raise ValueError(f"timestep {t} outside trained range [0, {self.sched.T - 1}]")
        out = self.forward(x.reshape(1, -1), np.array([t]))
        return out.value.reshape(self.shape)


@dataclass
class TrainConfig:
    """ε-prediction training settings (CPU-fixture-sized defaults)."""

    epochs: int = 60
    batch_size: int = 64
    lr_init: float = 1e-4
    lr_peak: float = 1e-3
    lr_final: float = 1e-4
    warmup_epochs: int = 5
    weight_decay: float = 0.0
    gamma: float = 1.0
    grad_clip: float = 1.0
    seed: int = 0
    width: int = 256
    depth: int = 2
    temb_dim: int = 64

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.gamma != 1.0:
            raise ValueError("loss weighting is fixed to gamma = 1")


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Warmup from lr_init to lr_peak, then cosine decay to lr_final."""
    if epoch < cfg.warmup_epochs:
        frac = (epoch + 1) / cfg.warmup_epochs
        return cfg.lr_init + (cfg.lr_peak - cfg.lr_init) * frac
    span = max(cfg.epochs - cfg.warmup_epochs, 1)
    prog = (epoch - cfg.warmup_epochs) / span
    return cfg.lr_final + 0.5 * (cfg.lr_peak - cfg.lr_final) * (1 + math.cos(math.pi * prog))


def epoch_loss(model, batch: np.ndarray, sched: NoiseSchedule, rng: Rng,
               t=None, eps: np.ndarray | None = None) -> float:
    """Monte-Carlo ε-prediction loss on one batch, per element.

    Draw order (for reproducibility): one uniform-timestep draw for the
    whole batch, then one Gaussian draw for the whole batch. ``t``/``eps``
    may be given explicitly to pin the estimate. Returns
    mean over samples and elements of (ε_pred - ε)², i.e. the squared
    error per element.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[0] == 0:
        raise ValueError("batch must be non-empty with shape (B, C, h, w)")
    n = batch.shape[0]
    if t is None:
        t = rng.integers(0, sched.T, n)
    else:
        t = np.full(n, int(t)) if np.ndim(t) == 0 else np.asarray(t)
    if eps is None:
        eps = rng.normal(batch.shape)
    x_t = q_sample(sched, batch, t, eps)
    total = 0.0
    for i in range(n):
        pred = model.predict(x_t[i], int(t[i]))
        total += float(np.mean((pred - eps[i]) ** 2))
    return total / n


class AdamW:
    """Adam with decoupled weight decay over a parameter list."""

    def __init__(self, params: list[Var], weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.wd = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.value = p.value - lr * (mhat / (np.sqrt(vhat) + self.eps) + self.wd * p.value)


def _clip_grads(params: list[Var], max_norm: float):
    if max_norm <= 0:
        return
    total = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None))
    if total > max_norm:
        factor = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor


def train_eps(normals: np.ndarray, sched: NoiseSchedule, cfg: TrainConfig,
              on_epoch=None) -> MlpEpsModel:
    """Train an MLP ε-predictor on normal-only latents.

    Deterministic given cfg.seed; raises NumericError (with the epoch
    index) if the loss goes non-finite. ``on_epoch(epoch, mean_loss)`` is
    called after every epoch.
    """
    normals = np.asarray(normals, dtype=np.float64)
    if normals.ndim != 4 or normals.shape[0] == 0:
        raise ValueError("training set must be non-empty with shape (N, C, h, w)")
    n = normals.shape[0]
    shape = normals.shape[1:]
    root = Rng(cfg.seed)
    model = MlpEpsModel(shape, sched, width=cfg.width, depth=cfg.depth,
                        temb_dim=cfg.temb_dim, rng=root.child(0))
    shuffle_rng, t_rng, eps_rng = root.child(1), root.child(2), root.child(3)
    params = model.parameters()
    opt = AdamW(params, weight_decay=cfg.weight_decay)

    flat = normals.reshape(n, -1)
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        perm = shuffle_rng.permutation(n)
        total, count = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            b = len(idx)
            t = t_rng.integers(0, sched.T, b)
            eps = eps_rng.normal((b, flat.shape[1]))
            abar = sched.alpha_bar[t + 1][:, None]
            x_t = np.sqrt(abar) * flat[idx] + np.sqrt(1.0 - abar) * eps
            loss = mean_sq_err(model.forward(x_t, t), eps)
            value = float(loss.value)
            if not math.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            for p in params:
                p.zero_grad()
            backward(loss)
            _clip_grads(params, cfg.grad_clip)
            opt.step(lr)
            total += value * b
            count += b
        mean_loss = total / count
        log.debug("epoch %d: loss %.6f (lr %.2e)", epoch, mean_loss, lr)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return model


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    passed: bool
    n_params: int


def max_relative_error(g_ad: list[np.ndarray], g_fd: list[np.ndarray]) -> float:
    """Max |a - b| over all entries, relative to the largest |b| entry."""
    denom = max(max(float(np.max(np.abs(g))) for g in g_fd), 1e-12)
    worst = max(float(np.max(np.abs(a - b))) for a, b in zip(g_ad, g_fd))
    return worst / denom


def loss_gradients(model: MlpEpsModel, x_t: np.ndarray, t: np.ndarray,
                   eps: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Reverse-mode gradients of the batch loss w.r.t. every parameter."""
    params = model.parameters()
    for p in params:
        p.zero_grad()
    loss = mean_sq_err(model.forward(x_t, t), eps)
    backward(loss)
    return float(loss.value), [np.array(p.grad) for p in params]


def grad_check(model: MlpEpsModel, rng: Rng, tol: float = 1e-4,
               batch_size: int = 4, h: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode against central-finite-difference gradients.

    Builds one fixed batch from ``rng``, differentiates the batch loss both
    ways, and reports the max error relative to the largest
    finite-difference gradient entry.
    """
    n_params = model.n_params()
    if n_params > 10_000:
        raise ValueError(f"grad_check is for small models (<= 1e4 params), got {n_params}")
    c, hh, ww = model.shape
    d = c * hh * ww
    x0 = rng.normal((batch_size, d))
    t = rng.integers(0, model.sched.T, batch_size)
    eps = rng.normal((batch_size, d))
    abar = model.sched.alpha_bar[t + 1][:, None]
    x_t = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps

    _, g_ad = loss_gradients(model, x_t, t, eps)

    g_fd = []
    for p in model.parameters():
        def f(v, _p=p):
            saved = _p.value
            _p.value = v
            out = float(mean_sq_err(model.forward(x_t, t), eps).value)
            _p.value = saved
            return out
        g_fd.append(finite_diff_grad(f, p.value, h=h))

    err = max_relative_error(g_ad, g_fd)
    return GradCheckReport(max_rel_err=err, tol=tol, passed=err < tol, n_params=n_params)


# Model file: magic "IVAD", u32 version, linear-schedule parameters,
# architecture dims, little-endian f32 parameter payload in parameters()
# order, trailing u32 crc32 (zlib) of all preceding bytes.
_MAGIC = b"IVAD"
_VERSION = 1


def save_model(path, model: MlpEpsModel) -> None:
    sched = model.sched
    if not np.allclose(sched.beta, np.linspace(sched.beta[0], sched.beta[-1], sched.T)):
        raise ValueError("model files only serialize linear schedules")
    c, h, w = model.shape
    head = bytearray()
    head += _MAGIC
    head += struct.pack("<I", _VERSION)
    head += struct.pack("<Idd", sched.T, float(sched.beta[0]), float(sched.beta[-1]))
    head += struct.pack("<IIIIII", c, h, w, model.depth, model.width, model.temb_dim)
    payload = np.concatenate([p.value.reshape(-1) for p in model.parameters()])
    head += struct.pack("<Q", payload.size)
    body = payload.astype("<f4").tobytes()
    blob = bytes(head) + body
    crc = zlib.crc32(blob) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(blob + struct.pack("<I", crc))


def load_model(path) -> MlpEpsModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise FormatError("model file truncated", offset=len(blob))
    if blob[:4] != _MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}", offset=0)
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    stored_crc = struct.unpack_from("<I", blob, len(blob) - 4)[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise FormatError("checksum mismatch", offset=len(blob) - 4)
    off = 8
    try:
        T, beta1, betaT = struct.unpack_from("<Idd", blob, off)
        off += struct.calcsize("<Idd")
        c, h, w, depth, width, temb_dim = struct.unpack_from("<IIIIII", blob, off)
        off += struct.calcsize("<IIIIII")
        (n_params,) = struct.unpack_from("<Q", blob, off)
        off += 8
    except struct.error as exc:
        raise FormatError(f"header truncated: {exc}", offset=off) from None
    need = n_params * 4
    if len(blob) - 4 - off != need:
        raise FormatError(f"payload length mismatch (expected {need} bytes)", offset=off)
    payload = np.frombuffer(blob, dtype="<f4", count=n_params, offset=off).astype(np.float64)

    sched = linear_schedule(T, beta1, betaT)
    model = MlpEpsModel((c, h, w), sched, width=width, depth=depth, temb_dim=temb_dim)
    pos = 0
    for p in model.parameters():
        size = p.value.size
        p.value = payload[pos:pos + size].reshape(p.value.shape)
        pos += size
    if pos != n_params:
        raise FormatError("parameter count mismatch", offset=off)
    return model
