"""Closed-form diffusion math and dual-condition kernels, in float64 numpy.

Timesteps are 1-based: ``t`` in ``1..T`` reads ``alpha_bars[t - 1]``. ``t = 0``
denotes the clean sample with alpha-bar 1, which is where a DDIM trajectory
ends.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from dckit.errors import PreconditionError, ShapeMismatchError, SingularStepError
from dckit.metrics import cosine_similarity

ALPHA_BAR_FLOOR = 1e-12
STD_EPS = 1e-5
LN_EPS = 1e-5
DEFAULT_LAMBDA = 0.05
DDIM_STEPS = 200


@dataclass(frozen=True)
class ScheduleTable:
    betas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        alpha_bars = np.asarray(self.alpha_bars, dtype=np.float64)
        if betas.ndim != 1 or betas.shape != alpha_bars.shape or betas.size == 0:
            raise PreconditionError("betas and alpha_bars must be equal-length non-empty 1-D arrays")
        problems = schedule_problems(betas, alpha_bars)
        if problems:
            raise PreconditionError("invalid schedule: " + "; ".join(problems))
        betas.flags.writeable = False
        alpha_bars.flags.writeable = False
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @classmethod
    def unchecked(cls, betas, alpha_bars) -> "ScheduleTable":
        """Build a table without validation (fault injection in conformance checks)."""
        table = object.__new__(cls)
        object.__setattr__(table, "betas", np.asarray(betas, dtype=np.float64))
        object.__setattr__(table, "alpha_bars", np.asarray(alpha_bars, dtype=np.float64))
        return table

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    def alpha_bar(self, t: int) -> float:
        if int(t) != t or not 0 <= t <= self.T:
            raise PreconditionError(f"timestep {t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bars[int(t) - 1])


def schedule_problems(betas: np.ndarray, alpha_bars: np.ndarray) -> List[str]:
    problems = []
    if not np.all((betas > 0) & (betas < 1)):
        problems.append("betas must lie in (0, 1)")
    if not np.all((alpha_bars > 0) & (alpha_bars <= 1)):
        problems.append("alpha_bars must lie in (0, 1]")
    if np.any(np.diff(alpha_bars) >= 0):
        problems.append("alpha_bars must be strictly decreasing")
    if np.max(np.abs(sequential_alpha_bars(betas) - alpha_bars)) > 1e-12:
        problems.append("alpha_bars differ from the running product of (1 - beta)")
    return problems


def sequential_alpha_bars(betas) -> np.ndarray:
    out = np.empty(len(betas))
    acc = 1.0
    for i, b in enumerate(betas):
        acc *= 1.0 - float(b)
        out[i] = acc
    return out


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> ScheduleTable:
    """Linear beta schedule from ``beta_start`` to ``beta_end``."""
    if T < 1:
        raise PreconditionError(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise PreconditionError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    return ScheduleTable(betas, sequential_alpha_bars(betas))


def _same_shape(a, b, what="inputs"):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} shapes differ: {a.shape} vs {b.shape}")
    return a, b


def forward_noise(x0, t: int, eps, sched: ScheduleTable) -> np.ndarray:
    x0, eps = _same_shape(x0, eps, "x0/eps")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_x0(xt, eps_pred, t: int, sched: ScheduleTable) -> np.ndarray:
    xt, eps_pred = _same_shape(xt, eps_pred, "xt/eps_pred")
    ab = sched.alpha_bar(t)
    if ab <= ALPHA_BAR_FLOOR:
        raise SingularStepError(f"alpha_bar({t}) = {ab:g} is below the numerical floor")
    return (xt - np.sqrt(1.0 - ab) * eps_pred) / np.sqrt(ab)


def ddim_step(xt, eps_pred, t: int, t_prev: int, sched: ScheduleTable) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``."""
    if not t_prev < t:
        raise PreconditionError(f"t_prev={t_prev} must be below t={t}")
    ab_prev = sched.alpha_bar(t_prev)
    x0_hat = predict_x0(xt, eps_pred, t, sched)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * np.asarray(eps_pred, dtype=np.float64)


def ddim_timesteps(T: int, steps: int = DDIM_STEPS) -> List[int]:
    """Descending timesteps with stride ``T // steps`` starting at ``T - 1``."""
    if not 1 <= steps <= T:
        raise PreconditionError(f"need 1 <= steps <= T, got steps={steps}, T={T}")
    stride = T // steps
    return [T - 1 - i * stride for i in range(steps)]


def ddim_sample(
    x_start,
    eps_fn: Callable[[np.ndarray, int], np.ndarray],
    sched: ScheduleTable,
    steps: int = DDIM_STEPS,
    timesteps: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Run DDIM from ``x_start`` at the first timestep down to ``t = 0``."""
    ts = list(timesteps) if timesteps is not None else ddim_timesteps(sched.T, steps)
    x = np.asarray(x_start, dtype=np.float64)
    for t, t_prev in zip(ts, ts[1:] + [0]):
        x = ddim_step(x, eps_fn(x, t), t, t_prev, sched)
    return x


def gamma_weight(t: float, T: int) -> float:
    if T < 1 or not 0 <= t <= T:
        raise PreconditionError(f"need 0 <= t <= T and T >= 1, got t={t}, T={T}")
    return t / T


def l_naive1(f_id, f_x0hat) -> float:
    return -cosine_similarity(f_id, f_x0hat)


def l_naive2(f_sty, f_x0hat) -> float:
    return -cosine_similarity(f_sty, f_x0hat)


def id_loss(f_id, f_sty, f_x0hat, t: float, T: int) -> float:
    """Time-dependent ID loss: pulls toward the ID feature near t=T and the style feature near t=0."""
    g = gamma_weight(t, T)
    return -g * cosine_similarity(f_id, f_x0hat) - (1.0 - g) * cosine_similarity(f_sty, f_x0hat)


def total_loss(mse: float, id_loss_value: float, lam: float = DEFAULT_LAMBDA) -> float:
    if lam < 0:
        raise PreconditionError(f"lambda must be non-negative, got {lam}")
    return mse + lam * id_loss_value


@dataclass(frozen=True)
class StyleExtractorWeights:
    """Fixed surrogate parameters for the patch-wise style extractor.

    ``mix``/``mix_bias`` play the role of the 1x1 conv followed by BatchNorm
    with identity running statistics; ``relu`` toggles the preceding ReLU.
    ``pos_emb`` has one row per patch plus one for the global vector.
    """

    mix: np.ndarray
    mix_bias: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    pos_emb: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    relu: bool = True
    layer_norm: bool = True

    @property
    def channels(self) -> int:
        return int(self.w1.shape[0])

    @property
    def grid_k(self) -> int:
        return int(round(np.sqrt(self.pos_emb.shape[0] - 1)))

    @classmethod
    def from_seed(cls, channels: int, grid_k: int, seed: int = 0) -> "StyleExtractorWeights":
        rng = np.random.default_rng(seed)
        c = channels
        return cls(
            mix=np.eye(c) + rng.normal(scale=0.3 / np.sqrt(c), size=(c, c)),
            mix_bias=rng.normal(scale=0.1, size=c),
            w1=1.0 + rng.normal(scale=0.1, size=c),
            w2=1.0 + rng.normal(scale=0.1, size=c),
            pos_emb=rng.normal(scale=0.1, size=(grid_k * grid_k + 1, c)),
            ln_gain=np.ones(c),
            ln_bias=np.zeros(c),
        )

    @classmethod
    def identity(cls, channels: int, grid_k: int) -> "StyleExtractorWeights":
        """No mixing, no ReLU, no LayerNorm, unit W1/W2, zero position embedding."""
        c = channels
        return cls(
            mix=np.eye(c),
            mix_bias=np.zeros(c),
            w1=np.ones(c),
            w2=np.ones(c),
            pos_emb=np.zeros((grid_k * grid_k + 1, c)),
            ln_gain=np.ones(c),
            ln_bias=np.zeros(c),
            relu=False,
            layer_norm=False,
        )


@dataclass(frozen=True)
class StyleVectorSet:
    grid_k: int
    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.grid_k ** 2 + 1:
            raise ShapeMismatchError(f"expected {self.grid_k ** 2 + 1} rows for grid {self.grid_k}, got {v.shape}")
        object.__setattr__(self, "vectors", v)

    @property
    def channels(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def patch_vectors(self) -> np.ndarray:
        return self.vectors[:-1]

    @property
    def global_vector(self) -> np.ndarray:
        return self.vectors[-1]


def patch_bounds(size: int, k: int) -> List[tuple]:
    """Near-equal split: patch i spans ``floor(i*size/k)`` to ``floor((i+1)*size/k) - 1``."""
    return [(i * size // k, (i + 1) * size // k) for i in range(k)]


def _channel_mix(x: np.ndarray, w: StyleExtractorWeights) -> np.ndarray:
    if w.relu:
        x = np.maximum(x, 0.0)
    # accumulate input channels in a fixed order so every pixel sees identical arithmetic
    out = np.broadcast_to(w.mix_bias[:, None, None], x.shape).copy()
    for c in range(x.shape[0]):
        out += w.mix[:, c, None, None] * x[c]
    return out


def _patch_stats(block: np.ndarray) -> tuple:
    # sorting makes the reductions independent of pixel order
    vals = np.sort(block.reshape(block.shape[0], -1), axis=1)
    mu = vals.mean(axis=1)
    var = ((vals - mu[:, None]) ** 2).mean(axis=1)
    return mu, np.sqrt(var + STD_EPS)


def _layer_norm(row: np.ndarray, w: StyleExtractorWeights) -> np.ndarray:
    if not w.layer_norm:
        return row
    mu = row.mean()
    var = ((row - mu) ** 2).mean()
    return (row - mu) / np.sqrt(var + LN_EPS) * w.ln_gain + w.ln_bias


def extract_style(feature_map, grid_k: int, weights: StyleExtractorWeights) -> StyleVectorSet:
    """Patch-wise style vectors from a ``C x H x W`` feature map.

    Rows are patches in row-major order followed by the whole-map vector.
    """
    fmap = np.asarray(feature_map, dtype=np.float64)
    if fmap.ndim != 3:
        raise ShapeMismatchError(f"feature map must be C x H x W, got shape {fmap.shape}")
    c, h, wdt = fmap.shape
    if grid_k < 1 or grid_k > h or grid_k > wdt:
        raise PreconditionError(f"grid {grid_k} does not fit a {h}x{wdt} map")
    if weights.channels != c:
        raise ShapeMismatchError(f"weights have {weights.channels} channels, map has {c}")
    if weights.pos_emb.shape != (grid_k * grid_k + 1, c):
        raise ShapeMismatchError(
            f"position embedding {weights.pos_emb.shape} does not match grid {grid_k} ({grid_k ** 2 + 1} x {c})"
        )
    mixed = _channel_mix(fmap, weights)
    blocks = [mixed[:, r0:r1, c0:c1] for r0, r1 in patch_bounds(h, grid_k) for c0, c1 in patch_bounds(wdt, grid_k)]
    blocks.append(mixed)
    rows = []
    for i, block in enumerate(blocks):
        mu, sigma = _patch_stats(block)
        rows.append(_layer_norm(weights.w1 * mu + weights.w2 * sigma + weights.pos_emb[i], weights))
    return StyleVectorSet(grid_k, np.stack(rows))


def interp_style(s1: StyleVectorSet, s2: StyleVectorSet, alpha: float) -> StyleVectorSet:
    if s1.vectors.shape != s2.vectors.shape or s1.grid_k != s2.grid_k:
        raise ShapeMismatchError(f"style sets differ in shape: {s1.vectors.shape} vs {s2.vectors.shape}")
    if not 0 <= alpha <= 1:
        raise PreconditionError(f"alpha must lie in [0, 1], got {alpha}")
    return StyleVectorSet(s1.grid_k, alpha * s1.vectors + (1.0 - alpha) * s2.vectors)


ID_GRID = 7


def encode_id_condition(spatial, global_vec, pos_emb) -> np.ndarray:
    """Flattened ``7 x 7 x C`` feature rows, then the global vector, plus position embedding."""
    spatial = np.asarray(spatial, dtype=np.float64)
    global_vec = np.asarray(global_vec, dtype=np.float64)
    pos_emb = np.asarray(pos_emb, dtype=np.float64)
    if spatial.ndim != 3 or spatial.shape[:2] != (ID_GRID, ID_GRID):
        raise ShapeMismatchError(f"spatial feature must be 7 x 7 x C, got {spatial.shape}")
    c = spatial.shape[2]
    if global_vec.shape != (c,):
        raise ShapeMismatchError(f"global vector must have length {c}, got {global_vec.shape}")
    if pos_emb.shape != (ID_GRID * ID_GRID + 1, c):
        raise ShapeMismatchError(f"position embedding must be 50 x {c}, got {pos_emb.shape}")
    return np.vstack([spatial.reshape(ID_GRID * ID_GRID, c), global_vec[None, :]]) + pos_emb


def modulation_scale(t_emb, f_id) -> np.ndarray:
    """Per-channel scale for a residual block: time embedding plus global ID feature."""
    t_emb, f_id = _same_shape(t_emb, f_id, "t_emb/f_id")
    if t_emb.ndim != 1:
        raise ShapeMismatchError("t_emb and f_id must be vectors")
    return t_emb + f_id


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention(q, kv, wq, wk, wv, return_weights: bool = False):
    """Scaled dot-product attention; keys and values are both projections of ``kv``."""
    q = np.asarray(q, dtype=np.float64)
    kv = np.asarray(kv, dtype=np.float64)
    wq, wk, wv = (np.asarray(w, dtype=np.float64) for w in (wq, wk, wv))
    if q.ndim != 2 or kv.ndim != 2 or q.shape[1] != wq.shape[0] or kv.shape[1] != wk.shape[0]:
        raise ShapeMismatchError(f"incompatible shapes q={q.shape}, kv={kv.shape}, wq={wq.shape}, wk={wk.shape}")
    if wq.shape[1] != wk.shape[1] or wv.shape[0] != wk.shape[0]:
        raise ShapeMismatchError(f"projection shapes disagree: wq={wq.shape}, wk={wk.shape}, wv={wv.shape}")
    qp = q @ wq
    kp = kv @ wk
    vp = kv @ wv
    weights = softmax(qp @ kp.T / np.sqrt(qp.shape[1]))
    out = weights @ vp
    return (out, weights) if return_weights else out


def cross_attention(q, kv_self, kv_cond, wq, wk, wv, return_weights: bool = False):
    """Attention over the concatenation of ``kv_self`` and condition rows ``kv_cond``.

    Values are projected before weighting; ``kv_cond`` may have zero rows.
    """
    kv_self = np.asarray(kv_self, dtype=np.float64)
    kv_cond = np.asarray(kv_cond, dtype=np.float64)
    if kv_cond.size == 0:
        kv_cond = kv_cond.reshape(0, kv_self.shape[1])
    if kv_cond.ndim != 2 or kv_cond.shape[1] != kv_self.shape[1]:
        raise ShapeMismatchError(f"condition rows {kv_cond.shape} do not match self rows {kv_self.shape}")
    return attention(q, np.vstack([kv_self, kv_cond]), wq, wk, wv, return_weights=return_weights)


def cfg_combine(eps_cond, eps_uncond, scale: float) -> np.ndarray:
    eps_cond, eps_uncond = _same_shape(eps_cond, eps_uncond, "eps_cond/eps_uncond")
    # same extrapolation as u + s*(c - u), but exact at s=0 and s=1
    return (1.0 - scale) * eps_uncond + scale * eps_cond


class ToyEncoder:
    """Fixed-seed random projection to unit-norm vectors, standing in for a recognition network."""

    def __init__(self, in_dim: int, out_dim: int = 64, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.proj = rng.normal(size=(in_dim, out_dim)) / np.sqrt(in_dim)

    def __call__(self, x) -> np.ndarray:
        flat = np.asarray(x, dtype=np.float64).reshape(-1)
        if flat.shape[0] != self.in_dim:
            raise ShapeMismatchError(f"encoder expects {self.in_dim} values, got {flat.shape[0]}")
        z = np.tanh(flat @ self.proj)
        norm = np.linalg.norm(z)
        if norm == 0:
            raise PreconditionError("encoder produced a zero vector")
        return z / norm
