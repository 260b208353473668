"""Losses, noise schedules and guidance arithmetic with analytic gradients.

Every loss returns ``(value, grad)`` where ``grad`` has the shape of the
differentiated input. Reductions are means over elements, summed with
``math.fsum`` so results do not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


def _mean(x: np.ndarray, n: Optional[int] = None) -> float:
    x = np.asarray(x, np.float64).ravel()
    n = x.size if n is None else n
    return math.fsum(x) / n if n else 0.0


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what}: shape mismatch {np.shape(a)} vs {np.shape(b)}")


# -- schedules -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, np.float64)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("betas must be a non-empty 1D sequence")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", b)

    @classmethod
    def linear(cls, steps: int = 1000, start: float = 1e-4, end: float = 2e-2) -> "NoiseSchedule":
        return cls(np.linspace(start, end, steps))

    @property
    def steps(self) -> int:
        return self.betas.size

    @property
    def alpha_bars(self) -> np.ndarray:
        """alpha_bar[t - 1] = prod_{i <= t} (1 - beta_i) for t = 1..T."""
        return np.cumprod(1.0 - self.betas)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.steps:
            raise ValueError(f"step {t} outside 0..{self.steps}")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


def forward_noise(z0: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    _check_shapes(z0, noise, "forward_noise")
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * np.asarray(z0) + math.sqrt(1.0 - ab) * np.asarray(noise)


# -- rectified flow ------------------------------------------------------------


def rf_interpolate(z0: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    _check_shapes(z0, eps, "rf_interpolate")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    return (1.0 - t) * np.asarray(z0) + t * np.asarray(eps)


def rf_velocity_target(z0: np.ndarray, eps: np.ndarray) -> np.ndarray:
    _check_shapes(z0, eps, "rf_velocity_target")
    return np.asarray(eps) - np.asarray(z0)


def rf_timesteps(steps: int) -> np.ndarray:
    if steps < 1:
        raise ValueError("need at least one step")
    return np.linspace(1.0, 0.0, steps + 1)


def euler_sample(
    velocity: Callable[[np.ndarray, float], np.ndarray],
    z1: np.ndarray,
    steps: int,
    clean: Optional[np.ndarray] = None,
    frame_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Integrate dz/dt = velocity(z, t) from t = 1 down to t = 0.

    When ``frame_mask`` is given (1 = generate, 0 = clean along axis 0), the
    clean frames are reset to ``clean`` after every step.
    """
    ts = rf_timesteps(steps)
    z = np.array(z1, np.float64)
    keep = None
    if frame_mask is not None:
        keep = np.asarray(frame_mask) == 0
        z[keep] = clean[keep]
    for t, t_next in zip(ts[:-1], ts[1:]):
        z = z + (t_next - t) * velocity(z, t)
        if keep is not None:
            z[keep] = clean[keep]
    return z


# -- guidance and masking --------------------------------------------------


def cfg_combine(pred_cond, pred_uncond, scale: float):
    _check_shapes(pred_cond, pred_uncond, "cfg_combine")
    return pred_uncond + scale * (pred_cond - pred_uncond)


def first_k_mask(frames: int, k: int) -> np.ndarray:
    """Per-frame flags: 0 for the first ``k`` clean conditioning frames, 1 for generated."""
    if not 0 <= k <= frames:
        raise ValueError(f"k={k} outside 0..{frames}")
    m = np.ones(frames, np.float64)
    m[:k] = 0.0
    return m


# -- losses ----------------------------------------------------------------


@dataclass(frozen=True)
class MaskedLossParams:
    gamma: float = 2.0

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError("gamma must be finite and >= 0")


@dataclass(frozen=True)
class SemLossParams:
    alpha: float = 1e-6
    beta: float = 1.0

    def __post_init__(self):
        for v in (self.alpha, self.beta):
            if not (math.isfinite(v) and v >= 0):
                raise ValueError("loss weights must be finite and >= 0")


def _frame_weights(e: np.ndarray, frame_mask: Optional[np.ndarray]) -> np.ndarray:
    if frame_mask is None:
        return np.ones_like(e)
    fm = np.asarray(frame_mask, np.float64)
    if fm.shape != (e.shape[0],):
        raise ValueError("frame_mask must have one entry per frame")
    return np.broadcast_to(fm.reshape(-1, *([1] * (e.ndim - 1))), e.shape)


def masked_diffusion_loss(
    e: np.ndarray,
    mask: np.ndarray,
    params: MaskedLossParams = MaskedLossParams(),
    frame_mask: Optional[np.ndarray] = None,
) -> tuple[float, np.ndarray]:
    """Mean of e^2 + gamma * (M * e)^2 over the elements of generated frames.

    ``mask`` broadcasts against ``e`` (e.g. (f, 1, h, w) against (f, c, h, w)).
    Frames flagged 0 in ``frame_mask`` contribute nothing and are excluded
    from the element count.
    """
    e = np.asarray(e, np.float64)
    m = np.asarray(mask, np.float64)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask must be binary")
    try:
        m = np.broadcast_to(m, e.shape)
    except ValueError:
        raise ValueError(f"mask shape {np.shape(mask)} does not broadcast to {e.shape}") from None
    w = _frame_weights(e, frame_mask)
    n = int(np.count_nonzero(w))
    weight = (1.0 + params.gamma * m) * w
    value = _mean(weight * e * e, n)
    grad = 2.0 * e * weight / n if n else np.zeros_like(e)
    return value, grad


def mse(e: np.ndarray) -> float:
    return _mean(np.square(np.asarray(e, np.float64)))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, np.float64)
    x = x - x.max(axis=-1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood; class axis is last."""
    logits = np.asarray(logits, np.float64)
    targets = np.asarray(targets)
    n_cls = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise ValueError("targets must match logits without the class axis")
    if targets.size and (targets.min() < 0 or targets.max() >= n_cls):
        raise ValueError("target label outside the class range")
    flat = logits.reshape(-1, n_cls)
    t = targets.reshape(-1).astype(np.int64)
    lsm = log_softmax(flat)
    n = t.size
    value = -_mean(lsm[np.arange(n), t])
    grad = np.exp(lsm)
    grad[np.arange(n), t] -= 1.0
    return value, (grad / n).reshape(logits.shape)


def kl_standard_normal(mu: np.ndarray, logvar: np.ndarray) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Mean over elements of KL(N(mu, exp(logvar)) || N(0, 1))."""
    _check_shapes(mu, logvar, "kl_standard_normal")
    mu = np.asarray(mu, np.float64)
    logvar = np.asarray(logvar, np.float64)
    n = mu.size
    var = np.exp(logvar)
    value = _mean(0.5 * (mu * mu + var - 1.0 - logvar))
    return value, (mu / n, 0.5 * (var - 1.0) / n)


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Jaccard-loss increments along errors sorted in decreasing order."""
    gt = np.asarray(gt_sorted, np.float64)
    gts = gt.sum()
    intersection = gts - np.cumsum(gt)
    union = gts + np.cumsum(1.0 - gt)
    jaccard = 1.0 - intersection / union
    if gt.size > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(
    probs: np.ndarray, targets: np.ndarray, validate: bool = True
) -> tuple[float, np.ndarray]:
    """Lovasz-softmax over classes present in ``targets``; class axis is last.

    Returns 0 with a zero gradient when no pixels are given.
    """
    probs = np.asarray(probs, np.float64)
    targets = np.asarray(targets)
    n_cls = probs.shape[-1]
    if probs.shape[:-1] != targets.shape:
        raise ValueError("targets must match probs without the class axis")
    if validate and probs.size and np.max(np.abs(probs.sum(axis=-1) - 1.0)) > 1e-6:
        raise ValueError("probability rows must sum to 1")
    flat = probs.reshape(-1, n_cls)
    lbl = targets.reshape(-1)
    grad = np.zeros_like(flat)
    losses = []
    for c in range(n_cls):
        fg = (lbl == c).astype(np.float64)
        if not fg.any():
            continue
        signed = fg - flat[:, c]  # err = |signed|; sign says which way p moves it
        errors = np.abs(signed)
        # stable sort keeps ties deterministic
        perm = np.argsort(-errors, kind="stable")
        g = lovasz_grad(fg[perm])
        losses.append(math.fsum(errors[perm] * g))
        d_err = np.empty_like(errors)
        d_err[perm] = g
        grad[:, c] += -np.sign(signed) * d_err
    if not losses:
        return 0.0, grad.reshape(probs.shape)
    k = len(losses)
    return math.fsum(losses) / k, (grad / k).reshape(probs.shape)


def semantic_loss(
    logits: np.ndarray,
    targets: np.ndarray,
    mu: np.ndarray,
    logvar: np.ndarray,
    params: SemLossParams = SemLossParams(),
) -> float:
    """CE + alpha * KL + beta * Lovasz for a 3D-semantics autoencoder."""
    ce, _ = cross_entropy(logits, targets)
    kl, _ = kl_standard_normal(mu, logvar)
    lv, _ = lovasz_softmax(softmax(logits), targets)
    return ce + params.alpha * kl + params.beta * lv

