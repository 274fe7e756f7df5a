"""Noise schedules, the forward corruption process, and offline training.

The generative model is a T-step Gaussian Markov chain: the forward pass
mixes data with noise at a prescribed per-step variance, and a trained
noise predictor reverses it step by step. Schedules store every derived
constant so downstream code never recomputes products of alphas.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .channel import FasGeometry


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step diffusion constants, 1-indexed via the accessor methods.

    Arrays are stored with index t-1 for t in 1..t_max. ``sigma_ve`` is the
    variance-exploding noise level sqrt((1 - abar_t)/abar_t) used by the
    posterior sampler; ``beta_tilde`` is the reverse-step variance, zero at
    t=1 since abar_0 is defined as 1.
    """

    t_max: int
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)
    sigma_ve: np.ndarray = field(init=False)
    beta_tilde: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.shape != (self.t_max,):
            raise ValueError("beta must have length t_max")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("beta values must lie in (0, 1)")
        if np.any(np.diff(beta) < 0):
            raise ValueError("beta must be nondecreasing")
        alpha = 1.0 - beta
        abar = np.cumprod(alpha)
        abar_prev = np.concatenate([[1.0], abar[:-1]])
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", abar)
        object.__setattr__(self, "sigma_ve", np.sqrt((1.0 - abar) / abar))
        object.__setattr__(self, "beta_tilde", (1.0 - abar_prev) / (1.0 - abar) * beta)

    def _check_t(self, t: int):
        if not 1 <= t <= self.t_max:
            raise ValueError(f"t={t} outside 1..{self.t_max}")

    def beta_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative alpha product, with abar_0 := 1."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bar[t - 1])

    def sigma_at(self, t: int) -> float:
        """Variance-exploding noise level, with sigma_0 := 0."""
        if t == 0:
            return 0.0
        self._check_t(t)
        return float(self.sigma_ve[t - 1])

    def beta_tilde_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.beta_tilde[t - 1])


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 64
    epochs: int = 500
    learning_rate: float = 1e-4
    seed: int = 0
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def make_schedule(t_max: int, beta_1: float = 1e-4, beta_t: float = 0.02) -> NoiseSchedule:
    """Linear schedule interpolating beta inclusively from beta_1 to beta_t."""
    if t_max < 2:
        raise ValueError("t_max must be >= 2")
    if not 0 < beta_1 <= beta_t < 1:
        raise ValueError("need 0 < beta_1 <= beta_t < 1")
    steps = np.arange(t_max, dtype=np.float64)
    beta = beta_1 + steps * (beta_t - beta_1) / (t_max - 1)
    return NoiseSchedule(t_max=t_max, beta=beta)


def forward_sample(h0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Jump directly to diffusion step t: sqrt(abar_t) h0 + sqrt(1-abar_t) eps."""
    h0 = np.asarray(h0)
    eps = np.asarray(eps)
    if h0.shape != eps.shape:
        raise ValueError("h0 and eps must share a shape")
    abar = sched.alpha_bar_at(t)
    if t < 1:
        raise ValueError("t must be >= 1")
    return np.sqrt(abar) * h0 + np.sqrt(1.0 - abar) * eps


def ancestral_step(h_t: np.ndarray, t: int, eps_hat: np.ndarray, z: np.ndarray | None,
                   sched: NoiseSchedule) -> np.ndarray:
    """One reverse step t -> t-1 given the predicted noise.

    ``z`` is the injected standard-normal sample; it is ignored at t=1
    where the reverse variance is zero.
    """
    h_t = np.asarray(h_t)
    eps_hat = np.asarray(eps_hat)
    if h_t.shape != eps_hat.shape:
        raise ValueError("h_t and eps_hat must share a shape")
    alpha = sched.alpha_at(t)
    abar = sched.alpha_bar_at(t)
    mean = (h_t - (1.0 - alpha) / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    if t == 1 or z is None:
        return mean
    z = np.asarray(z)
    if z.shape != h_t.shape:
        raise ValueError("z must match the state shape")
    return mean + np.sqrt(sched.beta_tilde_at(t)) * z


def ancestral_sample(denoise_fn, sched: NoiseSchedule, shape: tuple,
                     rng: np.random.Generator) -> np.ndarray:
    """Generate samples by running the full reverse chain from pure noise.

    ``denoise_fn(h, t)`` must return the predicted noise for an array of
    the given shape at integer step t.
    """
    h = rng.standard_normal(shape)
    for t in range(sched.t_max, 0, -1):
        eps_hat = denoise_fn(h, t)
        z = rng.standard_normal(shape) if t > 1 else None
        h = ancestral_step(h, t, eps_hat, z, sched)
        if not np.all(np.isfinite(h)):
            raise RuntimeError(f"non-finite state during ancestral sampling at t={t}")
    return h


def train(dataset: np.ndarray, model, geom: FasGeometry, sched: NoiseSchedule,
          cfg: TrainConfig, checkpoint_dir: str | None = None,
          checkpoint_every: int = 0, log_fn=None) -> list[float]:
    """Fit the noise predictor on clean channel vectors.

    Each step draws a minibatch, a per-item step index uniform on 1..T and
    a per-item standard-normal noise tensor, forms the noisy input by the
    direct forward formula, and minimizes the mean squared error between
    drawn and predicted noise (mean over batch and coordinates). Returns
    the per-epoch mean loss. Deterministic for a fixed cfg.seed.
    """
    import torch

    from . import denoiser as dn

    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 2 or dataset.shape[0] < 1:
        raise ValueError("dataset must be a nonempty (count, 2*N) array")
    count = dataset.shape[0]
    if dataset.shape[1] != 2 * geom.num_ports:
        raise ValueError("dataset record length does not match geometry")

    images = dn.vec_to_image(dataset, geom)  # (count, 2, n1, n2)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    sqrt_abar = np.sqrt(sched.alpha_bar)
    sqrt_1m = np.sqrt(1.0 - sched.alpha_bar)

    model.train()
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(count)
        epoch_losses = []
        for start in range(0, count, cfg.batch):
            idx = order[start:start + cfg.batch]
            x0 = images[idx]
            t = rng.integers(1, sched.t_max + 1, size=len(idx))
            eps = rng.standard_normal(x0.shape)
            x_t = sqrt_abar[t - 1, None, None, None] * x0 + sqrt_1m[t - 1, None, None, None] * eps

            x_t_th = torch.from_numpy(x_t.astype(np.float32))
            eps_th = torch.from_numpy(eps.astype(np.float32))
            t_th = torch.from_numpy(t.astype(np.int64))

            padded, pads = dn.pad_input(x_t_th)
            eps_hat = dn.crop_output(model(padded, t_th), pads)
            loss = torch.mean((eps_th - eps_hat) ** 2)

            if not torch.isfinite(loss):
                if checkpoint_dir is not None:
                    dn.save_checkpoint(f"{checkpoint_dir}/diverged.ckpt", model, sched)
                raise RuntimeError(f"non-finite training loss at epoch {epoch}")

            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            epoch_losses.append(float(loss.item()))
        history.append(float(np.mean(epoch_losses)))
        if log_fn is not None:
            log_fn(epoch, history[-1])
        if checkpoint_dir is not None and checkpoint_every > 0 and (epoch + 1) % checkpoint_every == 0:
            dn.save_checkpoint(f"{checkpoint_dir}/epoch{epoch + 1:05d}.ckpt", model, sched)
    model.eval()
    return history


def save_loss_history(history: list[float], path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(history):
            writer.writerow([i + 1, f"{loss:.10g}"])
