"""Cosine noise schedule, forward noising, curriculum and reverse sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fieldgen import QuerySet, field_samples, sample_query_points
from .hypernet import HypernetParams, hypernet_forward, tokenize
from .mnf import NonFiniteError, SirenParams, direction_from_distance, mnf_eval
from .molio import AtomTypeVocab, Conformer


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    s: float
    beta: np.ndarray  # beta[i - 1] is beta_i, i = 1..T
    alpha_bar: np.ndarray  # alpha_bar[t], t = 0..T

    def to_dict(self) -> dict:
        return {"T": self.T, "s": self.s}


def cosine_schedule(T: int = 1000, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Cosine schedule: ``alpha_bar(t) = g(t) / g(0)``, ``g(t) = cos^2((t/T + s)/(1 + s) * pi/2)``.

    Betas are clipped at ``max_beta`` and ``alpha_bar`` is then recomputed as the
    running product of ``1 - beta`` so the two arrays agree exactly.
    """
    if T < 1 or s <= 0:
        raise ValueError("need T >= 1 and s > 0")
    t = np.arange(T + 1, dtype=np.float64)
    g = np.cos((t / T + s) / (1 + s) * np.pi / 2) ** 2
    ab = g / g[0]
    beta = np.clip(1.0 - ab[1:] / ab[:-1], 0.0, max_beta)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    return NoiseSchedule(T, s, beta, alpha_bar)


@dataclass(frozen=True, eq=False)
class NoisedField:
    values: np.ndarray
    t: int
    epsilon: np.ndarray
    seed: int | None = None


def forward_noise(clean, t: int, schedule: NoiseSchedule, seed=None, epsilon=None) -> NoisedField:
    """``sqrt(alpha_bar_t) * clean + sqrt(1 - alpha_bar_t) * eps``, eps i.i.d. N(0, 1)."""
    clean = np.asarray(getattr(clean, "values", clean), dtype=np.float64)
    if not 0 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [0, {schedule.T}]")
    if epsilon is None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        epsilon = rng.standard_normal(clean.shape)
    ab = schedule.alpha_bar[t]
    values = np.sqrt(ab) * clean + np.sqrt(1.0 - ab) * epsilon
    return NoisedField(values, t, epsilon, seed if isinstance(seed, (int, np.integer)) else None)


def curriculum_cap(epoch: int, T: int = 1000, warmup: int = 100, start: int = 10) -> int:
    """Largest timestep sampled at ``epoch`` (1-based).

    ``start`` for the first ``warmup`` epochs, then one more per epoch up to ``T``.
    """
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    if epoch <= warmup:
        return min(start, T)
    return min(epoch - warmup + start, T)


def _prediction(theta: SirenParams, Q: QuerySet, condition_on: str) -> np.ndarray:
    if theta.arch.head == "vector":
        F = mnf_eval(theta, Q)
        return F if condition_on == "direction" else np.linalg.norm(F, axis=-1)
    if condition_on == "direction":
        return direction_from_distance(theta, Q)
    return mnf_eval(theta, Q)


def conditioning_field(phi: HypernetParams, Q: QuerySet, retained: Conformer | None) -> np.ndarray:
    """Clean field of the retained substructure (all filler when ``None``)."""
    cfg = phi.config
    D, f, _ = field_samples(Q.points, retained, AtomTypeVocab(cfg.vocab), Q.grid.center, Q.grid.radius)
    return D if cfg.condition_on == "direction" else f


def reverse_diffusion(phi: HypernetParams, Q: QuerySet, field_t: np.ndarray, t_start: int, schedule: NoiseSchedule, rng, conditioning=None, trajectory=None) -> SirenParams:
    """Run the reverse loop from ``t_start`` down to 1 on fixed query points.

    Each step predicts a clean field from the current noisy one and re-noises
    that prediction to level ``t - 1`` with fresh Gaussian noise. Returns the
    parameters produced at ``t = 1`` (or at ``t_start`` when it is 0).
    """
    cfg = phi.config
    if cfg.conditioning_channel and conditioning is None:
        raise ValueError("this model needs a conditioning field")
    if not cfg.conditioning_channel:
        conditioning = None
    F_t = np.asarray(field_t, dtype=np.float64)
    theta = None
    for t in range(t_start, 0, -1):
        theta, _ = hypernet_forward(phi, tokenize(Q, F_t, conditioning), t)
        pred = _prediction(theta, Q, cfg.condition_on)
        if not np.isfinite(pred).all():
            raise NonFiniteError(f"non-finite field at reverse step t={t}")
        ab = schedule.alpha_bar[t - 1]
        F_t = np.sqrt(ab) * pred + np.sqrt(1.0 - ab) * rng.standard_normal(pred.shape)
        if trajectory is not None:
            trajectory.append({"t": t, "field_norm": float(np.linalg.norm(F_t) / np.sqrt(F_t.size)), "pred_norm": float(np.linalg.norm(pred) / np.sqrt(pred.size))})
    if theta is None:
        theta, _ = hypernet_forward(phi, tokenize(Q, F_t, conditioning), 0)
    return theta


def _field_shape(phi: HypernetParams, n: int):
    K = phi.config.K
    return (n, K, 3) if phi.config.condition_on == "direction" else (n, K)


def _with_meta(theta: SirenParams, phi: HypernetParams, **extra) -> SirenParams:
    meta = {"vocab": list(phi.config.vocab), "grid": phi.config.grid.to_dict(), **extra}
    return SirenParams(theta.arch, theta.flat, meta)


def generate(phi: HypernetParams, schedule: NoiseSchedule, seed=None, grid=None, trajectory=None) -> SirenParams:
    """Sample a new field from pure noise at ``t = T``."""
    rng = np.random.default_rng(seed)
    grid = grid or phi.config.grid
    Q = sample_query_points(grid, rng)
    F_T = rng.standard_normal(_field_shape(phi, len(Q)))
    cond = conditioning_field(phi, Q, None) if phi.config.conditioning_channel else None
    theta = reverse_diffusion(phi, Q, F_T, schedule.T, schedule, rng, cond, trajectory)
    return _with_meta(theta, phi, seed=seed, mode="generate")


def inpaint(phi: HypernetParams, schedule: NoiseSchedule, retained: Conformer | None, seed=None, grid=None, trajectory=None) -> SirenParams:
    """Complete a molecule around ``retained`` atoms held fixed as conditioning."""
    if not phi.config.conditioning_channel:
        raise ValueError("inpainting needs a model trained with a conditioning channel")
    rng = np.random.default_rng(seed)
    grid = grid or phi.config.grid
    Q = sample_query_points(grid, rng)
    cond = conditioning_field(phi, Q, retained)
    F_T = rng.standard_normal(_field_shape(phi, len(Q)))
    theta = reverse_diffusion(phi, Q, F_T, schedule.T, schedule, rng, cond, trajectory)
    return _with_meta(theta, phi, seed=seed, mode="inpaint")


def renoise_and_denoise(phi: HypernetParams, conformer: Conformer, t_start: int, schedule: NoiseSchedule, seed=None, grid=None) -> SirenParams:
    """Noise a known molecule's field to ``t_start`` and run the reverse loop back."""
    rng = np.random.default_rng(seed)
    grid = grid or phi.config.grid
    Q = sample_query_points(grid, rng)
    clean = conditioning_field(phi, Q, conformer)
    noised = forward_noise(clean, t_start, schedule, rng)
    cond = clean if phi.config.conditioning_channel else None
    theta = reverse_diffusion(phi, Q, noised.values, t_start, schedule, rng, cond)
    return _with_meta(theta, phi, seed=seed, mode="denoise", t_start=t_start)
