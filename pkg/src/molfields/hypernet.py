"""Transformer hypernetwork mapping a sampled (noised) field to SIREN weights.

Tokens are query points: a learned two-layer encoding of the normalised
coordinate concatenated with the field value there (and, for inpainting
models, the clean conditioning field). The timestep's sinusoidal embedding
is added to every embedded token. A stack of pre-norm attention + MLP blocks
follows, the final tokens are mean-pooled, and one linear head per SIREN
tensor emits the flat parameter vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .fieldgen import DirectionSample, DistanceSample, GridSpec, QuerySet
from .kernels import segment_mean
from .mnf import NonFiniteError, SirenArch, SirenParams, siren_init


@dataclass(frozen=True)
class HypernetConfig:
    grid: GridSpec
    target_arch: SirenArch
    vocab: tuple[str, ...]
    layers: int = 4
    model_dim: int = 64
    heads: int = 4
    pos_enc_dim: int = 32
    mlp_ratio: int = 4
    dropout: float = 0.1
    condition_on: str = "direction"
    conditioning_channel: bool = False
    tap_layer: int | None = None
    head_init_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "vocab", tuple(self.vocab))
        if self.layers < 1:
            raise ValueError("need at least one transformer layer")
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if self.model_dim % 2:
            raise ValueError("model_dim must be even for the timestep embedding")
        if self.condition_on not in ("direction", "distance"):
            raise ValueError(f"condition_on must be direction or distance, got {self.condition_on!r}")
        if self.target_arch.channels != len(self.vocab):
            raise ValueError("target architecture channel count must match the vocabulary")

    @property
    def K(self) -> int:
        return len(self.vocab)

    @property
    def field_dim(self) -> int:
        return 3 * self.K if self.condition_on == "direction" else self.K

    @property
    def token_dim(self) -> int:
        return self.pos_enc_dim + self.field_dim * (2 if self.conditioning_channel else 1)

    @property
    def tap(self) -> int:
        """1-based index of the block whose output serves as features."""
        return self.tap_layer if self.tap_layer is not None else math.ceil(self.layers / 2)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "target_arch": self.target_arch.to_dict(),
            "vocab": list(self.vocab),
            "layers": self.layers,
            "model_dim": self.model_dim,
            "heads": self.heads,
            "pos_enc_dim": self.pos_enc_dim,
            "mlp_ratio": self.mlp_ratio,
            "dropout": self.dropout,
            "condition_on": self.condition_on,
            "conditioning_channel": self.conditioning_channel,
            "tap_layer": self.tap_layer,
            "head_init_scale": self.head_init_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HypernetConfig":
        d = dict(d)
        d["grid"] = GridSpec.from_dict(d["grid"])
        d["target_arch"] = SirenArch.from_dict(d["target_arch"])
        return cls(**d)


# presets; the full-scale one is for reference, not desk runs
PRESETS = {
    "desk": {"layers": 4, "model_dim": 64, "heads": 4, "pos_enc_dim": 32, "dropout": 0.1},
    "full": {"layers": 26, "model_dim": 1280, "heads": 16, "pos_enc_dim": 128, "dropout": 0.1},
}


@dataclass(eq=False)
class HypernetParams:
    config: HypernetConfig
    tensors: dict = dc_field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    @property
    def size(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def with_flat(self, flat) -> "HypernetParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.size:
            raise ValueError(f"expected {self.size} values, got {flat.size}")
        out, offset = {}, 0
        for k, v in self.tensors.items():
            out[k] = flat[offset:offset + v.size].reshape(v.shape).copy()
            offset += v.size
        return HypernetParams(self.config, out)

    def copy(self) -> "HypernetParams":
        return HypernetParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def _linear_init(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)


def hypernet_init(config: HypernetConfig, seed=None) -> HypernetParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d, pe = config.model_dim, config.pos_enc_dim
    t = {}
    t["pe.W1"], t["pe.b1"] = _linear_init(rng, 3, pe)
    t["pe.W2"], t["pe.b2"] = _linear_init(rng, pe, pe)
    t["embed.W"], t["embed.b"] = _linear_init(rng, config.token_dim, d)
    for l in range(config.layers):
        p = f"blocks.{l}."
        t[p + "ln1.g"], t[p + "ln1.b"] = np.ones(d), np.zeros(d)
        t[p + "attn.Wqkv"], t[p + "attn.bqkv"] = _linear_init(rng, d, 3 * d)
        t[p + "attn.Wo"], t[p + "attn.bo"] = _linear_init(rng, d, d)
        t[p + "ln2.g"], t[p + "ln2.b"] = np.ones(d), np.zeros(d)
        t[p + "mlp.W1"], t[p + "mlp.b1"] = _linear_init(rng, d, config.mlp_ratio * d)
        t[p + "mlp.W2"], t[p + "mlp.b2"] = _linear_init(rng, config.mlp_ratio * d, d)
    t["ln_f.g"], t["ln_f.b"] = np.ones(d), np.zeros(d)
    # heads start at a SIREN initialisation (bias) plus a small input-dependent part
    theta0 = siren_init(config.target_arch, rng)
    arch = config.target_arch
    offset = 0
    for i, size in enumerate(arch.tensor_sizes):
        layer = i // 2
        o, inp = arch.layer_shapes[layer]
        bound = 1.0 / inp if layer == 0 else np.sqrt(6.0 / inp) / arch.omega0
        std = config.head_init_scale * bound
        t[f"head.{i}.W"] = rng.normal(0.0, std, size=(d, size))
        t[f"head.{i}.b"] = theta0.flat[offset:offset + size].copy()
        offset += size
    return HypernetParams(config, t)


@dataclass(frozen=True, eq=False)
class TokenBatch:
    """Per-query-point inputs before the learned coordinate encoding."""

    coords: np.ndarray  # (N, 3) normalised coordinates
    features: np.ndarray  # (N, field_dim [* 2])
    cell_index: np.ndarray

    def __len__(self) -> int:
        return len(self.coords)

    def permuted(self, perm) -> "TokenBatch":
        return TokenBatch(self.coords[perm], self.features[perm], self.cell_index[perm])


def _field_values(field):
    if isinstance(field, (DirectionSample, DistanceSample)):
        return field.values
    return np.asarray(field, dtype=np.float64)


def tokenize(Q: QuerySet, field, conditioning=None) -> TokenBatch:
    """Build hypernetwork tokens from query points and a field sampled at them.

    ``field`` and ``conditioning`` are direction (N, K, 3) or distance (N, K)
    samples, as arrays or sample objects.
    """
    values = _field_values(field)
    n = len(Q)
    if values.shape[0] != n:
        raise ValueError(f"field has {values.shape[0]} rows but there are {n} query points")
    feats = [values.reshape(n, -1)]
    if conditioning is not None:
        cond = _field_values(conditioning)
        if cond.shape != values.shape:
            raise ValueError(f"conditioning shape {cond.shape} does not match field shape {values.shape}")
        feats.append(cond.reshape(n, -1))
    coords = (Q.points - np.array(Q.grid.center)) / Q.grid.radius
    return TokenBatch(coords, np.concatenate(feats, axis=1), np.asarray(Q.cell_index))


def timestep_embedding(t, dim: int) -> np.ndarray:
    """``[sin(t w_i)..., cos(t w_i)...]`` with ``w_i = 10000**(-2i/dim)``."""
    if dim % 2:
        raise ValueError("dim must be even")
    freqs = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    arg = float(t) * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)])


def _graph(config: HypernetConfig, P: dict, tokens: TokenBatch, t, rng):
    """Forward pass over autodiff tensors ``P``; returns (theta, activations)."""
    d, H = config.model_dim, config.heads
    dh = d // H
    n = len(tokens)
    expected = config.field_dim * (2 if config.conditioning_channel else 1)
    if tokens.features.shape[1] != expected:
        raise ValueError(f"token feature width {tokens.features.shape[1]} does not match config ({expected})")

    coords = ad.Tensor(tokens.coords)
    pe = ad.gelu(coords @ P["pe.W1"] + P["pe.b1"]) @ P["pe.W2"] + P["pe.b2"]
    x = ad.concat([pe, ad.Tensor(tokens.features)], axis=1)
    x = x @ P["embed.W"] + P["embed.b"] + timestep_embedding(t, d)

    activations = []
    scale = 1.0 / np.sqrt(dh)
    for l in range(config.layers):
        p = f"blocks.{l}."
        h = ad.layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])
        qkv = h @ P[p + "attn.Wqkv"] + P[p + "attn.bqkv"]
        qkv = ad.transpose(ad.reshape(qkv, (n, 3, H, dh)), (1, 2, 0, 3))  # (3, H, N, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = ad.softmax((q @ ad.transpose(k, (0, 2, 1))) * scale, axis=-1)
        o = ad.reshape(ad.transpose(att @ v, (1, 0, 2)), (n, d))
        o = o @ P[p + "attn.Wo"] + P[p + "attn.bo"]
        x = x + ad.dropout(o, config.dropout, rng)
        h = ad.layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
        m = ad.gelu(h @ P[p + "mlp.W1"] + P[p + "mlp.b1"]) @ P[p + "mlp.W2"] + P[p + "mlp.b2"]
        x = x + ad.dropout(m, config.dropout, rng)
        activations.append(x)

    # 1/sqrt(d) readout keeps an Adam step on a head matrix comparable to one on its bias
    pooled = ad.mean(ad.layer_norm(x, P["ln_f.g"], P["ln_f.b"]), axis=0) / np.sqrt(d)
    n_heads = len(config.target_arch.tensor_sizes)
    theta = ad.concat([pooled @ P[f"head.{i}.W"] + P[f"head.{i}.b"] for i in range(n_heads)], axis=0)
    return theta, activations


def token_matrix(phi: HypernetParams, tokens: TokenBatch) -> np.ndarray:
    """Raw token matrix ``posenc(q) | field | [conditioning]`` of width ``config.token_dim``."""
    P = phi.tensors
    h = tokens.coords @ P["pe.W1"] + P["pe.b1"]
    pe = ad.gelu(ad.Tensor(h)).data @ P["pe.W2"] + P["pe.b2"]
    return np.concatenate([pe, tokens.features], axis=1)


def hypernet_forward(phi: HypernetParams, tokens: TokenBatch, t, rng=None):
    """Emit SIREN parameters for one sampled field.

    Dropout is active only when ``rng`` is given.

    Returns:
        ``(theta, activations)`` where activations holds each block's output
        token matrix (N, model_dim).
    """
    P = {k: ad.Tensor(v) for k, v in phi.tensors.items()}
    theta, acts = _graph(phi.config, P, tokens, t, rng)
    if not np.isfinite(theta.data).all():
        raise NonFiniteError("hypernetwork produced non-finite parameters")
    return SirenParams(phi.config.target_arch, theta.data), [a.data for a in acts]


def _block_of(name: str) -> str:
    parts = name.split(".")
    return f"block {parts[1]}" if parts[0] == "blocks" else parts[0]


def hypernet_loss_and_grad(phi: HypernetParams, tokens: TokenBatch, t, loss_fn, rng=None):
    """Loss value and per-tensor gradients of ``loss_fn(theta_tensor)``.

    ``loss_fn`` receives the generated parameter vector as an autodiff tensor
    and must return a scalar tensor, e.g. by evaluating the SIREN on the query
    points with :func:`molfields.mnf.siren_graph`.
    """
    P = {k: ad.parameter(v, k) for k, v in phi.tensors.items()}
    theta, _ = _graph(phi.config, P, tokens, t, rng)
    loss = loss_fn(theta)
    names = list(P)
    grads = ad.grad(loss, [P[k] for k in names])
    for k, g in zip(names, grads):
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in {_block_of(k)} ({k})")
    return float(loss.data), dict(zip(names, grads))


def hypernet_grad(phi: HypernetParams, tokens: TokenBatch, t, loss_fn, rng=None) -> np.ndarray:
    """Flat gradient over all of phi, in ``phi.flat`` order."""
    _, grads = hypernet_loss_and_grad(phi, tokens, t, loss_fn, rng)
    return np.concatenate([grads[k].ravel() for k in phi.tensors])


def extract_central_activation(activations, cell_index, n_cells: int, tap: int | None = None):
    """Tap one block's token activations.

    Args:
        activations: per-block (N, d) arrays from :func:`hypernet_forward`.
        cell_index: grid cell of each token.
        n_cells: number of grid cells.
        tap: 1-based block index; defaults to ``ceil(L / 2)``.

    Returns:
        ``(per_token, per_cell, global_feature)``.
    """
    tap = math.ceil(len(activations) / 2) if tap is None else tap
    if not 1 <= tap <= len(activations):
        raise ValueError(f"tap layer {tap} outside 1..{len(activations)}")
    per_token = np.asarray(activations[tap - 1])
    per_cell = segment_mean(per_token, cell_index, n_cells)
    return per_token, per_cell, per_token.mean(axis=0)
