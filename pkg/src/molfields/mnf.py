"""Molecule neural fields: SIREN networks over 3D coordinates.

A field's parameters live in one flat vector. Layers are stored in order; for
each layer the weight matrix (out, in) in row-major order is followed by its
bias. The hypernetwork's weight heads emit exactly this layout.

Inputs are mapped to ``(q - center) / scale`` before the first layer. Every
sine layer computes ``sin(omega0 * (W h + b))`` and the output layer is
linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from . import store
from .fieldgen import GridSpec, distance_sample, sample_query_points
from .molio import AtomTypeVocab, Conformer
from .optim import Adam


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SirenArch:
    hidden: tuple[int, ...] = (64, 64, 64)
    channels: int = 1
    head: str = "distance"  # distance: K outputs; vector: 3K outputs
    omega0: float = 30.0
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0
    input_dim: int = 3

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.hidden:
            raise ValueError("a SIREN needs at least one hidden layer")
        if self.head not in ("distance", "vector"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.input_dim != 3:
            raise ValueError("neural fields take 3D coordinates")
        if self.channels < 1 or self.scale <= 0:
            raise ValueError("channels must be >= 1 and scale > 0")

    @property
    def out_dim(self) -> int:
        return self.channels if self.head == "distance" else 3 * self.channels

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden, self.out_dim]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def tensor_sizes(self) -> list[int]:
        """Sizes of each weight and bias tensor in flat-layout order."""
        sizes = []
        for out, inp in self.layer_shapes:
            sizes += [out * inp, out]
        return sizes

    @property
    def param_count(self) -> int:
        return sum(self.tensor_sizes)

    def to_dict(self) -> dict:
        return {
            "hidden": list(self.hidden),
            "channels": self.channels,
            "head": self.head,
            "omega0": self.omega0,
            "center": list(self.center),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SirenArch":
        return cls(
            hidden=tuple(d["hidden"]),
            channels=int(d["channels"]),
            head=d["head"],
            omega0=float(d["omega0"]),
            center=tuple(d["center"]),
            scale=float(d["scale"]),
        )


@dataclass(frozen=True, eq=False)
class SirenParams:
    arch: SirenArch
    flat: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        flat = np.asarray(self.flat, dtype=np.float64).ravel()
        if flat.size != self.arch.param_count:
            raise ValueError(f"expected {self.arch.param_count} parameters, got {flat.size}")
        object.__setattr__(self, "flat", flat)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return unflatten(self.arch, self.flat)


def unflatten(arch: SirenArch, flat):
    """Split a flat vector (array or Tensor) into per-layer ``(W, b)`` views."""
    is_tensor = isinstance(flat, ad.Tensor)
    out, offset = [], 0
    for o, i in arch.layer_shapes:
        w = flat[offset:offset + o * i]
        offset += o * i
        b = flat[offset:offset + o]
        offset += o
        out.append((ad.reshape(w, (o, i)) if is_tensor else w.reshape(o, i), b))
    return out


def siren_init(arch: SirenArch, seed=None) -> SirenParams:
    """SIREN initialisation.

    Weights: ``U(-1/fan_in, 1/fan_in)`` in the first layer and
    ``U(-sqrt(6/fan_in)/omega0, +...)`` deeper. Biases: ``U(-1/sqrt(fan_in), +...)``.
    Nonzero biases matter: with zero biases every layer is an odd function of
    the normalised input, so the network starts odd about the grid center.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    parts = []
    for layer, (o, i) in enumerate(arch.layer_shapes):
        bound = 1.0 / i if layer == 0 else np.sqrt(6.0 / i) / arch.omega0
        parts.append(rng.uniform(-bound, bound, size=o * i))
        parts.append(rng.uniform(-1.0, 1.0, size=o) / np.sqrt(i))
    return SirenParams(arch, np.concatenate(parts))


def _check(theta: SirenParams):
    if not np.isfinite(theta.flat).all():
        raise NonFiniteError("neural field parameters contain non-finite values")


def _normalise(arch: SirenArch, points):
    return (np.asarray(points, dtype=float).reshape(-1, 3) - np.array(arch.center)) / arch.scale


def _forward(theta: SirenParams, points):
    arch = theta.arch
    h = _normalise(arch, points)
    layers = theta.layers()
    cache = []
    for W, b in layers[:-1]:
        z = arch.omega0 * (h @ W.T + b)
        cache.append((h, z))
        h = np.sin(z)
    W, b = layers[-1]
    return h @ W.T + b, cache, layers


def mnf_eval(theta: SirenParams, points) -> np.ndarray:
    """Field outputs at ``points``: (N, K) distances or (N, K, 3) vectors."""
    _check(theta)
    pts = points.points if hasattr(points, "points") else points
    out, _, _ = _forward(theta, pts)
    if theta.arch.head == "vector":
        return out.reshape(len(out), theta.arch.channels, 3)
    return out


def mnf_spatial_grad(theta: SirenParams, points, channel: int | None = None) -> np.ndarray:
    """Exact d f_k / d q by one reverse pass per output channel.

    Returns (N, K, 3), or (N, 3) when ``channel`` is given. Distance head only.
    """
    _check(theta)
    arch = theta.arch
    if arch.head != "distance":
        raise ValueError("spatial gradients are defined for the distance head")
    pts = points.points if hasattr(points, "points") else points
    out, cache, layers = _forward(theta, pts)
    n = len(out)
    chans = range(arch.channels) if channel is None else [channel]
    W_last = layers[-1][0]
    # seed: one backward sweep per channel, batched along a leading axis
    g = np.stack([np.broadcast_to(W_last[k], (n, W_last.shape[1])) for k in chans])
    for (W, _), (h_in, z) in zip(reversed(layers[:-1]), reversed(cache)):
        g = (g * (arch.omega0 * np.cos(z))) @ W
    g = g / arch.scale  # (C, N, 3)
    g = np.transpose(g, (1, 0, 2))
    return g[:, 0] if channel is not None else g


def direction_from_distance(theta: SirenParams, points, channel: int | None = None) -> np.ndarray:
    """Direction field ``F = -f * grad f`` recovered from the distance head."""
    f = mnf_eval(theta, points)
    grad = mnf_spatial_grad(theta, points, channel)
    if channel is not None:
        return -f[:, channel, None] * grad
    return -f[..., None] * grad


def siren_graph(arch: SirenArch, flat: ad.Tensor, points) -> ad.Tensor:
    """Forward pass inside the autodiff graph, differentiable in ``flat``."""
    h = ad.Tensor(_normalise(arch, points))
    layers = unflatten(arch, flat)
    for W, b in layers[:-1]:
        h = ad.sin((h @ ad.transpose(W, (1, 0)) + b) * arch.omega0)
    W, b = layers[-1]
    return h @ ad.transpose(W, (1, 0)) + b


class NeuralField:
    """Adapter giving a SIREN the ``evaluate(points, channel)`` field interface."""

    def __init__(self, theta: SirenParams):
        self.theta = theta

    @property
    def K(self) -> int:
        return self.theta.arch.channels

    def evaluate(self, points, channel: int | None = None):
        theta = self.theta
        if theta.arch.head == "vector":
            F = mnf_eval(theta, points)
            f = np.linalg.norm(F, axis=-1)
        else:
            f = mnf_eval(theta, points)
            if channel is not None:
                return f[:, channel], -f[:, channel, None] * mnf_spatial_grad(theta, points, channel)
            F = -f[..., None] * mnf_spatial_grad(theta, points)
        if channel is None:
            return f, F
        return f[:, channel], F[:, channel]


def fit_mnf(
    conformer: Conformer,
    arch: SirenArch | None = None,
    steps: int = 2000,
    seed=0,
    vocab: AtomTypeVocab | None = None,
    grid: GridSpec | None = None,
    lr: float = 1e-4,
    return_history: bool = False,
    lr_decay: str = "none",
):
    """Fit a distance-head SIREN directly to one conformer's distance field.

    Each step draws fresh query points from ``grid`` and takes one Adam step
    on the mean absolute error over all points and channels.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if lr_decay not in ("none", "cosine"):
        raise ValueError(f"unknown lr_decay {lr_decay!r}")
    vocab = vocab or AtomTypeVocab.from_conformers([conformer])
    grid = grid or GridSpec.around(conformer, cells=4, per_cell=16)
    if arch is None:
        arch = SirenArch(channels=vocab.K, center=grid.center, scale=grid.radius)
    if arch.channels != vocab.K or arch.head != "distance":
        raise ValueError("fit_mnf needs a distance-head architecture with one channel per element")
    rng = np.random.default_rng(seed)
    theta = siren_init(arch, rng)
    params = {"theta": theta.flat.copy()}
    opt = Adam(params, lr=lr)
    history = []
    for step in range(steps):
        Q = sample_query_points(grid, rng)
        target = distance_sample(Q, conformer, vocab).values
        flat = ad.parameter(params["theta"])
        pred = siren_graph(arch, flat, Q.points)
        loss = ad.mean(ad.tabs(pred - target))
        (g,) = ad.grad(loss, [flat])
        value = float(loss.data)
        if not np.isfinite(value) or not np.isfinite(g).all():
            raise NonFiniteError(f"fit diverged at step {step}")
        history.append(value)
        scale = 0.5 * (1 + np.cos(np.pi * step / steps)) if lr_decay == "cosine" else 1.0
        opt.step({"theta": g}, lr * scale)
    fitted = SirenParams(arch, params["theta"], {"vocab": list(vocab.symbols), "grid": grid.to_dict()})
    return (fitted, history) if return_history else fitted


def save_theta(path, theta: SirenParams):
    """Store θ with its architecture and metadata (vocabulary, grid)."""
    store.save(path, "theta", {"flat": theta.flat}, {"arch": theta.arch.to_dict(), "meta": theta.meta})


def load_theta(path) -> SirenParams:
    _, arrays, header = store.load(path, "theta")
    return SirenParams(SirenArch.from_dict(header["arch"]), arrays["flat"], header["meta"])
