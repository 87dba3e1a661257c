"""Training objectives and the hypernetwork training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from . import store
from .diffusion import NoiseSchedule, cosine_schedule, curriculum_cap, forward_noise
from .fieldgen import BIN_NAMES, DirectionSample, DistanceSample, GridSpec, assign_distance_bins, field_samples, sample_query_points
from .hypernet import HypernetConfig, HypernetParams, hypernet_init, hypernet_loss_and_grad, tokenize
from .mnf import NonFiniteError, SirenArch, siren_graph
from .molio import AtomTypeVocab, Conformer, bounding_radius
from .optim import Adam, make_optimizer

LOG_COLUMNS = ("step", "epoch", "t_cap", "total") + BIN_NAMES


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


def _values(x):
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def loss_dist(pred, truth) -> float:
    """Mean over points of the channel-summed absolute distance error."""
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    return float(np.abs(p - t).sum(axis=1).mean())


def loss_vec(pred, truth) -> float:
    """Mean over points of the channel-summed L1 norm of the vector error."""
    t = _values(truth)
    p = _values(pred).reshape(t.shape)
    return float(np.abs(p - t).reshape(len(t), -1).sum(axis=1).mean())


def point_errors(pred, truth) -> np.ndarray:
    p, t = _values(pred), _values(truth)
    p = p.reshape(t.shape)
    return np.abs(p - t).reshape(len(t), -1).sum(axis=1)


def stratified_loss(pred, truth, bins) -> dict:
    """Loss restricted to each distance bin; NaN marks an empty bin."""
    err = point_errors(pred, truth)
    out = {}
    for b, name in enumerate(BIN_NAMES):
        mask = bins == b
        out[name] = float(err[mask].mean()) if mask.any() else math.nan
    return out


@dataclass
class TrainConfig:
    epochs: int = 2000
    steps_per_epoch: int = 1
    lr: float = 1e-4
    lr_decay: str = "cosine"  # none | cosine
    optimizer: str = "adam"
    batch: int = 1
    cells: int = 3
    per_cell: int = 8
    margin: float = 2.0
    T: int = 100
    s: float = 0.008
    curriculum: bool = True
    curriculum_warmup: int = 100
    curriculum_start: int = 10
    condition_on: str = "direction"
    conditioning_channel: bool = False
    loss: str = "dist"
    fixed_queries: bool = False
    fixed_t: int | None = None
    elements: list | None = None
    hidden: list = dc_field(default_factory=lambda: [64, 64, 64])
    omega0: float = 30.0
    layers: int = 4
    model_dim: int = 64
    heads: int = 4
    pos_enc_dim: int = 32
    dropout: float = 0.1
    head_init_scale: float = 0.1
    tap_layer: int | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "steps_per_epoch", "batch", "cells", "per_cell", "T"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.loss not in ("dist", "vec"):
            raise ValueError(f"loss must be dist or vec, got {self.loss!r}")
        if self.lr_decay not in ("none", "cosine"):
            raise ValueError(f"lr_decay must be none or cosine, got {self.lr_decay!r}")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


# LAMB with the large-batch hyperparameters used for full-scale pretraining
FULL_SCALE_PRESET = {
    "optimizer": "lamb", "lr": 1e-2, "batch": 5500, "epochs": 3500, "lr_decay": "cosine",
    "T": 1000, "layers": 26, "model_dim": 1280, "heads": 16, "pos_enc_dim": 128,
}


@dataclass
class TrainState:
    phi: HypernetParams
    optimizer: Adam
    config: TrainConfig
    epoch: int = 0
    step: int = 0
    rng: np.random.Generator = dc_field(default_factory=np.random.default_rng)
    history: dict = dc_field(default_factory=lambda: {k: [] for k in LOG_COLUMNS + ("t",)})


def _prepare(dataset, config: TrainConfig):
    mols = [m.centered() for m in dataset]
    vocab = AtomTypeVocab(tuple(config.elements)) if config.elements else AtomTypeVocab.from_conformers(mols)
    radius = max(bounding_radius(m, config.margin) for m in mols)
    grid = GridSpec(config.cells, config.per_cell, (0.0, 0.0, 0.0), radius)
    return mols, vocab, grid


def build_model_config(config: TrainConfig, vocab: AtomTypeVocab, grid: GridSpec) -> HypernetConfig:
    arch = SirenArch(
        hidden=tuple(config.hidden),
        channels=vocab.K,
        head="distance" if config.loss == "dist" else "vector",
        omega0=config.omega0,
        center=grid.center,
        scale=grid.radius,
    )
    return HypernetConfig(
        grid=grid,
        target_arch=arch,
        vocab=vocab.symbols,
        layers=config.layers,
        model_dim=config.model_dim,
        heads=config.heads,
        pos_enc_dim=config.pos_enc_dim,
        dropout=config.dropout,
        condition_on=config.condition_on,
        conditioning_channel=config.conditioning_channel,
        tap_layer=config.tap_layer,
        head_init_scale=config.head_init_scale,
    )


def init_state(dataset, config: TrainConfig) -> TrainState:
    if not dataset:
        raise ValueError("training needs at least one molecule")
    _, vocab, grid = _prepare(dataset, config)
    rng = np.random.default_rng(config.seed)
    phi = hypernet_init(build_model_config(config, vocab, grid), rng)
    opt = make_optimizer(config.optimizer, phi.tensors, config.lr)
    return TrainState(phi, opt, config, rng=rng)


def optimizer_step(state: TrainState, grads: dict, lr: float | None = None) -> TrainState:
    state.optimizer.step(grads, lr)
    state.step += 1
    return state


def _retained_subset(rng, mol: Conformer) -> Conformer | None:
    keep = int(rng.integers(0, len(mol) + 1))
    return mol.subset(rng.choice(len(mol), size=keep, replace=False))


def sample_loss_terms(phi: HypernetParams, mol: Conformer, Q, t: int, schedule: NoiseSchedule, rng, config: TrainConfig, dropout_rng=None):
    """Noise one molecule's field, run the hypernetwork, and differentiate the loss.

    Returns ``(loss, grads, pred, truth, bins)`` where ``truth`` is the
    distance or direction sample the loss compared against and ``bins`` the
    distance bin of every query point.
    """
    cfg = phi.config
    vocab = AtomTypeVocab(cfg.vocab)
    D, f, present = field_samples(Q.points, mol, vocab, Q.grid.center, Q.grid.radius)
    clean_input = D if cfg.condition_on == "direction" else f
    noised = forward_noise(clean_input, t, schedule, rng)
    cond = None
    if cfg.conditioning_channel:
        Dc, fc, _ = field_samples(Q.points, _retained_subset(rng, mol), vocab, Q.grid.center, Q.grid.radius)
        cond = Dc if cfg.condition_on == "direction" else fc
    tokens = tokenize(Q, noised.values, cond)
    arch = cfg.target_arch
    n = len(Q)
    captured = {}
    if arch.head == "distance":
        truth = DistanceSample(f, present)
        target = f
    else:
        truth = DirectionSample(D, present)
        target = D.reshape(n, -1)

    def loss_fn(theta):
        pred = siren_graph(arch, theta, Q.points)
        captured["pred"] = pred.data
        return ad.tsum(ad.tabs(pred - target)) / n

    loss, grads = hypernet_loss_and_grad(phi, tokens, t, loss_fn, dropout_rng)
    return loss, grads, captured["pred"], truth, assign_distance_bins(f)


def _lr_at(config: TrainConfig, step: int) -> float:
    if config.lr_decay == "cosine":
        return config.lr * 0.5 * (1.0 + math.cos(math.pi * step / config.total_steps))
    return config.lr


def train(dataset, config: TrainConfig, state: TrainState | None = None, on_step=None) -> TrainState:
    """Train a hypernetwork denoiser on ``dataset``.

    Every step samples molecules, fresh query points (unless
    ``config.fixed_queries``), a timestep below the curriculum cap, noises the
    conditioning field and takes one optimiser step on the distance loss.
    ``on_step(state)`` is called after every step (checkpointing, logging).
    """
    mols, _, _ = _prepare(dataset, config)
    state = state or init_state(dataset, config)
    phi, rng = state.phi, state.rng
    grid = phi.config.grid
    schedule = cosine_schedule(config.T, config.s)
    fixed_Q = [sample_query_points(grid, rng) for _ in mols] if config.fixed_queries else None
    order = []
    start_epoch = state.epoch + 1
    for epoch in range(start_epoch, config.epochs + 1):
        state.epoch = epoch
        cap = curriculum_cap(epoch, config.T, config.curriculum_warmup, config.curriculum_start) if config.curriculum else config.T
        for _ in range(config.steps_per_epoch):
            total, grads_sum, errs, bins = 0.0, None, [], []
            ts = []
            for _b in range(config.batch):
                if not order:
                    order = list(rng.permutation(len(mols)))
                i = order.pop()
                Q = fixed_Q[i] if fixed_Q else sample_query_points(grid, rng)
                t = config.fixed_t if config.fixed_t is not None else int(rng.integers(0, cap + 1))
                ts.append(t)
                dropout_rng = rng if phi.config.dropout > 0 else None
                loss, grads, pred, truth, point_bins = sample_loss_terms(phi, mols[i], Q, t, schedule, rng, config, dropout_rng)
                if not np.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at step {state.step}", state)
                total += loss
                errs.append(point_errors(pred, truth))
                bins.append(point_bins)
                if grads_sum is None:
                    grads_sum = grads
                else:
                    for k in grads_sum:
                        grads_sum[k] = grads_sum[k] + grads[k]
            grads_mean = {k: g / config.batch for k, g in grads_sum.items()}
            try:
                optimizer_step(state, grads_mean, _lr_at(config, state.step))
            except FloatingPointError as err:
                raise TrainingDiverged(str(err), state) from None
            _log(state, epoch, cap, total / config.batch, np.concatenate(errs), np.concatenate(bins), ts)
            if on_step is not None:
                on_step(state)
    return state


def _log(state, epoch, cap, total, errs, bins, ts):
    h = state.history
    h["step"].append(state.step)
    h["epoch"].append(epoch)
    h["t_cap"].append(cap)
    h["total"].append(total)
    h["t"].append(ts[0] if len(ts) == 1 else max(ts))
    for b, name in enumerate(BIN_NAMES):
        mask = bins == b
        h[name].append(float(errs[mask].mean()) if mask.any() else math.nan)


def write_loss_log(path, history: dict, config_digest: str | None = None):
    with open(path, "w", newline="") as fh:
        if config_digest:
            fh.write(f"# config_hash: {config_digest}\n")
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in zip(*(history[c] for c in LOG_COLUMNS)):
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_phi(path, phi: HypernetParams, meta: dict | None = None):
    store.save(path, "phi", {"flat": phi.flat}, {"config": phi.config.to_dict(), "names": phi.names, "shapes": [list(v.shape) for v in phi.tensors.values()], **(meta or {})})


def load_phi(path) -> HypernetParams:
    _, arrays, meta = store.load(path, "phi")
    return _phi_from(meta, arrays["flat"])


def _phi_from(meta, flat) -> HypernetParams:
    config = HypernetConfig.from_dict(meta["config"])
    tensors, offset = {}, 0
    for name, shape in zip(meta["names"], meta["shapes"]):
        size = int(np.prod(shape))
        tensors[name] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    return HypernetParams(config, tensors)


def save_state(path, state: TrainState, meta: dict | None = None):
    phi = state.phi
    arrays = {"flat": phi.flat}
    opt = state.optimizer.state()
    arrays["m"] = np.concatenate([opt["m"][k].ravel() for k in phi.tensors])
    arrays["v"] = np.concatenate([opt["v"][k].ravel() for k in phi.tensors])
    for k, series in state.history.items():
        arrays[f"history.{k}"] = np.asarray(series, dtype=np.float64)
    header = {
        "config": phi.config.to_dict(),
        "names": phi.names,
        "shapes": [list(v.shape) for v in phi.tensors.values()],
        "train_config": asdict(state.config),
        "optimizer_t": opt["t"],
        "epoch": state.epoch,
        "step": state.step,
        "rng": store.rng_state(state.rng),
        **(meta or {}),
    }
    store.save(path, "train_state", arrays, header)


def load_state(path) -> TrainState:
    _, arrays, meta = store.load(path, "train_state")
    phi = _phi_from(meta, arrays["flat"])
    config = TrainConfig(**meta["train_config"])
    opt = make_optimizer(config.optimizer, phi.tensors, config.lr)
    m_phi = phi.with_flat(arrays["m"]).tensors
    v_phi = phi.with_flat(arrays["v"]).tensors
    opt.load_state({"t": meta["optimizer_t"], "m": m_phi, "v": v_phi})
    history = {}
    for k in LOG_COLUMNS + ("t",):
        vals = arrays[f"history.{k}"]
        history[k] = [float(v) for v in vals] if k in ("total",) + BIN_NAMES else [int(v) for v in vals]
    return TrainState(phi, opt, config, meta["epoch"], meta["step"], store.rng_from_state(meta["rng"]), history)
