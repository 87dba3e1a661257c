"""Hypernetwork activations as molecular features, and a small property head."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import store
from .fieldgen import GridSpec, QuerySet, field_samples, sample_query_points
from .hypernet import HypernetParams, extract_central_activation, hypernet_forward, tokenize
from .molio import AtomTypeVocab, Conformer
from .optim import Adam


@dataclass(frozen=True, eq=False)
class Embedding:
    per_point: np.ndarray  # (N, d)
    per_cell: np.ndarray  # (c^3, d)
    global_: np.ndarray  # (d,)
    tap: int
    seed: int | None
    points: np.ndarray  # query points, in the canonical order of per_point
    cell_index: np.ndarray

    @property
    def dim(self) -> int:
        return self.global_.shape[0]


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Lexicographic order of the query points (x, then y, then z)."""
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0]))


def embed_molecule(phi: HypernetParams, conformer: Conformer, grid: GridSpec | None = None, seed=0, queries: QuerySet | None = None, tap: int | None = None) -> Embedding:
    """Features of a clean (t = 0) field from the tapped transformer block.

    Tokens are put in canonical point order first, so the embedding depends
    on the query set only, not on how it is ordered.
    """
    cfg = phi.config
    grid = grid or cfg.grid
    Q = queries if queries is not None else sample_query_points(grid, seed)
    Q = Q.permuted(canonical_order(Q.points))
    mol = conformer.centered()
    D, f, _ = field_samples(Q.points, mol, AtomTypeVocab(cfg.vocab), Q.grid.center, Q.grid.radius)
    clean = D if cfg.condition_on == "direction" else f
    tokens = tokenize(Q, clean, clean if cfg.conditioning_channel else None)
    _, acts = hypernet_forward(phi, tokens, 0)
    tap = cfg.tap if tap is None else tap
    per_point, per_cell, glob = extract_central_activation(acts, Q.cell_index, Q.grid.n_cells, tap)
    return Embedding(per_point, per_cell, glob, tap, seed if queries is None else None, Q.points, Q.cell_index)


def feature_smoothness(emb: Embedding, n_pairs: int = 2000, seed=0) -> dict:
    """Mean feature distance of nearest-neighbour point pairs vs random pairs."""
    rng = np.random.default_rng(seed)
    P, X = emb.points, emb.per_point
    d = np.linalg.norm(P[:, None] - P[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    nn = d.argmin(axis=1)
    near = np.linalg.norm(X - X[nn], axis=1).mean()
    i = rng.integers(0, len(P), n_pairs)
    j = (i + rng.integers(1, len(P), n_pairs)) % len(P)
    rand = np.linalg.norm(X[i] - X[j], axis=1).mean()
    return {"neighbour": float(near), "random": float(rand), "ratio": float(near / rand) if rand > 0 else float("nan")}


# ---------------------------------------------------------------------------
# property head
# ---------------------------------------------------------------------------


@dataclass
class HeadConfig:
    hidden: int = 512
    task: str = "regression"  # regression | classification
    lr: float = 1e-3
    steps: int = 2000
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.hidden < 1 or self.steps < 1 or self.lr <= 0:
            raise ValueError("hidden, steps and lr must be positive")


@dataclass(eq=False)
class PropertyHead:
    """``W2 tanh(W1 x + b1) + b2`` on standardised inputs; targets de-standardised for regression."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0
    task: str = "regression"
    history: list | None = None

    @property
    def in_dim(self) -> int:
        return self.W1.shape[0]

    def raw(self, X: np.ndarray) -> np.ndarray:
        Z = (X - self.x_mean) / self.x_scale
        return (np.tanh(Z @ self.W1 + self.b1) @ self.W2 + self.b2)[:, 0]


def _features(embeddings) -> np.ndarray:
    rows = [e.global_ if isinstance(e, Embedding) else np.asarray(e, dtype=float) for e in embeddings]
    return np.vstack(rows)


def train_property_head(embeddings, labels, config: HeadConfig = HeadConfig()) -> PropertyHead:
    """Full-batch Adam fit of squared (regression) or logistic (classification) loss."""
    X = _features(embeddings)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(X) < 2 or len(X) != len(y):
        raise ValueError("need at least two labelled samples")
    if not np.isfinite(y).all():
        raise ValueError("labels must be finite")
    rng = np.random.default_rng(config.seed)
    x_mean = X.mean(0)
    x_scale = X.std(0)
    x_scale[x_scale < 1e-12] = 1.0
    Z = (X - x_mean) / x_scale
    if config.task == "regression":
        y_mean, y_scale = float(y.mean()), float(y.std()) or 1.0
        target = (y - y_mean) / y_scale
    else:
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("classification labels must be 0 or 1")
        y_mean, y_scale, target = 0.0, 1.0, y
    d, h = X.shape[1], config.hidden
    params = {
        "W1": rng.uniform(-1, 1, (d, h)) * np.sqrt(6.0 / (d + h)),
        "b1": np.zeros(h),
        "W2": rng.uniform(-1, 1, (h, 1)) * np.sqrt(6.0 / (h + 1)),
        "b2": np.zeros(1),
    }
    opt = Adam(params, lr=config.lr)
    history = []
    for _ in range(config.steps):
        P = {k: ad.parameter(v) for k, v in params.items()}
        out = (ad.tanh(ad.Tensor(Z) @ P["W1"] + P["b1"]) @ P["W2"] + P["b2"]).reshape(-1)
        if config.task == "regression":
            loss = ad.mean(ad.square(out - target))
        else:
            # log(1 + e^z) - y z
            loss = ad.mean(ad.softplus(out) - out * target)
        if config.weight_decay:
            loss = loss + config.weight_decay * (ad.tsum(ad.square(P["W1"])) + ad.tsum(ad.square(P["W2"])))
        if not np.isfinite(loss.data):
            raise FloatingPointError("property head diverged")
        grads = ad.grad(loss, list(P.values()))
        opt.step(dict(zip(P, grads)))
        history.append(float(loss.data))
    return PropertyHead(params["W1"], params["b1"], params["W2"], params["b2"], x_mean, x_scale, y_mean, y_scale, config.task, history)


def predict_property(head: PropertyHead, embedding) -> np.ndarray | float:
    """Predicted value (regression) or probability (classification).

    Accepts one embedding / feature vector, or a sequence of them.
    """
    if isinstance(embedding, Embedding):
        single = True
    elif isinstance(embedding, (list, tuple)) and embedding and isinstance(embedding[0], Embedding):
        single = False
    else:
        single = np.ndim(embedding) == 1
    X = _features([embedding] if single else embedding)
    if X.shape[1] != head.in_dim:
        raise ValueError(f"expected {head.in_dim} features, got {X.shape[1]}")
    raw = head.raw(X)
    out = 1.0 / (1.0 + np.exp(-raw)) if head.task == "classification" else raw * head.y_scale + head.y_mean
    return float(out[0]) if single else out


def r_squared(y, pred) -> float:
    y, pred = np.asarray(y, dtype=float), np.asarray(pred, dtype=float)
    ss_res = ((y - pred) ** 2).sum()
    ss_tot = ((y - y.mean()) ** 2).sum()
    return float(1.0 - ss_res / ss_tot) if ss_tot > 0 else float(ss_res == 0)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def save_embedding(path, emb: Embedding, meta: dict | None = None):
    header = {"d": emb.dim, "N": len(emb.per_point), "cells": len(emb.per_cell), "tap": emb.tap, "seed": emb.seed, **(meta or {})}
    arrays = {"per_point": emb.per_point, "per_cell": emb.per_cell, "global": emb.global_, "points": emb.points, "cell_index": emb.cell_index}
    store.save(path, "embedding", arrays, header)


def load_embedding(path) -> Embedding:
    _, a, meta = store.load(path, "embedding")
    return Embedding(a["per_point"], a["per_cell"], a["global"], meta["tap"], meta["seed"], a["points"], a["cell_index"])


def write_global_csv(path, names, embeddings, config_digest: str | None = None):
    with open(path, "w", newline="") as fh:
        if config_digest:
            fh.write(f"# config_hash: {config_digest}\n")
        w = csv.writer(fh)
        d = embeddings[0].dim
        w.writerow(["name"] + [f"f{i}" for i in range(d)])
        for name, e in zip(names, embeddings):
            w.writerow([name] + [repr(float(v)) for v in e.global_])
