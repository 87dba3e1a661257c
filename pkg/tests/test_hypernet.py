import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from molfields import autodiff as ad
from molfields import hypernet as hn
from molfields import toys
from molfields.fieldgen import GridSpec, field_samples, sample_query_points
from molfields.mnf import SirenArch, siren_graph
from molfields.molio import AtomTypeVocab, Conformer


def tiny(cells=2, per_cell=1, layers=2, d=16, heads=2, hidden=(8,), vocab=("C", "H"), cond=False, on="direction"):
    grid = GridSpec(cells, per_cell, (0.0, 0.0, 0.0), 3.0)
    arch = SirenArch(hidden=hidden, channels=len(vocab), center=grid.center, scale=grid.radius)
    return hn.HypernetConfig(grid, arch, vocab, layers=layers, model_dim=d, heads=heads, pos_enc_dim=8, dropout=0.0, conditioning_channel=cond, condition_on=on)


def tokens_for(config, seed=0, mol=None):
    Q = sample_query_points(config.grid, seed)
    mol = mol or toys.methane()
    D, f, _ = field_samples(Q.points, mol, AtomTypeVocab(config.vocab), Q.grid.center, Q.grid.radius)
    field = D if config.condition_on == "direction" else f
    cond = field if config.conditioning_channel else None
    return Q, hn.tokenize(Q, field, cond), f


def test_token_widths():
    for cond, extra in ((False, 6), (True, 12)):
        cfg = hn.HypernetConfig(GridSpec(2, 3, (0, 0, 0), 3.0), SirenArch(channels=2), ("C", "H"), conditioning_channel=cond)
        phi = hn.hypernet_init(cfg, 0)
        _, tok, _ = tokens_for(cfg)
        assert len(tok) == 24
        assert hn.token_matrix(phi, tok).shape == (24, cfg.pos_enc_dim + extra)
        assert cfg.token_dim == cfg.pos_enc_dim + extra


def test_tokenize_permutes_with_queries():
    cfg = tiny()
    Q, tok, _ = tokens_for(cfg)
    perm = np.random.default_rng(0).permutation(len(Q))
    D, _, _ = field_samples(Q.points, toys.methane(), AtomTypeVocab(cfg.vocab), Q.grid.center, Q.grid.radius)
    tok2 = hn.tokenize(Q.permuted(perm), D[perm])
    np.testing.assert_array_equal(tok2.features, tok.features[perm])
    np.testing.assert_array_equal(tok2.coords, tok.coords[perm])


def test_tokenize_shape_mismatch():
    cfg = tiny()
    Q = sample_query_points(cfg.grid, 0)
    with pytest.raises(ValueError):
        hn.tokenize(Q, np.zeros((len(Q) - 1, 2, 3)))
    with pytest.raises(ValueError):
        hn.tokenize(Q, np.zeros((len(Q), 2, 3)), np.zeros((len(Q), 2)))


def test_config_validation():
    grid, arch = GridSpec(2, 1, (0, 0, 0), 3.0), SirenArch(channels=2)
    with pytest.raises(ValueError):
        hn.HypernetConfig(grid, arch, ("C", "H"), model_dim=18, heads=4)
    with pytest.raises(ValueError):
        hn.HypernetConfig(grid, arch, ("C", "H"), layers=0)
    with pytest.raises(ValueError):
        hn.HypernetConfig(grid, arch, ("C",))


def test_timestep_embedding_at_zero():
    e = hn.timestep_embedding(0, 64)
    assert np.all(e[:32] == 0) and np.all(e[32:] == 1)


def test_timestep_embeddings_distinct_and_bounded():
    E = np.stack([hn.timestep_embedding(t, 64) for t in range(1001)])
    assert np.all(np.linalg.norm(E, axis=1) <= 8 + 1e-12)
    gram = E @ E.T
    sq = np.diag(gram)
    dist2 = sq[:, None] + sq[None] - 2 * gram
    np.fill_diagonal(dist2, np.inf)
    assert dist2.min() > 1e-6


def test_timestep_embedding_odd_dim():
    with pytest.raises(ValueError):
        hn.timestep_embedding(3, 7)


@given(st.sampled_from([(8,), (4, 4), (6, 5, 3)]), st.integers(1, 3), st.sampled_from(["direction", "distance"]))
def test_theta_size_matches_arch(hidden, K, on):
    vocab = ("C", "H", "O")[:K]
    cfg = tiny(hidden=hidden, vocab=vocab, on=on)
    phi = hn.hypernet_init(cfg, 0)
    mol = toys.methane() if K > 1 else Conformer(("C",), [[0.0, 0.0, 0.0]])
    _, tok, _ = tokens_for(cfg, mol=mol)
    theta, acts = hn.hypernet_forward(phi, tok, 3)
    assert theta.flat.size == cfg.target_arch.param_count
    assert len(acts) == cfg.layers and acts[0].shape == (len(tok), cfg.model_dim)


def test_permutation_invariance():
    cfg = tiny(cells=2, per_cell=4)
    phi = hn.hypernet_init(cfg, 1)
    _, tok, _ = tokens_for(cfg)
    perm = np.random.default_rng(3).permutation(len(tok))
    a, _ = hn.hypernet_forward(phi, tok, 5)
    b, _ = hn.hypernet_forward(phi, tok.permuted(perm), 5)
    np.testing.assert_allclose(a.flat, b.flat, rtol=0, atol=1e-12)


def test_forward_deterministic():
    cfg = tiny()
    phi = hn.hypernet_init(cfg, 2)
    _, tok, _ = tokens_for(cfg)
    a, _ = hn.hypernet_forward(phi, tok, 7)
    b, _ = hn.hypernet_forward(phi, tok, 7)
    np.testing.assert_array_equal(a.flat, b.flat)


def test_param_flat_roundtrip():
    phi = hn.hypernet_init(tiny(), 0)
    back = phi.with_flat(phi.flat)
    assert back.names == phi.names
    np.testing.assert_array_equal(back.flat, phi.flat)
    with pytest.raises(ValueError):
        phi.with_flat(phi.flat[:-1])


def l1_loss(arch, Q, target):
    return lambda theta: ad.tsum(ad.tabs(siren_graph(arch, theta, Q.points) - target)) / len(Q)


def directional_check(seed, cond=False, on="direction"):
    cfg = tiny(cells=2, per_cell=1, layers=2, d=16, cond=cond, on=on)
    rng = np.random.default_rng(seed)
    phi = hn.hypernet_init(cfg, rng)
    # move off the initialisation so every path carries gradient
    phi = phi.with_flat(phi.flat + 0.05 * rng.normal(size=phi.size))
    Q, tok, f = tokens_for(cfg, seed)
    assert len(tok) == 8
    t = int(rng.integers(0, 100))
    loss_fn = l1_loss(cfg.target_arch, Q, f)
    g = hn.hypernet_grad(phi, tok, t, loss_fn)
    u = rng.normal(size=phi.size)
    u /= np.linalg.norm(u)
    h = 1e-5

    def value(flat):
        theta, _ = hn.hypernet_forward(phi.with_flat(flat), tok, t)
        return float(loss_fn(ad.Tensor(theta.flat)).data)

    num = (value(phi.flat + h * u) - value(phi.flat - h * u)) / (2 * h)
    exact = g @ u
    return abs(num - exact) / max(abs(exact), 1e-12)


@pytest.mark.parametrize("seed,cond,on", [(0, False, "direction"), (1, True, "direction"), (2, False, "distance"), (3, True, "distance")])
def test_gradient_directional_fd(seed, cond, on):
    assert directional_check(seed, cond, on) < 1e-3


def test_zero_loss_zero_gradient():
    cfg = tiny()
    phi = hn.hypernet_init(cfg, 0)
    Q, tok, _ = tokens_for(cfg)
    theta, _ = hn.hypernet_forward(phi, tok, 4)
    target = siren_graph(cfg.target_arch, ad.Tensor(theta.flat), Q.points).data
    g = hn.hypernet_grad(phi, tok, 4, lambda th: ad.tsum(ad.square(siren_graph(cfg.target_arch, th, Q.points) - target)))
    assert np.all(g == 0)


def test_inactive_head_gets_zero_gradient():
    cfg = tiny()
    phi = hn.hypernet_init(cfg, 0)
    Q, tok, f = tokens_for(cfg)
    arch = cfg.target_arch
    loss = lambda th: ad.tsum(ad.tabs(siren_graph(arch, th, Q.points)[:, 0] - f[:, 0]))
    _, grads = hn.hypernet_loss_and_grad(phi, tok, 2, loss)
    last_bias = len(arch.tensor_sizes) - 1
    assert np.all(grads[f"head.{last_bias}.W"][:, 1] == 0)
    assert np.all(grads[f"head.{last_bias}.b"][1] == 0)
    assert np.any(grads[f"head.{last_bias}.b"][0] != 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_names_block():
    cfg = tiny()
    phi = hn.hypernet_init(cfg, 0)
    _, tok, _ = tokens_for(cfg)
    with pytest.raises(hn.NonFiniteError, match=r"non-finite gradient in pe \(pe.W1\)"):
        hn.hypernet_loss_and_grad(phi, tok, 1, lambda th: ad.tsum(ad.tabs(th)) * np.inf)


def test_tap_layer_default():
    assert tiny(layers=4).tap == 2
    grid, arch = GridSpec(2, 1, (0, 0, 0), 3.0), SirenArch(channels=2)
    assert hn.HypernetConfig(grid, arch, ("C", "H"), layers=26).tap == 13
    assert math.ceil(5 / 2) == tiny(layers=5).tap


def test_central_activation_pooling():
    cfg = tiny(cells=2, per_cell=3, layers=4)
    phi = hn.hypernet_init(cfg, 0)
    _, tok, _ = tokens_for(cfg)
    _, acts = hn.hypernet_forward(phi, tok, 0)
    per_token, per_cell, glob = hn.extract_central_activation(acts, tok.cell_index, cfg.grid.n_cells)
    np.testing.assert_array_equal(per_token, acts[1])
    for c in range(cfg.grid.n_cells):
        np.testing.assert_allclose(per_cell[c], per_token[tok.cell_index == c].mean(axis=0), atol=1e-14)
    np.testing.assert_allclose(glob, per_token.mean(axis=0), atol=1e-14)
    perm = np.random.default_rng(0).permutation(len(tok))
    _, _, glob2 = hn.extract_central_activation([a[perm] for a in acts], tok.cell_index[perm], cfg.grid.n_cells)
    np.testing.assert_allclose(glob2, glob, atol=1e-14)
    with pytest.raises(ValueError):
        hn.extract_central_activation(acts, tok.cell_index, cfg.grid.n_cells, tap=5)


def test_identical_tokens_cell_means_equal_global():
    acts = [np.tile(np.arange(4.0), (8, 1))] * 2
    cells = np.repeat(np.arange(4), 2)
    _, per_cell, glob = hn.extract_central_activation(acts, cells, 4)
    np.testing.assert_allclose(per_cell, np.tile(glob, (4, 1)))


def test_dropout_only_with_rng():
    cfg = tiny()
    cfg = hn.HypernetConfig(**{**{k: getattr(cfg, k) for k in ("grid", "target_arch", "vocab", "layers", "model_dim", "heads", "pos_enc_dim")}, "dropout": 0.5})
    phi = hn.hypernet_init(cfg, 0)
    _, tok, _ = tokens_for(cfg)
    a, _ = hn.hypernet_forward(phi, tok, 1)
    b, _ = hn.hypernet_forward(phi, tok, 1)
    c, _ = hn.hypernet_forward(phi, tok, 1, np.random.default_rng(0))
    np.testing.assert_array_equal(a.flat, b.flat)
    assert not np.allclose(a.flat, c.flat)


def test_config_dict_roundtrip():
    cfg = tiny(cond=True)
    back = hn.HypernetConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
