"""Command-line entry point: ``molfields <command> [options]``.

Every command accepts ``--seed``, ``--config`` and ``--out``. The resolved
configuration is written to ``<out>/resolved_config.yaml`` and every numeric
output carries its hash. Failures print ``error[<category>]: <message>`` on
one line and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import diffusion, embed, fieldgen, mnf, reconstruct, trainer
from .molio import AtomTypeVocab, Conformer, XYZError, read_xyz_frames
from .store import CorruptFileError

EXIT_CODES = {"usage": 2, "config": 2, "input": 3, "corrupt": 3, "numeric": 4, "reconstruction": 5, "internal": 1}


class UsageError(ValueError):
    pass


def _read_molecules(paths) -> list[Conformer]:
    mols = []
    for p in paths:
        mols.extend(read_xyz_frames(p))
    if not mols:
        raise UsageError("no molecules in the input files")
    return mols


def _reconstruct_params(run) -> reconstruct.ReconstructParams:
    return reconstruct.ReconstructParams(**dataclasses.asdict(run.reconstruct))


def _write_json(path, data, digest):
    with open(path, "w") as fh:
        json.dump({**data, "config_hash": digest}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _recover(theta, run, out: Path, stem: str, seed: int) -> reconstruct.MoleculeGraph:
    mol = reconstruct.field_to_conformer(theta, params=_reconstruct_params(run), seed=seed, name=stem)
    graph = reconstruct.infer_bonds(mol)
    reconstruct.write_outputs(out / stem, graph)
    return graph


def _parse_floats(text, n, flag):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated numbers") from None
    if len(vals) != n:
        raise UsageError(f"{flag} expects {n} values")
    return vals


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_build_field(args, run, out: Path):
    (mol,) = _read_molecules([args.xyz])[:1]
    vocab = AtomTypeVocab(tuple(run.elements)) if run.elements else AtomTypeVocab.from_conformers([mol])
    grid = fieldgen.GridSpec.around(mol, run.grid.cells, run.grid.per_cell, run.grid.margin)
    Q = fieldgen.sample_query_points(grid, run.seed)
    fieldgen.save_field(out / "field.bin", Q, fieldgen.direction_sample(Q, mol, vocab), fieldgen.distance_sample(Q, mol, vocab), vocab, {"config_hash": run.digest(), "source": str(args.xyz)})
    return {"points": len(Q), "channels": vocab.K}


def cmd_fit_mnf(args, run, out: Path):
    (mol,) = _read_molecules([args.xyz])[:1]
    vocab = AtomTypeVocab(tuple(run.elements)) if run.elements else AtomTypeVocab.from_conformers([mol])
    grid = fieldgen.GridSpec.around(mol, run.fit.cells, run.fit.per_cell, run.grid.margin)
    arch = mnf.SirenArch(hidden=tuple(run.arch.hidden), channels=vocab.K, omega0=run.arch.omega0, center=grid.center, scale=grid.radius)
    theta, hist = mnf.fit_mnf(mol, arch, run.fit.steps, run.seed, vocab, grid, run.fit.lr, return_history=True)
    theta = mnf.SirenParams(theta.arch, theta.flat, {**theta.meta, "config_hash": run.digest()})
    mnf.save_theta(out / "theta.bin", theta)
    return {"final_loss": hist[-1], "steps": len(hist)}


def cmd_train(args, run, out: Path):
    mols = _read_molecules(args.xyz)
    tc = cfgmod.train_config(run)
    if args.epochs:
        tc = dataclasses.replace(tc, epochs=args.epochs)
    every = run.trainer.checkpoint_every
    digest = run.digest()

    def on_step(state):
        if every and state.step % every == 0:
            trainer.save_state(out / "state.bin", state, {"config_hash": digest})

    state = trainer.load_state(args.resume) if args.resume else None
    try:
        state = trainer.train(mols, tc, state, on_step)
    except trainer.TrainingDiverged as err:
        trainer.write_loss_log(out / "loss.csv", err.state.history, digest)
        trainer.save_state(out / "diverged_state.bin", err.state, {"config_hash": digest})
        raise
    trainer.write_loss_log(out / "loss.csv", state.history, digest)
    trainer.save_state(out / "state.bin", state, {"config_hash": digest})
    trainer.save_phi(out / "phi.bin", state.phi, {"config_hash": digest})
    return {"steps": state.step, "final_loss": state.history["total"][-1]}


def cmd_generate(args, run, out: Path):
    phi = trainer.load_phi(args.phi)
    schedule = diffusion.cosine_schedule(run.schedule.T, run.schedule.s)
    graphs = []
    for i in range(args.n):
        seed = run.seed + i
        theta = diffusion.generate(phi, schedule, seed=seed)
        mnf.save_theta(out / f"theta_{i}.bin", theta)
        if not args.no_reconstruct:
            graphs.append(_recover(theta, run, out, f"sample_{i}", seed))
    result = {"samples": args.n}
    if graphs:
        result.update(reconstruct.stability_metrics(graphs))
        _write_json(out / "metrics.json", result, run.digest())
    return result


def cmd_inpaint(args, run, out: Path):
    phi = trainer.load_phi(args.phi)
    (mol,) = _read_molecules([args.xyz])[:1]
    mol = mol.centered()
    if (args.mask_atoms is None) == (args.mask_sphere is None):
        raise UsageError("give exactly one of --mask-atoms or --mask-sphere")
    if args.mask_atoms is not None:
        try:
            masked = {int(i) for i in args.mask_atoms.split(",") if i.strip()}
        except ValueError:
            raise UsageError("--mask-atoms expects comma-separated indices") from None
        if any(not 0 <= i < len(mol) for i in masked):
            raise UsageError("--mask-atoms index out of range")
    else:
        x, y, z, r = _parse_floats(args.mask_sphere, 4, "--mask-sphere")
        masked = set(np.flatnonzero(np.linalg.norm(mol.positions - [x, y, z], axis=1) <= r).tolist())
    retained = mol.subset([i for i in range(len(mol)) if i not in masked])
    schedule = diffusion.cosine_schedule(run.schedule.T, run.schedule.s)
    theta = diffusion.inpaint(phi, schedule, retained, seed=run.seed)
    mnf.save_theta(out / "theta.bin", theta)
    graph = _recover(theta, run, out, "inpainted", run.seed)
    result = {"masked": sorted(masked), "retained": 0 if retained is None else len(retained), "recovered": len(graph.conformer)}
    _write_json(out / "inpaint.json", result, run.digest())
    return result


def cmd_reconstruct(args, run, out: Path):
    graphs = []
    for i, path in enumerate(args.theta):
        graphs.append(_recover(mnf.load_theta(path), run, out, Path(path).stem, run.seed))
    result = reconstruct.stability_metrics(graphs)
    _write_json(out / "metrics.json", result, run.digest())
    return result


def cmd_embed(args, run, out: Path):
    phi = trainer.load_phi(args.phi)
    mols = _read_molecules(args.xyz)
    embs = [embed.embed_molecule(phi, m, seed=run.seed, tap=run.embed.tap_layer) for m in mols]
    digest = run.digest()
    names = [m.name or f"mol_{i}" for i, m in enumerate(mols)]
    for i, e in enumerate(embs):
        embed.save_embedding(out / f"embedding_{i}.bin", e, {"name": names[i], "config_hash": digest})
    embed.write_global_csv(out / "global.csv", names, embs, digest)
    result = {"molecules": len(mols), "dim": embs[0].dim}
    if args.property:
        labels = [_property(m, args.property) for m in mols]
        hc = embed.HeadConfig(hidden=run.embed.hidden, task=run.embed.task, lr=run.embed.lr, steps=run.embed.steps, seed=run.seed)
        head = embed.train_property_head(embs, labels, hc)
        result["train_r2"] = embed.r_squared(labels, embed.predict_property(head, embs))
        _write_json(out / "property.json", result, digest)
    return result


def _property(mol: Conformer, name: str) -> float:
    if name == "heavy_atoms":
        return float(mol.heavy_atom_count())
    if name == "radius_of_gyration":
        c = mol.positions - mol.positions.mean(0)
        return float(np.sqrt((c * c).sum(1).mean()))
    raise UsageError(f"unknown property {name!r}")


def cmd_metrics(args, run, out: Path):
    graphs = [reconstruct.infer_bonds(m) for m in _read_molecules(args.xyz)]
    result = reconstruct.stability_metrics(graphs)
    _write_json(out / "metrics.json", result, run.digest())
    return result


ABLATIONS = {
    "curriculum_on": {"curriculum": True},
    "curriculum_off": {"curriculum": False},
    "cond_direction": {"condition_on": "direction"},
    "cond_distance": {"condition_on": "distance"},
}


def _tail_mean(series, frac=0.1):
    vals = [v for v in series if not math.isnan(v)]
    n = max(1, int(len(vals) * frac))
    return float(np.mean(vals[-n:])) if vals else float("nan")


def cmd_ablate(args, run, out: Path):
    mols = _read_molecules(args.xyz)
    base = cfgmod.train_config(run)
    if args.epochs:
        base = dataclasses.replace(base, epochs=args.epochs)
    digest = run.digest()
    summary = {}
    for name, override in ABLATIONS.items():
        state = trainer.train(mols, dataclasses.replace(base, **override))
        trainer.write_loss_log(out / f"{name}.csv", state.history, digest)
        summary[name] = {"steps": state.step, "final_total": _tail_mean(state.history["total"]), **{b: _tail_mean(state.history[b]) for b in fieldgen.BIN_NAMES}}
    _write_json(out / "ablation_summary.json", summary, digest)
    return {k: v["final_total"] for k, v in summary.items()}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    common.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    parser = argparse.ArgumentParser(prog="molfields", description="Molecular field diffusion toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-field", parents=[common], help="sample a molecule's direction and distance fields")
    p.add_argument("xyz", type=Path)
    p.set_defaults(func=cmd_build_field)

    p = sub.add_parser("fit-mnf", parents=[common], help="fit a neural field to one molecule")
    p.add_argument("xyz", type=Path)
    p.set_defaults(func=cmd_fit_mnf)

    p = sub.add_parser("train", parents=[common], help="train the hypernetwork denoiser")
    p.add_argument("xyz", type=Path, nargs="+")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--resume", type=Path, default=None, help="training state to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="sample new molecules from noise")
    p.add_argument("--phi", type=Path, required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--no-reconstruct", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("inpaint", parents=[common], help="regenerate a masked region of a molecule")
    p.add_argument("xyz", type=Path)
    p.add_argument("--phi", type=Path, required=True)
    p.add_argument("--mask-atoms", default=None, help="comma-separated atom indices to regenerate")
    p.add_argument("--mask-sphere", default=None, help="x,y,z,r: regenerate atoms inside this sphere")
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("reconstruct", parents=[common], help="recover molecules from neural fields")
    p.add_argument("theta", type=Path, nargs="+")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("embed", parents=[common], help="extract hypernetwork features")
    p.add_argument("xyz", type=Path, nargs="+")
    p.add_argument("--phi", type=Path, required=True)
    p.add_argument("--property", choices=["heavy_atoms", "radius_of_gyration"], default=None, help="also fit a property head on this synthetic label")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("metrics", parents=[common], help="stability and validity of XYZ molecules")
    p.add_argument("xyz", type=Path, nargs="+")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("ablate", parents=[common], help="curriculum and conditioning comparisons")
    p.add_argument("xyz", type=Path, nargs="+")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def _category(err: BaseException) -> str:
    if isinstance(err, cfgmod.ConfigError):
        return "config"
    if isinstance(err, UsageError):
        return "usage"
    if isinstance(err, CorruptFileError):
        return "corrupt"
    if isinstance(err, (XYZError, FileNotFoundError, IsADirectoryError, PermissionError)):
        return "input"
    if isinstance(err, reconstruct.ReconstructionError):
        return "reconstruction"
    if isinstance(err, FloatingPointError):
        return "numeric"
    if isinstance(err, ValueError):
        return "usage"
    return "internal"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = cfgmod.load_config(args.config)
        if args.seed is not None:
            run = dataclasses.replace(run, seed=args.seed)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        cfgmod.save_resolved(run, out / "resolved_config.yaml")
        result = args.func(args, run, out)
    except Exception as err:  # noqa: BLE001 - every failure becomes one error line
        category = _category(err)
        msg = " ".join(str(err).split()) or type(err).__name__
        print(f"error[{category}]: {msg}", file=sys.stderr)
        return EXIT_CODES[category]
    print(json.dumps(result, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
