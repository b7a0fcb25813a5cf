"""Command-line entry point.

Every command writes into a run directory (``--out``), one ``seed-<k>``
subdirectory per seed, each with a ``manifest.json``. Exit codes: 0 ok,
1 usage or config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, config_from_dict, load_config, load_preset, preset_names
from .experiment import evaluate, generate_data, load_run_data, save_run_data, train_run
from .model import load_checkpoint, save_checkpoint

log = logging.getLogger("wtasym")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DEFAULT_PRESET = "matched-desk"
CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_FILE = "checkpoint.wtac"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers ----------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(directory: Path, command: str, files: list[str], config: ExperimentConfig | None,
                   seed: int | None, extra: dict | None = None) -> None:
    """The only file that carries timestamps and wall-clock data."""
    manifest = {
        "command": command,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "package_version": _version(),
        "seed": seed,
        "config_hash": config.config_hash() if config is not None else None,
        "preset": config.name if config is not None else None,
        "files": {name: _sha256(directory / name) for name in sorted(files)},
    }
    if config is not None:
        manifest["batch_size"] = config.train.batch_size
    manifest.update(extra or {})
    path = directory / MANIFEST_FILE
    history = {}
    if path.is_file():
        try:
            history = json.loads(path.read_text())
        except json.JSONDecodeError:
            history = {}
    history[command] = manifest
    path.write_text(json.dumps(history, indent=2, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def resolve_config(args) -> ExperimentConfig | None:
    """Explicit --config / --preset, else None (caller may fall back to the run directory)."""
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    if args.config:
        return load_config(args.config)
    if args.preset:
        return load_preset(args.preset)
    return None


def _seed_dir(out: Path, seed: int) -> Path:
    return out / f"seed-{seed}"


def _config_for_run(args, run_dir: Path) -> ExperimentConfig:
    explicit = resolve_config(args)
    stored_path = run_dir / CONFIG_FILE
    if not stored_path.is_file():
        if explicit is None:
            raise FileNotFoundError(f"{stored_path} not found (run gen-data first)")
        return explicit
    stored = config_from_dict(json.loads(stored_path.read_text()))
    if explicit is not None and explicit.config_hash() != stored.config_hash():
        raise ValueError(f"config mismatch: {run_dir} was generated with config "
                         f"{stored.config_hash()}, got {explicit.config_hash()}")
    return stored


def _seeds(args, config: ExperimentConfig | None) -> list[int]:
    if args.seed:
        return list(args.seed)
    return list(config.seeds) if config is not None else [0]


def _map_seeds(fn, jobs: int, items: list) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- commands ---------------------------------------------------------------

def _gen_one(job) -> str:
    config, seed, out = job
    d = _seed_dir(out, seed)
    d.mkdir(parents=True, exist_ok=True)
    data = generate_data(config, seed)
    files = save_run_data(data, d)
    (d / CONFIG_FILE).write_text(config.to_json())
    write_manifest(d, "gen-data", files + [CONFIG_FILE], config, seed,
                   {"derived_seeds": data.seeds, "rank_W_folded": data.bank.rank,
                    "full_rank": data.bank.full_rank})
    return f"seed {seed}: wrote {', '.join(files)} to {d}"


def cmd_gen_data(args) -> int:
    config = resolve_config(args) or load_preset(DEFAULT_PRESET)
    seeds = _seeds(args, config)
    for line in _map_seeds(_gen_one, args.jobs, [(config, s, args.out) for s in seeds]):
        print(line)
    return EXIT_OK


def _train_one(job) -> str:
    args, seed = job
    d = _seed_dir(args.out, seed)
    stored = config = _config_for_run(args, d)
    if args.epochs is not None:
        config = replace(config, train=replace(config.train, epochs=args.epochs)).validate()
    data = load_run_data(d, config, seed)
    model, record = train_run(data)
    # The run is identified by the generated config; an epoch override is recorded beside it.
    save_checkpoint(model, d / CHECKPOINT_FILE, {"seed": seed, "config_hash": stored.config_hash(),
                                                 "epochs": config.train.epochs})
    record.write_loss_csv(d / "loss.csv")
    run = {"seed": seed, "config_hash": record.config_hash, "epochs": config.train.epochs,
           "test_mae": record.test_mae, "test_auc": record.test_auc,
           "train_loss_final": record.train_loss[-1] if record.train_loss else None}
    _write_json(d / "run.json", run)
    write_manifest(d, "train", [CHECKPOINT_FILE, "loss.csv", "run.json"], stored, seed,
                   {"wall_time_s": record.wall_time, "epochs": config.train.epochs})
    return f"seed {seed}: test MAE {record.test_mae:.3e} ({record.wall_time:.1f} s)"


def cmd_train(args) -> int:
    config = resolve_config(args)
    seeds = _seeds(args, config) if args.seed or config else _discover_seeds(args.out)
    for line in _map_seeds(_train_one, args.jobs, [(args, s) for s in seeds]):
        print(line)
    return EXIT_OK


def _discover_seeds(out: Path) -> list[int]:
    seeds = sorted(int(p.name[5:]) for p in out.glob("seed-*") if p.name[5:].isdigit())
    if not seeds:
        raise FileNotFoundError(f"no seed directories under {out} (run gen-data first)")
    return seeds


def _eval_one(job) -> str:
    args, seed = job
    d = _seed_dir(args.out, seed)
    config = _config_for_run(args, d)
    ckpt = Path(args.checkpoint) if args.checkpoint else d / CHECKPOINT_FILE
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint {ckpt} not found (run train first)")
    model, extra = load_checkpoint(ckpt)
    if extra.get("config_hash") not in (None, config.config_hash()):
        raise ValueError(f"config mismatch: checkpoint was trained with {extra['config_hash']}")
    if model.config.heads.sizes != tuple(config.head_sizes) or model.config.d_in != config.encoder_dims[0]:
        raise ValueError("config mismatch: checkpoint architecture differs from the config")
    data = load_run_data(d, config, seed)
    result = evaluate(data, model)
    _write_json(d / "eval.json", result.to_dict())
    result.table.write_csv(d / "activation.csv")
    files = ["eval.json", "activation.csv"]
    if result.permutation is not None:
        np.savetxt(d / "permutation.csv", result.permutation.matrix, fmt="%d", delimiter=",")
        files.append("permutation.csv")
    write_manifest(d, "eval", files, config, seed)
    v = result.verdict
    return (f"seed {seed}: test MAE {result.test_mae:.3e}, symbolic {v.symbolic_count}/{len(v.categories)}"
            f" (overall {v.overall}), localized factors {v.localized}, structured permutation "
            f"{'recovered' if result.permutation is not None else 'not recovered'}")


def cmd_eval(args) -> int:
    config = resolve_config(args)
    seeds = _seeds(args, config) if args.seed or config else _discover_seeds(args.out)
    for line in _map_seeds(_eval_one, args.jobs, [(args, s) for s in seeds]):
        print(line)
    return EXIT_OK


def cmd_verify_theorem(args) -> int:
    from .latents import LatentStructure
    from .nn import make_rng
    from .theory import verify_structure, verify_theorem1
    rng = make_rng(args.seed[0] if args.seed else 0)
    try:
        if args.counts:
            report = verify_structure(LatentStructure(tuple(args.counts)), args.mode, args.trials, rng)
        else:
            report = verify_theorem1(args.m, args.lc, args.mode, args.trials, rng)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d = report.to_dict()
    runtime = d.pop("runtime_s")
    _write_json(out / "theorem.json", d)
    write_manifest(out, "verify-theorem", ["theorem.json"], None, None, {"runtime_s": runtime})
    print(f"{d['label']} for {list(report.counts)} ({args.mode}): tested {report.bijections_tested}, "
          f"realizable {report.realizable}, structured {report.structured}, "
          f"violations {report.violations} [{runtime:.2f} s]")
    return EXIT_OK if report.holds else EXIT_RUNTIME


def _generalize_one(job) -> str:
    from .generalization import HpoSpace, SplitSpec, ideal_encoder, model_encoder, run_comparison
    from .sprites import render_categories
    args, seed = job
    d = _seed_dir(args.out, seed)
    config = _config_for_run(args, d)
    if args.encoder == "model":
        ckpt = Path(args.checkpoint) if args.checkpoint else d / CHECKPOINT_FILE
        if not ckpt.is_file():
            raise FileNotFoundError(f"checkpoint {ckpt} not found (run train first)")
        model, _ = load_checkpoint(ckpt)
        encoder = model_encoder(model)
    else:
        encoder = ideal_encoder(config.structure)
    if config.is_vision:
        observe = render_categories
    else:
        from .experiment import build_phi
        observe = build_phi(config, seed)
    space = HpoSpace(trials=args.hpo_trials, max_epochs=args.max_epochs)
    sizes = args.sizes or list(config.generalization.sizes)
    gen_seeds = args.gen_seeds or list(config.generalization.seeds)
    splits = [args.split] if args.split else list(config.generalization.splits)
    files, lines = [], []
    for kind in splits:
        report = run_comparison(config.structure, observe, encoder, SplitSpec(kind), sizes,
                                gen_seeds, space)
        stem = f"comparison-{kind}-{args.encoder}"
        report.write_csv(d / f"{stem}.csv")
        report.write_json(d / f"{stem}.json")
        files += [f"{stem}.csv", f"{stem}.json"]
        for size, mx, _, mz, _ in [(r[0], r[5], r[6], r[7], r[8]) for r in report.table()]:
            lines.append(f"seed {seed} {kind} n={size}: test AUC x {mx:.3f}, zhat {mz:.3f}")
    write_manifest(d, f"generalize-{args.encoder}", files, config, seed)
    return "\n".join(lines)


def cmd_generalize(args) -> int:
    config = resolve_config(args)
    seeds = _seeds(args, config) if args.seed or config else _discover_seeds(args.out)
    for line in _map_seeds(_generalize_one, args.jobs, [(args, s) for s in seeds]):
        print(line)
    return EXIT_OK


def cmd_render_sprites(args) -> int:
    from .latents import Dataset, save_dataset
    from .sprites import STRUCTURE, make_vision_split, render_corpus, save_png, SIZE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cats, x = render_corpus()
    save_dataset(Dataset(STRUCTURE, cats, x), out / "corpus.wtad")
    tr, val, te = make_vision_split(cats)
    _write_json(out / "split.json", {"train": tr.tolist(), "val": val.tolist(), "test": te.tolist()})
    files = ["corpus.wtad", "split.json"]
    if args.png:
        png_dir = out / "png"
        png_dir.mkdir(exist_ok=True)
        for i in range(min(args.png, len(cats))):
            name = "png/" + "_".join(str(int(c)) for c in cats[i]) + ".png"
            save_png(x[i].reshape(SIZE, SIZE, 3), out / name)
            files.append(name)
    write_manifest(out, "render-sprites", files, None, None)
    print(f"wrote {len(cats)} images ({len(tr)}/{len(val)}/{len(te)} train/val/test) to {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wtasym", description="Multi-WTA symbolic representation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="experiment config (JSON)")
            p.add_argument("--preset", help=f"bundled preset ({', '.join(preset_names())})")
        p.add_argument("--seed", type=int, nargs="+", help="root seed(s); default: config seeds")
        p.add_argument("--out", type=Path, default=Path("runs"), help="run directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel seeds")

    p = sub.add_parser("gen-data", help="generate datasets and task banks")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the WTA predictor")
    common(p)
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="symbolic evaluation of a trained model")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: run directory)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify-theorem", help="exhaustive or sampled identifiability check")
    common(p, config=False)
    p.add_argument("--m", type=int, default=2, help="number of factors")
    p.add_argument("--lc", type=int, default=2, help="categories per factor")
    p.add_argument("--counts", type=int, nargs="+", help="mixed category counts instead of --m/--lc")
    p.add_argument("--mode", choices=("exhaustive", "sampled"), default="exhaustive")
    p.add_argument("--trials", type=int, default=10_000, help="random bijections in sampled mode")
    p.set_defaults(fn=cmd_verify_theorem)

    p = sub.add_parser("generalize", help="MLP on x vs MLP on the WTA code")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: run directory)")
    p.add_argument("--encoder", choices=("model", "ideal"), default="model")
    p.add_argument("--split", choices=("random", "pair-of-categories", "constant-category", "vision"))
    p.add_argument("--sizes", type=int, nargs="+", help="training-set sizes")
    p.add_argument("--gen-seeds", type=int, nargs="+", help="downstream task seeds")
    p.add_argument("--hpo-trials", type=int, default=20)
    p.add_argument("--max-epochs", type=int, default=500)
    p.set_defaults(fn=cmd_generalize)

    p = sub.add_parser("render-sprites", help="render the sprite corpus")
    common(p, config=False)
    p.add_argument("--png", type=int, default=0, help="also export the first N images as PNG")
    p.set_defaults(fn=cmd_render_sprites)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"wtasym: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"wtasym: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
