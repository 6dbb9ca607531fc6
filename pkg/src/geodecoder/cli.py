"""`geodecoder` command line: worldgen | datagen | train | eval | infer | gradcheck | render."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import model as M
from .config import RunConfig, dump_config, load_config
from .render import read_ppm, write_ppm
from .taskgen import TaskKind, build_dataset, load_vocab, load_world, make_sample, sample_rng
from .textcodec import decode, encode
from .worldgen import generate_world, world_from_json, world_to_json

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; usage problems are validation errors here
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geodecoder", description="Synthetic map worlds, map-image QA datasets, and a small expert transformer.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def cmd(name, help_text):
        s = sub.add_parser(name, help=help_text, description=help_text)
        s.add_argument("--config", help="run config (JSON); defaults apply to absent fields")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--force", action="store_true", help="overwrite existing outputs")
        return s

    s = cmd("worldgen", "generate a synthetic world file")
    s.add_argument("--out", required=True, help="world JSON path")
    s = cmd("datagen", "render samples and write a dataset directory")
    s.add_argument("--out", help="dataset directory (default: paths.dataset)")
    s.add_argument("--world", help="world file to use instead of generating one")
    s = cmd("train", "train a model on a dataset")
    s.add_argument("--out", help="run directory (default: paths.run_dir)")
    s.add_argument("--dataset", help="dataset directory (default: paths.dataset)")
    s.add_argument("--split", choices=("train", "val", "test", "all"), default="train")
    s = cmd("eval", "score a checkpoint on a dataset split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", help="dataset directory (default: paths.dataset)")
    s.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    s.add_argument("--out", required=True, help="report directory")
    s = cmd("infer", "generate an answer for one image and prompt")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True, help="PPM image")
    s.add_argument("--prompt", required=True)
    s.add_argument("--max-len", type=int, default=None)
    s = cmd("gradcheck", "compare tape gradients with finite differences on the configured model")
    s = cmd("render", "render one generated sample to a PPM file")
    s.add_argument("--kind", required=True, choices=[k.value for k in TaskKind])
    s.add_argument("--index", type=int, default=0, help="sample index within the seed's substreams")
    s.add_argument("--world", help="world file to use instead of generating one")
    s.add_argument("--out", required=True, help="PPM path")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ValueError("--seed must be non-negative")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _guard(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _guard_dir(path: Path, marker: str, force: bool) -> None:
    if (path / marker).exists() and not force:
        raise FileExistsError(f"{path / marker} exists; pass --force to overwrite")


def _world(cfg: RunConfig, path: Optional[str]):
    path = path or cfg.paths.world
    if path:
        return world_from_json(Path(path).read_text(encoding="utf-8"))
    return generate_world(cfg.seed, cfg.world)


def cmd_worldgen(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    _guard(out, args.force)
    world = generate_world(cfg.seed, cfg.world)
    out.write_text(world_to_json(world), encoding="utf-8")
    print(f"wrote {out}: {len(world.roads)} roads, {len(world.aois)} AOIs, {len(world.pois)} POIs")
    return EXIT_OK


def cmd_datagen(args, cfg: RunConfig) -> int:
    out = Path(args.out or cfg.paths.dataset)
    _guard_dir(out, "manifest.jsonl", args.force)
    world = _world(cfg, args.world)
    mix = cfg.data.resolved_mix()
    rows = build_dataset(world, mix, cfg.seed, out, cfg.data.policy, cfg.data.options, cfg.data.threads)
    (out / "config.json").write_text(dump_config(cfg), encoding="utf-8")
    splits = {s: sum(r["split"] == s for r in rows) for s in ("train", "val", "test")}
    print(f"wrote {len(rows)} samples to {out} " + " ".join(f"{k}={v}" for k, v in splits.items()))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    from .trainer import train_from_dataset

    out = Path(args.out or cfg.paths.run_dir)
    _guard_dir(out, "checkpoint.ckpt", args.force)
    dataset = Path(args.dataset or cfg.paths.dataset)
    hyper = dataclasses.replace(cfg.train, seed=cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg), encoding="utf-8")
    result = train_from_dataset(cfg.model, hyper, dataset, out, args.split)
    last = result.losses[-1][1] if result.losses else float("nan")
    print(f"trained {result.steps} steps, final loss {last:.4f}; checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    from .evaluation import evaluate, write_report
    from .trainer import encode_rows, load_checkpoint, select_rows

    out = Path(args.out)
    _guard_dir(out, "report.json", args.force)
    ckpt = load_checkpoint(args.checkpoint)
    dataset = Path(args.dataset or cfg.paths.dataset)
    vocab = load_vocab(dataset)
    if vocab != ckpt.vocab:
        raise ValueError("dataset vocabulary differs from the checkpoint's")
    rows = select_rows(dataset, args.split)
    if cfg.eval.max_samples is not None:
        rows = rows[: cfg.eval.max_samples]
    if not rows:
        raise ValueError(f"split {args.split!r} of {dataset} is empty")
    data = encode_rows(dataset, rows, vocab)
    world = load_world(dataset)
    meta = json.loads((dataset / "dataset.json").read_text(encoding="utf-8"))
    classes = meta.get("options", {}).get("element_classes")
    report, preds = evaluate(ckpt.config, ckpt.params, vocab, data, world, cfg.eval.batch_size, cfg.eval.ranked,
                             classes, cfg.eval.road_threshold_m)
    report = {"checkpoint": str(args.checkpoint), "split": args.split, **report}
    write_report(report, preds, rows, out)
    for kind, res in report["tasks"].items():
        extra = f" ranked {res['ranked_accuracy_pct']:.1f}%" if "ranked_accuracy_pct" in res else ""
        print(f"{kind:<17} n={res['n']:<5} exact {res['exact_match_pct']:.1f}%{extra}")
    print(f"report: {out / 'report.json'}")
    return EXIT_OK


def cmd_infer(args, cfg: RunConfig) -> int:
    from .trainer import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    raster = read_ppm(Path(args.image).read_bytes())
    ids = M.generate(ckpt.config, ckpt.params, raster, encode(ckpt.vocab, args.prompt), max_len=args.max_len,
                     vocab_limit=len(ckpt.vocab))
    print(decode(ckpt.vocab, ids))
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    errs = M.gradcheck_model(cfg.model, seed=cfg.seed)
    worst = max(errs, key=errs.get)
    print(f"max relative gradient error {errs[worst]:.3e} ({worst}) over {len(errs)} tensors")
    return EXIT_OK if errs[worst] <= GRADCHECK_TOLERANCE else EXIT_INVALID


def cmd_render(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    _guard(out, args.force)
    world = _world(cfg, args.world)
    s = make_sample(world, TaskKind(args.kind), cfg.data.policy, sample_rng(cfg.seed, args.index), cfg.data.options)
    out.write_bytes(write_ppm(s.raster))
    print(f"input:  {s.input_text}\ntarget: {s.target_text}\nwrote {out}")
    return EXIT_OK


COMMANDS = {
    "worldgen": cmd_worldgen,
    "datagen": cmd_datagen,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
    "render": cmd_render,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (FileExistsError, FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())
