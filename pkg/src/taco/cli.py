"""``taco`` command-line entry point.

Every subcommand takes ``--config``, ``--seed``, ``--deterministic``,
``--out`` and repeatable ``--set section.key=value``; each run writes
``run.json`` into ``--out`` with the resolved configuration, which
``taco replay run.json`` re-executes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import RunConfig, parse_literal, read_config_file, resolve_config
from .errors import ConfigError, DataError

logger = logging.getLogger("taco")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
COMMANDS = ("datagen", "pretrain", "linear-eval", "finetune", "evaluate", "validate", "show-config")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML config file (or a previous run.json)")
    p.add_argument("--seed", type=int, help="overrides TACO_SEED and the config file")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="single-worker, fixed-order execution")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set loss.tau=0.5")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="taco", description="Textual attribute pre-training toolkit.")
    parser.add_argument("--version", action="version", version=f"taco {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("datagen", help="render a synthetic labeled dataset")
    _common(p)
    p.add_argument("--count", type=int)

    for name, text in (("pretrain", "self-supervised pre-training"),
                       ("linear-eval", "train linear heads on a frozen backbone"),
                       ("finetune", "train the whole network on labels"),
                       ("evaluate", "print attribute metrics of a checkpoint"),
                       ("validate", "check a dataset manifest")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--manifest")
        if name != "validate" and name != "pretrain":
            p.add_argument("--checkpoint")
        if name in ("linear-eval", "finetune"):
            p.add_argument("--random-init", action="store_true", default=None)

    p = sub.add_parser("show-config", help="print the resolved configuration")
    _common(p)

    p = sub.add_parser("replay", help="re-execute a run from its run.json")
    p.add_argument("record", help="path to run.json")
    p.add_argument("--out", help="output directory (defaults to the recorded one)")
    return parser


def _abs(path: Optional[str]) -> Optional[str]:
    return str(Path(path).resolve()) if path else None


def flags_from_args(args: argparse.Namespace) -> dict:
    flags = {"seed": args.seed, "deterministic": args.deterministic, "out": args.out}
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        flags[key.strip()] = parse_literal(raw.strip())
    if getattr(args, "count", None) is not None:
        flags["datagen.count"] = args.count
    if getattr(args, "manifest", None):
        flags["pipeline.manifest"] = _abs(args.manifest)
    if getattr(args, "checkpoint", None):
        flags["pipeline.checkpoint"] = _abs(args.checkpoint)
    if getattr(args, "random_init", None):
        flags["pipeline.random_init"] = True
    return flags


def write_run_record(cfg: RunConfig, command: str, argv: Sequence[str]) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    record = {"command": command, "seed": cfg.seed, "config": cfg.to_dict(),
              "sources": dict(cfg.sources), "argv": list(argv), "version": __version__}
    path = out / "run.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _require(cfg: RunConfig, key: str) -> str:
    value = getattr(cfg.pipeline, key)
    if not value:
        raise ConfigError(f"missing required key pipeline.{key} (pass --{key})")
    return value


def _manifest(cfg: RunConfig):
    from .datagen import DatasetManifest
    path = Path(_require(cfg, "manifest"))
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    return DatasetManifest.load(path)


def _dump(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_command(command: str, cfg: RunConfig) -> int:
    from . import pipeline
    from .datagen import generate_dataset, validate_manifest

    out = Path(cfg.out)
    if command == "show-config":
        print(cfg.to_toml(), end="")
        print("# sources: " + json.dumps(cfg.sources, sort_keys=True))
    elif command == "datagen":
        manifest = generate_dataset(cfg.datagen, out, seed=cfg.seed)
        print(out / "manifest.jsonl")
        logger.info("mixed fraction %.3f", manifest.mixed_fraction)
    elif command == "validate":
        violations = validate_manifest(_require(cfg, "manifest"))
        for v in violations:
            print(f"{v.kind}\t{v.index}\t{v.message}")
        if violations:
            raise DataError(f"{len(violations)} manifest violation(s)")
        print("ok")
    elif command == "pretrain":
        result = pipeline.pretrain(cfg, _manifest(cfg), out)
        print(result.checkpoint)
    elif command == "linear-eval":
        manifest = _manifest(cfg)
        ckpt = None if cfg.pipeline.random_init else _require(cfg, "checkpoint")
        result = pipeline.linear_eval(cfg, manifest, ckpt)
        _dump(out / "linear_eval.json", result.report.to_dict())
        print(result.report.to_json())
    elif command == "finetune":
        manifest = _manifest(cfg)
        ckpt = None if cfg.pipeline.random_init else _require(cfg, "checkpoint")
        result = pipeline.finetune(cfg, manifest, ckpt, out)
        _dump(out / "finetune_metrics.json", result.report.to_dict())
        print(result.report.to_json())
    elif command == "evaluate":
        report = pipeline.evaluate(_require(cfg, "checkpoint"), _manifest(cfg))
        _dump(out / "metrics.json", report.to_dict())
        print(report.to_json())
    else:
        raise ConfigError(f"unknown command {command!r}")
    return EXIT_OK


def _dispatch(argv: Sequence[str]) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        record = read_config_file(args.record)
        raw = json.loads(Path(args.record).read_text(encoding="utf-8"))
        command = raw.get("command")
        if command not in COMMANDS:
            raise ConfigError(f"{args.record} does not record a taco command")
        cfg = RunConfig()
        cfg.update(record, "file")
        if args.out:
            cfg.set("out", args.out, "flag")
        cfg.validate()
    else:
        command = args.command
        cfg = resolve_config(args.config, flags_from_args(args))
    if cfg.deterministic:
        cfg.pipeline.workers = 0
        cfg.datagen.workers = 1
    write_run_record(cfg, command, argv)
    return run_command(command, cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, DataError) as exc:
        print(f"taco: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        logger.exception("internal error")
        print(f"taco: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
