"""Command-line front end: ``rankaware <command> --out DIR [flags]``.

Flags are named after config fields. ``--config FILE`` reads ``key = value``
lines with the same names (underscores), and explicit flags win over the file,
which wins over defaults. Every run prints its resolved config, in that same
``key = value`` form, and writes it to ``DIR/<command>.cfg``.

Relative input paths are looked up under ``--out`` first, then in the working
directory. Failures print one JSON line on stderr and exit 2 (bad flags),
3 (data) or 4 (numerics).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from ._io import atomic_write_text
from .data import (
    SplitSpec,
    load_dataset,
    make_kfold,
    make_split,
    read_pairs,
    transitive_closure,
    validate_pairs,
    write_pairs,
)
from .exceptions import CycleError, DataError, MissingFileError, NumericError, RankAwareError
from .train import TrainConfig, _coerce, parse_flat

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_OTHER = 0, 2, 3, 4, 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _bool(text: str) -> bool:
    return _coerce(text, bool, "flag")


def _synth_fields():
    from .synth import SynthSpec

    return [(f.name, type(f.default)) for f in fields(SynthSpec)]


def _train_fields():
    return [(k, type(v)) for k, v in TrainConfig().to_flat().items() if k != "T_default"]


def _add_fields(p, items, skip=()):
    for name, typ in items:
        if name in skip:
            continue
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=_bool if typ is bool else typ, default=None)


def _common(p, needs=()):
    p.add_argument("--out", required=True, help="directory receiving every output")
    p.add_argument("--config", default=None, help="key = value file; flags override it")
    for name in needs:
        p.add_argument("--" + name, dest=name, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rankaware", description="Rank-aware attention ranking of segment features.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a planted-signal dataset")
    _common(p)
    _add_fields(p, _synth_fields())

    p = sub.add_parser("closure", help="transitive closure of a pair file")
    _common(p, ["pairs"])

    p = sub.add_parser("split", help="seeded video-level train/test split")
    _common(p, ["manifest", "pairs"])
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=None)
    p.add_argument("--folds", type=int, default=None, help="k > 1 writes k folds instead of one split")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train a model on a split's training pairs")
    _common(p, ["manifest", "split", "pairs"])
    _add_fields(p, _train_fields())

    p = sub.add_parser("eval", help="pairwise accuracy of a checkpoint")
    _common(p, ["manifest", "split", "pairs", "checkpoint"])
    p.add_argument("--scorer", default=None, choices=("fused", "high", "low", "uniform"))

    p = sub.add_parser("ablate", help="loss and K ablations over several seeds")
    _common(p, ["manifest", "split"])
    _add_fields(p, _train_fields(), skip=("seed",))
    p.add_argument("--seeds", default=None, help="comma-separated training seeds")
    p.add_argument("--k-values", dest="k_values", default=None, help="comma-separated K values")

    p = sub.add_parser("export-attention", help="per-segment attention CSV for one video")
    _common(p, ["manifest", "checkpoint", "video"])

    p = sub.add_parser("validate", help="check features and pair annotations")
    _common(p, ["manifest", "pairs"])
    return parser


DEFAULTS = {
    "closure": {},
    "split": {"test_fraction": 0.25, "folds": 0, "seed": 0, "pairs": "pairs.csv", "manifest": "manifest.txt"},
    "train": {"manifest": "manifest.txt", "split": "split.json"},
    "eval": {"manifest": "manifest.txt", "split": "split.json", "checkpoint": "last", "scorer": "fused"},
    "ablate": {"manifest": "manifest.txt", "split": "split.json", "seeds": "0", "k_values": "1,2,3,4"},
    "export-attention": {"manifest": "manifest.txt", "checkpoint": "last"},
    "validate": {"manifest": "manifest.txt"},
}


def _resolve_args(parser, argv):
    """Parse flags, then fill unset values from ``--config`` and the defaults."""
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "out", "config")}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise MissingFileError(f"config file not found: {path}")
        for key, raw in parse_flat(path.read_text(encoding="utf-8")).items():
            if key not in actions:
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            if getattr(args, key) is None:
                action = actions[key]
                value = action.type(raw) if action.type else raw
                if action.choices and value not in action.choices:
                    raise UsageError(f"config key {key}: {value!r} not in {list(action.choices)}")
                setattr(args, key, value)
    for key, value in DEFAULTS.get(args.command, {}).items():
        if getattr(args, key) is None:
            setattr(args, key, value)
    return args, [a for a in actions if a in vars(args)]


def _input(args, value) -> Path:
    path = Path(value)
    if not path.is_absolute() and (Path(args.out) / path).exists():
        return Path(args.out) / path
    return path


def _checkpoint(args) -> Path:
    if args.checkpoint == "last":
        return Path(args.out) / "checkpoints" / "last.rskm"
    return _input(args, args.checkpoint)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _echo(args, keys, extra: dict | None = None) -> dict:
    resolved = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
    resolved.update(extra or {})
    text = "".join(f"{k} = {_fmt(v)}\n" for k, v in resolved.items())
    print(f"# resolved {args.command} config")
    print(text, end="")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / f"{args.command}.cfg", text)
    return resolved


def _train_config(args, keys, **override) -> TrainConfig:
    flat = {k: getattr(args, k) for k in keys if k in TrainConfig().to_flat() and getattr(args, k) is not None}
    flat.update(override)
    try:
        return TrainConfig.from_flat(flat)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_split(args) -> SplitSpec:
    path = _input(args, args.split)
    if not path.is_file():
        raise MissingFileError(f"split file not found: {path}")
    return SplitSpec.from_json(path.read_text(encoding="utf-8"))


def _print_json(obj):
    print(json.dumps(obj, sort_keys=True))


# ------------------------------------------------------------------- commands

def cmd_synth(args, keys):
    from .synth import SynthSpec, generate, write_dataset

    values = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
    try:
        spec = SynthSpec(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    args_all = spec.as_dict()
    for k, v in args_all.items():
        setattr(args, k, v)
    _echo(args, list(args_all))
    ds = generate(spec)
    paths = write_dataset(ds, args.out)
    _print_json({"videos": len(ds.videos), "pairs": len(ds.pairs), **{k: str(v) for k, v in paths.items()}})


def cmd_closure(args, keys):
    if args.pairs is None:
        raise UsageError("closure needs --pairs")
    _echo(args, keys)
    pairs = read_pairs(_input(args, args.pairs))
    closed = transitive_closure(pairs)
    path = Path(args.out) / "closure.csv"
    write_pairs(closed, path, with_origin=True)
    _print_json({"annotated": len(pairs), "closed": len(closed), "path": str(path)})


def cmd_split(args, keys):
    _echo(args, keys)
    videos = load_dataset(_input(args, args.manifest))
    pairs = read_pairs(_input(args, args.pairs))
    try:
        if args.folds and args.folds > 1:
            splits = make_kfold(list(videos), pairs, args.folds, args.seed)
            names = [f"split_fold{s.fold}.json" for s in splits]
        else:
            splits = [make_split(list(videos), pairs, args.test_fraction, args.seed)]
            names = ["split.json"]
    except ValueError as exc:
        if isinstance(exc, RankAwareError):
            raise
        raise UsageError(str(exc)) from exc
    for s, name in zip(splits, names):
        atomic_write_text(Path(args.out) / name, s.to_json())
        _print_json({"split": name, "train_pairs": len(s.train_pairs), "test_pairs": len(s.test_pairs),
                     "dropped_pairs": s.dropped_pairs})


def _train_pairs(args):
    if args.pairs is not None:
        return read_pairs(_input(args, args.pairs))
    return _load_split(args).train_pairs


def cmd_train(args, keys):
    from .train import train

    videos = load_dataset(_input(args, args.manifest))
    pairs = _train_pairs(args)
    T = next(iter(videos.values())).T
    cfg = _train_config(args, keys, T_default=T)
    _echo(args, ["manifest", "split", "pairs"], cfg.to_flat())
    out = Path(args.out)
    _, history = train(videos, pairs, cfg, out_dir=out, log_path=out / "train_log.jsonl")
    last = history.records[-1]
    _print_json({"epochs": len(history.records), "train_accuracy": last.train_accuracy,
                 "total_loss": last.losses.total, "checkpoint": history.checkpoints[-1]})


def cmd_eval(args, keys):
    from .eval import pairwise_accuracy
    from .model import load_checkpoint

    _echo(args, keys)
    model = load_checkpoint(_checkpoint(args))
    videos = load_dataset(_input(args, args.manifest), expected_dim=model.D)
    pairs = read_pairs(_input(args, args.pairs)) if args.pairs is not None else _load_split(args).test_pairs
    report = pairwise_accuracy(model, videos, pairs, args.scorer)
    atomic_write_text(Path(args.out) / "eval.jsonl", report.to_records())
    print(report.to_records(), end="")


def _int_list(text, name):
    try:
        values = [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--{name} expects comma-separated integers") from None
    if not values:
        raise UsageError(f"--{name} is empty")
    return values


def cmd_ablate(args, keys):
    from .eval import ablation_csv, ablation_suite

    seeds = _int_list(args.seeds, "seeds")
    k_values = _int_list(args.k_values, "k-values")
    videos = load_dataset(_input(args, args.manifest))
    split = _load_split(args)
    T = next(iter(videos.values())).T
    cfg = _train_config(args, keys, T_default=T)
    _echo(args, ["manifest", "split", "seeds", "k_values"], cfg.to_flat())
    rows, summary = ablation_suite(videos, split.train_pairs, split.test_pairs, cfg, seeds, k_values)
    atomic_write_text(Path(args.out) / "ablation.csv", ablation_csv(rows))
    atomic_write_text(Path(args.out) / "ablation_summary.json", json.dumps(summary, indent=1) + "\n")
    for row in summary:
        _print_json(row)


def cmd_export_attention(args, keys):
    from .eval import export_attention
    from .model import load_checkpoint

    if args.video is None:
        raise UsageError("export-attention needs --video")
    _echo(args, keys)
    model = load_checkpoint(_checkpoint(args))
    videos = load_dataset(_input(args, args.manifest), expected_dim=model.D)
    if args.video not in videos:
        from .exceptions import UnknownVideoError

        raise UnknownVideoError(f"unknown video id {args.video}")
    path = export_attention(model, videos[args.video], Path(args.out) / f"attention_{args.video}.csv")
    _print_json({"video": args.video, "segments": videos[args.video].T, "path": str(path)})


def cmd_validate(args, keys):
    _echo(args, keys)
    videos = load_dataset(_input(args, args.manifest))
    issues = []
    n_pairs = 0
    if args.pairs is not None:
        pairs = read_pairs(_input(args, args.pairs))
        n_pairs = len(pairs)
        issues = validate_pairs(pairs, videos.keys())
        try:
            transitive_closure(pairs)
        except CycleError as exc:
            issues.append(str(exc))
    report = {"videos": len(videos), "pairs": n_pairs, "issues": issues}
    atomic_write_text(Path(args.out) / "validate.json", json.dumps(report, indent=1) + "\n")
    _print_json(report)
    if issues:
        raise DataError(f"{len(issues)} issue(s): " + "; ".join(issues))


COMMANDS = {
    "synth": cmd_synth,
    "closure": cmd_closure,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "export-attention": cmd_export_attention,
    "validate": cmd_validate,
}


def _fail(code: int, exc: BaseException) -> int:
    doc = {"error": type(exc).__name__, "exit": code, "message": " ".join(str(exc).split())}
    if isinstance(exc, CycleError):
        doc["cycle"] = exc.cycle
    print(json.dumps(doc), file=sys.stderr)
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args, keys = _resolve_args(parser, argv)
        COMMANDS[args.command](args, keys)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except DataError as exc:
        return _fail(EXIT_DATA, exc)
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except RankAwareError as exc:
        return _fail(EXIT_OTHER, exc)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
