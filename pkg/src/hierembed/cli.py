"""Command-line entry point: synth, validate, pairs, train, embed, eval."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from .encoder import EmbeddingModel
from .exceptions import ConfigInvalid, HierEmbedError, MalformedLine
from .hierarchy import forest_stats, load_forest
from .metrics import evaluate
from .mining import sample_eval_pairs
from .synth import SynthConfig, write_synth
from .training import TrainConfig, Trainer
from .utils import fmt_float

PAIR_HEADER = ("term_a", "term_b", "distance")
DATA_KEYS = ("hierarchy", "strings", "pairs")


def read_pairs(path: str | Path, *, labelled: bool = True) -> list[tuple[str, str, int]]:
    """Read a ``term_a, term_b[, distance]`` TSV; distance defaults to 0 when absent."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE))
    if not rows or tuple(rows[0][:2]) != PAIR_HEADER[:2]:
        raise MalformedLine(f"{path}: expected header {'<TAB>'.join(PAIR_HEADER)}")
    has_dist = len(rows[0]) > 2
    if labelled and not has_dist:
        raise MalformedLine(f"{path}: missing distance column")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(rows[0]) or not row[0] or not row[1]:
            raise MalformedLine(f"{path}:{lineno}: bad row")
        try:
            d = int(row[2]) if has_dist else 0
        except ValueError:
            raise MalformedLine(f"{path}:{lineno}: distance must be an integer") from None
        if not 0 <= d <= 3:
            raise MalformedLine(f"{path}:{lineno}: distance must lie in 0..3")
        out.append((row[0], row[1], d))
    return out


def write_pairs(path: str | Path, pairs: Sequence[tuple[str, str, int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(PAIR_HEADER) + "\n")
        for a, b, d in pairs:
            fh.write(f"{a}\t{b}\t{int(d)}\n")


def _read_json(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{path}: config must be a JSON object")
    return data


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _counts(text: str) -> dict[int, int]:
    """``0:2,1:2,2:2,3:4`` or a JSON object."""
    try:
        if text.lstrip().startswith("{"):
            return {int(k): int(v) for k, v in json.loads(text).items()}
        return {int(k): int(v) for k, v in (item.split(":") for item in text.split(","))}
    except (ValueError, json.JSONDecodeError):
        raise argparse.ArgumentTypeError(f"bad per-category counts: {text!r}") from None


_FLAG_TYPES = {
    "learning_rate": float, "weight_decay": float, "batch_size": int, "epochs": int,
    "loss_mode": str, "seed": int, "checkpoint_every": int, "alpha": float, "beta": float,
    "lambda": float, "margin": float, "per_category_counts": _counts, "miner_direction": str,
    "dim": int, "n_buckets": int, "ngram_min": int, "ngram_max": int,
    "include_word_unigrams": _bool, "hash_seed": int,
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    for key in TrainConfig.keys():
        names = [f"--{key.replace('_', '-')}"]
        if "_" in key:
            names.append(f"--{key}")
        p.add_argument(*names, dest=key, type=_FLAG_TYPES[key], default=None,
                       required=key == "seed", metavar=key.upper())
    for key in DATA_KEYS:
        p.add_argument(f"--{key}", dest=key, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierembed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic forest")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", "--out_dir", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("validate", help="parse a forest and print its statistics")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--strings", required=True)

    p = sub.add_parser("pairs", help="sample labelled evaluation pairs")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--strings", required=True)
    p.add_argument("--per-category", "--per_category", dest="per_category", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train an embedding model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="CSV log path (default: log.csv beside --out)")
    p.add_argument("--resume", default=None, help="checkpoint model file to continue from")
    _add_train_flags(p)

    p = sub.add_parser("embed", help="embed one term per line")
    p.add_argument("--model", required=True)
    p.add_argument("--terms", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a model on labelled pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="seed echoed into the report")
    return parser


def _cmd_synth(args) -> None:
    data = _read_json(args.config)
    data["seed"] = args.seed
    write_synth(SynthConfig.from_dict(data), args.out_dir)


def _cmd_validate(args) -> None:
    stats = forest_stats(load_forest(args.hierarchy, args.strings))
    print(json.dumps(stats.to_dict(), separators=(",", ":")))


def _cmd_pairs(args) -> None:
    forest = load_forest(args.hierarchy, args.strings)
    sample = sample_eval_pairs(forest, args.per_category, args.seed)
    write_pairs(args.out, sample.pairs)


def train_settings(args) -> tuple[TrainConfig, dict[str, Any]]:
    """Merge the JSON config with flag overrides; data paths resolve against the config."""
    data = _read_json(args.config)
    base = Path(args.config).parent
    for key in TrainConfig.keys() + DATA_KEYS:
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    paths = {k: data.pop(k, None) for k in DATA_KEYS}
    for k, v in paths.items():
        if v is not None:
            paths[k] = Path(v) if Path(v).is_absolute() or getattr(args, k) is not None else base / v
    return TrainConfig.from_flat(data), paths


def _cmd_train(args) -> None:
    config, paths = train_settings(args)
    forests = []
    if paths["hierarchy"] is not None or paths["strings"] is not None:
        if paths["hierarchy"] is None or paths["strings"] is None:
            raise ConfigInvalid("hierarchy and strings must be given together")
        forests.append(load_forest(paths["hierarchy"], paths["strings"]))
    pairs = []
    if paths["pairs"] is not None:
        pairs = [(a, b) for a, b, d in read_pairs(paths["pairs"], labelled=False) if d == 0]
    trainer = Trainer(config, forests, pairs)
    out = Path(args.out)
    result = trainer.resume(args.resume, out) if args.resume else trainer.run(out)
    result.log.write_csv(args.log or out.with_name("log.csv"))


def _cmd_embed(args) -> None:
    model = EmbeddingModel.load(args.model)
    with open(args.terms, encoding="utf-8") as fh:
        terms = [line.rstrip("\r\n") for line in fh]
    terms = [t for t in terms if t.strip()]
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        for term in terms:
            vec = model.embed(term)
            fh.write(term + "\t" + " ".join(fmt_float(x) for x in vec) + "\n")


def _cmd_eval(args) -> None:
    model = EmbeddingModel.load(args.model)
    report = evaluate(model, read_pairs(args.pairs), model_file=Path(args.model).name, seed=args.seed)
    Path(args.out).write_text(report.to_json(), encoding="utf-8")


COMMANDS = {
    "synth": _cmd_synth, "validate": _cmd_validate, "pairs": _cmd_pairs,
    "train": _cmd_train, "embed": _cmd_embed, "eval": _cmd_eval,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (HierEmbedError, OSError, ValueError, KeyError) as exc:
        print(f"hierembed {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
