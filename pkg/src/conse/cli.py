"""``conse`` command line: embed, eval, hops, synth.

Exit status: 0 success, 2 input error, 3 degenerate-data error.
Set ``CONSE_LOG`` (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from . import __version__
from .core import conse_embed, iter_scores
from .embeddings import read_splits, Split
from .errors import ConseError, DegenerateDataError, InputError
from .evaluation import DEFAULT_KS, Assets, CandidateMode, EvalConfig, evaluate_batch
from .hierarchy import hop_candidate_set, load_hierarchy
from .synth import SynthConfig, generate, write_liger_fixture

logger = logging.getLogger("conse")

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 2, 3


@dataclass
class RunManifest:
    command: str
    inputs: dict
    config: dict
    config_hash: str
    tool_version: str = __version__
    started_at: str = ""
    finished_at: str = ""
    outputs: dict = field(default_factory=dict)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _hops(value: str) -> Optional[int]:
    if value.lower() in ("inf", "all", "none"):
        return None
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("max hops must be >= 1")
    return n


def _ks(value: str) -> list[int]:
    try:
        ks = [int(x) for x in value.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {value!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("ks must be positive integers")
    return ks


# defaults live here, not in argparse, so config-file values can fill gaps
DEFAULTS = {
    "embed": {"T": 10},
    "eval": {
        "T": 10,
        "candidate_mode": "TEST_ONLY",
        "ks": list(DEFAULT_KS),
        "max_hops": None,
        "threads": None,
    },
    "hops": {"max_hops": [2, 3, None]},
    "synth": {f.name: f.default for f in fields(SynthConfig)},
}
PATH_KEYS = {"embeddings", "catalog", "splits", "scores", "hierarchy", "out", "table_out", "manifest"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of option values; flags override it")
        p.add_argument("--manifest", help="run manifest path (default: <out>.manifest.json)")

    def assets(p):
        p.add_argument("--embeddings", help="embedding text file")
        p.add_argument("--catalog", help="label map TSV")
        p.add_argument("--splits", help="split file")
        p.add_argument("--scores", help="score JSON-lines file")
        p.add_argument("--T", type=int, help="top-T predictions to combine")

    p = sub.add_parser("embed", help="write one ConSE vector per image")
    common(p)
    assets(p)
    p.add_argument("--out", help="output JSON-lines path")

    p = sub.add_parser("eval", help="flat hit@k / hierarchical precision@k report")
    common(p)
    assets(p)
    p.add_argument("--hierarchy", help="hierarchy edge file")
    p.add_argument("--max-hops", dest="max_hops", type=_hops)
    p.add_argument(
        "--candidate-mode", dest="candidate_mode", choices=[m.value for m in CandidateMode]
    )
    p.add_argument("--ks", type=_ks, help="comma-separated k values")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--table-out", dest="table_out", help="also write the text table here")

    p = sub.add_parser("hops", help="list test labels within N hops of a training label")
    common(p)
    p.add_argument("--hierarchy", help="hierarchy edge file")
    p.add_argument("--splits", help="split file")
    p.add_argument("--max-hops", dest="max_hops", type=_hops, nargs="+")
    p.add_argument("--out", help="JSON listing path")

    p = sub.add_parser("synth", help="generate a synthetic bundle")
    common(p)
    p.add_argument("--out", help="bundle directory")
    p.add_argument("--liger", action="store_true", help="write the 2-D lion/tiger/liger fixture")
    for f in fields(SynthConfig):
        kind = float if f.type in ("float", "Optional[float]") else int
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind)
    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < explicit flags."""
    opts = dict(DEFAULTS.get(args.command, {}))
    if args.config:
        with open(args.config) as fh:
            opts.update(json.load(fh))
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        if value is False and key == "liger":
            opts.setdefault(key, False)
            continue
        opts[key] = value
    return opts


def _require(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if not opts.get(k)]
    if missing:
        raise InputError("missing required option(s): " + ", ".join("--" + k for k in missing))


def _manifest(command: str, opts: dict, started: str) -> RunManifest:
    inputs = {k: str(Path(v).resolve()) for k, v in opts.items() if k in PATH_KEYS and v}
    config = {k: v for k, v in opts.items() if k not in PATH_KEYS}
    return RunManifest(command, inputs, config, config_hash(config), started_at=started)


def _finish(manifest: RunManifest, opts: dict, default_path: Optional[str]) -> None:
    manifest.finished_at = _now()
    path = opts.get("manifest") or default_path
    if path:
        manifest.write(path)
    else:
        print(json.dumps(asdict(manifest), sort_keys=True), file=sys.stderr)


def cmd_embed(opts: dict) -> int:
    _require(opts, "embeddings", "catalog", "splits", "scores", "out")
    started = _now()
    assets = Assets.load(opts["embeddings"], opts["catalog"], opts["splits"])
    T = int(opts["T"])
    count = 0
    zero = []
    with open(opts["out"], "w") as out:
        for rec in iter_scores(opts["scores"], assets.catalog.train_order):
            v = conse_embed(rec, T, assets.embeddings)
            out.write(json.dumps(v.to_json()) + "\n")
            count += 1
            if v.norm == 0:
                zero.append(v.image_id)
    logger.info("wrote %d vectors to %s", count, opts["out"])
    manifest = _manifest("embed", opts, started)
    manifest.outputs = {
        "vectors": count,
        "zero_norm": zero,
        "excluded_labels": assets.catalog.exclusion_report(),
    }
    _finish(manifest, opts, opts["out"] + ".manifest.json")
    if zero:
        print(f"conse embed: zero-norm vectors for {', '.join(zero)}", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_eval(opts: dict) -> int:
    _require(opts, "embeddings", "catalog", "splits", "scores")
    started = _now()
    assets = Assets.load(opts["embeddings"], opts["catalog"], opts["splits"], opts.get("hierarchy"))
    config = EvalConfig(
        T=int(opts["T"]),
        candidate_mode=CandidateMode(opts["candidate_mode"]),
        ks=tuple(opts["ks"]),
        max_hops=opts.get("max_hops"),
        threads=opts.get("threads"),
    )
    records = iter_scores(opts["scores"], assets.catalog.train_order)
    report = evaluate_batch(records, config, assets)
    table = report.format_table()
    print(table)
    payload = report.to_json()
    payload["excluded_labels"] = assets.catalog.exclusion_report()
    if assets.hierarchy is not None:
        payload["disconnected_labels"] = assets.hierarchy.disconnected(
            lab.label_id for lab in assets.catalog.labels
        )
    if opts.get("out"):
        Path(opts["out"]).write_text(json.dumps(payload, indent=2) + "\n")
    if opts.get("table_out"):
        Path(opts["table_out"]).write_text(table + "\n")
    manifest = _manifest("eval", opts, started)
    manifest.outputs = {"total": report.total, "skipped": len(report.skipped)}
    _finish(manifest, opts, opts["out"] + ".manifest.json" if opts.get("out") else None)
    return EXIT_OK


def cmd_hops(opts: dict) -> int:
    _require(opts, "hierarchy", "splits")
    started = _now()
    splits = read_splits(opts["splits"])
    h = load_hierarchy(opts["hierarchy"], splits)
    train = [y for y, s in splits.items() if s is Split.TRAIN]
    test = [y for y, s in splits.items() if s is Split.TEST]
    listing = []
    for max_hops in opts["max_hops"]:
        members = sorted(hop_candidate_set(h, train, test, max_hops))
        label = "inf" if max_hops is None else str(max_hops)
        print(f"max_hops={label}: {len(members)} labels")
        print("  " + " ".join(str(m) for m in members))
        listing.append({"max_hops": max_hops, "size": len(members), "labels": members})
    if opts.get("out"):
        Path(opts["out"]).write_text(json.dumps(listing, indent=2) + "\n")
    manifest = _manifest("hops", opts, started)
    manifest.outputs = {
        "sizes": {"inf" if x["max_hops"] is None else str(x["max_hops"]): x["size"] for x in listing}
    }
    _finish(manifest, opts, opts["out"] + ".manifest.json" if opts.get("out") else None)
    return EXIT_OK


def cmd_synth(opts: dict) -> int:
    _require(opts, "out")
    started = _now()
    if opts.get("liger"):
        root = write_liger_fixture(opts["out"])
    else:
        config = SynthConfig(**{f.name: opts[f.name] for f in fields(SynthConfig)})
        root = generate(config, opts["out"])
    print(root)
    manifest = _manifest("synth", opts, started)
    _finish(manifest, opts, str(Path(root) / "run_manifest.json"))
    return EXIT_OK


COMMANDS = {"embed": cmd_embed, "eval": cmd_eval, "hops": cmd_hops, "synth": cmd_synth}


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CONSE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except DegenerateDataError as exc:
        print(f"conse {args.command}: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ConseError, ValueError, OSError) as exc:
        print(f"conse {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
