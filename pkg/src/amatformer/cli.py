"""Command-line entry point: match / train / eval / bench / flops / gen.

Config precedence: built-in defaults < --config JSON file < individual flags
(every config field is also a flag, underscores dashed). Exit codes: 0
success, 2 usage or config errors, 3 file-format errors, 4 shape/index
errors, 5 numeric failures.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

import numpy as np

from . import flops as flops_mod
from . import metrics, pipeline, synth
from . import train as train_mod
from .checkpoint import read_checkpoint, write_checkpoint
from .config import Config, config_from_dict, load_config
from .data import MatchProblem, atomic_write_bytes, read_features
from .errors import (
    AmatformerError,
    FileFormatError,
    NonFiniteValue,
    NotScalar,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_SHAPE = 4
EXIT_NUMERIC = 5


def _exit_code_for(err):
    if isinstance(err, FileFormatError):
        return EXIT_FORMAT
    if isinstance(err, (NonFiniteValue, NotScalar)):
        return EXIT_NUMERIC
    if isinstance(err, AmatformerError):
        return EXIT_SHAPE
    return EXIT_USAGE  # ValueError and friends: bad arguments/config


def _add_config_flags(parser):
    group = parser.add_argument_group("config overrides")
    for f in fields(Config):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            group.add_argument(flag, dest=f.name, default=None,
                               action=argparse.BooleanOptionalAction)
        elif f.name == "frame":
            group.add_argument(flag, dest=f.name, default=None, nargs=2,
                               type=int, metavar=("W", "H"))
        elif isinstance(f.default, int):
            group.add_argument(flag, dest=f.name, default=None, type=int)
        elif isinstance(f.default, float):
            group.add_argument(flag, dest=f.name, default=None, type=float)
        else:
            group.add_argument(flag, dest=f.name, default=None)


def _effective_config(args, base=None):
    if base is None:
        base = load_config(args.config) if getattr(args, "config", None) else Config()
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(Config)
        if getattr(args, f.name, None) is not None
    }
    return config_from_dict(overrides, base=base)


def _thread_cap(requested):
    cap = os.environ.get("AMATCH_THREADS")
    if cap:
        return max(1, min(requested, int(cap)))
    return max(1, requested)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="amatch",
        description="Anchor-bottleneck feature matching: train, match, "
                    "evaluate, and benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="match two feature files")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-csv", default="matches.csv")
    p.add_argument("--summary", default=None, help="summary JSON path")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train on streamed synthetic problems")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", default="model.amck")
    p.add_argument("--metrics", default="metrics.csv")
    p.add_argument("--resume", default=None, help="checkpoint to continue")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a problem dir")
    p.add_argument("problem_dir")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)

    p = sub.add_parser("bench", help="time bottleneck vs full attention")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--k", type=int, default=128)
    p.add_argument("--c", type=int, default=128)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--units", type=int, default=3)
    p.add_argument("--modes", nargs="+",
                   default=["amatformer", "full_attention"])
    p.add_argument("--multi-thread", action="store_true",
                   help="let BLAS use all cores (default pins to one)")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")

    p = sub.add_parser("flops", help="closed-form complexity table")
    p.add_argument("n", type=int)
    p.add_argument("k", type=int)
    p.add_argument("c", type=int)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")

    p = sub.add_parser("gen", help="export synthetic problems to a directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--stem", default="problem")
    p.add_argument("--config", default=None)
    _add_config_flags(p)

    return parser


def _emit(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        atomic_write_bytes(path, text.encode("utf-8"))


def cmd_match(args):
    cfg_ckpt, model, _state = read_checkpoint(args.checkpoint)
    cfg = _effective_config(args, base=cfg_ckpt)
    kps_s, desc_s = read_features(args.source)
    kps_t, desc_t = read_features(args.target)
    problem = MatchProblem(
        source_keypoints=kps_s, source_descriptors=desc_s,
        target_keypoints=kps_t, target_descriptors=desc_t,
    )
    matches, run = pipeline.match_pair(problem, model, cfg)
    lines = ["source_index,target_index,confidence"]
    for (i, j), conf in zip(matches.pairs, matches.confidence):
        lines.append(f"{i},{j},{conf:.6f}")
    _emit(args.out_csv, "\n".join(lines) + "\n")
    if args.summary:
        _emit(args.summary, json.dumps({
            "n": problem.n, "m": problem.m,
            "k": int(len(run.anchors.source_indices)),
            "num_matches": len(matches),
        }, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_train(args):
    if args.resume:
        cfg_ckpt, model, state = read_checkpoint(args.resume)
        cfg = _effective_config(args, base=cfg_ckpt)
        start = state.step if state is not None else 0
    else:
        cfg = _effective_config(args)
        model, state, start = None, None, 0
    result = train_mod.train(cfg, model=model, state=state, start_step=start)
    write_checkpoint(args.out, cfg, result.model, result.state)
    _emit(args.metrics, train_mod.rows_to_csv(result.rows))
    return EXIT_OK


def _discover_stems(directory):
    suffix = "_source.amft"
    stems = sorted(
        name[: -len(suffix)]
        for name in os.listdir(directory)
        if name.endswith(suffix)
    )
    if not stems:
        raise ValueError(f"no problems (*_source.amft) found in {directory}")
    return stems


def cmd_eval(args):
    cfg_ckpt, model, _state = read_checkpoint(args.checkpoint)
    cfg = _effective_config(args, base=cfg_ckpt)
    stems = _discover_stems(args.problem_dir)

    def one(stem):
        problem, gt = synth.read_problem(args.problem_dir, stem)
        pred, _run = pipeline.match_pair(problem, model, cfg)
        return metrics.evaluate(pred, gt, problem.n, problem.m)

    jobs = _thread_cap(args.jobs)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(one, stems))
    else:
        reports = [one(s) for s in stems]

    aggregate = {
        "precision": float(np.mean([r["precision"] for r in reports])),
        "recall": float(np.mean([r["recall"] for r in reports])),
        "matching_score": float(np.mean([r["matching_score"] for r in reports])),
        "num_pred": int(sum(r["num_pred"] for r in reports)),
        "num_gt": int(sum(r["num_gt"] for r in reports)),
        "problems": len(reports),
    }
    _emit(args.out, json.dumps(aggregate, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_bench(args):
    lines = ["mode,n,k,c,median_ms,mad_ms,flops_formula"]
    for mode in args.modes:
        row = flops_mod.bench_forward(
            args.n, args.k, args.c, reps=args.reps, mode=mode,
            warmup=args.warmup, units=args.units,
            single_thread=not args.multi_thread,
        )
        lines.append(
            f"{row['mode']},{row['n']},{row['k']},{row['c']},"
            f"{row['median_ms']:.3f},{row['mad_ms']:.3f},{row['flops_formula']}"
        )
    _emit(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_flops(args):
    lines = [
        "architecture,n,k,c,flops",
        f"amatformer,{args.n},{args.k},{args.c},"
        f"{flops_mod.flops_amatformer(args.n, args.k, args.c)}",
        f"sgmnet,{args.n},{args.k},{args.c},"
        f"{flops_mod.flops_sgmnet(args.n, args.k, args.c)}",
        f"superglue,{args.n},{args.k},{args.c},"
        f"{flops_mod.flops_superglue(args.n, args.c)}",
    ]
    _emit(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_gen(args):
    cfg = _effective_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    for i in range(args.count):
        seed = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(2, i))
        problem, gt, _warp = synth.random_problem(cfg, seed)
        synth.write_problem(args.out_dir, f"{args.stem}{i:04d}", problem, gt)
    return EXIT_OK


_COMMANDS = {
    "match": cmd_match,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "flops": cmd_flops,
    "gen": cmd_gen,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (AmatformerError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        if isinstance(err, OSError) and not isinstance(err, AmatformerError):
            return EXIT_USAGE
        return _exit_code_for(err)


if __name__ == "__main__":
    sys.exit(main())
