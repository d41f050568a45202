"""Command-line entry point: ``thinkgrpo {train,evaluate,reward-check,synth-data,report}``.

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
Every invocation writes a ``manifest-<command>.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .errors import CheckpointError, ConfigError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class RunFailure(RuntimeError):
    """Command ran but did not fully succeed (exit status 1)."""


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@contextmanager
def dir_lock(out_dir: Path):
    """Exclusive lock file so two commands cannot write one directory at once."""
    lock = out_dir / ".thinkgrpo.lock"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunFailure(f"{out_dir} is locked by another run (remove {lock} if stale)") from None
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir} is not writable: {exc}") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def write_manifest(out_dir: Path, manifest: dict) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"manifest-{manifest['command']}.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"warning: could not write manifest: {exc}", file=sys.stderr)


# ---------------------------------------------------------------------------
# commands; each returns (exit status, resolved config snapshot)


def cmd_train(args) -> tuple[int, dict]:
    from .trainer import config_to_dict, load_run_config, train

    cfg, _ = load_run_config(args.config)
    if args.seed is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, seed=args.seed)
    snapshot = config_to_dict(cfg)
    out = Path(args.out)
    with dir_lock(out):
        result = train(cfg, out, resume_from=args.resume)
    print(f"trained to step {result.log.rows[-1]['step'] if result.log.rows else 0}; "
          f"stage switch at step {result.switch_step}; outputs in {out}")
    return EXIT_OK, snapshot


def cmd_evaluate(args) -> tuple[int, dict]:
    from .evaluation import DecodeConfig, evaluate
    from .policy import load_checkpoint
    from .report import bins_chart
    from .tasks import read_jsonl
    from .vocab import Vocabulary

    vocab = Vocabulary.default()
    snapshot = {"checkpoint": args.checkpoint, "corpus": args.corpus, "k": args.k,
                "temperature": args.temperature, "seed": args.seed, "max_len": args.max_len}
    policy = load_checkpoint(args.checkpoint, expected_digest=vocab.digest)
    try:
        corpus = read_jsonl(args.corpus)
    except FileNotFoundError as exc:
        raise ConfigError(f"corpus not found: {args.corpus}") from exc
    out = Path(args.out)
    with dir_lock(out):
        report = evaluate(policy, corpus, args.k, args.temperature, args.seed, vocab=vocab,
                          dcfg=DecodeConfig(max_len=args.max_len))
        report.write(out / "eval_report.json", out / "eval_records.csv")
        if args.svg:
            bins_chart(report.to_json(), out / "length_bins.svg")
    print(f"n={report.n} greedy={report.greedy_accuracy:.3f} majority={report.majority_accuracy:.3f} "
          f"pass1={report.pass1_rate:.3f}")
    return EXIT_OK, snapshot


REWARD_COLUMNS = ("task_id", "stage", "status", "well_formed", "choice",
                  "r_tag", "r_format", "r_accuracy", "r_len", "total")


def cmd_reward_check(args) -> tuple[int, dict]:
    from .rewards import composite_reward
    from .tasks import read_jsonl

    snapshot = {"transcripts": args.transcripts, "corpus": args.corpus, "stage": args.stage}
    if args.stage not in (1, 2):
        raise ConfigError(f"--stage must be 1 or 2, got {args.stage}")
    try:
        tasks = {t.id: t for t in read_jsonl(args.corpus)}
        lines = Path(args.transcripts).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise ConfigError(f"input not found: {exc.filename}") from exc
    unknown = 0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REWARD_COLUMNS)
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                task_id, text = str(obj["task_id"]), str(obj["text"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ConfigError(f"{args.transcripts}:{lineno}: bad transcript line ({exc})") from exc
            task = tasks.get(task_id)
            if task is None:
                unknown += 1
                w.writerow([task_id, args.stage, "unknown_task", "", "", "", "", "", "", ""])
                continue
            rb = composite_reward(args.stage, text, task)
            w.writerow([task_id, args.stage, "ok" if rb.well_formed else "malformed", int(rb.well_formed),
                        rb.choice or "", repr(rb.r_tag), repr(rb.r_format), repr(rb.r_accuracy),
                        repr(rb.r_len), repr(rb.total)])
    if unknown:
        raise RunFailure(f"{unknown} transcript(s) reference unknown task ids (flagged in {out})")
    return EXIT_OK, snapshot


def cmd_synth_data(args) -> tuple[int, dict]:
    from .datagen import HttpProvider, MockProvider, build_corpus

    snapshot = {"provider": args.provider, "train": args.train, "val": args.val, "seed": args.seed,
                "stall_limit": args.stall_limit}
    if args.provider == "mock":
        provider = MockProvider("fresh", seed=args.seed)
    elif args.provider == "mock-repeat":
        provider = MockProvider("repeat", seed=args.seed)
    else:
        provider = HttpProvider()
    out = Path(args.out)
    with dir_lock(out):
        corpus = build_corpus(provider, args.train, args.val, args.seed, out_dir=out,
                              stall_limit=args.stall_limit)
    r = corpus.report
    print(f"status={r.status} batches={r.batches} train={r.train} val={r.val} "
          f"duplicates={r.duplicates} rejected={r.rejected} blocked={r.blocked}")
    if r.status != "ok":
        raise RunFailure(f"corpus incomplete ({r.status}): {r.message}")
    return EXIT_OK, snapshot


def cmd_report(args) -> tuple[int, dict]:
    from .report import render_run_report

    run = Path(args.run_dir)
    if not run.is_dir():
        raise ConfigError(f"run directory not found: {run}")
    for p in render_run_report(run):
        print(p)
    return EXIT_OK, {"run_dir": str(run)}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thinkgrpo", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"thinkgrpo {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the two-stage curriculum")
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--resume", default=None, help="stage-boundary checkpoint to resume stage 2 from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="greedy / majority / pass@1 evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="ScenarioRecord JSON-lines file")
    p.add_argument("--k", type=int, default=8, help="samples per record (default 8)")
    p.add_argument("--temperature", type=float, default=0.2, help="sampling temperature (default 0.2)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--svg", action="store_true", help="also draw the length-bin chart")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reward-check", help="score transcripts with the stage reward")
    p.add_argument("--transcripts", required=True, help="JSON-lines of {task_id, text}")
    p.add_argument("--corpus", required=True)
    p.add_argument("--stage", type=int, default=2)
    p.add_argument("--out", required=True, help="CSV file to write")
    p.set_defaults(func=cmd_reward_check)

    p = sub.add_parser("synth-data", help="build a scenario corpus through a provider")
    p.add_argument("--provider", choices=("mock", "mock-repeat", "http"), default="mock")
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--val", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stall-limit", type=int, default=50)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("report", help="charts and summary for a finished run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def _manifest_dir(args) -> Path:
    if args.command == "reward-check":
        return Path(args.out).parent
    if args.command == "report":
        return Path(args.run_dir)
    return Path(args.out)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: --help (0) or usage error (2)
        return int(exc.code or 0)
    manifest = {
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "config_path": getattr(args, "config", None),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "started": _now(),
    }
    status, snapshot = EXIT_FAIL, None
    try:
        status, snapshot = args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_USAGE
    except (RunFailure, CheckpointError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_FAIL
    manifest.update(config=snapshot, finished=_now(), exit_status=status)
    if args.command != "report" or Path(args.run_dir).is_dir():
        write_manifest(_manifest_dir(args), manifest)
    return status


if __name__ == "__main__":
    sys.exit(main())
