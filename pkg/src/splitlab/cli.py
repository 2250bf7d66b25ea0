"""Command-line entry point: ``splitlab {train,attack,eval,theory,sweep,plot}``."""

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

from splitlab import __version__, kernels, runner
from splitlab.config import config_hash, default_config, load_config
from splitlab.errors import SplitLabError


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"--jobs must be >= 1, got {text}")
    return value


def build_parser():
    parser = _Parser(prog="splitlab", description="Split-learning defenses and attacks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="TOML config file (schema_version = 1)")
        p.add_argument("--seed", type=u64, help="override the top-level seed")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--jobs", type=positive, default=1, help="worker processes (results do not depend on it)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("train", help="train every sweep cell and write checkpoints"))
    p = common(sub.add_parser("attack", help="attack saved checkpoints"))
    p.add_argument("--checkpoint", action="append", default=[], help="checkpoint file (repeatable)")
    p = common(sub.add_parser("eval", help="accuracy and angular histograms for a checkpoint"))
    p.add_argument("--checkpoint", action="append", default=[])
    common(sub.add_parser("theory", help="particle and sphere Monte Carlo experiments"))
    common(sub.add_parser("sweep", help="train, attack, summarize and plot"))
    p = common(sub.add_parser("plot", help="trade-off plot from a summary CSV"))
    p.add_argument("--summary", help="summary.csv (default: <out>/summary.csv)")
    return parser


def _load(args):
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out:
        cfg["out"] = args.out
    return cfg


def _write_meta(cfg, out, command, jobs, started, extra=None):
    meta = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "jobs": jobs,
        "kernel_backend": kernels.BACKEND,
        "version": __version__,
        "python": platform.python_version(),
        "wall_clock_seconds": time.perf_counter() - started,
    }
    meta.update(extra or {})
    Path(out).mkdir(parents=True, exist_ok=True)
    (Path(out) / f"{command}_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _checkpoints(args, cfg):
    paths = list(args.checkpoint) or ([cfg["attack"]["checkpoint"]] if cfg["attack"]["checkpoint"] else [])
    if args.command == "eval" and not args.checkpoint and cfg["eval"]["checkpoint"]:
        paths = [cfg["eval"]["checkpoint"]]
    paths = paths or runner.checkpoints_in(cfg["out"])
    if not paths:
        raise SplitLabError(f"no checkpoints given and none found under {cfg['out']}/checkpoints")
    return paths


def run(args):
    cfg = _load(args)
    out = Path(cfg["out"])
    jobs = args.jobs
    started = time.perf_counter()
    code = 0
    if args.command in ("train", "sweep"):
        _, summary, code = runner.run_experiment(cfg, out, jobs=jobs, with_attacks=args.command == "sweep")
        if args.command == "sweep":
            runner.emit_tradeoff_plot(out / "summary.csv", out / "tradeoff.svg", cfg["plot"]["attack_kind"],
                                      cfg["plot"]["k"])
        print(f"wrote {out / 'results.csv'} and {out / 'summary.csv'} ({len(summary)} summary rows)")
        if code == 2:
            print("error: every run of at least one cell diverged", file=sys.stderr)
    elif args.command == "attack":
        rows = runner.attack_checkpoints(cfg, _checkpoints(args, cfg), out)
        print(f"wrote {out / 'attacks.csv'} ({len(rows)} rows)")
    elif args.command == "eval":
        for path in _checkpoints(args, cfg):
            rep = runner.evaluate_checkpoint(cfg, path, out)
            print(f"{path}: test accuracy {rep['test_accuracy']:.4f}, median angle same "
                  f"{rep['median_same']:.3f} / different {rep['median_diff']:.3f}")
    elif args.command == "theory":
        res = runner.run_theory(cfg, out, seed=cfg["seed"])
        if "border_mass" in res:
            print(f"border mass {res['border_mass']['border_mass']:.3f} "
                  f"(eps={res['border_mass']['eps']}, n={res['border_mass']['n']})")
        print(f"wrote theory outputs to {out}")
    elif args.command == "plot":
        summary = Path(args.summary or cfg["plot"]["summary"] or out / "summary.csv")
        if not summary.is_file():
            raise SplitLabError(f"summary file not found: {summary}")
        target = summary.with_name("tradeoff.svg") if not args.out else out / "tradeoff.svg"
        runner.emit_tradeoff_plot(summary, target, cfg["plot"]["attack_kind"], cfg["plot"]["k"])
        print(f"wrote {target}")
    _write_meta(cfg, out, args.command, jobs, started, {"exit_code": code})
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except SplitLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
