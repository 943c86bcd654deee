"""Command line: ``availoracle {run,sweep,validate-config,replay}``.

Exit codes: 0 success, 1 configuration error, 2 invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

from . import core
from .actors import InvariantViolation
from .config import ConfigError, load_config
from .scenario import replay_snapshot, sweep, write_run

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="availoracle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", required=True, help="scenario TOML file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        if out:
            sp.add_argument("--out", help="output directory (default: [output].dir)")
            sp.add_argument("--format", choices=("json", "csv"), help="metrics format (default: [output].format)")

    common(sub.add_parser("run", help="run one scenario, write metrics and the chain snapshot"))
    sw = sub.add_parser("sweep", help="run the [sweep] grid under paired seeds")
    common(sw)
    sw.add_argument("--seeds", type=int, nargs="+", help="seeds to pair across cells")
    common(sub.add_parser("validate-config", help="check a config and exit"), out=False)
    rp = sub.add_parser("replay", help="re-verify an exported chain snapshot")
    common(rp)
    rp.add_argument("snapshot", nargs="?", help="snapshot file (default: <out>/chain.snapshot)")
    return p


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _table(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, sort_keys=True, indent=2) + "\n"
    cols = sorted({k for r in rows for k in r})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def cmd_run(args) -> int:
    cfg = _load(args)
    out = args.out or cfg.output.dir
    fmt = args.format or cfg.output.format
    m = write_run(cfg, out, fmt)
    a = m.aggregates
    if m.mode == "rate":
        print(f"rate run: {a['canonical_blocks']} blocks, orphan rate {a['orphan_rate']:.4f}, "
              f"mean reward {a['mean_reward_per_block']:.2f}")
    else:
        print(f"soundness {a['soundness_rate']:.4f} completeness {a['completeness_rate']:.4f} "
              f"orphan rates " + " ".join(f"{k}={v:.4f}" for k, v in a["orphan_rate"].items()))
    print(f"final tip {m.final_tip} at height {m.final_height}; wrote {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    grid = dict(cfg.sweep)
    seeds = args.seeds or grid.pop("seeds", None) or [cfg.seed]
    if not grid and cfg.mode == "rate" and cfg.rate.widths:
        grid = {"rate.width": list(cfg.rate.widths)}
    if not grid:
        raise ConfigError(["sweep: grid is empty"])
    rows = sweep(cfg, grid, seeds)
    out = args.out or cfg.output.dir
    fmt = args.format or cfg.output.format
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"sweep.{fmt}")
    with open(path, "w", newline="") as fh:
        fh.write(_table(rows, fmt))
    failed = sum(1 for r in rows if "error" in r)
    print(f"{len(rows)} cells ({failed} failed); wrote {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"ok: {cfg.mode} scenario, {cfg.epochs} epochs, {sum(g.count for g in cfg.miners)} miners")
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = _load(args)
    out = args.out or cfg.output.dir
    path = args.snapshot or os.path.join(out, "chain.snapshot")
    core.set_hash(cfg.hash)
    with open(path, "rb") as fh:
        blocks = core.decode_snapshot(fh.read())
    try:
        result = replay_snapshot(blocks, cfg)
    except ValueError as exc:
        raise InvariantViolation("replay", str(exc)) from exc
    metrics_path = os.path.join(os.path.dirname(os.path.abspath(path)), "metrics.json")
    if os.path.exists(metrics_path):
        with open(metrics_path) as fh:
            expected = json.load(fh)["final_tip"]
        result["matches_metrics"] = expected == result["final_tip"]
        if not result["matches_metrics"]:
            raise InvariantViolation("replay", f"tip {result['final_tip']} != recorded {expected}")
    fmt = args.format or "json"
    print(_table([{k: v for k, v in result.items() if k != "balances"}], fmt), end="")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "validate-config": cmd_validate, "replay": cmd_replay}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except core.EncodingError as exc:
        print(f"invariant violated: snapshot: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    raise SystemExit(main())
