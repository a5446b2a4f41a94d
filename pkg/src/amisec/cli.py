"""Command-line front end.

    amisec [--seed N] [--out-dir DIR] [--config FILE] run [FILE]
    amisec [...] experiment {fig5,fig6,fig7,fig8,fig9_11,e2e,strength} [--trials N]
    amisec strength PACKET_BITS BLOCK_COUNT KEY_BITS
    amisec verify-oracles

Exit codes: 0 success, 2 configuration or argument error, 3 scenario failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import yaml

from . import oracles
from .experiments import EXPERIMENTS, ExperimentError, run_experiment
from .sequencer import strength_report
from .sim import ConfigError, load_config, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amisec", description=__doc__.split("\n")[0])
    p.add_argument("--seed", type=int, default=None, help="override the seed (default 0)")
    p.add_argument("--out-dir", default="out", help="output root (default ./out)")
    p.add_argument("--config", default=None, help="YAML scenario or experiment parameters")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a protocol scenario")
    run.add_argument("config_path", nargs="?", help="scenario YAML (or use --config)")

    exp = sub.add_parser("experiment", help="run a named experiment")
    exp.add_argument("name", choices=EXPERIMENTS)
    exp.add_argument("--trials", type=int, default=None, help="Monte-Carlo trials (fig5/fig6)")

    st = sub.add_parser("strength", help="print the packet strength report")
    st.add_argument("packet_bits", type=int)
    st.add_argument("block_count", type=int)
    st.add_argument("key_bits", type=int)

    sub.add_parser("verify-oracles", help="run the independent oracle checks")
    return p


def _err(msg: str) -> None:
    print(f"amisec: error: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    path = args.config_path or args.config
    if path is None:
        _err("run needs a scenario file")
        return EXIT_CONFIG
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    try:
        res = run_scenario(cfg)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except Exception as exc:  # any crash inside the simulation is a scenario failure
        _err(f"scenario failed: {exc}")
        return EXIT_FAILURE
    out = Path(args.out_dir) / "run" / str(cfg.seed)
    res.write(out)
    (out / "params.txt").write_text(Path(path).read_text())
    m = res.metrics
    print(f"sessions completed {m['sessions_completed']}/{m['sessions_initiated']}, "
          f"alerts {m['alerts']}, output {out}")
    if m["plaintext_mismatches"]:
        _err(f"{m['plaintext_mismatches']} sessions decrypted to the wrong plaintext")
        return EXIT_FAILURE
    return EXIT_OK


def _experiment_overrides(args) -> dict:
    overrides = {}
    if args.config:
        try:
            data = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ExperimentError(f"cannot read {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ExperimentError("experiment config must be a mapping")
        overrides.update(data)
    if args.trials is not None:
        if args.name not in ("fig5", "fig6"):
            raise ExperimentError("--trials applies to fig5 and fig6 only")
        overrides["trials"] = args.trials
    return overrides


def cmd_experiment(args) -> int:
    seed = 0 if args.seed is None else args.seed
    try:
        res = run_experiment(args.name, seed, _experiment_overrides(args))
    except (ExperimentError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    out = res.write(args.out_dir)
    sys.stdout.write(res.metrics_csv())
    if res.params.get("warning"):
        print(f"warning: {res.params['warning']}", file=sys.stderr)
    print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK


def cmd_strength(args) -> int:
    try:
        rep = strength_report(args.packet_bits, args.block_count, args.key_bits)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    print(rep.render())
    return EXIT_OK


def cmd_verify_oracles(args) -> int:
    results = oracles.run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_FAILURE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "experiment": cmd_experiment, "strength": cmd_strength,
               "verify-oracles": cmd_verify_oracles}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
