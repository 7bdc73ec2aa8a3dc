"""Command line entry point ``fgle-lab``."""

import argparse
import json
import logging
import sys

from .em_integrator import PRESETS
from .experiments import STUDIES, ConfigError, StudyConfig, run_study


def _parser():
    p = argparse.ArgumentParser(prog="fgle-lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a configured study")
    run.add_argument("--config", required=True, help="JSON study configuration")
    run.add_argument("--study", choices=STUDIES)
    run.add_argument("--seed", type=int)
    run.add_argument("--paths", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("presets", help="list drift presets")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "presets":
        for name in sorted(PRESETS):
            doc = (PRESETS[name].__doc__ or "").strip().splitlines()
            print(f"{name:8s} {doc[0] if doc else ''}")
        return 0

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        for key in ("study", "seed", "paths"):
            val = getattr(args, key)
            if val is not None:
                raw[key] = val
        if args.out is not None:
            raw["output"] = args.out
        cfg = StudyConfig.from_dict(raw)
    except (OSError, json.JSONDecodeError, ConfigError, TypeError, ValueError) as exc:
        print(f"fgle-lab: bad configuration: {exc}", file=sys.stderr)
        return 2

    result = run_study(cfg)
    summary = result["summary"]
    for name, check in summary["checks"].items():
        status = {True: "PASS", False: "FAIL", None: "n/a"}[check["pass"]]
        print(f"{status}  {name}: {check['value']}")
    print(f"{cfg.study}: slope={summary['slope']} expected={summary['expected']} "
          f"tolerance={summary['tolerance']} pass={summary['pass']} "
          f"({result['wall_clock_s']:.1f}s) -> {cfg.output}")
    return 0 if summary["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
