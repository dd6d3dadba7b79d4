"""``lab run <scenario>`` and ``lab validate <surface-config>``.

Exit status: 0 when every assertion passes, 1 on an assertion failure,
2 on a configuration error.
"""

import argparse
import json
import sys
import time

from ..errors import ConfigError, InvalidParameter, InvalidSurface, ReportError
from ..surface import build_from_config, load_config, validate_gluing
from .config import SCENARIOS, load_scenario_config
from .report import emit_report
from .scenarios import run_scenario


def _parser():
    ap = argparse.ArgumentParser(prog="lab", description="Geodesic-flow experiments on surfaces "
                                 "with flat cylinders.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and write its report")
    run.add_argument("scenario", choices=SCENARIOS)
    run.add_argument("--config", help="JSON or key = value file")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--workers", type=int, default=1)
    val = sub.add_parser("validate", help="build a surface and check its gluing")
    val.add_argument("config")
    val.add_argument("--samples", type=int, default=100)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "validate":
            m = build_from_config(load_config(args.config))
            rep = validate_gluing(m, args.samples)
            print(json.dumps(rep, indent=1, sort_keys=True, default=float))
            return 0 if rep["ok"] else 1
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        cfg = load_scenario_config(args.scenario, args.config, args.seed, args.out)
        t0 = time.perf_counter()
        report = run_scenario(cfg, args.workers)
        code = emit_report(report, cfg.out)
    except (ConfigError, InvalidParameter, InvalidSurface) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ReportError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    for a in report.assertions:
        mark = "PASS" if a.passed else "FAIL"
        print(f"[{mark}] criterion {a.criterion}: {a.name}: {a.measured!r} {a.relation} {a.threshold!r}")
    print(f"{cfg.scenario}: {report.status} in {time.perf_counter() - t0:.1f} s -> {cfg.out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
