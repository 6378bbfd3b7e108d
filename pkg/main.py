#!/usr/bin/env python3
"""
QCQP Partition Optimizer

Global minimization of nonconvex quadratically constrained quadratic programs
with piecewise McCormick relaxations and learned or optimized partitions.

Usage:
    python3 main.py generate --family bilinear --n 10 --count 20 --seed 7 --out instances
    python3 main.py solve --instance instances/bilinear_10/inst_000.json --policy sp
    python3 main.py sp --instance instances/bilinear_10/inst_000.json --out targets/inst_000.json
    python3 main.py train-ml --instances instances/bilinear_10 --targets targets --out predictions
    python3 main.py bench --instances instances/bilinear_10 --policies default,sp,ml \\
        --predictions predictions --csv results.csv
    python3 main.py report --csv results.csv
    python3 main.py demo-example1

Exit codes: 0 ok, 1 failure, 2 configuration error, 3 infeasible instance,
4 time limit reached.
"""

import json
import logging
import os
import sys

# Add current directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import EXIT_CONFIG, EXIT_FAILURE, EXIT_INFEASIBLE, EXIT_OK  # noqa: E402
from model import DimensionError, InfeasibleError  # noqa: E402


def _report_error(exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    certificate = getattr(exc, "certificate", None)
    if certificate:
        payload["certificate"] = certificate
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    """Main application entry point"""
    verbose = "-v" in (argv or sys.argv[1:]) or "--verbose" in (argv or sys.argv[1:])
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        from cli import run
        return run(argv)
    except KeyboardInterrupt:
        print("\nInterrupted by user")
        return EXIT_OK
    except InfeasibleError as e:
        return _report_error(e, EXIT_INFEASIBLE)
    except (DimensionError, ValueError, FileNotFoundError) as e:
        return _report_error(e, EXIT_CONFIG)
    except Exception as e:
        logging.getLogger(__name__).debug("Unhandled error", exc_info=True)
        return _report_error(e, EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
