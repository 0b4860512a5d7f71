"""
Ledger Commands

- runs: list the runs recorded in the run ledger
"""

import json

from app import services
from app.exceptions import ConfigurationError


def register(subparsers) -> None:
    parser = subparsers.add_parser("runs", help="list recorded runs")
    parser.add_argument("--run-id", dest="run_id", help="only this run")
    parser.set_defaults(handler=runs)


def runs(args, settings) -> int:
    if not settings.run_ledger_url:
        raise ConfigurationError("the run ledger is disabled (run_ledger_url is empty)")
    for run in services.ledger_runs(settings.run_ledger_url, args.run_id):
        print(json.dumps(run, sort_keys=True))
    return 0
