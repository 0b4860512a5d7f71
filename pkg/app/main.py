"""
Main Application Module

This module is the command-line entry point. It builds the argument parser,
registers every command module, resolves settings, configures logging and
turns application errors into exit codes.

Exit codes:
- 0: success
- 2: input error (also argparse usage errors)
- 3: data-contract violation
- 4: numeric divergence

Usage:
    python -m app.main <command> [flags]
"""

import argparse
import logging
import sys
from typing import List, Optional

from app import __version__
from app.commands import COMMAND_MODULES
from app.config import Settings, load_settings
from app.exceptions import InputError, RecallChatError

logger = logging.getLogger("app")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recallchat",
        description="Knowledge-recall conversation models: knowledge base, datasets, training, evaluation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="key = value settings file")
    parser.add_argument("--seed", type=int, help="root seed of all randomness")
    parser.add_argument("--threads", type=int, help="worker cap, 0 for all cores")
    parser.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--ledger", dest="run_ledger_url", help="SQLAlchemy URL of the run ledger, '' disables it")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    for module in COMMAND_MODULES:
        module.register(subparsers)
    return parser


def configure_logging(level: str) -> None:
    """Root handler on stderr (kept when one exists) at the configured level."""
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise InputError(f"unknown log level {level!r}")
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(format=LOG_FORMAT, stream=sys.stderr)
    root.setLevel(numeric)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command.

    Args:
        argv: Arguments without the program name (sys.argv[1:] by default)

    Returns:
        int: process exit code
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {name: value for name, value in vars(args).items() if name in Settings.model_fields}
    try:
        settings = load_settings(args.config, overrides)
        configure_logging(settings.log_level)
        return args.handler(args, settings) or 0
    except RecallChatError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
