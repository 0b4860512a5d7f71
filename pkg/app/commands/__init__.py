"""
Command modules, one per command group. Each exposes `register(subparsers)`
which adds its subcommands and binds them to a handler(args, settings).
"""

from app.commands import dataset, evaluation, knowledge, ledger, training, verification

COMMAND_MODULES = [knowledge, dataset, training, evaluation, verification, ledger]
