"""
Verification Commands

- gradcheck: finite-difference check of every parameter block of a model kind
"""

import argparse
import json

from app import services
from app.commands.training import MODEL_CHOICES


def register(subparsers) -> None:
    parser = subparsers.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    parser.add_argument("--model", default="rlstm", choices=MODEL_CHOICES)
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed of the random model (same as the global flag)")
    parser.add_argument("--hidden", type=int, default=8, help="all layer sizes (at most 32)")
    parser.add_argument("--seq-len", dest="seq_len", type=int, default=4, help="utterances per conversation (at most 8)")
    parser.add_argument("--corrupt-block", dest="corrupt_block", help=argparse.SUPPRESS)
    parser.set_defaults(handler=gradcheck)


def gradcheck(args, settings) -> int:
    report = services.gradient_check(args.model, settings.seed, hidden=args.hidden, seq_len=args.seq_len,
                                     corrupt_block=args.corrupt_block)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    services.require_passed(report)
    return 0
