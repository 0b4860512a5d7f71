"""
Evaluation Commands

- eval: checkpoint + grouped samples -> Acc / Recall@k report
- score: rank candidate responses for one context
"""

import logging

from app import services

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="evaluate a checkpoint on grouped samples")
    parser.add_argument("checkpoint")
    parser.add_argument("samples", help="sample file with groups of 2 or 10")
    parser.add_argument("kb", nargs="?", help="knowledge-base TSV")
    parser.add_argument("--out", required=True, help="output prefix for the .txt and .json report")
    parser.set_defaults(handler=evaluate)

    parser = subparsers.add_parser("score", help="rank candidate responses for a context")
    parser.add_argument("checkpoint")
    parser.add_argument("--kb", help="knowledge-base TSV")
    parser.add_argument("--context", action="append", default=[], help="context utterance (repeatable, oldest first)")
    parser.add_argument("--query", required=True)
    parser.add_argument("--candidate", action="append", required=True, help="candidate response (repeatable)")
    parser.set_defaults(handler=score)


def evaluate(args, settings) -> int:
    report = services.evaluate_checkpoint(args.checkpoint, args.samples, args.kb, args.out, settings)
    print(report.to_text(), end="")
    return 0


def score(args, settings) -> int:
    ranked = services.score_candidates(args.checkpoint, args.kb, args.context, args.query, args.candidate)
    for rank, (text, confidence) in enumerate(ranked, start=1):
        print(f"{rank}\t{confidence:.6f}\t{text}")
    return 0
