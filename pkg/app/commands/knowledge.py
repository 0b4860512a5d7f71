"""
Knowledge Commands

- kb-extract: domain + general corpus -> entity/attribute TSV
"""

import logging

from app import services

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("kb-extract", help="extract the loose-structured knowledge base")
    parser.add_argument("domain_corpus", help="domain corpus, one document per line")
    parser.add_argument("general_corpus", help="general corpus, one document per line")
    parser.add_argument("out", help="output TSV")
    parser.add_argument("--window", type=int, help="co-occurrence window (default 5)")
    parser.add_argument("--top-terms", dest="top_terms", type=int, help="terms kept by extraction (default 2000)")
    parser.add_argument("--min-count", dest="min_count", type=int, help="drop pairs seen fewer times (default 1)")
    parser.set_defaults(handler=kb_extract)


def kb_extract(args, settings) -> int:
    """
    Build the knowledge base.

    Returns:
        int: 0 on success
    """
    kb = services.extract_knowledge_base(args.domain_corpus, args.general_corpus, args.out, settings)
    print(f"{len(kb)} pairs over {len(kb.entities)} entities written to {args.out}")
    return 0
