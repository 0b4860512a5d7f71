"""
Dataset Commands

- build-dataset: corpus -> train/valid/test sample files
- make-synthetic: write the synthetic knowledge task
"""

import logging

from app import services

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("build-dataset", help="filter, split and sample a conversation corpus")
    parser.add_argument("corpus", help="line-delimited {\"utterances\": [...]} records")
    parser.add_argument("out_dir", help="directory for train.jsonl, valid.jsonl, test.jsonl")
    parser.add_argument("--min-turns", dest="min_turns", type=int, default=3)
    parser.add_argument("--max-turns-filter", dest="max_turns_filter", type=int, default=7)
    parser.add_argument("--valid-fraction", dest="valid_fraction", type=float, default=0.1)
    parser.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.1)
    parser.add_argument("--lenient", action="store_true", help="skip malformed lines instead of failing")
    parser.add_argument("--tokenization", choices=["word", "char"])
    parser.set_defaults(handler=build_dataset)

    parser = subparsers.add_parser("make-synthetic", help="write the synthetic knowledge task")
    parser.add_argument("out_dir")
    parser.add_argument("--conversations", type=int, default=2000)
    parser.add_argument("--entities", type=int, default=400)
    parser.add_argument("--attributes", type=int, default=20)
    parser.set_defaults(handler=make_synthetic)


def build_dataset(args, settings) -> int:
    paths = services.build_dataset(args.corpus, args.out_dir, settings, min_turns=args.min_turns,
                                   max_turns=args.max_turns_filter, valid_fraction=args.valid_fraction,
                                   test_fraction=args.test_fraction, strict=not args.lenient)
    for split, path in paths.items():
        print(f"{split}: {path}")
    return 0


def make_synthetic(args, settings) -> int:
    paths = services.make_synthetic(args.out_dir, settings, conversations=args.conversations,
                                    entities=args.entities, attributes=args.attributes)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0
