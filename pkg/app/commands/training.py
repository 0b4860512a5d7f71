"""
Training Commands

- train: samples (+ knowledge base, + embeddings) -> checkpoint
- benchmark: every model kind on one dataset -> comparison table
"""

import argparse
import logging

from app import services
from app.schemas import ModelKind

logger = logging.getLogger(__name__)

MODEL_CHOICES = [k.value for k in ModelKind] + ["affinity"]


def _add_training_flags(parser) -> None:
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root seed (same as the global flag)")
    parser.add_argument("--dims-preset", dest="dims_preset", choices=["ubuntu", "tieba", "desk"])
    parser.add_argument("--epochs", dest="max_epochs", type=int)
    parser.add_argument("--lr", dest="learning_rate", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--optimizer", choices=["sgd", "momentum", "adagrad"])
    parser.add_argument("--top-n", dest="top_n", type=int)
    parser.add_argument("--max-turns", dest="max_turns", type=int, help="MLP slot count (default 8)")
    parser.add_argument("--lm-pretrain-epochs", dest="lm_pretrain_epochs", type=int)
    parser.add_argument("--tokenization", choices=["word", "char"])
    parser.add_argument("--init-scale", dest="init_scale", type=float, help="uniform initialisation half-width")


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train a conversation model")
    parser.add_argument("samples", help="training sample file")
    parser.add_argument("kb", nargs="?", help="knowledge-base TSV")
    parser.add_argument("--out", required=True, help="checkpoint path")
    parser.add_argument("--model", default="rlstm", choices=MODEL_CHOICES)
    parser.add_argument("--valid", help="validation sample file (default: hold out 10%% of the groups)")
    parser.add_argument("--embeddings", help="pre-trained word vectors in text format")
    _add_training_flags(parser)
    parser.set_defaults(handler=train)

    parser = subparsers.add_parser("benchmark", help="train and evaluate every model kind")
    parser.add_argument("train_samples")
    parser.add_argument("valid_samples")
    parser.add_argument("test_samples")
    parser.add_argument("kb")
    parser.add_argument("--out", required=True, help="output prefix for .json and .txt tables")
    parser.add_argument("--models", nargs="+", choices=MODEL_CHOICES, help="subset of model kinds")
    _add_training_flags(parser)
    parser.set_defaults(handler=benchmark)


def train(args, settings) -> int:
    kind = ModelKind(args.model)
    services.warn_irrelevant_flags(kind, top_n_given=args.top_n is not None, kb_given=args.kb is not None)
    _, history = services.train_model(args.samples, args.kb, args.out, kind, settings, valid_path=args.valid,
                                      embeddings_path=args.embeddings)
    print(f"checkpoint {args.out}: kept epoch {history.best_epoch}, validation losses "
          + ", ".join(f"{v:.4f}" for v in history.valid_losses))
    return 0


def benchmark(args, settings) -> int:
    table = services.benchmark(args.train_samples, args.valid_samples, args.test_samples, args.kb, args.out,
                               settings, kinds=args.models)
    print(services.format_table(table), end="")
    return 0
