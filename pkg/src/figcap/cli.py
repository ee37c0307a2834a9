"""Command line surface: clean, build-vocab, train, eval, caption.

Machine-readable results go to stdout as JSON; progress and error text
go to stderr.  Exit codes: 0 success, 1 runtime failure, 2 usage or
validation failure.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass

from . import data as D
from .features import FeatureFormatError, FeatureSource
from .model import (
    CheckpointError,
    ModelConfig,
    ModelConfigError,
    load_checkpoint,
    verify_parameters,
)
from .train import (
    OptimizerConfig,
    OptimizerConfigError,
    TrainingDivergedError,
    decode_examples,
    evaluate_bleu,
    train,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

VOCAB_MIN_FREQ = 1
VOCAB_MAX_SIZE = 20000


def _err(msg):
    print(msg, file=sys.stderr)


def _emit(obj):
    print(json.dumps(obj))


@dataclass
class RunConfig:
    train: str
    val: str
    test: str
    feature_mode: str
    feature_path: str
    feature_seed: int
    min_text_len: int
    max_caption_len: int
    model_section: dict
    optimizer: OptimizerConfig
    out_dir: str


_DATASET_KEYS = {"train", "val", "test", "features", "min_text_len", "max_caption_len"}
_FEATURE_KEYS = {"mode", "path", "seed"}
_MODEL_KEYS = {
    "d_clip", "k", "d_model", "d_attn", "d_fuse", "fusion_layers", "heads",
    "d_hidden", "use_knowledge", "use_fusion", "use_vision", "use_text",
    "positional_encoding", "init_scale",
}
_OUTPUT_KEYS = {"dir"}


def load_run_config(path):
    """Parse and validate a run config, collecting every violation."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    errors = []
    if not isinstance(raw, dict):
        raise ValueError("config root must be a JSON object")

    for key in set(raw) - {"dataset", "model", "optimizer", "output"}:
        errors.append(f"{key}: unknown section")

    dataset = raw.get("dataset", {})
    for key in set(dataset) - _DATASET_KEYS:
        errors.append(f"dataset.{key}: unknown key")
    feats = dataset.get("features", {"mode": "toy"})
    if not isinstance(feats, dict):
        errors.append("dataset.features: must be an object")
        feats = {"mode": "toy"}
    for key in set(feats) - _FEATURE_KEYS:
        errors.append(f"dataset.features.{key}: unknown key")
    mode = feats.get("mode", "toy")
    if mode not in ("toy", "file"):
        errors.append(f"dataset.features.mode must be 'toy' or 'file', got {mode!r}")
    if mode == "file" and not feats.get("path"):
        errors.append("dataset.features.path required in file mode")
    min_text_len = dataset.get("min_text_len", 1)
    if not isinstance(min_text_len, int) or min_text_len < 0:
        errors.append("dataset.min_text_len must be a non-negative integer")
    max_caption_len = dataset.get("max_caption_len", 30)
    if not isinstance(max_caption_len, int) or max_caption_len < 3:
        errors.append("dataset.max_caption_len must be an integer >= 3")

    model_section = raw.get("model", {})
    for key in set(model_section) - _MODEL_KEYS:
        errors.append(f"model.{key}: unknown key")
    try:
        ModelConfig(vocab_size=1000, max_caption_len=max(int(max_caption_len), 3),
                    **{k: v for k, v in model_section.items() if k in _MODEL_KEYS}).validate()
    except (ModelConfigError, TypeError) as e:
        errors.append(f"model.{e}")

    optimizer = None
    opt_section = raw.get("optimizer", {})
    try:
        optimizer = OptimizerConfig.from_dict(opt_section)
    except OptimizerConfigError as e:
        errors.append(f"optimizer.{e}")

    output = raw.get("output", {})
    for key in set(output) - _OUTPUT_KEYS:
        errors.append(f"output.{key}: unknown key")
    out_dir = output.get("dir", "run")

    if errors:
        raise ValueError("\n".join(sorted(errors)))

    def resolve(p):
        return os.path.join(base, p) if p and not os.path.isabs(p) else p

    return RunConfig(
        train=resolve(dataset.get("train")),
        val=resolve(dataset.get("val")),
        test=resolve(dataset.get("test")),
        feature_mode=mode,
        feature_path=resolve(feats.get("path")),
        feature_seed=int(feats.get("seed", 0)),
        min_text_len=int(min_text_len),
        max_caption_len=int(max_caption_len),
        model_section={k: v for k, v in model_section.items()},
        optimizer=optimizer,
        out_dir=resolve(out_dir),
    )


def build_model_config(run_cfg, vocab_size, ablate=()):
    overrides = dict(run_cfg.model_section)
    for name in ablate:
        overrides[f"use_{name}"] = False
    return ModelConfig(vocab_size=vocab_size, max_caption_len=run_cfg.max_caption_len,
                       **overrides).validate()


def make_features(run_cfg, d_clip):
    return FeatureSource(run_cfg.feature_mode, d_clip, path=run_cfg.feature_path,
                         seed=run_cfg.feature_seed)


def load_split(run_cfg, split):
    path = getattr(run_cfg, split)
    if not path:
        raise FileNotFoundError(f"dataset.{split} not set in config")
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset.{split}: no such file {path}")
    return D.load_records(path)


# ---------------------------------------------------------------------------
# commands


def cmd_clean(args):
    if not os.path.exists(args.input):
        _err(f"input file not found: {args.input}")
        return EXIT_USAGE
    records = D.load_records(args.input)
    kept, report = D.clean(records, min_text_len=args.min_text_len)
    D.write_records(kept, args.output)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    _emit(report.to_dict())
    return EXIT_OK


def cmd_build_vocab(args):
    if not os.path.exists(args.input):
        _err(f"input file not found: {args.input}")
        return EXIT_USAGE
    records = D.load_records(args.input)
    vocab = D.build_vocab(records, min_freq=args.min_freq, max_size=args.max_size)
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(vocab.to_dict(), fh, indent=2)
        fh.write("\n")
    _emit({"size": len(vocab), "output": args.output})
    return EXIT_OK


def cmd_train(args):
    run_cfg = load_run_config(args.config)
    train_records = load_split(run_cfg, "train")
    val_records = train_records if not run_cfg.val else load_split(run_cfg, "val")

    params = None
    start_epoch = 0
    best = -1.0
    if args.resume:
        params, ckpt_config, vocab, state = load_checkpoint(args.resume)
        current = build_model_config(run_cfg, ckpt_config.vocab_size)
        diffs = [f for f in ckpt_config.to_dict()
                 if ckpt_config.to_dict()[f] != current.to_dict()[f]]
        if diffs:
            raise ModelConfigError(
                f"resume checkpoint disagrees with config on: {', '.join(sorted(diffs))}"
            )
        config = ckpt_config
        start_epoch = int(state.get("epoch", -1)) + 1
        best = float(state.get("best_val_bleu4", -1.0))
    else:
        vocab = D.build_vocab(train_records, min_freq=VOCAB_MIN_FREQ,
                              max_size=VOCAB_MAX_SIZE)
        config = build_model_config(run_cfg, len(vocab))

    features = make_features(run_cfg, config.d_clip)
    train_examples = D.tokenize_records(train_records, vocab, config.max_caption_len)
    val_examples = D.tokenize_records(val_records, vocab, config.max_caption_len)

    def progress(epoch, loss, bleu):
        if epoch % 10 == 0 or epoch == run_cfg.optimizer.epochs - 1:
            _err(f"epoch {epoch} train_loss {loss:.4f} val_bleu4 {bleu:.4f}")

    params, state, ckpt_path, metrics_path = train(
        train_examples, val_examples, config, run_cfg.optimizer, features, vocab,
        run_cfg.out_dir, params=params, start_epoch=start_epoch, best_bleu=best,
        progress=progress,
    )
    _emit({
        "checkpoint": ckpt_path,
        "metrics": metrics_path,
        "epochs": run_cfg.optimizer.epochs,
        "best_val_bleu4": state.best_val_bleu4,
    })
    return EXIT_OK


def cmd_eval(args):
    run_cfg = load_run_config(args.config)
    params, ckpt_config, vocab, _ = load_checkpoint(args.checkpoint)
    ablate = sorted(set(args.ablate or []))
    config = ModelConfig.from_dict({
        **ckpt_config.to_dict(),
        **{f"use_{name}": False for name in ablate},
    })
    try:
        verify_parameters(params, config)
    except CheckpointError as e:
        _err(f"checkpoint incompatible with requested ablation: {e}")
        return EXIT_USAGE
    records = load_split(run_cfg, args.split)
    examples = D.tokenize_records(records, vocab, config.max_caption_len)
    features = make_features(run_cfg, config.d_clip)
    report, sentence_scores, _ = evaluate_bleu(examples, params, config, features,
                                               smoothing=args.smoothing)
    histogram = [0] * 10
    for s in sentence_scores:
        histogram[min(int(s * 10), 9)] += 1
    payload = {
        "split": args.split,
        "count": len(examples),
        "bleu4": report.bleu4,
        "level": report.level,
        "smoothing": report.smoothing,
        "ablate": ablate,
        "sentence_histogram": histogram,
    }
    report_path = args.report or os.path.join(run_cfg.out_dir, f"eval_{args.split}.json")
    os.makedirs(os.path.dirname(os.path.abspath(report_path)), exist_ok=True)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    _emit({"bleu4": report.bleu4, "report": report_path})
    return EXIT_OK


def _load_record_arg(arg):
    text = arg
    if not arg.lstrip().startswith("{"):
        with open(arg, encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    if not isinstance(raw, dict) or not raw.get("id"):
        raise ValueError("record JSON must be an object with an 'id'")
    unknown = set(raw) - {"id", "figure_text", "abstract", "caption", "feature_ref"}
    if unknown:
        raise ValueError(f"record JSON has unknown keys {sorted(unknown)}")
    return D.ScicapRecord(
        id=raw["id"],
        figure_text=raw.get("figure_text", "") or "",
        abstract=raw.get("abstract", "") or "",
        caption=raw.get("caption", "") or "",
        feature_ref=raw.get("feature_ref", "") or "",
    )


def cmd_caption(args):
    run_cfg = load_run_config(args.config)
    try:
        record = _load_record_arg(args.record)
    except (ValueError, OSError) as e:
        _err(f"bad --record: {e}")
        return EXIT_USAGE
    params, config, vocab, _ = load_checkpoint(args.checkpoint)
    features = make_features(run_cfg, config.d_clip)
    example = D.tokenize_records([record], vocab, config.max_caption_len)[0]
    hyp = decode_examples([example], params, config, features, beam=args.beam)[0]
    caption = vocab.decode(hyp.token_ids)
    _emit({"caption": caption, "log_prob": hyp.log_prob, "finished": hyp.finished})
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(prog="figcap",
                                     description="figure caption generator toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("clean", help="filter records with too little figure text")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-text-len", type=int, default=1, dest="min_text_len")
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_clean)

    p = sub.add_parser("build-vocab", help="build a vocabulary file from records")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-freq", type=int, default=VOCAB_MIN_FREQ, dest="min_freq")
    p.add_argument("--max-size", type=int, default=VOCAB_MAX_SIZE, dest="max_size")
    p.set_defaults(fn=cmd_build_vocab)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, metavar="CKPT")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--ablate", action="append", default=[],
                   choices=("vision", "text", "fusion", "knowledge"))
    p.add_argument("--smoothing", default="epsilon", choices=("epsilon", "none"))
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("caption", help="caption one record with a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--record", required=True, metavar="JSON_OR_PATH")
    p.add_argument("--beam", type=int, default=1)
    p.set_defaults(fn=cmd_caption)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        _err(str(e))
        return EXIT_USAGE
    except (ValueError, ModelConfigError, OptimizerConfigError, CheckpointError) as e:
        # config/validation problems keep their per-key messages
        if isinstance(e, (D.CorpusError, FeatureFormatError)):
            _err(str(e))
            return EXIT_RUNTIME
        _err(str(e))
        return EXIT_USAGE
    except (TrainingDivergedError, KeyError) as e:
        _err(str(e) if not isinstance(e, KeyError) else e.args[0])
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
