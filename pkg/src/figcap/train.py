"""Teacher-forced training with per-group learning rates.

Parameters fall into three groups (encoders, fusion, decoder), each with
its own base learning rate, decayed exponentially per epoch.  Updates
are plain SGD with decoupled weight decay after global-norm gradient
clipping; every run is a pure function of its seed.
"""

import json
import os
from dataclasses import dataclass, fields

import numpy as np

from . import data as D
from . import tensor as T
from .bleu import bleu4_corpus
from .model import (
    beam_decode,
    caption_scores,
    encode_record,
    greedy_decode,
    group_of,
    init_parameters,
    save_checkpoint,
)


class OptimizerConfigError(ValueError):
    """Optimizer settings outside their legal ranges."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass
class OptimizerConfig:
    lr_fusion: float = 5e-5
    lr_encoders: float = 1e-4
    lr_decoder: float = 5e-4
    weight_decay: float = 1e-5
    lr_decay: float = 0.9
    clip_norm: float = 5.0
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0

    def validate(self):
        problems = []
        for name in ("lr_fusion", "lr_encoders", "lr_decoder"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.weight_decay < 0:
            problems.append("weight_decay must be non-negative")
        if not 0 < self.lr_decay <= 1:
            problems.append("lr_decay must be in (0, 1]")
        if self.clip_norm <= 0:
            problems.append("clip_norm must be positive")
        if self.epochs < 1:
            problems.append("epochs must be at least 1")
        if self.batch_size < 1:
            problems.append("batch_size must be at least 1")
        if problems:
            raise OptimizerConfigError("; ".join(problems))
        return self

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise OptimizerConfigError(f"unknown optimizer config keys: {sorted(unknown)}")
        return cls(**d).validate()

    def base_lr(self, group):
        return {"fusion": self.lr_fusion, "encoders": self.lr_encoders,
                "decoder": self.lr_decoder}[group]


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    lrs: dict = None
    running_loss: float = 0.0
    best_val_bleu4: float = -1.0


def lr_schedule(base, epoch, decay):
    """Exponentially decayed rate base * decay**epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base * decay**epoch


def clip_gradients(params, clip_norm):
    """Scale all gradients so their global L2 norm is at most clip_norm."""
    total = 0.0
    for _, t in params.items():
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    norm = float(np.sqrt(total))
    if norm <= clip_norm or norm == 0.0:
        return 1.0
    scale = clip_norm / norm
    for _, t in params.items():
        if t.grad is not None:
            t.grad *= scale
    return scale


def apply_sgd_step(params, lrs, weight_decay):
    """p <- p - lr_group * (grad + weight_decay * p) for every parameter."""
    for name, t in params.items():
        lr = lrs[group_of(name)]
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        t.data -= lr * (grad + weight_decay * t.data)


def example_loss_pieces(example, params, config, features):
    """Teacher-forced score rows plus targets for one tokenized example."""
    clip_vec = features(example.feature_ref) if config.use_vision else None
    encoded = encode_record(clip_vec, example.figure_text_ids, example.abstract_ids,
                            params, config)
    scores = caption_scores(encoded, example.caption_ids, params, config)
    targets = list(example.caption_ids[1:])
    return scores, targets


def compute_loss(batch, params, config, features):
    """Mean next-token cross entropy over every unmasked caption position."""
    if len(batch) == 0:
        raise T.ContractError("compute_loss: empty batch")
    rows = []
    targets = []
    for i in range(len(batch)):
        length = int(batch.caption_mask[i].sum())
        ids = batch.caption_ids[i, :length].tolist()
        example = D.TokenizedExample(
            record_id=batch.record_ids[i],
            caption_ids=ids,
            figure_text_ids=batch.figure_text_ids[i],
            abstract_ids=batch.abstract_ids[i],
            feature_ref=batch.feature_refs[i],
        )
        scores, tgt = example_loss_pieces(example, params, config, features)
        rows.append(scores)
        targets.extend(tgt)
    stacked = rows[0] if len(rows) == 1 else T.concat(rows, axis=0)
    mask = [1.0] * len(targets)
    return T.masked_cross_entropy(stacked, targets, mask)


def decode_examples(examples, params, config, features, beam=1):
    """Greedy (or beam) captions for a list of tokenized examples."""
    out = []
    for ex in examples:
        clip_vec = features(ex.feature_ref) if config.use_vision else None
        encoded = encode_record(clip_vec, ex.figure_text_ids, ex.abstract_ids,
                                params, config)
        if beam == 1:
            out.append(greedy_decode(encoded, params, config))
        else:
            out.append(beam_decode(encoded, params, config, beam=beam))
    return out


def strip_specials(ids):
    return [i for i in ids if i not in (D.PAD_ID, D.BOS_ID, D.EOS_ID)]


def evaluate_bleu(examples, params, config, features, smoothing="epsilon"):
    """Corpus BLEU-4 of greedy decodes against the gold captions."""
    hyps = decode_examples(examples, params, config, features)
    pairs = [
        (strip_specials(h.token_ids), strip_specials(ex.caption_ids))
        for h, ex in zip(hyps, examples)
    ]
    report = bleu4_corpus(pairs, smoothing=smoothing)
    sentence_scores = [
        bleu4_corpus([pair], smoothing=smoothing).bleu4 for pair in pairs
    ]
    return report, sentence_scores, hyps


def train(train_examples, val_examples, model_config, opt_config, features, vocab,
          out_dir, params=None, start_epoch=0, best_bleu=-1.0, progress=None):
    """Optimize the model, writing per-epoch metrics and the best checkpoint.

    Returns (params, TrainState, checkpoint_path, metrics_path).  With
    ``params``/``start_epoch`` from a loaded checkpoint the loop resumes
    mid-schedule at the exact decayed rates.
    """
    if not train_examples:
        raise T.ContractError("train: empty training split")
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    ckpt_path = os.path.join(out_dir, "checkpoint.fck")

    if params is None:
        params = init_parameters(model_config, seed=opt_config.seed)
    state = TrainState(epoch=start_epoch, best_val_bleu4=best_bleu)
    mode = "a" if start_epoch > 0 else "w"
    with open(metrics_path, mode, encoding="utf-8") as metrics_fh:
        for epoch in range(start_epoch, opt_config.epochs):
            lrs = {g: lr_schedule(opt_config.base_lr(g), epoch, opt_config.lr_decay)
                   for g in ("encoders", "fusion", "decoder")}
            batches = D.batch(train_examples, opt_config.batch_size,
                              seed=[opt_config.seed, epoch])
            loss_sum = 0.0
            token_sum = 0
            for batch_obj in batches:
                params.zero_grad()
                loss = compute_loss(batch_obj, params, model_config, features)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDivergedError(
                        f"loss became non-finite at epoch {epoch} step {state.step}"
                    )
                tokens = int(batch_obj.caption_mask.sum()) - len(batch_obj)
                loss_sum += value * tokens
                token_sum += tokens
                T.backward(loss)
                clip_gradients(params, opt_config.clip_norm)
                apply_sgd_step(params, lrs, opt_config.weight_decay)
                state.step += 1

            train_loss = loss_sum / max(token_sum, 1)
            report, _, _ = evaluate_bleu(val_examples, params, model_config, features)
            state.epoch = epoch
            state.lrs = lrs
            state.running_loss = train_loss
            line = {
                "epoch": epoch,
                "lr": {g: lrs[g] for g in ("encoders", "fusion", "decoder")},
                "train_loss": train_loss,
                "val_bleu4": report.bleu4,
            }
            metrics_fh.write(json.dumps(line) + "\n")
            metrics_fh.flush()
            if report.bleu4 > state.best_val_bleu4:
                state.best_val_bleu4 = report.bleu4
                save_checkpoint(ckpt_path, params, model_config, vocab,
                                train_state={"epoch": epoch,
                                             "best_val_bleu4": report.bleu4})
            if progress is not None:
                progress(epoch, train_loss, report.bleu4)
    return params, state, ckpt_path, metrics_path
