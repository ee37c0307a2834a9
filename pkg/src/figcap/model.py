"""The caption generator network.

A figure is encoded as up to two streams: the text stream (figure-text
token embeddings) and a condition stream built from the visual prefix
and, optionally, an injected knowledge vector pooled from the abstract.
Both streams are projected to the attention width, fused by paired
cross-attention blocks, and the per-position fusion outputs become the
memory an attention LSTM decodes captions over.

Checkpoints are stored in a self-describing binary container ("FCK1"):
a JSON metadata block (model config, vocabulary, training state)
followed by name-indexed float32 parameter payloads.
"""

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .data import BOS_ID, CLS_ID, EOS_ID, UNK_ID, Vocabulary
from .tensor import Tensor

CKPT_MAGIC = b"FCK1"
CKPT_VERSION = 1


class ModelConfigError(ValueError):
    """Configuration violates a dimension or modality constraint."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed or incompatible with the config."""


@dataclass
class ModelConfig:
    vocab_size: int
    max_caption_len: int = 30
    d_clip: int = 512
    k: int = 10
    d_model: int = 256
    d_attn: int = 1024
    d_fuse: int = 2048
    fusion_layers: int = 2
    heads: int = 4
    d_hidden: int = 512
    use_knowledge: bool = True
    use_fusion: bool = True
    use_vision: bool = True
    use_text: bool = True
    positional_encoding: bool = True
    init_scale: float = 0.08

    def validate(self):
        problems = []
        for name in ("vocab_size", "max_caption_len", "d_clip", "k", "d_model",
                     "d_attn", "d_fuse", "fusion_layers", "heads", "d_hidden"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.vocab_size < 5:
            problems.append("vocab_size must cover the 5 special tokens")
        if self.max_caption_len < 3:
            problems.append("max_caption_len must be at least 3")
        if self.d_fuse != 2 * self.d_attn:
            problems.append(f"d_fuse must equal 2*d_attn ({self.d_fuse} != 2*{self.d_attn})")
        if self.d_attn % self.heads != 0:
            problems.append(f"heads ({self.heads}) must divide d_attn ({self.d_attn})")
        if self.d_hidden % 2 != 0:
            problems.append(f"d_hidden must be even, got {self.d_hidden}")
        if not (self.use_vision or self.use_text):
            problems.append("at least one of use_vision/use_text must be true")
        if self.init_scale <= 0:
            problems.append("init_scale must be positive")
        if problems:
            raise ModelConfigError("; ".join(problems))
        return self

    @property
    def has_text_stream(self):
        return self.use_text

    @property
    def has_cond_stream(self):
        return self.use_vision or self.use_knowledge

    @property
    def fusion_active(self):
        return self.use_fusion and self.has_text_stream and self.has_cond_stream

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ModelConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()


# ---------------------------------------------------------------------------
# parameters

INIT_SCALE = 0.08

GROUP_PREFIXES = {
    "encoders": ("visual.", "text.", "know."),
    "fusion": ("fuse.",),
    "decoder": ("dec.",),
}


def group_of(name):
    """The learning-rate group a parameter belongs to (total and disjoint)."""
    matches = [g for g, prefixes in GROUP_PREFIXES.items()
               if any(name.startswith(p) for p in prefixes)]
    if len(matches) != 1:
        raise ValueError(f"parameter {name!r} matches {len(matches)} groups")
    return matches[0]


def parameter_shapes(config):
    """Ordered name -> shape map for every weight the config instantiates."""
    d_m, d_a, h = config.d_model, config.d_attn, config.d_hidden
    shapes = {}
    if config.use_vision:
        wide = 2 * d_m
        shapes["visual.map.w1"] = (config.d_clip, wide)
        shapes["visual.map.b1"] = (wide,)
        shapes["visual.map.w2"] = (wide, config.k * d_m)
        shapes["visual.map.b2"] = (config.k * d_m,)
    if config.use_text or config.use_knowledge:
        shapes["text.embed"] = (config.vocab_size, d_m)
        shapes["text.ln.gain"] = (d_m,)
        shapes["text.ln.bias"] = (d_m,)
    if config.use_knowledge:
        shapes["know.fc.w"] = (d_m, config.d_fuse)
        shapes["know.fc.b"] = (config.d_fuse,)
        shapes["know.down.w"] = (config.d_fuse, d_m)
        shapes["know.down.b"] = (d_m,)
    if config.has_text_stream:
        shapes["fuse.text_in.w"] = (d_m, d_a)
        shapes["fuse.text_in.b"] = (d_a,)
    if config.has_cond_stream:
        shapes["fuse.cond_in.w"] = (d_m, d_a)
        shapes["fuse.cond_in.b"] = (d_a,)
    if config.fusion_active:
        for block in ("text", "cond"):
            for i in range(config.fusion_layers):
                p = f"fuse.{block}.l{i}"
                shapes[f"{p}.attn.wq"] = (d_a, d_a)
                shapes[f"{p}.attn.wk"] = (d_a, d_a)
                shapes[f"{p}.attn.wv"] = (d_a, d_a)
                shapes[f"{p}.attn.wo"] = (d_a, d_a)
                shapes[f"{p}.attn.bo"] = (d_a,)
                shapes[f"{p}.ln1.gain"] = (d_a,)
                shapes[f"{p}.ln1.bias"] = (d_a,)
                shapes[f"{p}.ff.w1"] = (d_a, 2 * d_a)
                shapes[f"{p}.ff.b1"] = (2 * d_a,)
                shapes[f"{p}.ff.w2"] = (2 * d_a, d_a)
                shapes[f"{p}.ff.b2"] = (d_a,)
                shapes[f"{p}.ln2.gain"] = (d_a,)
                shapes[f"{p}.ln2.bias"] = (d_a,)
    half = h // 2 if (config.use_vision and config.use_text) else h
    if config.use_vision:
        shapes["dec.init.wpc"] = (d_m, half)
        shapes["dec.init.wph"] = (d_m, half)
    if config.use_text:
        shapes["dec.init.wtc"] = (d_m, half)
        shapes["dec.init.wth"] = (d_m, half)
    shapes["dec.embed"] = (config.vocab_size, d_m)
    shapes["dec.emap.w"] = (d_m, d_m)
    for gate in ("i", "f", "o", "c"):
        shapes[f"dec.gate_{gate}.wy"] = (d_m, h)
        shapes[f"dec.gate_{gate}.wh"] = (h, h)
        shapes[f"dec.gate_{gate}.wd"] = (d_a, h)
        shapes[f"dec.gate_{gate}.b"] = (h,)
    shapes["dec.att.w"] = (h, d_a)
    shapes["dec.att.u"] = (d_a, d_a)
    shapes["dec.att.v"] = (d_a, 1)
    shapes["dec.out.wh"] = (h, config.vocab_size)
    shapes["dec.out.wd"] = (d_a, config.vocab_size)
    return shapes


def parameter_count(config):
    return sum(int(np.prod(s)) for s in parameter_shapes(config).values())


def _is_bias(name):
    leaf = name.rsplit(".", 1)[-1]
    return leaf.startswith("b") or leaf == "bias"


def _is_gain(name):
    return name.endswith(".gain")


class Parameters:
    """Named weight collection; iteration order is the construction order."""

    def __init__(self, tensors):
        self._tensors = dict(tensors)

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def zero_grad(self):
        for t in self._tensors.values():
            t.zero_grad()

    def count(self):
        return sum(t.size for t in self._tensors.values())


def init_parameters(config, seed=0):
    """Seeded init: uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    scale = config.init_scale
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        if _is_bias(name):
            data = np.zeros(shape)
        elif _is_gain(name):
            data = np.ones(shape)
        else:
            data = rng.uniform(-scale, scale, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return Parameters(tensors)


# ---------------------------------------------------------------------------
# encoders


def map_visual(clip_vec, params, config):
    """Two-layer tanh MLP mapping one image vector to k prefix rows."""
    v = np.asarray(clip_vec, dtype=np.float64)
    if v.shape != (config.d_clip,):
        raise T.DimensionError(
            f"map_visual: input has shape {tuple(v.shape)}, expected ({config.d_clip},)"
        )
    x = Tensor(v.reshape(1, -1))
    hidden = T.tanh(T.add(T.matmul(x, params["visual.map.w1"]), params["visual.map.b1"]))
    flat = T.add(T.matmul(hidden, params["visual.map.w2"]), params["visual.map.b2"])
    return T.reshape(flat, (config.k, config.d_model))


def encode_text(token_ids, params):
    """Embedding lookup followed by per-position layer normalization."""
    emb = T.embedding(params["text.embed"], token_ids)
    return T.layer_norm(emb, params["text.ln.gain"], params["text.ln.bias"])


def encode_knowledge(abstract_ids, params, config):
    """Pool the abstract embedding and lift it to the fused width with relu."""
    if abstract_ids:
        pooled = T.mean_rows(encode_text(abstract_ids, params))
    else:
        pooled = Tensor(np.zeros((1, config.d_model)))
    return T.relu(T.add(T.matmul(pooled, params["know.fc.w"]), params["know.fc.b"]))


def assemble_prefix(visual_prefix, knowledge_vec, cls_emb, params, config):
    """Template [cls; knowledge; cls; visual rows]; just the rows when knowledge is off."""
    if not config.use_knowledge:
        return visual_prefix
    know_row = T.add(T.matmul(knowledge_vec, params["know.down.w"]), params["know.down.b"])
    rows = [cls_emb, know_row, cls_emb]
    if visual_prefix is not None:
        rows.append(visual_prefix)
    return T.concat(rows, axis=0)


# ---------------------------------------------------------------------------
# fusion


def sinusoidal_encoding(n, d):
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / d)
    enc = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return enc


def multi_head_attention(query_stream, kv_stream, params, prefix, heads,
                         return_weights=False):
    """Cross attention: queries from one stream, keys/values from the other."""
    q = T.matmul(query_stream, params[f"{prefix}.wq"])
    k = T.matmul(kv_stream, params[f"{prefix}.wk"])
    v = T.matmul(kv_stream, params[f"{prefix}.wv"])
    d_attn = q.shape[1]
    dh = d_attn // heads
    outs = []
    weights = []
    for head in range(heads):
        qh = T.slice_last(q, head * dh, dh)
        kh = T.slice_last(k, head * dh, dh)
        vh = T.slice_last(v, head * dh, dh)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(dh))
        alpha = T.softmax(scores)
        if return_weights:
            weights.append(alpha.data.copy())
        outs.append(T.matmul(alpha, vh))
    merged = T.concat(outs, axis=1)
    out = T.add(T.matmul(merged, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])
    if return_weights:
        return out, weights
    return out


def _fusion_layer(a_state, b_state, params, prefix, heads):
    att = multi_head_attention(a_state, b_state, params, f"{prefix}.attn", heads)
    x = T.layer_norm(T.add(a_state, att),
                     params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])
    ff = T.add(
        T.matmul(
            T.relu(T.add(T.matmul(x, params[f"{prefix}.ff.w1"]), params[f"{prefix}.ff.b1"])),
            params[f"{prefix}.ff.w2"],
        ),
        params[f"{prefix}.ff.b2"],
    )
    return T.layer_norm(T.add(x, ff),
                        params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"])


@dataclass
class FusionOutput:
    fused: Tensor  # [1, d_fuse] concatenated pooled streams, or None unimodal
    memory: Tensor  # [m, d_attn] per-position outputs the decoder attends over
    text_state: Tensor
    cond_state: Tensor


def _project_stream(stream, params, which, config):
    out = T.add(T.matmul(stream, params[f"fuse.{which}_in.w"]), params[f"fuse.{which}_in.b"])
    if config.positional_encoding:
        out = T.add(out, Tensor(sinusoidal_encoding(out.shape[0], config.d_attn)))
    return out


def co_transform(text_stream, cond_stream, params, config):
    """Paired cross-attention blocks over the two projected streams.

    Both blocks update in parallel from the previous layer's states; the
    pooled block outputs concatenate into the fused vector.
    """
    if text_stream.shape[0] == 0 or cond_stream.shape[0] == 0:
        raise T.ContractError("co_transform: streams must be non-empty")
    ht = _project_stream(text_stream, params, "text", config)
    hc = _project_stream(cond_stream, params, "cond", config)
    if config.fusion_active:
        for i in range(config.fusion_layers):
            nt = _fusion_layer(ht, hc, params, f"fuse.text.l{i}", config.heads)
            nc = _fusion_layer(hc, ht, params, f"fuse.cond.l{i}", config.heads)
            ht, hc = nt, nc
    fused = T.concat([T.mean_rows(ht), T.mean_rows(hc)], axis=1)
    memory = T.concat([ht, hc], axis=0)
    return FusionOutput(fused=fused, memory=memory, text_state=ht, cond_state=hc)


@dataclass
class EncodedInputs:
    visual_prefix: Tensor  # [k, d_model] or None
    text_seq: Tensor  # [n, d_model] or None
    fusion: FusionOutput


def encode_record(clip_vec, figure_text_ids, abstract_ids, params, config):
    """Run all encoders for one record and build the decoder memory."""
    text_seq = None
    if config.use_text:
        ids = list(figure_text_ids) or [UNK_ID]
        text_seq = encode_text(ids, params)
    visual_prefix = map_visual(clip_vec, params, config) if config.use_vision else None
    cond_seq = None
    if config.has_cond_stream:
        if config.use_knowledge:
            know = encode_knowledge(list(abstract_ids), params, config)
            cls_emb = encode_cls(params)
            cond_seq = assemble_prefix(visual_prefix, know, cls_emb, params, config)
        else:
            cond_seq = visual_prefix
    if text_seq is not None and cond_seq is not None:
        fusion = co_transform(text_seq, cond_seq, params, config)
    else:
        # Single modality: no co-attention, the projected stream is the memory.
        which = "text" if text_seq is not None else "cond"
        stream = text_seq if text_seq is not None else cond_seq
        state = _project_stream(stream, params, which, config)
        fusion = FusionOutput(fused=None, memory=state, text_state=state, cond_state=state)
    return EncodedInputs(visual_prefix=visual_prefix, text_seq=text_seq, fusion=fusion)


def encode_cls(params):
    """Embedding row of the CLS token (not layer-normalized)."""
    return T.embedding(params["text.embed"], [CLS_ID])


# ---------------------------------------------------------------------------
# decoder


def decoder_init(visual_prefix, text_seq, params, config):
    """Sigmoid projections of the pooled streams initialize the LSTM state."""
    parts_c = []
    parts_h = []
    if visual_prefix is not None:
        pooled = T.mean_rows(visual_prefix)
        parts_c.append(T.matmul(pooled, params["dec.init.wpc"]))
        parts_h.append(T.matmul(pooled, params["dec.init.wph"]))
    if text_seq is not None:
        pooled = T.mean_rows(text_seq)
        parts_c.append(T.matmul(pooled, params["dec.init.wtc"]))
        parts_h.append(T.matmul(pooled, params["dec.init.wth"]))
    if not parts_c:
        raise T.ContractError("decoder_init: no encoder streams present")
    c0 = T.sigmoid(T.concat(parts_c, axis=1) if len(parts_c) > 1 else parts_c[0])
    h0 = T.sigmoid(T.concat(parts_h, axis=1) if len(parts_h) > 1 else parts_h[0])
    return h0, c0


def attention_context(h_prev, memory, params, mem_proj=None, return_weights=False):
    """Additive attention over the fusion memory, recomputed from h_{t-1}."""
    if mem_proj is None:
        mem_proj = T.matmul(memory, params["dec.att.u"])
    keys = T.tanh(T.add(mem_proj, T.matmul(h_prev, params["dec.att.w"])))
    scores = T.reshape(T.matmul(keys, params["dec.att.v"]), (1, memory.shape[0]))
    alpha = T.softmax(scores)
    context = T.matmul(alpha, memory)
    if return_weights:
        return context, alpha.data[0].copy()
    return context


def _gate(name, e_t, h_prev, context, params):
    pre = T.add(T.matmul(h_prev, params[f"{name}.wh"]),
                T.matmul(context, params[f"{name}.wd"]))
    if e_t is not None:
        pre = T.add(pre, T.matmul(e_t, params[f"{name}.wy"]))
    return T.add(pre, params[f"{name}.b"])


def decoder_step_scores(y_prev_id, h_prev, c_prev, context, params, config):
    """One LSTM step; returns the new state and the pre-squash vocab scores.

    ``y_prev_id`` of None marks the first step, whose input embedding is
    the zero vector.
    """
    if y_prev_id is None:
        e_t = None
    else:
        emb = T.embedding(params["dec.embed"], [int(y_prev_id)])
        e_t = T.matmul(emb, params["dec.emap.w"])
    i_t = T.sigmoid(_gate("dec.gate_i", e_t, h_prev, context, params))
    f_t = T.sigmoid(_gate("dec.gate_f", e_t, h_prev, context, params))
    o_t = T.sigmoid(_gate("dec.gate_o", e_t, h_prev, context, params))
    c_tilde = T.tanh(_gate("dec.gate_c", e_t, h_prev, context, params))
    c_t = T.add(T.mul(i_t, c_tilde), T.mul(f_t, c_prev))
    h_t = T.mul(o_t, T.tanh(c_t))
    scores = T.add(T.matmul(h_t, params["dec.out.wh"]),
                   T.matmul(context, params["dec.out.wd"]))
    return h_t, c_t, scores


def decoder_step(y_prev_id, h_prev, c_prev, context, params, config):
    """One decode step returning (h_t, c_t, next-token distribution).

    The vocab scores pass through a sigmoid squash before the softmax;
    the squash is monotone, so the argmax token is unchanged.
    """
    h_t, c_t, scores = decoder_step_scores(y_prev_id, h_prev, c_prev, context, params, config)
    dist = T.softmax(T.sigmoid(scores))
    return h_t, c_t, dist


def caption_scores(encoded, caption_ids, params, config):
    """Teacher-forced pre-squash score rows [len-1, vocab] for one caption."""
    if len(caption_ids) < 2:
        raise T.ContractError("caption_scores: caption needs BOS and EOS")
    h, c = decoder_init(encoded.visual_prefix, encoded.text_seq, params, config)
    memory = encoded.fusion.memory
    mem_proj = T.matmul(memory, params["dec.att.u"])
    rows = []
    for t in range(len(caption_ids) - 1):
        context = attention_context(h, memory, params, mem_proj=mem_proj)
        prev = None if t == 0 else caption_ids[t]
        h, c, scores = decoder_step_scores(prev, h, c, context, params, config)
        rows.append(scores)
    return rows[0] if len(rows) == 1 else T.concat(rows, axis=0)


# ---------------------------------------------------------------------------
# decoding


@dataclass
class CaptionHypothesis:
    token_ids: list  # includes BOS, and EOS when finished
    log_prob: float
    finished: bool


def _decode_step_fn(encoded, params, config):
    """Closure advancing (h, c, t) by one token; returns log-probabilities."""
    memory = encoded.fusion.memory
    mem_proj = T.matmul(memory, params["dec.att.u"])

    def step(state, prev_id):
        h, c, t = state
        context = attention_context(h, memory, params, mem_proj=mem_proj)
        prev = None if t == 0 else prev_id
        h2, c2, scores = decoder_step_scores(prev, h, c, context, params, config)
        dist = T.softmax(T.sigmoid(scores)).data[0]
        return (h2, c2, t + 1), np.log(dist)

    return step


def greedy_decode(encoded, params, config, max_len=None):
    """Argmax decoding from BOS until EOS or the length budget."""
    max_len = max_len or config.max_caption_len
    with T.no_grad():
        step = _decode_step_fn(encoded, params, config)
        h, c = decoder_init(encoded.visual_prefix, encoded.text_seq, params, config)
        state = (h, c, 0)
        tokens = [BOS_ID]
        log_prob = 0.0
        finished = False
        for _ in range(max_len - 1):
            state, logp = step(state, tokens[-1])
            tok = int(np.argmax(logp))
            tokens.append(tok)
            log_prob += float(logp[tok])
            if tok == EOS_ID:
                finished = True
                break
    return CaptionHypothesis(token_ids=tokens, log_prob=log_prob, finished=finished)


def _beam_loop(step, state0, beam, max_len):
    """Core beam search over any step function.

    Hypotheses are (state, tokens, logprob); live ones are ranked by
    cumulative log-probability, the winner by length-normalized score
    over finished and live hypotheses together.
    """
    live = [(state0, [BOS_ID], 0.0)]
    done = []
    for _ in range(max_len - 1):
        candidates = []
        for state, tokens, lp in live:
            new_state, logp = step(state, tokens[-1])
            top = np.argsort(-logp, kind="stable")[:beam]
            for tok in top:
                candidates.append((new_state, tokens + [int(tok)], lp + float(logp[tok])))
        candidates.sort(key=lambda cand: -cand[2])
        live = []
        for cand in candidates[:beam]:
            if cand[1][-1] == EOS_ID:
                done.append(cand)
            else:
                live.append(cand)
        if not live:
            break
    pool = done + live
    return max(pool, key=lambda cand: cand[2] / max(len(cand[1]) - 1, 1))


def beam_decode(encoded, params, config, beam=1, max_len=None):
    """Beam search decode; beam=1 reproduces greedy decoding."""
    if beam < 1:
        raise ModelConfigError(f"beam width must be >= 1, got {beam}")
    max_len = max_len or config.max_caption_len
    with T.no_grad():
        step = _decode_step_fn(encoded, params, config)
        h, c = decoder_init(encoded.visual_prefix, encoded.text_seq, params, config)
        _, tokens, log_prob = _beam_loop(step, (h, c, 0), beam, max_len)
    return CaptionHypothesis(
        token_ids=tokens, log_prob=log_prob, finished=tokens[-1] == EOS_ID
    )


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params, config, vocab, train_state=None):
    """Write config + vocabulary + named float32 payloads atomically."""
    meta = {
        "model": config.to_dict(),
        "vocab": vocab.to_dict(),
        "train_state": train_state or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    index = bytearray()
    payload = bytearray()
    names = params.names()
    for name in names:
        arr = params[name].data.astype("<f4")
        nb = name.encode("utf-8")
        index += struct.pack("<H", len(nb)) + nb
        index += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            index += struct.pack("<I", dim)
        payload += arr.tobytes()
    blob = (
        CKPT_MAGIC
        + struct.pack("<II", CKPT_VERSION, len(meta_bytes))
        + meta_bytes
        + struct.pack("<I", len(names))
        + bytes(index)
        + bytes(payload)
    )
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".",
                               prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Read back (params, config, vocab, train_state); arrays widen to float64."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {CKPT_MAGIC!r}")
    version, meta_len = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 12
    meta = json.loads(raw[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + nlen].decode("utf-8")
        offset += nlen
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        entries.append((name, tuple(int(d) for d in shape)))
    tensors = {}
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        expected = n * 4
        if offset + expected > len(raw):
            raise CheckpointError(
                f"{path}: truncated payload for {name!r} "
                f"(need {expected} bytes, have {len(raw) - offset})"
            )
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape)
        tensors[name] = Tensor(arr.astype(np.float64), requires_grad=True)
        offset += expected
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    config = ModelConfig.from_dict(meta["model"])
    vocab = Vocabulary.from_dict(meta["vocab"])
    params = Parameters(tensors)
    verify_parameters(params, config)
    return params, config, vocab, meta.get("train_state", {})


def verify_parameters(params, config):
    """Check a parameter set matches exactly what the config instantiates."""
    expected = parameter_shapes(config)
    missing = [n for n in expected if n not in params]
    extra = [n for n in params.names() if n not in expected]
    if missing or extra:
        raise CheckpointError(
            f"parameter set mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}"
        )
    for name, shape in expected.items():
        have = tuple(params[name].shape)
        if have != shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {have}, config expects {shape}"
            )
