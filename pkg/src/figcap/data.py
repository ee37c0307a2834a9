"""Corpus ingestion, cleaning, vocabulary and batching.

Records arrive as UTF-8 JSON-lines with keys id / figure_text / abstract /
caption / feature_ref.  Cleaning drops records whose trimmed figure text
is shorter than a threshold; tokenization is lowercase whitespace
splitting with UNK for out-of-vocabulary words.
"""

import json
from dataclasses import dataclass

import numpy as np

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3
CLS_ID = 4
SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>", "<cls>")


class CorpusError(ValueError):
    """Malformed dataset file (bad JSON, duplicate ids, missing fields)."""


class VocabConfigError(ValueError):
    """Vocabulary parameters cannot hold the special tokens."""


@dataclass
class ScicapRecord:
    id: str
    figure_text: str = ""
    abstract: str = ""
    caption: str = ""
    feature_ref: str = ""


@dataclass
class CleanReport:
    input_count: int
    kept_count: int
    removed_ids: list
    rule: str
    min_text_len: int

    def to_dict(self):
        return {
            "input_count": self.input_count,
            "kept_count": self.kept_count,
            "removed_ids": list(self.removed_ids),
            "rule": self.rule,
            "min_text_len": self.min_text_len,
        }


def tokenize(text):
    """Lowercase whitespace word split; empty text gives no tokens."""
    return text.lower().split()


def load_records(path):
    """Read JSON-lines records in file order, validating ids."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}: malformed JSON on line {lineno}: {e.msg}") from e
            if not isinstance(raw, dict):
                raise CorpusError(f"{path}: line {lineno} is not a JSON object")
            rid = raw.get("id")
            if not rid or not isinstance(rid, str):
                raise CorpusError(f"{path}: line {lineno} has no usable 'id'")
            if rid in seen:
                raise CorpusError(f"{path}: duplicate id {rid!r} on line {lineno}")
            seen.add(rid)
            unknown = set(raw) - {"id", "figure_text", "abstract", "caption", "feature_ref"}
            if unknown:
                raise CorpusError(
                    f"{path}: line {lineno} has unknown keys {sorted(unknown)}"
                )
            records.append(
                ScicapRecord(
                    id=rid,
                    figure_text=raw.get("figure_text", "") or "",
                    abstract=raw.get("abstract", "") or "",
                    caption=raw.get("caption", "") or "",
                    feature_ref=raw.get("feature_ref", "") or "",
                )
            )
    return records


def write_records(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "id": r.id,
                        "figure_text": r.figure_text,
                        "abstract": r.abstract,
                        "caption": r.caption,
                        "feature_ref": r.feature_ref,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def clean(records, min_text_len=1):
    """Keep records whose trimmed figure text has at least min_text_len characters."""
    if min_text_len < 0:
        raise ValueError(f"min_text_len must be >= 0, got {min_text_len}")
    kept = []
    removed = []
    for r in records:
        if len(r.figure_text.strip()) >= min_text_len:
            kept.append(r)
        else:
            removed.append(r.id)
    report = CleanReport(
        input_count=len(records),
        kept_count=len(kept),
        removed_ids=removed,
        rule=f"keep iff len(trim(figure_text)) >= {min_text_len}",
        min_text_len=min_text_len,
    )
    return kept, report


@dataclass
class Vocabulary:
    token_to_id: dict
    id_to_token: list
    min_freq: int
    max_size: int

    def __len__(self):
        return len(self.id_to_token)

    def encode_token(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, ids, drop_special=True):
        toks = []
        for i in ids:
            if drop_special and i < len(SPECIAL_TOKENS):
                continue
            toks.append(self.id_to_token[i])
        return " ".join(toks)

    def to_dict(self):
        return {"tokens": list(self.id_to_token), "min_freq": self.min_freq,
                "max_size": self.max_size}

    @classmethod
    def from_dict(cls, d):
        tokens = list(d["tokens"])
        if tuple(tokens[:5]) != SPECIAL_TOKENS:
            raise VocabConfigError("vocabulary does not start with the special tokens")
        return cls(
            token_to_id={t: i for i, t in enumerate(tokens)},
            id_to_token=tokens,
            min_freq=int(d.get("min_freq", 1)),
            max_size=int(d.get("max_size", len(tokens))),
        )


def build_vocab(records, min_freq=1, max_size=20000):
    """Frequency-ranked vocabulary over caption + figure text + abstract.

    Ties are broken lexicographically; ids 0..4 are the special tokens and
    content words start at id 5.
    """
    if max_size < 6:
        raise VocabConfigError(f"max_size must be at least 6, got {max_size}")
    if not records:
        raise ValueError("build_vocab: records must be non-empty")
    freq = {}
    for r in records:
        for tok in tokenize(r.caption) + tokenize(r.figure_text) + tokenize(r.abstract):
            freq[tok] = freq.get(tok, 0) + 1
    ranked = sorted(
        (t for t, c in freq.items() if c >= min_freq),
        key=lambda t: (-freq[t], t),
    )[: max_size - len(SPECIAL_TOKENS)]
    id_to_token = list(SPECIAL_TOKENS) + ranked
    return Vocabulary(
        token_to_id={t: i for i, t in enumerate(id_to_token)},
        id_to_token=id_to_token,
        min_freq=min_freq,
        max_size=max_size,
    )


def encode_caption(text, vocab, max_len):
    """BOS + token ids + EOS, truncated so the total never exceeds max_len."""
    if max_len < 3:
        raise ValueError(f"max_len must be >= 3, got {max_len}")
    body = [vocab.encode_token(t) for t in tokenize(text)][: max_len - 2]
    return [BOS_ID] + body + [EOS_ID]


def encode_text_ids(text, vocab, max_len):
    """Plain token ids (no BOS/EOS) for figure text and abstracts."""
    return [vocab.encode_token(t) for t in tokenize(text)][:max_len]


@dataclass
class TokenizedExample:
    record_id: str
    caption_ids: list
    figure_text_ids: list
    abstract_ids: list
    feature_ref: str

    @property
    def caption_len(self):
        return len(self.caption_ids)


def tokenize_records(records, vocab, max_caption_len, max_text_len=64):
    return [
        TokenizedExample(
            record_id=r.id,
            caption_ids=encode_caption(r.caption, vocab, max_caption_len),
            figure_text_ids=encode_text_ids(r.figure_text, vocab, max_text_len),
            abstract_ids=encode_text_ids(r.abstract, vocab, max_text_len),
            feature_ref=r.feature_ref,
        )
        for r in records
    ]


@dataclass
class Batch:
    record_ids: list
    feature_refs: list
    caption_ids: np.ndarray  # [b, t] padded with PAD_ID
    caption_mask: np.ndarray  # [b, t] bool, True on real tokens
    figure_text_ids: list  # per-example id lists (variable length)
    abstract_ids: list

    def __len__(self):
        return len(self.record_ids)


def _pad(seqs, pad_id):
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


def batch(examples, batch_size, pad_id=PAD_ID, seed=0):
    """Deterministically shuffled, right-padded batches with token masks."""
    if not examples:
        raise ValueError("batch: examples must be non-empty")
    order = np.random.default_rng(seed).permutation(len(examples))
    shuffled = [examples[i] for i in order]
    out = []
    for start in range(0, len(shuffled), batch_size):
        chunk = shuffled[start : start + batch_size]
        cap_ids, cap_mask = _pad([e.caption_ids for e in chunk], pad_id)
        out.append(
            Batch(
                record_ids=[e.record_id for e in chunk],
                feature_refs=[e.feature_ref for e in chunk],
                caption_ids=cap_ids,
                caption_mask=cap_mask,
                figure_text_ids=[list(e.figure_text_ids) for e in chunk],
                abstract_ids=[list(e.abstract_ids) for e in chunk],
            )
        )
    return out
