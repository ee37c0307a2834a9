"""BLEU-4 scoring with clipped n-gram precision and brevity penalty.

Sentence-level and corpus-level variants share the counting code; the
corpus score sums matches and totals over all pairs before taking the
geometric mean.  Scores use a single reference per candidate.
"""

import math
from collections import Counter
from dataclasses import dataclass

SMOOTH_EPS = 0.1


@dataclass
class BleuReport:
    precisions: list  # p1..p4 as actually used in the geometric mean
    brevity_penalty: float
    bleu4: float
    candidate_length: int
    reference_length: int
    smoothing: str  # "none" or "epsilon"
    level: str = "sentence"

    def to_dict(self):
        return {
            "precisions": list(self.precisions),
            "brevity_penalty": self.brevity_penalty,
            "bleu4": self.bleu4,
            "candidate_length": self.candidate_length,
            "reference_length": self.reference_length,
            "smoothing": self.smoothing,
            "level": self.level,
        }


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(candidate, reference, n):
    """Clipped n-gram matches and total candidate n-grams."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    clipped = sum(min(count, ref[gram]) for gram, count in cand.items())
    return clipped, sum(cand.values())


def brevity_penalty(c, r):
    """1 when the candidate is at least reference length, else exp(1 - r/c)."""
    if c < 0 or r < 0:
        raise ValueError("lengths must be non-negative")
    if c == 0:
        return 0.0
    if c >= r:
        return 1.0
    return math.exp(1.0 - r / c)


def _combine(counts, cand_len, ref_len, smoothing, level):
    precisions = []
    log_sum = 0.0
    zero = False
    for clipped, total in counts:
        if clipped > 0:
            p = clipped / total
        elif smoothing == "epsilon":
            # Degenerate candidates can have zero n-grams of this order;
            # fall back to eps over a unit count so the log stays finite.
            p = SMOOTH_EPS / max(total, 1)
        else:
            p = 0.0
            zero = True
        precisions.append(p)
        if not zero:
            log_sum += 0.25 * math.log(p)
    if zero or cand_len == 0:
        bleu = 0.0
        bp = brevity_penalty(cand_len, ref_len)
    else:
        bp = brevity_penalty(cand_len, ref_len)
        bleu = bp * math.exp(log_sum)
    return BleuReport(
        precisions=precisions,
        brevity_penalty=bp,
        bleu4=bleu,
        candidate_length=cand_len,
        reference_length=ref_len,
        smoothing=smoothing,
        level=level,
    )


def bleu4_sentence(candidate, reference, smoothing="epsilon"):
    """BLEU-4 of one tokenized candidate against one tokenized reference."""
    if smoothing not in ("none", "epsilon"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    counts = [modified_precision(candidate, reference, n) for n in range(1, 5)]
    return _combine(counts, len(candidate), len(reference), smoothing, "sentence")


def bleu4_corpus(pairs, smoothing="epsilon"):
    """Corpus BLEU-4: counts summed over (candidate, reference) pairs."""
    if smoothing not in ("none", "epsilon"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    if not pairs:
        raise ValueError("bleu4_corpus: need at least one pair")
    counts = []
    for n in range(1, 5):
        clipped = 0
        total = 0
        for cand, ref in pairs:
            c, t = modified_precision(cand, ref, n)
            clipped += c
            total += t
        counts.append((clipped, total))
    cand_len = sum(len(c) for c, _ in pairs)
    ref_len = sum(len(r) for _, r in pairs)
    return _combine(counts, cand_len, ref_len, smoothing, "corpus")
