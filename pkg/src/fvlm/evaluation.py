"""Perplexity, smoothed corpus BLEU, and the sequence-prediction protocol.

The sequence-prediction protocol: for each test sentence, keep the first L
interior tokens as history (L in {0, 1, 2, 3, 5} by default), let the model
greedily continue, and score the continuations against the withheld
remainders with corpus-level BLEU-4.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .corpus import BOS_ID
from .errors import ValidationError
from .models import corpus_ce, greedy_continue

DEFAULT_HISTORY_LENGTHS = (0, 1, 2, 3, 5)


def perplexity(model, sequences) -> float:
    """exp of the token-weighted mean CE over all predicted positions."""
    if not sequences:
        raise ValidationError("empty corpus")
    return float(math.exp(corpus_ce(model, sequences)))


@dataclass
class BleuReport:
    """Corpus BLEU-4 with its components.

    precisions holds the per-order modified precisions actually used in the
    score, i.e. after add-one smoothing of zero-match orders; the raw
    clipped-match and candidate counts are kept alongside.
    """

    score: float
    precisions: list[float]
    brevity_penalty: float
    hyp_length: int
    ref_length: int
    matches: list[int]
    totals: list[int]


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references) -> BleuReport:
    """Corpus-level BLEU-4 over aligned hypothesis/reference token lists.

    Clipped modified n-gram precisions (n = 1..4) are aggregated over the
    whole corpus; orders with zero matches get add-one smoothing; the
    brevity penalty is exp(1 - r/c) when c < r, else 1.
    """
    if not hypotheses:
        raise ValidationError("empty hypothesis list")
    if len(hypotheses) != len(references):
        raise ValidationError(f"{len(hypotheses)} hypotheses for {len(references)} references")
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = list(hyp)
        ref = list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            counts = _ngram_counts(hyp, n)
            if not counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in counts.items())
            totals[n - 1] += sum(counts.values())
    precisions = []
    for m, t in zip(matches, totals):
        if m == 0:
            precisions.append((m + 1.0) / (t + 1.0))
        else:
            precisions.append(m / t)
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0
    score = bp * math.exp(sum(math.log(p) for p in precisions) / 4.0)
    return BleuReport(score, precisions, bp, hyp_len, ref_len, matches, totals)


@dataclass
class SeqPredReport:
    """BLEU per history length plus the corpus perplexity."""

    bleu_by_history: dict[int, float]
    reports: dict[int, BleuReport]
    skipped_by_history: dict[int, int]
    perplexity: float
    n_sentences: int

    def table(self, model_name: str = "model") -> str:
        lengths = sorted(self.bleu_by_history)
        header = f"{'Model':<12} {'PPL':>10} " + " ".join(f"{l:>8}" for l in lengths)
        row = (f"{model_name:<12} {self.perplexity:>10.2f} "
               + " ".join(f"{self.bleu_by_history[l]:>8.4f}" for l in lengths))
        return header + "\n" + row

    def csv_rows(self, model_name: str = "model") -> list[str]:
        rows = [f"{model_name},ppl,,{self.perplexity:.6f}"]
        for l in sorted(self.bleu_by_history):
            rows.append(f"{model_name},bleu,{l},{self.bleu_by_history[l]:.6f}")
        return rows


def sequence_prediction_eval(model, sequences,
                             history_lengths=DEFAULT_HISTORY_LENGTHS,
                             max_len: int | None = None) -> SeqPredReport:
    """Greedy continuation scored by BLEU at several history lengths.

    For history length L the history is <s> plus the first L interior
    tokens; the reference is the remaining interior tokens.  Sentences with
    fewer than L interior tokens are skipped (and counted).  The generation
    cap defaults to 2x the reference length + 5.
    """
    if not sequences:
        raise ValidationError("empty corpus")
    bleu_by_history: dict[int, float] = {}
    reports: dict[int, BleuReport] = {}
    skipped: dict[int, int] = {}
    for L in history_lengths:
        hyps, refs = [], []
        n_skipped = 0
        for seq in sequences:
            interior = seq[1:-1]
            if len(interior) < L:
                n_skipped += 1
                continue
            history = [BOS_ID] + interior[:L]
            ref = interior[L:]
            cap = max_len if max_len is not None else 2 * len(ref) + 5
            hyps.append(greedy_continue(model, history, max(cap, 1)))
            refs.append(ref)
        if not hyps:
            raise ValidationError(f"every sentence was shorter than history length {L}")
        report = bleu(hyps, refs)
        bleu_by_history[L] = report.score
        reports[L] = report
        skipped[L] = n_skipped
    return SeqPredReport(bleu_by_history, reports, skipped,
                         perplexity(model, sequences), len(sequences))
