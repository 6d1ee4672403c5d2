"""N-best list rescoring and word error rate.

Wire formats (UTF-8, tab-separated):
    n-best file:     utterance_id <TAB> acoustic_score <TAB> hypothesis text
    reference file:  utterance_id <TAB> reference text

Hypothesis selection combines log-domain scores:
    total = acoustic_score + lm_scale * combined_lm_score
where the combined LM score interpolates the pooled models' per-hypothesis
log-probabilities (weighted sum of log-probs by default; a linear-domain
probability mixture is available as a flag).  Ties break toward the earlier
decoder rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import UNK_ID, Vocabulary, encode
from .errors import ConfigError, FormatError, ValidationError
from .models import score_sequence


@dataclass
class NBestEntry:
    utterance_id: str
    acoustic_score: float
    text: str
    original_lm_score: float | None = None


@dataclass
class NBestList:
    utterance_id: str
    entries: list[NBestEntry]

    def __post_init__(self):
        if not self.entries:
            raise ValidationError(f"empty n-best list for utterance '{self.utterance_id}'")
        for e in self.entries:
            if e.utterance_id != self.utterance_id:
                raise ValidationError(
                    f"entry for '{e.utterance_id}' in list '{self.utterance_id}'")


@dataclass
class RescoreConfig:
    lm_scale: float = 1.0
    model_weights: list[float] | None = None  # None -> equal weights
    log_domain: bool = True

    def weights_for(self, n_models: int) -> np.ndarray:
        if self.lm_scale < 0:
            raise ConfigError("lm_scale must be non-negative")
        if self.model_weights is None:
            return np.full(n_models, 1.0 / n_models)
        w = np.asarray(self.model_weights, dtype=np.float64)
        if len(w) != n_models:
            raise ConfigError(f"{len(w)} weights for {n_models} models")
        if np.any(w < 0):
            raise ConfigError("model weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ConfigError(f"model weights sum to {w.sum()}, expected 1")
        return w


@dataclass
class NBestLoadResult:
    lists: list[NBestList]
    malformed: list[tuple[int, str]] = field(default_factory=list)


def load_nbest(path) -> NBestLoadResult:
    """Parse an n-best file, grouping hypotheses by utterance id in file order.

    Malformed lines are collected with their line numbers; a file with no
    parsable entry at all raises FormatError.
    """
    groups: dict[str, list[NBestEntry]] = {}
    order: list[str] = []
    malformed: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t", 2)
            if len(parts) < 3:
                malformed.append((lineno, "expected 3 tab-separated fields"))
                continue
            utt, score_str, text = parts
            try:
                score = float(score_str)
            except ValueError:
                malformed.append((lineno, f"non-numeric acoustic score '{score_str}'"))
                continue
            if not math.isfinite(score):
                malformed.append((lineno, f"non-finite acoustic score '{score_str}'"))
                continue
            if utt not in groups:
                groups[utt] = []
                order.append(utt)
            groups[utt].append(NBestEntry(utt, score, text))
    if not groups:
        raise FormatError(f"no parsable n-best entries in {path}")
    return NBestLoadResult([NBestList(u, groups[u]) for u in order], malformed)


def write_nbest(lists: list[NBestList], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for lst in lists:
            for e in lst.entries:
                f.write(f"{e.utterance_id}\t{e.acoustic_score:.6f}\t{e.text}\n")


def load_references(path) -> dict[str, list[str]]:
    """utterance_id -> reference token list."""
    refs: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'id<TAB>text'")
            refs[parts[0]] = parts[1].split()
    return refs


@dataclass
class HypothesisScore:
    """Audit record: every component score of one hypothesis."""

    utterance_id: str
    rank: int
    text: str
    acoustic: float
    lm_scores: list[float]
    combined_lm: float
    total: float


@dataclass
class RescoreResult:
    selections: list[tuple[str, NBestEntry, int]]  # (utterance_id, entry, rank)
    table: list[HypothesisScore]
    oov_counts: dict[str, int]

    def selected_text(self) -> dict[str, str]:
        return {u: e.text for u, e, _ in self.selections}


def _lm_score_table(lists, models, vocab) -> tuple[list[np.ndarray], dict[str, int]]:
    """Per-utterance (n_hyps x n_models) matrix of LM log-scores.

    Hypotheses are re-encoded with the LM vocabulary; decoder tokens outside
    it count as OOV (mapped to <unk>) and are tallied per utterance.
    """
    for m in models[1:]:
        if m.vocab_size != models[0].vocab_size:
            raise ConfigError("rescoring models disagree on vocabulary size")
    if models[0].vocab_size != vocab.size:
        raise ConfigError("rescoring models were trained with a different vocabulary size")
    tables = []
    oov_counts: dict[str, int] = {}
    for lst in lists:
        scores = np.empty((len(lst.entries), len(models)))
        n_oov = 0
        for r, entry in enumerate(lst.entries):
            seq = encode(vocab, entry.text)
            n_oov += sum(1 for t, w in zip(seq[1:-1], entry.text.split())
                         if t == UNK_ID and w != vocab.words[UNK_ID])
            for k, model in enumerate(models):
                scores[r, k] = score_sequence(model, seq)
        tables.append(scores)
        oov_counts[lst.utterance_id] = n_oov
    return tables, oov_counts


def _combine(scores: np.ndarray, weights: np.ndarray, log_domain: bool) -> np.ndarray:
    """Interpolate per-model log-scores into one combined log-score per row."""
    if log_domain:
        return scores @ weights
    # linear-domain probability mixture, computed stably in log space
    with np.errstate(divide="ignore"):
        terms = scores + np.log(weights)[None, :]
    m = terms.max(axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(terms - m), axis=1, keepdims=True))).ravel()


def _select(lists, tables, config: RescoreConfig, n_models: int):
    weights = config.weights_for(n_models)
    selections = []
    table = []
    for lst, scores in zip(lists, tables):
        combined = _combine(scores, weights, config.log_domain)
        totals = np.array([e.acoustic_score for e in lst.entries]) + config.lm_scale * combined
        best = int(np.argmax(totals))  # first max wins: earliest decoder rank
        selections.append((lst.utterance_id, lst.entries[best], best))
        for r, e in enumerate(lst.entries):
            table.append(HypothesisScore(lst.utterance_id, r, e.text, e.acoustic_score,
                                         [float(s) for s in scores[r]],
                                         float(combined[r]), float(totals[r])))
    return selections, table


def rescore(lists, models, vocab: Vocabulary, config: RescoreConfig | None = None
            ) -> RescoreResult:
    """Pick the best hypothesis per utterance by acoustic + scaled LM score."""
    if not models:
        raise ConfigError("rescoring needs at least one model")
    config = config or RescoreConfig()
    tables, oov = _lm_score_table(lists, models, vocab)
    selections, table = _select(lists, tables, config, len(models))
    return RescoreResult(selections, table, oov)


@dataclass
class WerResult:
    rate: float
    substitutions: int
    insertions: int
    deletions: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def wer(hypothesis: list, reference: list) -> WerResult:
    """Word error rate from a minimum-edit alignment (unit costs).

    rate = (substitutions + insertions + deletions) / len(reference).
    """
    if not reference:
        raise ValidationError("WER is undefined for an empty reference")
    m, n = len(hypothesis), len(reference)
    d = np.zeros((m + 1, n + 1), dtype=np.int64)
    d[:, 0] = np.arange(m + 1)
    d[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        hi = hypothesis[i - 1]
        for j in range(1, n + 1):
            sub = d[i - 1, j - 1] + (hi != reference[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    # Backtrace with a fixed preference order so counts are deterministic.
    i, j = m, n
    subs = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (hypothesis[i - 1] != reference[j - 1]):
            subs += hypothesis[i - 1] != reference[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            ins += 1
            i -= 1
        else:
            dels += 1
            j -= 1
    return WerResult((subs + ins + dels) / n, subs, ins, dels)


def corpus_wer(pairs: list[tuple[list, list]]) -> tuple[float, int, int]:
    """Aggregate WER over (hypothesis, reference) pairs: sum errors / sum ref lengths."""
    errors = 0
    ref_len = 0
    for hyp, ref in pairs:
        errors += wer(hyp, ref).errors
        ref_len += len(ref)
    if ref_len == 0:
        raise ValidationError("empty references")
    return errors / ref_len, errors, ref_len


@dataclass
class RescoringReport:
    """Corpus WER of the combined selection plus diagnostics.

    per_model maps a label to that configuration's corpus WER; oracle and
    anti_oracle are the best/worst WER achievable by ideal selection within
    each list.
    """

    selection_wer: float
    per_model: dict[str, float]
    oracle_wer: float
    anti_oracle_wer: float
    oov_counts: dict[str, int]

    def table(self) -> str:
        rows = [f"{'Configuration':<24} {'WER':>8}"]
        for name, w in self.per_model.items():
            rows.append(f"{name:<24} {100.0 * w:>7.2f}%")
        rows.append(f"{'combined':<24} {100.0 * self.selection_wer:>7.2f}%")
        rows.append(f"{'oracle':<24} {100.0 * self.oracle_wer:>7.2f}%")
        rows.append(f"{'anti-oracle':<24} {100.0 * self.anti_oracle_wer:>7.2f}%")
        return "\n".join(rows)


def evaluate_rescoring(lists, references: dict[str, list[str]], models,
                       vocab: Vocabulary, config: RescoreConfig | None = None
                       ) -> RescoringReport:
    """Rescore, compute the corpus WER of the selections, and report the
    acoustic-only / single-model / oracle / anti-oracle diagnostics."""
    if not models:
        raise ConfigError("rescoring needs at least one model")
    config = config or RescoreConfig()
    for lst in lists:
        if lst.utterance_id not in references:
            raise ValidationError(f"missing reference for utterance '{lst.utterance_id}'")
        if not references[lst.utterance_id]:
            raise ValidationError(f"empty reference for utterance '{lst.utterance_id}'")
    tables, oov = _lm_score_table(lists, models, vocab)

    def selection_wer(cfg: RescoreConfig) -> float:
        sels, _ = _select(lists, tables, cfg, len(models))
        return corpus_wer([(e.text.split(), references[u]) for u, e, _ in sels])[0]

    per_model = {"acoustic-only": selection_wer(
        RescoreConfig(lm_scale=0.0, log_domain=config.log_domain))}
    for k in range(len(models)):
        w = [0.0] * len(models)
        w[k] = 1.0
        solo = RescoreConfig(lm_scale=config.lm_scale, model_weights=w,
                             log_domain=config.log_domain)
        per_model[f"model[{k}] ({models[k].kind})"] = selection_wer(solo)

    oracle_err = anti_err = total_ref = 0
    for lst in lists:
        ref = references[lst.utterance_id]
        errs = [wer(e.text.split(), ref).errors for e in lst.entries]
        oracle_err += min(errs)
        anti_err += max(errs)
        total_ref += len(ref)
    return RescoringReport(
        selection_wer=selection_wer(config),
        per_model=per_model,
        oracle_wer=oracle_err / total_ref,
        anti_oracle_wer=anti_err / total_ref,
        oov_counts=oov,
    )


def tune_lm_scale(lists, references, models, vocab,
                  scales=tuple(round(0.5 + 0.1 * i, 1) for i in range(16)),
                  config: RescoreConfig | None = None) -> tuple[float, float]:
    """Grid-search lm_scale on a held-out set; returns (best_scale, its WER)."""
    config = config or RescoreConfig()
    tables, _ = _lm_score_table(lists, models, vocab)
    best = (None, np.inf)
    for s in scales:
        cfg = RescoreConfig(lm_scale=s, model_weights=config.model_weights,
                            log_domain=config.log_domain)
        sels, _ = _select(lists, tables, cfg, len(models))
        w = corpus_wer([(e.text.split(), references[u]) for u, e, _ in sels])[0]
        if w < best[1]:
            best = (s, w)
    return best
