"""Training loops for the four architectures.

All trainers follow the same recipe: per-sentence SGD (batch size 1) with
global-norm gradient clipping, a fresh (h, c) = 0 state per sentence, an
epoch-level shuffle, and learning-rate halving whenever the validation
metric fails to improve.  The returned model carries the parameters of the
best validation epoch.  Everything is driven by one seeded generator, so a
rerun with the same corpus and seed reproduces the checkpoint bit for bit.

Losses: cross entropy against the next word (mean over positions) for the
language models, mean squared error against extracted future vectors (mean
over vector dimensions and positions) for the FV predictor, and their
lambda-weighted sum for the multi-task model.
"""

from __future__ import annotations

import warnings

import numpy as np

from ..corpus import Vocabulary, reverse_sequence, validate_sequence
from ..errors import ConfigError, ShapeError, TrainingError, ValidationError
from ..lstm import (run_stack_backward, run_stack_forward,
                    stack_step_backward, stack_step_forward, zero_carry)
from ..math_core import OptimizerState, sgd_step, softmax_columns
from .architectures import (BaselineLm, EnhancedLm, FvPredictor, MultiTaskLm,
                            ReversedLm, extract_fv_matrix)
from .config import LmConfig

LOG_PROB_FLOOR = 1e-30

_clamp_count = 0


def clamp_warning_count() -> int:
    """How many target probabilities have been clamped at the floor so far."""
    return _clamp_count


def reset_clamp_warnings() -> None:
    global _clamp_count
    _clamp_count = 0


def _clamp_probs(picked: np.ndarray) -> np.ndarray:
    global _clamp_count
    n_bad = int(np.sum(picked < LOG_PROB_FLOOR))
    if n_bad:
        if _clamp_count == 0:
            warnings.warn("target probability underflow; clamping at 1e-30", RuntimeWarning)
        _clamp_count += n_bad
    return np.maximum(picked, LOG_PROB_FLOOR)


def ce_loss(predicted: list[np.ndarray], targets: list[int]) -> float:
    """Mean over positions of -log p[target].  PPL = exp(ce_loss)."""
    if len(predicted) != len(targets):
        raise ShapeError(f"{len(predicted)} distributions for {len(targets)} targets")
    if not predicted:
        raise ValidationError("ce_loss needs at least one position")
    picked = np.array([p[t] for p, t in zip(predicted, targets)])
    return float(np.mean(-np.log(_clamp_probs(picked))))


def mse_loss(y: np.ndarray, z: np.ndarray) -> float:
    """Squared error averaged over vector dimensions (and positions, if 2-D)."""
    if y.shape != z.shape:
        raise ShapeError(f"mse operands differ: {y.shape} vs {z.shape}")
    d = y - z
    return float(np.mean(d * d))


def _ce_and_dlogits(P: np.ndarray, targets) -> tuple[float, np.ndarray]:
    """CE (mean over positions) and d(loss)/d(logits) for column-wise probs."""
    T = P.shape[1]
    idx = np.arange(T)
    tgt = np.asarray(targets, dtype=np.intp)
    nll = -np.log(_clamp_probs(P[tgt, idx]))
    dlogits = P.copy()
    dlogits[tgt, idx] -= 1.0
    dlogits /= T
    return float(nll.mean()), dlogits


def _validate_corpus(sequences, vocab_size: int) -> None:
    if not sequences:
        raise ValidationError("empty corpus")
    for s in sequences:
        validate_sequence(s, vocab_size)


def _split_indices(n: int, val_fraction: float, rng) -> tuple[list[int], list[int]]:
    """Train/validation index split; val_fraction 0 validates on the training set."""
    if val_fraction <= 0:
        return list(range(n)), list(range(n))
    idx = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    if n_val >= n:
        raise ConfigError("validation split leaves no training sentences")
    return idx[n_val:].tolist(), idx[:n_val].tolist()


def corpus_ce(model, sequences) -> float:
    """Token-weighted mean CE over a corpus; exp of this is the corpus PPL."""
    total, tokens = 0.0, 0
    for seq in sequences:
        probs = model.forward_probs(seq)
        total += ce_loss(probs, seq[1:]) * len(probs)
        tokens += len(probs)
    if tokens == 0:
        raise ValidationError("empty corpus")
    return total / tokens


def _training_loop(model, config: LmConfig, n_sentences: int, sentence_fn,
                   val_fn, rng, on_epoch, loss_records, val_is_ppl: bool):
    """Epoch/shuffle/update/validate scaffolding shared by all trainers.

    sentence_fn(index, grads) runs one forward/backward and returns
    (ce, mse, total, n_positions); val_fn() returns the validation metric
    (lower is better).
    """
    tc = config.train
    params = model.trainable_param_dict()
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    views = model._grad_views(grads)
    opt = OptimizerState(tc.learning_rate, tc.clip_norm)
    best_metric = np.inf
    best = None
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(n_sentences)
        sum_ce = sum_mse = 0.0
        n_pos = 0
        for si, idx in enumerate(order):
            for g in grads.values():
                g.fill(0.0)
            ce, mse, total, npos = sentence_fn(int(idx), views)
            if not np.isfinite(total):
                raise TrainingError(f"loss diverged at epoch {epoch}, sentence {si}")
            try:
                sgd_step(params, grads, opt)
            except TrainingError as err:
                raise TrainingError(f"epoch {epoch}, sentence {si}: {err}") from err
            if loss_records is not None:
                loss_records.append({"epoch": epoch, "ce": ce, "mse": mse, "total": total})
            sum_ce += ce * npos
            sum_mse += mse * npos
            n_pos += npos
        val = val_fn()
        if val < best_metric:
            best_metric = val
            best = {k: v.copy() for k, v in params.items()}
        elif epoch > tc.decay_start:
            opt.learning_rate *= 0.5
        if on_epoch is not None:
            on_epoch({"epoch": epoch,
                      "ce": sum_ce / n_pos,
                      "mse": sum_mse / n_pos,
                      "ppl": float(np.exp(val)) if val_is_ppl else float("nan"),
                      "val": val,
                      "lr": opt.learning_rate})
    for k, v in params.items():
        v[:] = best[k]
    return model


def train_lm(sequences, vocab: Vocabulary, config: LmConfig,
             direction: str = "forward", on_epoch=None, loss_records=None):
    """Train a word LM with CE; direction='reversed' reverses every sentence
    first and returns a ReversedLm (the future-vector extractor)."""
    config.validate()
    _validate_corpus(sequences, vocab.size)
    rng = np.random.default_rng(config.train.seed)
    if direction == "forward":
        model = BaselineLm(config, vocab.size, rng)
    elif direction == "reversed":
        model = ReversedLm(config, vocab.size, rng)
        sequences = [reverse_sequence(s) for s in sequences]
    else:
        raise ConfigError(f"unknown direction '{direction}'")
    model.vocab_hash = vocab.content_hash()
    train_idx, val_idx = _split_indices(len(sequences), config.train.val_fraction, rng)
    val_seqs = [sequences[i] for i in val_idx]

    def sentence(idx, views):
        seq = sequences[train_idx[idx]]
        ce = _word_lm_sentence(model, seq, views)
        return ce, 0.0, ce, len(seq) - 1

    return _training_loop(model, config, len(train_idx), sentence,
                          lambda: corpus_ce(model, val_seqs), rng,
                          on_epoch, loss_records, val_is_ppl=True)


def _word_lm_sentence(model, seq, views) -> float:
    """Forward + backward + grad accumulation for one plain-LM sentence."""
    g = views.flat
    tokens = np.asarray(seq[:-1], dtype=np.intp)
    X = model.embedding[tokens].T
    H, caches, _ = run_stack_forward(model.stack, [X])
    P = softmax_columns(model.head_w @ H + model.head_b[:, None])
    ce, dlogits = _ce_and_dlogits(P, seq[1:])
    g["head_w"] += dlogits @ H.T
    g["head_b"] += dlogits.sum(axis=1)
    d_top = model.head_w.T @ dlogits
    dx = run_stack_backward(model.stack, caches, d_top, views.stack)
    np.add.at(g["embedding"], tokens, dx[0].T)
    return ce


def train_fv_predictor(sequences, vocab: Vocabulary, extractor: ReversedLm,
                       config: LmConfig, on_epoch=None, loss_records=None) -> FvPredictor:
    """Train the causal FV predictor by MSE against extracted future vectors.

    The extractor is frozen; its suffix embeddings are computed once per
    sentence and reused every epoch.
    """
    config.validate()
    _validate_corpus(sequences, vocab.size)
    if config.resolved_fv_dim != extractor.fv_dim:
        raise ConfigError(f"fv_dim {config.resolved_fv_dim} does not match "
                          f"extractor output width {extractor.fv_dim}")
    if extractor.vocab_size != vocab.size:
        raise ConfigError("extractor was trained with a different vocabulary size")
    rng = np.random.default_rng(config.train.seed)
    model = FvPredictor(config, vocab.size, rng)
    model.vocab_hash = vocab.content_hash()
    targets = [extract_fv_matrix(extractor, s) for s in sequences]
    train_idx, val_idx = _split_indices(len(sequences), config.train.val_fraction, rng)

    def sentence(idx, views):
        seq = sequences[train_idx[idx]]
        Z = targets[train_idx[idx]]
        mse = _predictor_sentence(model, seq, Z, views)
        return 0.0, mse, mse, len(seq) - 1

    def val_mse():
        return float(np.mean([mse_loss(model.predict_matrix(sequences[i][:-1]), targets[i])
                              for i in val_idx]))

    return _training_loop(model, config, len(train_idx), sentence, val_mse,
                          rng, on_epoch, loss_records, val_is_ppl=False)


def _predictor_sentence(model, seq, Z, views) -> float:
    g = views.flat
    tokens = np.asarray(seq[:-1], dtype=np.intp)
    X = model.embedding[tokens].T
    H, caches, _ = run_stack_forward(model.stack, [X])
    Y = model.out_w @ H + model.out_b[:, None]
    D = Y - Z
    mse = float(np.mean(D * D))
    dY = (2.0 / D.size) * D
    g["out_w"] += dY @ H.T
    g["out_b"] += dY.sum(axis=1)
    d_top = model.out_w.T @ dY
    dx = run_stack_backward(model.stack, caches, d_top, views.stack)
    np.add.at(g["embedding"], tokens, dx[0].T)
    return mse


def train_enhanced(sequences, vocab: Vocabulary, predictor: FvPredictor,
                   config: LmConfig, on_epoch=None, loss_records=None) -> EnhancedLm:
    """CE-train the enhanced LM on top of a frozen FV predictor.

    Only the LM stack, embedding, and softmax head receive gradient; the
    wired-in predictor's parameters are never touched.
    """
    config.validate()
    _validate_corpus(sequences, vocab.size)
    rng = np.random.default_rng(config.train.seed)
    model = EnhancedLm(config, vocab.size, rng, predictor=predictor)
    model.vocab_hash = vocab.content_hash()
    train_idx, val_idx = _split_indices(len(sequences), config.train.val_fraction, rng)
    val_seqs = [sequences[i] for i in val_idx]

    def sentence(idx, views):
        seq = sequences[train_idx[idx]]
        ce = _enhanced_sentence(model, seq, views)
        return ce, 0.0, ce, len(seq) - 1

    return _training_loop(model, config, len(train_idx), sentence,
                          lambda: corpus_ce(model, val_seqs), rng,
                          on_epoch, loss_records, val_is_ppl=True)


def _enhanced_sentence(model, seq, views) -> float:
    g = views.flat
    tokens = np.asarray(seq[:-1], dtype=np.intp)
    Y = model.predictor.predict_matrix(tokens)  # frozen: no caches, no grads
    X = model.embedding[tokens].T
    H, caches, _ = run_stack_forward(model.stack, [X, Y])
    P = softmax_columns(model.head_w @ H + model.head_b[:, None])
    ce, dlogits = _ce_and_dlogits(P, seq[1:])
    g["head_w"] += dlogits @ H.T
    g["head_b"] += dlogits.sum(axis=1)
    d_top = model.head_w.T @ dlogits
    dx = run_stack_backward(model.stack, caches, d_top, views.stack)
    np.add.at(g["embedding"], tokens, dx[0].T)
    # dx[1] is the gradient w.r.t. the predicted FVs; the predictor is frozen,
    # so it is dropped here by design.
    return ce


def train_mt(sequences, vocab: Vocabulary, extractor: ReversedLm,
             config: LmConfig, on_epoch=None, loss_records=None) -> MultiTaskLm:
    """Joint training of the multi-task model: CE + lambda * MSE.

    Gradient flows through both branches, the shared trunk, and the feedback
    of each step's FV prediction into the next step's trunk input.  MSE
    targets come from the frozen reversed extractor.
    """
    config.validate()
    _validate_corpus(sequences, vocab.size)
    if config.resolved_fv_dim != extractor.fv_dim:
        raise ConfigError(f"fv_dim {config.resolved_fv_dim} does not match "
                          f"extractor output width {extractor.fv_dim}")
    if extractor.vocab_size != vocab.size:
        raise ConfigError("extractor was trained with a different vocabulary size")
    rng = np.random.default_rng(config.train.seed)
    model = MultiTaskLm(config, vocab.size, rng)
    model.vocab_hash = vocab.content_hash()
    lam = config.lambda_mt
    targets = [extract_fv_matrix(extractor, s) for s in sequences]
    train_idx, val_idx = _split_indices(len(sequences), config.train.val_fraction, rng)
    val_seqs = [sequences[i] for i in val_idx]

    def sentence(idx, views):
        seq = sequences[train_idx[idx]]
        Z = targets[train_idx[idx]]
        ce, mse = _mt_sentence(model, seq, Z, lam, views)
        return ce, mse, ce + lam * mse, len(seq) - 1

    return _training_loop(model, config, len(train_idx), sentence,
                          lambda: corpus_ce(model, val_seqs), rng,
                          on_epoch, loss_records, val_is_ppl=True)


def _mt_sentence(model: MultiTaskLm, seq, Z, lam, views) -> tuple[float, float]:
    """One joint forward/backward pass of the multi-task model.

    The backward walk runs the timesteps in reverse, carrying (dh, dc) for
    every layer of the trunk and both branches plus the gradient flowing
    into the y that the next step consumed.
    """
    g = views.flat
    S = len(seq) - 1
    h_dim = model.trunk[-1].hidden_dim
    fv = model.fv_dim
    trunk_s, u_s, v_s, y = model.start_state()
    tr_caches, u_caches, v_caches = [], [], []
    u_tops = np.empty((h_dim, S))
    v_tops = np.empty((h_dim, S))
    Y = np.empty((fv, S))
    for t in range(S):
        xbar = model.embedding[seq[t]]
        trunk_s, tc, h_top = stack_step_forward(model.trunk, (xbar, y), trunk_s)
        u_s, uc, u_top = stack_step_forward(model.fv_branch, h_top, u_s)
        v_s, vc, v_top = stack_step_forward(model.word_branch, h_top, v_s)
        y = model.fv_w @ u_top + model.fv_b
        tr_caches.append(tc)
        u_caches.append(uc)
        v_caches.append(vc)
        u_tops[:, t] = u_top
        v_tops[:, t] = v_top
        Y[:, t] = y
    P = softmax_columns(model.head_w @ v_tops + model.head_b[:, None])
    ce, dlogits = _ce_and_dlogits(P, seq[1:])
    D = Y - Z
    mse = float(np.mean(D * D))

    g["head_w"] += dlogits @ v_tops.T
    g["head_b"] += dlogits.sum(axis=1)
    dv_tops = model.head_w.T @ dlogits
    dY_mse = (2.0 * lam / D.size) * D if lam != 0.0 else None

    tr_carry = zero_carry(model.trunk)
    u_carry = zero_carry(model.fv_branch)
    v_carry = zero_carry(model.word_branch)
    dy_feedback = np.zeros(fv)
    for t in range(S - 1, -1, -1):
        dy_out = dy_feedback if dY_mse is None else dy_feedback + dY_mse[:, t]
        g["fv_w"] += np.outer(dy_out, u_tops[:, t])
        g["fv_b"] += dy_out
        du_top = model.fv_w.T @ dy_out
        (dh_u,), u_carry = stack_step_backward(model.fv_branch, u_caches[t],
                                               du_top, u_carry, views.fv_branch)
        (dh_v,), v_carry = stack_step_backward(model.word_branch, v_caches[t],
                                               dv_tops[:, t], v_carry, views.word_branch)
        (dxbar, dy_in), tr_carry = stack_step_backward(model.trunk, tr_caches[t],
                                                       dh_u + dh_v, tr_carry, views.trunk)
        g["embedding"][seq[t]] += dxbar
        dy_feedback = dy_in
    # dy_feedback now targets y_1, a constant zero vector: dropped.
    return ce, mse
