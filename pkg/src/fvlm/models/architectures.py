"""The four trainable architectures and their inference APIs.

All models share the same skeleton: a word-embedding table feeding a stack
of peephole LSTM layers feeding an output head.  They differ in what the
head predicts and in what enters layer 0:

    BaselineLm / ReversedLm   x_i                 -> softmax over words
    FvPredictor               x_i                 -> linear future-vector head
    EnhancedLm                (x_i, y_{i+1})      -> softmax; y from a frozen predictor
    MultiTaskLm               (x_i, y_i)          -> shared trunk, then a word
                              branch (softmax) and an FV branch (linear) whose
                              output feeds back as the next step's y

Every model exposes `start_state()` / `step(state, token)` for incremental
decoding and a whole-sequence `forward(seq)`; the step API is what generation
and rescoring use, so causality is structural: a step only ever sees tokens
already consumed.
"""

from __future__ import annotations

import numpy as np

from types import SimpleNamespace

from ..corpus import EOS_ID, reverse_sequence, validate_sequence
from ..errors import ConfigError, ValidationError
from ..lstm import (LstmState, init_layer, run_stack_forward,
                    stack_grad_views, stack_step_forward, zeros_layer)
from ..math_core import softmax, softmax_columns
from .config import LmConfig

LOG_PROB_FLOOR = 1e-30


def _build_stack(rng, layer_dims, hidden_dim, num_layers):
    """layer_dims: input segment widths of layer 0; higher layers take h."""
    stack = []
    for l in range(num_layers):
        dims = layer_dims if l == 0 else (hidden_dim,)
        if rng is None:
            stack.append(zeros_layer(dims, hidden_dim))
        else:
            stack.append(init_layer(rng, dims, hidden_dim))
    return stack


def _init_matrix(rng, shape):
    if rng is None:
        return np.zeros(shape)
    from ..math_core import uniform_init
    return uniform_init(rng, shape)


def _stack_params(stack, prefix):
    d = {}
    for l, layer in enumerate(stack):
        d.update(layer.param_dict(prefix=f"{prefix}{l}."))
    return d


class _LmBase:
    """Shared plumbing: embedding lookup, id validation, vocab bookkeeping."""

    kind = "?"

    def __init__(self, config: LmConfig, vocab_size: int):
        if vocab_size < 3:
            raise ConfigError("vocab_size must cover the reserved tokens")
        self.config = config
        self.vocab_size = vocab_size
        self.vocab_hash = b"\x00" * 32

    def _check_ids(self, seq):
        for i in seq:
            if not 0 <= i < self.vocab_size:
                raise ValidationError(f"token id {i} out of range (vocab size {self.vocab_size})")

    def _embed_cols(self, tokens) -> np.ndarray:
        return self.embedding[np.asarray(tokens, dtype=np.intp)].T

    def _grad_views(self, flat: dict) -> SimpleNamespace:
        """Structured aliases into a flat gradient dict; single-stack default."""
        return SimpleNamespace(flat=flat, stack=stack_grad_views(self.stack, flat, "lstm"))


class BaselineLm(_LmBase):
    """Word-level LSTM LM: p(x_{i+1} | x_1..x_i) from the top hidden state."""

    kind = "baseline"

    def __init__(self, config: LmConfig, vocab_size: int, rng=None):
        super().__init__(config, vocab_size)
        e, h = config.embed_dim, config.hidden_dim
        self.embedding = _init_matrix(rng, (vocab_size, e))
        self.stack = _build_stack(rng, (e,), h, config.num_layers)
        self.head_w = _init_matrix(rng, (vocab_size, h))
        self.head_b = np.zeros(vocab_size)

    def param_dict(self):
        d = {"embedding": self.embedding}
        d.update(_stack_params(self.stack, "lstm"))
        d["head_w"] = self.head_w
        d["head_b"] = self.head_b
        return d

    def trainable_param_dict(self):
        return self.param_dict()

    def start_state(self):
        return [LstmState.zeros(p.hidden_dim) for p in self.stack]

    def step(self, state, token: int):
        xbar = self.embedding[token]
        new_state, _, h_top = stack_step_forward(self.stack, xbar, state)
        return softmax(self.head_w @ h_top + self.head_b), new_state

    def logits_matrix(self, seq) -> np.ndarray:
        """(n, T) logits for predicting seq[1:] from seq[:-1]."""
        self._check_ids(seq)
        X = self._embed_cols(seq[:-1])
        H, _, _ = run_stack_forward(self.stack, [X])
        return self.head_w @ H + self.head_b[:, None]

    def forward(self, seq) -> list[np.ndarray]:
        """Probability vector per position i: p(x_{i+1} | x_1..x_i)."""
        P = softmax_columns(self.logits_matrix(seq))
        return [P[:, t].copy() for t in range(P.shape[1])]

    forward_probs = forward


class ReversedLm(BaselineLm):
    """Structurally a BaselineLm; trained on reversed sequences, so its top
    hidden state embeds a sentence suffix (the future vector)."""

    kind = "reversed"

    @property
    def fv_dim(self) -> int:
        return self.stack[-1].hidden_dim


class FvPredictor(_LmBase):
    """Causal future-vector predictor: y_{i+1} = W h_i + b from x_1..x_i."""

    kind = "fv-predictor"

    def __init__(self, config: LmConfig, vocab_size: int, rng=None):
        super().__init__(config, vocab_size)
        e, h = config.embed_dim, config.hidden_dim
        self.embedding = _init_matrix(rng, (vocab_size, e))
        self.stack = _build_stack(rng, (e,), h, config.num_layers)
        self.out_w = _init_matrix(rng, (config.resolved_fv_dim, h))
        self.out_b = np.zeros(config.resolved_fv_dim)

    @property
    def fv_dim(self) -> int:
        return self.out_w.shape[0]

    def param_dict(self):
        d = {"embedding": self.embedding}
        d.update(_stack_params(self.stack, "lstm"))
        d["out_w"] = self.out_w
        d["out_b"] = self.out_b
        return d

    def trainable_param_dict(self):
        return self.param_dict()

    def start_state(self):
        return [LstmState.zeros(p.hidden_dim) for p in self.stack]

    def step(self, state, token: int):
        """Consume one token, emit the prediction for the NEXT position's FV."""
        xbar = self.embedding[token]
        new_state, _, h_top = stack_step_forward(self.stack, xbar, state)
        return self.out_w @ h_top + self.out_b, new_state

    def predict_matrix(self, tokens) -> np.ndarray:
        """(fv_dim, T) matrix; column t is the FV predicted after consuming tokens[:t+1]."""
        self._check_ids(tokens)
        X = self._embed_cols(tokens)
        H, _, _ = run_stack_forward(self.stack, [X])
        return self.out_w @ H + self.out_b[:, None]


class EnhancedLm(_LmBase):
    """LM whose layer-0 input is (word embedding, predicted future vector).

    The FvPredictor is wired in but frozen: it runs in lockstep over the same
    tokens, and its parameters never receive gradient.
    """

    kind = "enhanced"

    def __init__(self, config: LmConfig, vocab_size: int, rng=None,
                 predictor: FvPredictor | None = None):
        super().__init__(config, vocab_size)
        e, h, fv = config.embed_dim, config.hidden_dim, config.resolved_fv_dim
        if predictor is None:
            predictor = FvPredictor(config, vocab_size, rng=None)
        if predictor.fv_dim != fv:
            raise ConfigError(f"predictor emits fv_dim {predictor.fv_dim}, config expects {fv}")
        if predictor.vocab_size != vocab_size:
            raise ConfigError("predictor and enhanced LM disagree on vocabulary size")
        self.predictor = predictor
        self.embedding = _init_matrix(rng, (vocab_size, e))
        self.stack = _build_stack(rng, (e, fv), h, config.num_layers)
        self.head_w = _init_matrix(rng, (vocab_size, h))
        self.head_b = np.zeros(vocab_size)

    def param_dict(self):
        d = {"embedding": self.embedding}
        d.update(_stack_params(self.stack, "lstm"))
        d["head_w"] = self.head_w
        d["head_b"] = self.head_b
        for name, arr in self.predictor.param_dict().items():
            d[f"predictor.{name}"] = arr
        return d

    def trainable_param_dict(self):
        """Everything except the frozen predictor."""
        return {k: v for k, v in self.param_dict().items() if not k.startswith("predictor.")}

    def zero_fv_input_weights(self) -> None:
        """Zero the FV input block of layer 0 (ablation to a plain LM)."""
        self.stack[0].w_x[1][:] = 0.0

    def start_state(self):
        lm = [LstmState.zeros(p.hidden_dim) for p in self.stack]
        return (lm, self.predictor.start_state())

    def step(self, state, token: int):
        lm_state, pred_state = state
        y, pred_state = self.predictor.step(pred_state, token)
        xbar = self.embedding[token]
        lm_state, _, h_top = stack_step_forward(self.stack, (xbar, y), lm_state)
        return softmax(self.head_w @ h_top + self.head_b), (lm_state, pred_state)

    def _run(self, seq):
        self._check_ids(seq)
        tokens = seq[:-1]
        Y = self.predictor.predict_matrix(tokens)
        X = self._embed_cols(tokens)
        H, _, _ = run_stack_forward(self.stack, [X, Y])
        logits = self.head_w @ H + self.head_b[:, None]
        return softmax_columns(logits), Y

    def forward(self, seq):
        """(probability vectors, predicted future vectors), one pair per position."""
        P, Y = self._run(seq)
        T = P.shape[1]
        return ([P[:, t].copy() for t in range(T)], [Y[:, t].copy() for t in range(T)])

    def forward_probs(self, seq):
        return self.forward(seq)[0]


class MultiTaskLm(_LmBase):
    """Shared trunk + word branch + FV branch, trained jointly.

    The trunk consumes (x_i, y_i) where y_i is the model's own previous FV
    prediction (zero at the first step); the FV branch's output feeds the
    next step, so gradient flows through that loop during training.
    """

    kind = "multitask"

    def __init__(self, config: LmConfig, vocab_size: int, rng=None):
        super().__init__(config, vocab_size)
        if config.mt_shared_layers + config.mt_branch_layers != config.num_layers:
            raise ConfigError(
                f"mt_shared_layers ({config.mt_shared_layers}) + mt_branch_layers "
                f"({config.mt_branch_layers}) must equal num_layers ({config.num_layers})")
        e, h, fv = config.embed_dim, config.hidden_dim, config.resolved_fv_dim
        self.embedding = _init_matrix(rng, (vocab_size, e))
        self.trunk = _build_stack(rng, (e, fv), h, config.mt_shared_layers)
        self.fv_branch = _build_stack(rng, (h,), h, config.mt_branch_layers)
        self.word_branch = _build_stack(rng, (h,), h, config.mt_branch_layers)
        self.fv_w = _init_matrix(rng, (fv, h))
        self.fv_b = np.zeros(fv)
        self.head_w = _init_matrix(rng, (vocab_size, h))
        self.head_b = np.zeros(vocab_size)

    @property
    def fv_dim(self) -> int:
        return self.fv_w.shape[0]

    def param_dict(self):
        d = {"embedding": self.embedding}
        d.update(_stack_params(self.trunk, "trunk"))
        d.update(_stack_params(self.fv_branch, "fv_branch"))
        d.update(_stack_params(self.word_branch, "word_branch"))
        d["fv_w"] = self.fv_w
        d["fv_b"] = self.fv_b
        d["head_w"] = self.head_w
        d["head_b"] = self.head_b
        return d

    def trainable_param_dict(self):
        return self.param_dict()

    def _grad_views(self, flat: dict) -> SimpleNamespace:
        return SimpleNamespace(
            flat=flat,
            trunk=stack_grad_views(self.trunk, flat, "trunk"),
            fv_branch=stack_grad_views(self.fv_branch, flat, "fv_branch"),
            word_branch=stack_grad_views(self.word_branch, flat, "word_branch"))

    def start_state(self):
        trunk = [LstmState.zeros(p.hidden_dim) for p in self.trunk]
        fv = [LstmState.zeros(p.hidden_dim) for p in self.fv_branch]
        word = [LstmState.zeros(p.hidden_dim) for p in self.word_branch]
        return (trunk, fv, word, np.zeros(self.fv_dim))

    def step(self, state, token: int):
        trunk_s, fv_s, word_s, y_in = state
        xbar = self.embedding[token]
        trunk_s, _, h_top = stack_step_forward(self.trunk, (xbar, y_in), trunk_s)
        fv_s, _, u_top = stack_step_forward(self.fv_branch, h_top, fv_s)
        y_out = self.fv_w @ u_top + self.fv_b
        word_s, _, v_top = stack_step_forward(self.word_branch, h_top, word_s)
        p = softmax(self.head_w @ v_top + self.head_b)
        return p, (trunk_s, fv_s, word_s, y_out)

    def forward(self, seq):
        """(probability vectors, predicted future vectors); y_1 fed in is zero."""
        self._check_ids(seq)
        state = self.start_state()
        probs, ys = [], []
        for token in seq[:-1]:
            p, state = self.step(state, token)
            probs.append(p)
            ys.append(state[3].copy())
        return probs, ys

    def forward_probs(self, seq):
        return self.forward(seq)[0]


MODEL_KINDS = {
    cls.kind: cls for cls in (BaselineLm, ReversedLm, FvPredictor, EnhancedLm, MultiTaskLm)
}


def lm_forward(model, seq) -> list[np.ndarray]:
    """Per-position next-word distributions for any of the four LMs."""
    return model.forward_probs(seq)


def enhanced_forward(model: EnhancedLm, seq):
    return model.forward(seq)


def mt_forward(model: MultiTaskLm, seq):
    return model.forward(seq)


def extract_future_vectors(extractor: ReversedLm, seq) -> list[np.ndarray]:
    """Suffix embeddings from a reversed LM.

    Entry j of the result is the extractor's top hidden state after it has
    consumed tokens seq[j+1:] in right-to-left order, i.e. an embedding of
    the sentence suffix starting at position j+1.  A sequence of length L
    yields L-1 vectors.
    """
    validate_sequence(seq, extractor.vocab_size)
    Z = extract_fv_matrix(extractor, seq)
    return [Z[:, t].copy() for t in range(Z.shape[1])]


def extract_fv_matrix(extractor: ReversedLm, seq) -> np.ndarray:
    """(fv_dim, L-1) matrix of suffix embeddings; column j is for suffix j+1."""
    rev = reverse_sequence(seq)
    X = extractor._embed_cols(rev[:-1])
    H, _, _ = run_stack_forward(extractor.stack, [X])
    return H[:, ::-1]


def score_sequence(model, seq) -> float:
    """Total natural-log probability of seq under the model (boundaries included)."""
    validate_sequence(seq, model.vocab_size)
    state = model.start_state()
    total = 0.0
    for t, token in enumerate(seq[:-1]):
        p, state = model.step(state, token)
        total += float(np.log(max(p[seq[t + 1]], LOG_PROB_FLOOR)))
    return total


def greedy_continue(model, history, max_len: int) -> list[int]:
    """Greedily extend a <s>-prefixed history until </s> or max_len tokens.

    Ties break toward the lowest token id (argmax of the distribution).  The
    terminating </s> is not included in the returned continuation.
    """
    if not history or history[0] != 0:
        raise ValidationError("history must begin with <s>")
    if max_len < 1:
        raise ValidationError("max_len must be >= 1")
    model._check_ids(history)
    state = model.start_state()
    p = None
    for token in history:
        p, state = model.step(state, token)
    out = []
    while len(out) < max_len:
        nxt = int(np.argmax(p))
        if nxt == EOS_ID:
            break
        out.append(nxt)
        p, state = model.step(state, nxt)
    return out
