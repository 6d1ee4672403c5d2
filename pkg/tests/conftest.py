import time

import pytest

from fvlm.models import (LmConfig, TrainConfig, train_enhanced,
                         train_fv_predictor, train_lm, train_mt)
from helpers import encode_lines, make_vocab

# Two sentence shapes with distinct first words: after the first token every
# continuation is deterministic, so the achievable PPL floor is exp(ln2 / 7).
TOY_LINES = ["the cat sat on the mat"] * 5 + ["a dog ran in the park"] * 5

# One sentence with nine interior tokens (> 5, the longest history length).
SINGLE_LINE = "every good boy deserves favour and fine fruit today"


def overfit_config(epochs, layers=2, shared=1, width=16, seed=7):
    return LmConfig(
        embed_dim=width, hidden_dim=width, num_layers=layers,
        mt_shared_layers=shared, mt_branch_layers=1, fv_dim=width,
        train=TrainConfig(learning_rate=1.0, clip_norm=5.0, epochs=epochs,
                          seed=seed, val_fraction=0.0, decay_start=10**9))


@pytest.fixture(scope="session")
def toy_corpus():
    vocab = make_vocab(TOY_LINES)
    return vocab, encode_lines(vocab, TOY_LINES)


@pytest.fixture(scope="session")
def single_corpus():
    lines = [SINGLE_LINE] * 10
    vocab = make_vocab(lines)
    return vocab, encode_lines(vocab, lines)


@pytest.fixture(scope="session")
def overfit_suite(toy_corpus):
    """Baseline/extractor/predictor/enhanced/multitask trained to overfit the
    toy corpus, with per-model wall-clock times (used by the acceptance gate)."""
    vocab, seqs = toy_corpus
    out = {"vocab": vocab, "seqs": seqs, "seconds": {}}

    def timed(name, fn):
        t0 = time.monotonic()
        out[name] = fn()
        out["seconds"][name] = time.monotonic() - t0

    timed("baseline", lambda: train_lm(seqs, vocab, overfit_config(400)))
    timed("extractor", lambda: train_lm(seqs, vocab, overfit_config(120), "reversed"))
    timed("predictor", lambda: train_fv_predictor(seqs, vocab, out["extractor"],
                                                  overfit_config(120)))
    timed("enhanced", lambda: train_enhanced(seqs, vocab, out["predictor"],
                                             overfit_config(400)))
    timed("multitask", lambda: train_mt(seqs, vocab, out["extractor"],
                                        overfit_config(400)))
    return out


@pytest.fixture(scope="session")
def single_overfit(single_corpus):
    """A baseline LM memorizing one sentence; greedy continuation is exact."""
    vocab, seqs = single_corpus
    return train_lm(seqs, vocab, overfit_config(250))
