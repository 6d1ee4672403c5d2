"""Shared test utilities: finite-difference checking and corpus builders."""

import numpy as np

from fvlm.corpus import RESERVED, Vocabulary, encode

FD_EPS = 1e-5


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a|, |n|, 1e-3): relative for real-sized gradients,
    absolute (at 1e-8 when tol=1e-5) for vanishing ones."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return np.abs(analytic - numeric) / denom


def fd_grad_check(params: dict, loss_fn, analytic: dict, tol: float,
                  eps: float = FD_EPS, stride: int = 1) -> float:
    """Central finite differences against analytic gradients.

    params and analytic are name->array dicts; loss_fn() re-evaluates the
    loss using the live parameter arrays.  stride > 1 subsamples large
    blocks.  Returns the worst relative error seen; asserts it is < tol.
    """
    worst = 0.0
    worst_at = None
    for name, arr in params.items():
        flat = arr.ravel()
        gflat = analytic[name].ravel()
        for idx in range(0, flat.size, stride):
            old = flat[idx]
            flat[idx] = old + eps
            lp = loss_fn()
            flat[idx] = old - eps
            lm = loss_fn()
            flat[idx] = old
            numeric = (lp - lm) / (2.0 * eps)
            rel = float(relative_errors(np.array(gflat[idx]), np.array(numeric)))
            if rel > worst:
                worst, worst_at = rel, (name, idx)
    assert worst < tol, f"gradient mismatch at {worst_at}: rel err {worst:.3e}"
    return worst


def make_vocab(lines) -> Vocabulary:
    words = sorted({w for line in lines for w in line.split()})
    return Vocabulary(list(RESERVED) + words)


def encode_lines(vocab, lines):
    return [encode(vocab, line) for line in lines]


def random_sequences(rng, vocab_size: int, n: int, min_interior=2, max_interior=8):
    """Random valid token sequences (ids 3.. are real words)."""
    seqs = []
    for _ in range(n):
        length = int(rng.integers(min_interior, max_interior + 1))
        seqs.append([0] + list(rng.integers(3, vocab_size, size=length).astype(int)) + [1])
    return seqs
