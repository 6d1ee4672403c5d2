"""Peephole LSTM cell: forward pass, cached activations, and exact BPTT.

Cell equations (per step, elementwise products throughout):

    i = sigmoid(W_xi x + W_hi h_prev + w_ci * c_prev + b_i)
    f = sigmoid(W_xf x + W_hf h_prev + w_cf * c_prev + b_f)
    m = tanh   (W_xc x + W_hc h_prev + b_c)
    c = f * c_prev + i * m
    o = sigmoid(W_xo x + W_ho h_prev + w_co * c + b_o)   # peephole reads the NEW c
    h = o * tanh(c)

Peephole weights are diagonal (vectors).  For speed the four per-gate input
matrices are stored stacked into one (4h x d) block per input segment, and
likewise for the recurrent matrices and biases; gate row order is i, f, m, o.
A layer's input may consist of several concatenated segments (e.g. word
embedding + future vector); keeping one stacked matrix per segment makes
"zero out one input channel" an exact no-op on the remaining channels.

Backward passes are hand-derived and verified against central finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .math_core import sigmoid, uniform_init


@dataclass
class LstmLayerParams:
    """All weights of one peephole LSTM layer.

    w_x[k] holds the stacked (i, f, m, o) input weights for input segment k;
    w_h the stacked recurrent weights; b the stacked biases; w_ci/w_cf/w_co
    the diagonal peephole weights.
    """

    input_dims: tuple[int, ...]
    hidden_dim: int
    w_x: list[np.ndarray]
    w_h: np.ndarray
    b: np.ndarray
    w_ci: np.ndarray
    w_cf: np.ndarray
    w_co: np.ndarray

    @property
    def input_dim(self) -> int:
        return sum(self.input_dims)

    def gate_rows(self, gate: str) -> slice:
        """Row slice of the stacked arrays for gate 'i', 'f', 'm' or 'o'."""
        k = "ifmo".index(gate)
        h = self.hidden_dim
        return slice(k * h, (k + 1) * h)

    def param_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        d = {}
        for k, w in enumerate(self.w_x):
            d[f"{prefix}w_x{k}"] = w
        d[f"{prefix}w_h"] = self.w_h
        d[f"{prefix}b"] = self.b
        d[f"{prefix}w_ci"] = self.w_ci
        d[f"{prefix}w_cf"] = self.w_cf
        d[f"{prefix}w_co"] = self.w_co
        return d


def init_layer(rng: np.random.Generator, input_dims, hidden_dim: int,
               scale: float = 0.08) -> LstmLayerParams:
    input_dims = tuple(int(d) for d in input_dims)
    h = hidden_dim
    return LstmLayerParams(
        input_dims=input_dims,
        hidden_dim=h,
        w_x=[uniform_init(rng, (4 * h, d), scale) for d in input_dims],
        w_h=uniform_init(rng, (4 * h, h), scale),
        b=np.zeros(4 * h),
        w_ci=uniform_init(rng, h, scale),
        w_cf=uniform_init(rng, h, scale),
        w_co=uniform_init(rng, h, scale),
    )


def zeros_layer(input_dims, hidden_dim: int) -> LstmLayerParams:
    input_dims = tuple(int(d) for d in input_dims)
    h = hidden_dim
    return LstmLayerParams(
        input_dims=input_dims,
        hidden_dim=h,
        w_x=[np.zeros((4 * h, d)) for d in input_dims],
        w_h=np.zeros((4 * h, h)),
        b=np.zeros(4 * h),
        w_ci=np.zeros(h),
        w_cf=np.zeros(h),
        w_co=np.zeros(h),
    )


def grads_like(layer: LstmLayerParams) -> LstmLayerParams:
    return zeros_layer(layer.input_dims, layer.hidden_dim)


@dataclass
class LstmState:
    """Recurrent state (h, c) of one layer."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "LstmState":
        return cls(np.zeros(hidden_dim), np.zeros(hidden_dim))


@dataclass
class StepCache:
    """Activations of one forward step, retained for the backward pass."""

    x_segs: tuple[np.ndarray, ...]
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    m: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def _as_segments(params: LstmLayerParams, x) -> tuple[np.ndarray, ...]:
    segs = (x,) if isinstance(x, np.ndarray) else tuple(x)
    if len(segs) != len(params.input_dims):
        raise ShapeError(f"expected {len(params.input_dims)} input segments, got {len(segs)}")
    for seg, d in zip(segs, params.input_dims):
        if seg.shape != (d,):
            raise ShapeError(f"input segment has dim {seg.shape}, layer expects ({d},)")
    return segs


def cell_forward(params: LstmLayerParams, x, prev: LstmState) -> tuple[LstmState, StepCache]:
    """One cell step.  x is a vector or a tuple of segment vectors."""
    segs = _as_segments(params, x)
    if prev.h.shape != (params.hidden_dim,) or prev.c.shape != (params.hidden_dim,):
        raise ShapeError(f"state dim {prev.h.shape} does not match hidden_dim {params.hidden_dim}")
    h = params.hidden_dim
    a = params.w_x[0] @ segs[0]
    for wk, seg in zip(params.w_x[1:], segs[1:]):
        a = a + wk @ seg
    a = a + params.w_h @ prev.h
    a = a + params.b
    i = sigmoid(a[0:h] + params.w_ci * prev.c)
    f = sigmoid(a[h:2 * h] + params.w_cf * prev.c)
    m = np.tanh(a[2 * h:3 * h])
    c = f * prev.c + i * m
    o = sigmoid(a[3 * h:4 * h] + params.w_co * c)
    tanh_c = np.tanh(c)
    out = LstmState(o * tanh_c, c)
    cache = StepCache(segs, prev.h, prev.c, i, f, m, o, c, tanh_c)
    return out, cache


def cell_backward(params: LstmLayerParams, cache: StepCache, dh: np.ndarray,
                  dc_in: np.ndarray, grads: LstmLayerParams
                  ) -> tuple[tuple[np.ndarray, ...], np.ndarray, np.ndarray]:
    """Backward through one cell step.

    dh is the total gradient arriving at h_t, dc_in the gradient arriving at
    c_t from later steps.  Accumulates parameter gradients into `grads` and
    returns (dx per segment, dh_prev, dc_prev).
    """
    i, f, m, o = cache.i, cache.f, cache.m, cache.o
    tanh_c = cache.tanh_c
    da_o = (dh * tanh_c) * o * (1.0 - o)
    dc = dh * o * (1.0 - tanh_c * tanh_c) + dc_in + da_o * params.w_co
    da_i = (dc * m) * i * (1.0 - i)
    da_f = (dc * cache.c_prev) * f * (1.0 - f)
    da_m = (dc * i) * (1.0 - m * m)
    dc_prev = dc * f + da_i * params.w_ci + da_f * params.w_cf

    da = np.concatenate([da_i, da_f, da_m, da_o])
    grads.w_h += np.outer(da, cache.h_prev)
    grads.b += da
    grads.w_ci += da_i * cache.c_prev
    grads.w_cf += da_f * cache.c_prev
    grads.w_co += da_o * cache.c
    dx = []
    for k, seg in enumerate(cache.x_segs):
        grads.w_x[k] += np.outer(da, seg)
        dx.append(params.w_x[k].T @ da)
    dh_prev = params.w_h.T @ da
    return tuple(dx), dh_prev, dc_prev


def validate_stack(stack: list[LstmLayerParams]) -> None:
    """Layer l's input width must equal layer l-1's hidden width."""
    for l in range(1, len(stack)):
        if stack[l].input_dim != stack[l - 1].hidden_dim:
            raise ConfigError(
                f"stack wiring: layer {l} expects input {stack[l].input_dim} "
                f"but layer {l - 1} outputs {stack[l - 1].hidden_dim}")


def stack_step_forward(stack: list[LstmLayerParams], x, states: list[LstmState]
                       ) -> tuple[list[LstmState], list[StepCache], np.ndarray]:
    """One timestep through every layer; returns (new states, caches, top h)."""
    new_states = []
    caches = []
    inp = x
    for params, st in zip(stack, states):
        out, cache = cell_forward(params, inp, st)
        new_states.append(out)
        caches.append(cache)
        inp = out.h
    return new_states, caches, new_states[-1].h


def stack_step_backward(stack: list[LstmLayerParams], caches: list[StepCache],
                        d_top: np.ndarray, carry: list[tuple[np.ndarray, np.ndarray]],
                        grads: list[LstmLayerParams]
                        ) -> tuple[tuple[np.ndarray, ...], list[tuple[np.ndarray, np.ndarray]]]:
    """Backward through one timestep of a stack.

    carry holds (dh, dc) flowing into each layer's state from the following
    timestep.  Returns the gradient w.r.t. the layer-0 input segments and the
    updated carries for the preceding timestep.
    """
    new_carry: list = [None] * len(stack)
    d_from_above = d_top
    for l in range(len(stack) - 1, -1, -1):
        dh = d_from_above + carry[l][0]
        dx, dh_prev, dc_prev = cell_backward(stack[l], caches[l], dh, carry[l][1], grads[l])
        new_carry[l] = (dh_prev, dc_prev)
        d_from_above = dx[0] if l > 0 else None
        if l == 0:
            return dx, new_carry
    raise AssertionError("empty stack")


def zero_carry(stack: list[LstmLayerParams]) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.zeros(p.hidden_dim), np.zeros(p.hidden_dim)) for p in stack]


def stack_grad_views(stack: list[LstmLayerParams], flat: dict, prefix: str
                     ) -> list[LstmLayerParams]:
    """LstmLayerParams-shaped gradient containers aliasing a flat name->array dict."""
    views = []
    for l, p in enumerate(stack):
        views.append(LstmLayerParams(
            input_dims=p.input_dims, hidden_dim=p.hidden_dim,
            w_x=[flat[f"{prefix}{l}.w_x{k}"] for k in range(len(p.w_x))],
            w_h=flat[f"{prefix}{l}.w_h"], b=flat[f"{prefix}{l}.b"],
            w_ci=flat[f"{prefix}{l}.w_ci"], w_cf=flat[f"{prefix}{l}.w_cf"],
            w_co=flat[f"{prefix}{l}.w_co"]))
    return views


@dataclass
class LayerSequenceCache:
    """Whole-sequence activations of one layer, stored column-per-timestep."""

    x_segs: list[np.ndarray]      # per segment: (d_k, T)
    h_prev: np.ndarray            # (h, T); column t is h_{t-1}
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    m: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def _layer_sequence_forward(params: LstmLayerParams, x_segs: list[np.ndarray],
                            init: LstmState) -> tuple[np.ndarray, LayerSequenceCache, LstmState]:
    """Run one layer over a whole sequence.

    x_segs holds one (d_k, T) matrix per input segment, so the input
    projections for all timesteps are a single matrix product; only the
    recurrent term is computed step by step.
    """
    h_dim = params.hidden_dim
    T = x_segs[0].shape[1]
    proj = params.w_x[0] @ x_segs[0]
    for wk, xs in zip(params.w_x[1:], x_segs[1:]):
        proj = proj + wk @ xs
    H = np.empty((h_dim, T))
    Hp = np.empty((h_dim, T))
    Cp = np.empty((h_dim, T))
    I = np.empty((h_dim, T))
    F = np.empty((h_dim, T))
    M = np.empty((h_dim, T))
    O = np.empty((h_dim, T))
    C = np.empty((h_dim, T))
    TC = np.empty((h_dim, T))
    h, c = init.h, init.c
    for t in range(T):
        a = proj[:, t] + params.w_h @ h + params.b
        i = sigmoid(a[0:h_dim] + params.w_ci * c)
        f = sigmoid(a[h_dim:2 * h_dim] + params.w_cf * c)
        m = np.tanh(a[2 * h_dim:3 * h_dim])
        Hp[:, t] = h
        Cp[:, t] = c
        c = f * c + i * m
        o = sigmoid(a[3 * h_dim:4 * h_dim] + params.w_co * c)
        tc = np.tanh(c)
        h = o * tc
        I[:, t], F[:, t], M[:, t], O[:, t], C[:, t], TC[:, t] = i, f, m, o, c, tc
        H[:, t] = h
    cache = LayerSequenceCache(x_segs, Hp, Cp, I, F, M, O, C, TC)
    return H, cache, LstmState(h.copy(), c.copy())


def _layer_sequence_backward(params: LstmLayerParams, cache: LayerSequenceCache,
                             d_out: np.ndarray, grads: LstmLayerParams) -> list[np.ndarray]:
    """Backward over a whole sequence of one layer; returns per-segment input grads."""
    h_dim = params.hidden_dim
    T = d_out.shape[1]
    dA = np.empty((4 * h_dim, T))
    dh_carry = np.zeros(h_dim)
    dc_carry = np.zeros(h_dim)
    for t in range(T - 1, -1, -1):
        dh = d_out[:, t] + dh_carry
        i, f, m, o = cache.i[:, t], cache.f[:, t], cache.m[:, t], cache.o[:, t]
        tc = cache.tanh_c[:, t]
        da_o = (dh * tc) * o * (1.0 - o)
        dc = dh * o * (1.0 - tc * tc) + dc_carry + da_o * params.w_co
        da_i = (dc * m) * i * (1.0 - i)
        da_f = (dc * cache.c_prev[:, t]) * f * (1.0 - f)
        da_m = (dc * i) * (1.0 - m * m)
        dc_carry = dc * f + da_i * params.w_ci + da_f * params.w_cf
        dA[0:h_dim, t] = da_i
        dA[h_dim:2 * h_dim, t] = da_f
        dA[2 * h_dim:3 * h_dim, t] = da_m
        dA[3 * h_dim:4 * h_dim, t] = da_o
        dh_carry = params.w_h.T @ dA[:, t]
    grads.w_h += dA @ cache.h_prev.T
    grads.b += dA.sum(axis=1)
    grads.w_ci += (dA[0:h_dim] * cache.c_prev).sum(axis=1)
    grads.w_cf += (dA[h_dim:2 * h_dim] * cache.c_prev).sum(axis=1)
    grads.w_co += (dA[3 * h_dim:4 * h_dim] * cache.c).sum(axis=1)
    dx = []
    for k, xs in enumerate(cache.x_segs):
        grads.w_x[k] += dA @ xs.T
        dx.append(params.w_x[k].T @ dA)
    return dx


def run_stack_forward(stack: list[LstmLayerParams], x_segs: list[np.ndarray],
                      init: list[LstmState] | None = None
                      ) -> tuple[np.ndarray, list[LayerSequenceCache], list[LstmState]]:
    """Whole-sequence forward through a stack; layer by layer.

    x_segs: one (d_k, T) matrix per layer-0 input segment.  Returns the top
    layer's outputs as an (h, T) matrix, per-layer caches, and final states.
    """
    validate_stack(stack)
    if init is None:
        init = [LstmState.zeros(p.hidden_dim) for p in stack]
    if len(init) != len(stack):
        raise ShapeError(f"init has {len(init)} states for a {len(stack)}-layer stack")
    caches = []
    finals = []
    inp = x_segs
    H = None
    for params, st in zip(stack, init):
        H, cache, final = _layer_sequence_forward(params, inp, st)
        caches.append(cache)
        finals.append(final)
        inp = [H]
    return H, caches, finals


def run_stack_backward(stack: list[LstmLayerParams], caches: list[LayerSequenceCache],
                       d_top: np.ndarray, grads: list[LstmLayerParams]) -> list[np.ndarray]:
    """Whole-sequence backward through a stack; returns layer-0 segment grads."""
    d = d_top
    for l in range(len(stack) - 1, -1, -1):
        dx = _layer_sequence_backward(stack[l], caches[l], d, grads[l])
        d = dx[0]
    return dx


def sequence_forward(stack: list[LstmLayerParams], inputs: list[np.ndarray],
                     init: list[LstmState] | None = None
                     ) -> tuple[list[np.ndarray], list[LayerSequenceCache]]:
    """Forward a list of input vectors through the stack (single input segment).

    Returns the top layer's output vector per step plus the caches needed by
    sequence_backward.  An empty input list yields empty outputs.
    """
    validate_stack(stack)
    if not inputs:
        return [], []
    X = np.stack(inputs, axis=1)
    H, caches, _ = run_stack_forward(stack, [X], init)
    return [H[:, t].copy() for t in range(H.shape[1])], caches


def sequence_backward(stack: list[LstmLayerParams], caches: list[LayerSequenceCache],
                      output_grads: list[np.ndarray]
                      ) -> tuple[list[LstmLayerParams], list[np.ndarray]]:
    """BPTT over a forward pass recorded by sequence_forward.

    Returns (per-layer parameter gradients, per-step input gradients).
    """
    grads = [grads_like(p) for p in stack]
    if not caches:
        if output_grads:
            raise ShapeError("output_grads given for an empty forward pass")
        return grads, []
    T = caches[0].i.shape[1]
    if len(output_grads) != T:
        raise ShapeError(f"{len(output_grads)} output grads for {T} forward steps")
    d_top = np.stack(output_grads, axis=1)
    dx = run_stack_backward(stack, caches, d_top, grads)
    return grads, [dx[0][:, t].copy() for t in range(T)]
