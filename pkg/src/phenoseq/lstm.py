"""Vanilla LSTM cell, sequence unrolling, and backpropagation through time.

Gate order throughout is (f, i, o, c): forget, input, output, candidate.
State update: c_t = f * c_prev + i * cand;  h_t = o * tanh(c_t).
Inputs may be single vectors ``(d,)`` or batches ``(B, d)``; the hidden state
follows the same convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import sigmoid, tanh
from .tensor import RngStream, ShapeMismatchError, glorot_uniform

__all__ = [
    "GATES",
    "LstmCellParams",
    "LstmState",
    "LstmTrace",
    "init_lstm_params",
    "lstm_step",
    "lstm_forward",
    "lstm_backward",
]

GATES = ("f", "i", "o", "c")


@dataclass
class LstmCellParams:
    """Input weights W_* (h, d), recurrent weights U_* (h, h), biases b_* (h,)."""

    W: dict  # gate -> (h, d)
    U: dict  # gate -> (h, h)
    b: dict  # gate -> (h,)

    @property
    def hidden_size(self) -> int:
        return self.W["f"].shape[0]

    @property
    def input_size(self) -> int:
        return self.W["f"].shape[1]

    def validate(self):
        h, d = self.W["f"].shape
        for g in GATES:
            if self.W[g].shape != (h, d) or self.U[g].shape != (h, h) or self.b[g].shape != (h,):
                raise ShapeMismatchError(
                    f"gate '{g}' has inconsistent shapes: W {self.W[g].shape}, "
                    f"U {self.U[g].shape}, b {self.b[g].shape}"
                )


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(h=np.zeros(shape), c=np.zeros(shape))


@dataclass
class _StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: dict  # gate -> activation (f, i, o sigmoids; c is tanh candidate)
    c: np.ndarray
    tanh_c: np.ndarray


@dataclass
class LstmTrace:
    """Per-timestep activations cached by lstm_forward, consumed by BPTT."""

    steps: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)


def init_lstm_params(rng: RngStream, input_size: int, hidden_size: int) -> LstmCellParams:
    """Glorot-uniform weights, zero biases."""
    W, U, b = {}, {}, {}
    for g in GATES:
        W[g] = glorot_uniform(rng.derive("W", g), input_size, hidden_size, (hidden_size, input_size))
        U[g] = glorot_uniform(rng.derive("U", g), hidden_size, hidden_size, (hidden_size, hidden_size))
        b[g] = np.zeros(hidden_size)
    return LstmCellParams(W=W, U=U, b=b)


def _pre_activation(params: LstmCellParams, gate: str, x: np.ndarray, h_prev: np.ndarray):
    return x @ params.W[gate].T + h_prev @ params.U[gate].T + params.b[gate]


def lstm_step(params: LstmCellParams, x_t: np.ndarray, prev: LstmState):
    """One cell update. Returns (new state, step cache)."""
    x = np.asarray(x_t, dtype=np.float64)
    if x.shape[-1] != params.input_size:
        raise ShapeMismatchError(
            f"input dim {x.shape[-1]} does not match cell input size {params.input_size}"
        )
    if prev.h.shape[-1] != params.hidden_size or prev.h.shape != prev.c.shape:
        raise ShapeMismatchError(
            f"state shapes {prev.h.shape}/{prev.c.shape} do not match hidden size "
            f"{params.hidden_size}"
        )
    f = sigmoid(_pre_activation(params, "f", x, prev.h))
    i = sigmoid(_pre_activation(params, "i", x, prev.h))
    o = sigmoid(_pre_activation(params, "o", x, prev.h))
    cand = tanh(_pre_activation(params, "c", x, prev.h))
    c = f * prev.c + i * cand
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = _StepCache(
        x=x, h_prev=prev.h, c_prev=prev.c,
        gates={"f": f, "i": i, "o": o, "c": cand},
        c=c, tanh_c=tanh_c,
    )
    return LstmState(h=h, c=c), cache


def lstm_forward(params: LstmCellParams, xs) -> tuple[np.ndarray, LstmTrace]:
    """Unroll from a zero state over xs (T vectors, or an array (T, d) / (T, B, d)).

    Returns only the final hidden state h_T, which is what the classifier
    consumes, plus the trace for BPTT.
    """
    xs = [np.asarray(x, dtype=np.float64) for x in xs]
    if len(xs) == 0:
        raise ValueError("lstm_forward needs at least one timestep")
    batch = None if xs[0].ndim == 1 else xs[0].shape[0]
    state = LstmState.zeros(params.hidden_size, batch)
    trace = LstmTrace()
    for x_t in xs:
        state, cache = lstm_step(params, x_t, state)
        trace.steps.append(cache)
    return state.h, trace


def lstm_backward(params: LstmCellParams, trace: LstmTrace, grad_h_final: np.ndarray):
    """Exact gradients of h_T w.r.t. all twelve parameter tensors and each x_t.

    Returns (grad_params, grad_xs) where grad_params maps "W_f", "U_f", "b_f",
    ... to arrays shaped like the parameters (summed over the batch) and
    grad_xs is a list of per-timestep input gradients.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    gh = np.asarray(grad_h_final, dtype=np.float64)
    last = trace.steps[-1]
    if gh.shape != last.tanh_c.shape:
        raise ShapeMismatchError(
            f"grad_h_final shape {gh.shape} does not match forward h_T shape {last.tanh_c.shape}"
        )
    single = gh.ndim == 1

    def dot_param(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        # outer product for vectors, summed batch contraction for matrices
        if a.ndim == 1:
            return np.outer(a, b)
        return a.T @ b

    grads = {}
    for g in GATES:
        grads[f"W_{g}"] = np.zeros_like(params.W[g])
        grads[f"U_{g}"] = np.zeros_like(params.U[g])
        grads[f"b_{g}"] = np.zeros_like(params.b[g])

    grad_xs = [None] * len(trace)
    dh = gh
    dc = np.zeros_like(gh)
    for t in range(len(trace) - 1, -1, -1):
        step = trace.steps[t]
        f, i, o, cand = (step.gates[g] for g in GATES)
        do = dh * step.tanh_c
        dc = dc + dh * o * (1.0 - step.tanh_c ** 2)
        df = dc * step.c_prev
        di = dc * cand
        dcand = dc * i
        pre = {
            "f": df * f * (1.0 - f),
            "i": di * i * (1.0 - i),
            "o": do * o * (1.0 - o),
            "c": dcand * (1.0 - cand ** 2),
        }
        dx = np.zeros_like(step.x)
        dh_prev = np.zeros_like(step.h_prev)
        for g in GATES:
            grads[f"W_{g}"] += dot_param(pre[g], step.x)
            grads[f"U_{g}"] += dot_param(pre[g], step.h_prev)
            grads[f"b_{g}"] += pre[g] if single else pre[g].sum(axis=0)
            dx += pre[g] @ params.W[g]
            dh_prev += pre[g] @ params.U[g]
        grad_xs[t] = dx
        dh = dh_prev
        dc = dc * f
    return grads, grad_xs
