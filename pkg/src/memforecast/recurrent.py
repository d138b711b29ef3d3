"""LSTM cell, two-layer perceptron and softmax classification head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DimensionError
from .numerics import Tensor

GATES = ("input", "forget", "output", "candidate")


def _uniform(rng: np.random.Generator, shape, bound: float) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@dataclass
class LstmParams:
    """Standard (peephole-free) LSTM.

    The four gate matrices are stacked row-wise in the order
    input, forget, output, candidate: ``weight`` is
    ``(4*hidden_dim, input_dim + hidden_dim)`` and acts on ``[x; h]``.
    """

    input_dim: int
    hidden_dim: int
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "LstmParams":
        s = 1.0 / np.sqrt(hidden_dim)
        weight = _uniform(rng, (4 * hidden_dim, input_dim + hidden_dim), s)
        bias = np.zeros(4 * hidden_dim)
        bias[hidden_dim:2 * hidden_dim] = 1.0
        return cls(input_dim, hidden_dim, weight, Tensor(bias, requires_grad=True))

    def gate_weight(self, gate: str) -> np.ndarray:
        k = GATES.index(gate)
        return self.weight.data[k * self.hidden_dim:(k + 1) * self.hidden_dim]

    def tensors(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, hidden_dim: int, batch: tuple[int, ...] = ()) -> "LstmState":
        return cls(Tensor(np.zeros(batch + (hidden_dim,))), Tensor(np.zeros(batch + (hidden_dim,))))


def _check_lstm(params: LstmParams, x: Tensor, state: LstmState) -> None:
    n = params.hidden_dim
    if x.shape[-1] != params.input_dim:
        raise DimensionError(f"lstm_step: input length {x.shape[-1]}, cell expects {params.input_dim}")
    if state.h.shape[-1] != n or state.c.shape[-1] != n:
        raise DimensionError(f"lstm_step: state {state.h.shape}/{state.c.shape}, hidden is {n}")


def lstm_step_composite(params: LstmParams, x: Tensor, state: LstmState) -> LstmState:
    """LSTM update assembled from elementary tape operations.

    Numerically the same map as :func:`lstm_step`; kept as its reference.
    """
    _check_lstm(params, x, state)
    n = params.hidden_dim
    gates = nx.linear(nx.concat_rows(x, state.h), params.weight, params.bias)
    ifo = nx.sigmoid(nx.slice_rows(gates, 0, 3 * n))
    g = nx.tanh(nx.slice_rows(gates, 3 * n, 4 * n))
    i = nx.slice_rows(ifo, 0, n)
    f = nx.slice_rows(ifo, n, 2 * n)
    o = nx.slice_rows(ifo, 2 * n, 3 * n)
    c = nx.add(nx.mul(f, state.c), nx.mul(i, g))
    h = nx.mul(o, nx.tanh(c))
    return LstmState(h, c)


def lstm_step(params: LstmParams, x: Tensor, state: LstmState) -> LstmState:
    """i,f,o = sigmoid, g = tanh of ``W [x; h] + b``; c' = f*c + i*g; h' = o*tanh(c').

    Recorded on the tape as a single operation with a hand-written backward
    rule (the recurrent cells dominate the tape otherwise).
    """
    _check_lstm(params, x, state)
    n = params.hidden_dim
    xd, hd, cd = x.data, state.h.data, state.c.data
    W, b = params.weight.data, params.bias.data
    if xd.shape[:-1] != hd.shape[:-1]:
        xd = np.broadcast_to(xd, hd.shape[:-1] + xd.shape[-1:])
    xh = np.concatenate([xd, hd], axis=-1)
    z = xh @ W.T + b
    ifo = 0.5 * (np.tanh(0.5 * z[..., :3 * n]) + 1.0)
    i, f, o = ifo[..., :n], ifo[..., n:2 * n], ifo[..., 2 * n:]
    g = np.tanh(z[..., 3 * n:])
    c_new = f * cd + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    in_dim = params.input_dim
    x_shape = x.data.shape

    def rule(grad):
        gh, gc = grad[..., :n], grad[..., n:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([dc * g * i * (1.0 - i), dc * cd * f * (1.0 - f),
                             gh * tc * o * (1.0 - o), dc * i * (1.0 - g * g)], axis=-1)
        dxh = dz @ W
        dz2 = dz.reshape(-1, 4 * n)
        dW = dz2.T @ xh.reshape(-1, xh.shape[-1])
        dx = dxh[..., :in_dim]
        if dx.shape != x_shape:
            dx = dx.reshape(-1, in_dim).sum(axis=0).reshape(x_shape)
        return dx, dxh[..., in_dim:], dc * f, dW, dz2.sum(axis=0)

    hc = nx.record(np.concatenate([h_new, c_new], axis=-1),
                   (x, state.h, state.c, params.weight, params.bias), rule)
    return LstmState(nx.slice_rows(hc, 0, n), nx.slice_rows(hc, n, 2 * n))


@dataclass
class MlpParams:
    """affine -> tanh -> affine."""

    input_dim: int
    hidden_dim: int
    output_dim: int
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, output_dim: int,
             rng: np.random.Generator) -> "MlpParams":
        w1 = _uniform(rng, (hidden_dim, input_dim), 1.0 / np.sqrt(hidden_dim))
        w2 = _uniform(rng, (output_dim, hidden_dim), 1.0 / np.sqrt(hidden_dim))
        return cls(input_dim, hidden_dim, output_dim,
                   w1, Tensor(np.zeros(hidden_dim), requires_grad=True),
                   w2, Tensor(np.zeros(output_dim), requires_grad=True))

    def tensors(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def mlp_forward(params: MlpParams, x: Tensor) -> Tensor:
    if x.shape[-1] != params.input_dim:
        raise DimensionError(f"mlp_forward: input length {x.shape[-1]}, expected {params.input_dim}")
    hidden = nx.tanh(nx.linear(x, params.w1, params.b1))
    return nx.linear(hidden, params.w2, params.b2)


@dataclass
class DenseSoftmaxParams:
    input_dim: int
    num_classes: int
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, input_dim: int, num_classes: int, rng: np.random.Generator) -> "DenseSoftmaxParams":
        weight = _uniform(rng, (num_classes, input_dim), 1.0 / np.sqrt(input_dim))
        return cls(input_dim, num_classes, weight, Tensor(np.zeros(num_classes), requires_grad=True))

    def tensors(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def dense_logits(params: DenseSoftmaxParams, x: Tensor) -> Tensor:
    if x.shape[-1] != params.input_dim:
        raise DimensionError(f"dense_softmax: input length {x.shape[-1]}, expected {params.input_dim}")
    return nx.linear(x, params.weight, params.bias)


def dense_softmax(params: DenseSoftmaxParams, x: Tensor) -> Tensor:
    """Class probability vector for hidden state ``x``."""
    return nx.softmax_row(dense_logits(params, x))
