"""External neural memory with attention read and score-weighted write.

A memory is an ``l x k`` slot matrix.  At each step a read controller (an
LSTM cell) turns the stream's hidden state into a query, slots are scored by
dot product and normalised with a softmax, and the weighted slot average is
combined with the hidden state by an MLP to give the memory output ``c``.
A write controller (another LSTM cell) turns ``c`` into a write vector ``o``
and every slot moves towards ``o`` in proportion to its score:

    M'[i] = M[i] + z[i] * (o - M[i])

Reads see the memory from the previous step; the write produces the memory
for the next one.

A memory that starts with identical slots (for example all zeros) keeps them
identical forever: equal scores give a uniform ``z``, and a uniform write
moves every slot by the same amount.  Attention then never depends on the
query.  ``MemoryParams`` can therefore carry a learned initial slot matrix
that breaks the symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, DimensionError
from .numerics import Tensor
from .recurrent import LstmParams, LstmState, MlpParams, lstm_step, mlp_forward


@dataclass(frozen=True)
class MemoryConfig:
    slots: int
    slot_dim: int

    def __post_init__(self):
        if self.slots < 1 or self.slot_dim < 1:
            raise ConfigError(f"memory needs slots >= 1 and slot_dim >= 1, got {self}")


@dataclass
class MemoryState:
    M: Tensor
    read_controller: LstmState
    write_controller: LstmState

    @classmethod
    def fresh(cls, config: MemoryConfig, batch: tuple[int, ...] = (),
              initial: np.ndarray | None = None) -> "MemoryState":
        if initial is None:
            M = np.zeros(batch + (config.slots, config.slot_dim))
        else:
            M = np.broadcast_to(initial, batch + (config.slots, config.slot_dim)).copy()
        return cls(Tensor(M),
                   LstmState.zeros(config.slot_dim, batch),
                   LstmState.zeros(config.slot_dim, batch))


@dataclass
class ReadResult:
    c: Tensor
    z: Tensor
    m: Tensor
    q: Tensor


@dataclass
class MemoryParams:
    read_cell: LstmParams
    write_cell: LstmParams
    output_mlp: MlpParams
    initial: Tensor | None = None

    @classmethod
    def init(cls, config: MemoryConfig, rng: np.random.Generator,
             learned_initial: bool = False) -> "MemoryParams":
        k = config.slot_dim
        read, write = LstmParams.init(k, k, rng), LstmParams.init(k, k, rng)
        mlp = MlpParams.init(2 * k, k, k, rng)
        initial = None
        if learned_initial:
            s = 1.0 / np.sqrt(k)
            initial = Tensor(rng.uniform(-s, s, size=(config.slots, k)), requires_grad=True)
        return cls(read, write, mlp, initial)

    @property
    def slot_dim(self) -> int:
        return self.read_cell.hidden_dim

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for part, p in (("read", self.read_cell), ("write", self.write_cell), ("output", self.output_mlp)):
            out.update({f"{part}.{name}": t for name, t in p.tensors().items()})
        if self.initial is not None:
            out["initial"] = self.initial
        return out

    def fresh_state(self, config: MemoryConfig, batch: tuple[int, ...] = ()) -> MemoryState:
        """Start-of-sequence state: the learned slots if present, else zeros."""
        state = MemoryState.fresh(config, batch)
        if self.initial is not None:
            if self.initial.shape != (config.slots, config.slot_dim):
                raise DimensionError(f"initial slots {self.initial.shape} do not match {config}")
            state.M = nx.add(state.M, self.initial) if batch else self.initial
        return state


def attend(q: Tensor, M: Tensor) -> Tensor:
    """Softmax over the dot products of ``q`` with every slot of ``M``."""
    if M.data.ndim < 2 or q.shape[-1] != M.shape[-1]:
        raise DimensionError(f"attend: query {q.shape} does not match memory {M.shape}")
    return nx.softmax_row(nx.matvec(M, q))


def read_step(params: MemoryParams, h: Tensor, state: MemoryState) -> tuple[ReadResult, LstmState]:
    if h.shape[-1] != params.read_cell.input_dim:
        raise DimensionError(
            f"read_step: hidden length {h.shape[-1]}, memory expects {params.read_cell.input_dim}")
    controller = lstm_step(params.read_cell, h, state.read_controller)
    q = controller.h
    z = attend(q, state.M)
    m = nx.vecmat(z, state.M)
    c = mlp_forward(params.output_mlp, nx.concat_rows(h, m))
    return ReadResult(c=c, z=z, m=m, q=q), controller


def blend(M: Tensor, z: Tensor, o: Tensor) -> Tensor:
    """Move slot ``i`` a fraction ``z[i]`` of the way towards ``o``."""
    return nx.add(M, nx.mul(nx.unsqueeze(z, -1), nx.sub(nx.unsqueeze(o, -2), M)))


def write_step(params: MemoryParams, c: Tensor, z: Tensor, state: MemoryState) -> MemoryState:
    k = params.slot_dim
    if c.shape[-1] != k:
        raise DimensionError(f"write_step: output length {c.shape[-1]}, slot_dim is {k}")
    if z.shape[-1] != state.M.shape[-2]:
        raise DimensionError(f"write_step: {z.shape[-1]} scores for {state.M.shape[-2]} slots")
    if np.any(np.abs(z.data.sum(axis=-1) - 1.0) > 1e-6):
        raise ContractError("write_step: attention scores are not normalised")
    controller = lstm_step(params.write_cell, c, state.write_controller)
    M = blend(state.M, z, controller.h)
    return MemoryState(M, state.read_controller, controller)


def memory_step(params: MemoryParams, h: Tensor, state: MemoryState) -> tuple[Tensor, MemoryState]:
    """One read followed by one write; returns the memory output and new state."""
    read, read_controller = read_step(params, h, state)
    after_read = MemoryState(state.M, read_controller, state.write_controller)
    return read.c, write_step(params, read.c, read.z, after_read)
