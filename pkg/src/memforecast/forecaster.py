"""Dual-stream memory forecaster, its ablation variants, and checkpoints.

Per time step the visual features and the one-hot labels are encoded by
separate LSTMs, each encoding passes through its own external memory, the two
memory outputs are concatenated and fed to a decoder LSTM, and a softmax head
gives the class distribution.  After the observed prefix the model predicts
autoregressively: the chosen class is fed back as the next label input while
the visual stream receives a surrogate input (zeros or a learned token).

Every function accepts either one sequence (``features`` of shape ``T x D``)
or a batch with a leading axis (``B x T x D``).

Ablation variants:

====== ================================================================
a      visual stream, encoder + decoder only
b      label stream, encoder + decoder only
c      a + visual memory
d      b + label memory
e      both encodings concatenated into one shared memory
full   both streams, one memory each
====== ================================================================
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, DimensionError, FormatError
from .memory import MemoryConfig, MemoryParams, MemoryState, memory_step
from .numerics import Tensor
from .protocol import windows
from .recurrent import (DenseSoftmaxParams, LstmParams, LstmState, dense_logits,
                        lstm_step)
from .synthdata import one_hot

VARIANTS = ("a", "b", "c", "d", "e", "full")
_USES_VISUAL = {"a", "c", "e", "full"}
_USES_LABEL = {"b", "d", "e", "full"}
FUTURE_INPUTS = ("zeros", "learned_token")
MEMORY_INITS = ("learned", "zeros")


@dataclass
class ForecasterConfig:
    num_classes: int
    feature_dim: int
    hidden_visual: int = 300
    hidden_label: int = 30
    mem_visual: MemoryConfig = field(default_factory=lambda: MemoryConfig(24, 300))
    mem_label: MemoryConfig = field(default_factory=lambda: MemoryConfig(20, 30))
    decoder_hidden: int = 300
    persist_memory: bool = False
    future_visual_input: str = "zeros"
    memory_init: str = "learned"

    def __post_init__(self):
        if isinstance(self.mem_visual, dict):
            self.mem_visual = MemoryConfig(**self.mem_visual)
        if isinstance(self.mem_label, dict):
            self.mem_label = MemoryConfig(**self.mem_label)
        for name in ("num_classes", "feature_dim", "hidden_visual", "hidden_label", "decoder_hidden"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.mem_visual.slot_dim != self.hidden_visual:
            raise ConfigError(f"mem_visual.slot_dim {self.mem_visual.slot_dim} != hidden_visual {self.hidden_visual}")
        if self.mem_label.slot_dim != self.hidden_label:
            raise ConfigError(f"mem_label.slot_dim {self.mem_label.slot_dim} != hidden_label {self.hidden_label}")
        if self.future_visual_input not in FUTURE_INPUTS:
            raise ConfigError(f"future_visual_input must be one of {FUTURE_INPUTS}")
        if self.memory_init not in MEMORY_INITS:
            raise ConfigError(f"memory_init must be one of {MEMORY_INITS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ForecasterConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def shared_memory(self) -> MemoryConfig:
        """Memory of variant e: visual slot count, concatenated slot width."""
        return MemoryConfig(self.mem_visual.slots, self.hidden_visual + self.hidden_label)


@dataclass
class ForecasterParams:
    config: ForecasterConfig
    variant: str
    decoder: LstmParams
    head: DenseSoftmaxParams
    encoder_visual: LstmParams | None = None
    encoder_label: LstmParams | None = None
    memory_visual: MemoryParams | None = None
    memory_label: MemoryParams | None = None
    memory_shared: MemoryParams | None = None
    future_token: Tensor | None = None

    _PARTS = ("encoder_visual", "encoder_label", "memory_visual", "memory_label",
              "memory_shared", "decoder", "head")

    def named_tensors(self) -> dict[str, Tensor]:
        out = {}
        for part in self._PARTS:
            p = getattr(self, part)
            if p is not None:
                out.update({f"{part}.{k}": t for k, t in p.tensors().items()})
        if self.future_token is not None:
            out["future_token"] = self.future_token
        return out

    def memories(self) -> dict[str, MemoryParams]:
        return {n: getattr(self, n) for n in ("memory_visual", "memory_label", "memory_shared")
                if getattr(self, n) is not None}

    def num_parameters(self) -> int:
        return sum(t.size for t in self.named_tensors().values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.named_tensors().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def build(config: ForecasterConfig, rng_seed: int, variant: str = "full") -> ForecasterParams:
    """Allocate and initialise all parameters; deterministic in ``rng_seed``."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    rng = np.random.default_rng(rng_seed)
    cfg = config
    visual = variant in _USES_VISUAL
    label = variant in _USES_LABEL
    enc_v = LstmParams.init(cfg.feature_dim, cfg.hidden_visual, rng) if visual else None
    enc_l = LstmParams.init(cfg.num_classes, cfg.hidden_label, rng) if label else None
    mem_v = mem_l = mem_s = None
    learned = cfg.memory_init == "learned"
    if variant in ("c", "full"):
        mem_v = MemoryParams.init(cfg.mem_visual, rng, learned)
    if variant in ("d", "full"):
        mem_l = MemoryParams.init(cfg.mem_label, rng, learned)
    if variant == "e":
        mem_s = MemoryParams.init(cfg.shared_memory(), rng, learned)
    dec_in = {"a": cfg.hidden_visual, "b": cfg.hidden_label, "c": cfg.hidden_visual,
              "d": cfg.hidden_label}.get(variant, cfg.hidden_visual + cfg.hidden_label)
    decoder = LstmParams.init(dec_in, cfg.decoder_hidden, rng)
    head = DenseSoftmaxParams.init(cfg.decoder_hidden, cfg.num_classes, rng)
    token = None
    if visual and cfg.future_visual_input == "learned_token":
        token = Tensor(np.zeros(cfg.feature_dim), requires_grad=True)
    return ForecasterParams(cfg, variant, decoder, head, enc_v, enc_l, mem_v, mem_l, mem_s, token)


# -------------------------------------------------------------------- state

@dataclass
class ForecasterState:
    decoder: LstmState
    visual: LstmState | None = None
    label: LstmState | None = None
    memory_visual: MemoryState | None = None
    memory_label: MemoryState | None = None
    memory_shared: MemoryState | None = None
    steps: int = 0
    logits: Tensor | None = None

    def batch_shape(self) -> tuple[int, ...]:
        return self.decoder.h.shape[:-1]


def initial_state(params: ForecasterParams, batch: tuple[int, ...] = (),
                  carried: dict[str, np.ndarray] | None = None) -> ForecasterState:
    """Zero encoder/decoder states; memories start from their initial (or carried) slots."""
    cfg = params.config
    carried = carried or {}
    st = ForecasterState(LstmState.zeros(cfg.decoder_hidden, batch))
    if params.encoder_visual is not None:
        st.visual = LstmState.zeros(cfg.hidden_visual, batch)
    if params.encoder_label is not None:
        st.label = LstmState.zeros(cfg.hidden_label, batch)
    mem_cfgs = {"memory_visual": cfg.mem_visual, "memory_label": cfg.mem_label,
                "memory_shared": cfg.shared_memory()}
    for name, mem in params.memories().items():
        if name in carried:
            setattr(st, name, MemoryState.fresh(mem_cfgs[name], batch, carried[name]))
        else:
            setattr(st, name, mem.fresh_state(mem_cfgs[name], batch))
    return st


def step(params: ForecasterParams, state: ForecasterState, x_visual, x_label) -> ForecasterState:
    """One fused time step; the returned state carries the step's logits."""
    v = params.variant
    new = ForecasterState(state.decoder, state.visual, state.label, state.memory_visual,
                          state.memory_label, state.memory_shared, state.steps + 1)
    hv = hl = None
    if params.encoder_visual is not None:
        new.visual = lstm_step(params.encoder_visual, x_visual, state.visual)
        hv = new.visual.h
    if params.encoder_label is not None:
        new.label = lstm_step(params.encoder_label, x_label, state.label)
        hl = new.label.h
    if v == "full":
        cv, new.memory_visual = memory_step(params.memory_visual, hv, state.memory_visual)
        cl, new.memory_label = memory_step(params.memory_label, hl, state.memory_label)
        fused = nx.concat_rows(cv, cl)
    elif v == "e":
        fused, new.memory_shared = memory_step(params.memory_shared, nx.concat_rows(hv, hl),
                                               state.memory_shared)
    elif v == "c":
        fused, new.memory_visual = memory_step(params.memory_visual, hv, state.memory_visual)
    elif v == "d":
        fused, new.memory_label = memory_step(params.memory_label, hl, state.memory_label)
    else:
        fused = hv if v == "a" else hl
    new.decoder = lstm_step(params.decoder, fused, state.decoder)
    new.logits = dense_logits(params.head, new.decoder.h)
    return new


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def observe(params: ForecasterParams, features, labels_onehot, state: ForecasterState) -> ForecasterState:
    """Run the observed prefix (time on axis -2) through the model."""
    feats = _as_array(features)
    onehots = _as_array(labels_onehot)
    if feats.ndim < 2 or onehots.ndim < 2:
        raise DimensionError("observe expects T x D features and T x C one-hots")
    if feats.shape[:-1] != onehots.shape[:-1]:
        raise ContractError(f"stream lengths differ: features {feats.shape}, labels {onehots.shape}")
    if feats.shape[-2] < 1:
        raise ContractError("observe needs at least one frame")
    cfg = params.config
    if feats.shape[-1] != cfg.feature_dim or onehots.shape[-1] != cfg.num_classes:
        raise DimensionError(
            f"observe: got feature dim {feats.shape[-1]} / {onehots.shape[-1]} classes, "
            f"model has {cfg.feature_dim} / {cfg.num_classes}")
    for t in range(feats.shape[-2]):
        state = step(params, state, Tensor(feats[..., t, :]), Tensor(onehots[..., t, :]))
    return state


@dataclass
class RolloutPolicy:
    """``greedy`` takes the argmax (lowest index on ties); ``sampled`` draws from gamma."""

    mode: str = "greedy"
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in ("greedy", "sampled"):
            raise ConfigError(f"unknown rollout mode {self.mode!r}")
        self.rng = np.random.default_rng(self.seed)

    def choose(self, gamma: np.ndarray) -> np.ndarray:
        if self.mode == "greedy":
            return np.argmax(gamma, axis=-1)
        cdf = np.cumsum(gamma, axis=-1)
        u = self.rng.random(gamma.shape[:-1] + (1,))
        return np.minimum((u > cdf).sum(axis=-1), gamma.shape[-1] - 1)


def _future_visual(params: ForecasterParams, batch: tuple[int, ...]) -> Tensor | None:
    if params.encoder_visual is None:
        return None
    if params.future_token is not None:
        return nx.add(Tensor(np.zeros(batch + (params.config.feature_dim,))), params.future_token)
    return Tensor(np.zeros(batch + (params.config.feature_dim,)))


def predict_step(params: ForecasterParams, state: ForecasterState, prev_label_onehot,
                 policy: RolloutPolicy) -> tuple[np.ndarray, np.ndarray | int, ForecasterState]:
    """One autoregressive step: returns (gamma, chosen class, new state)."""
    prev = _as_array(prev_label_onehot)
    batch = state.batch_shape()
    if prev.shape != batch + (params.config.num_classes,):
        raise DimensionError(f"previous label one-hot has shape {prev.shape}")
    x_label = Tensor(prev) if params.encoder_label is not None else None
    state = step(params, state, _future_visual(params, batch), x_label)
    gamma = nx.softmax_row(state.logits).data
    chosen = policy.choose(gamma)
    if chosen.ndim == 0:
        chosen = int(chosen)
    return gamma, chosen, state


def rollout(params: ForecasterParams, state: ForecasterState, first_prev_label,
            horizon: int, policy: RolloutPolicy) -> list[tuple[np.ndarray, np.ndarray | int]]:
    """Iterate :func:`predict_step`, feeding back each chosen class."""
    if horizon < 1:
        raise ContractError(f"horizon must be >= 1, got {horizon}")
    C = params.config.num_classes
    prev = one_hot(first_prev_label, C)
    out = []
    for _ in range(horizon):
        gamma, chosen, state = predict_step(params, state, prev, policy)
        out.append((gamma, chosen))
        prev = one_hot(chosen, C)
    return out


def forward_loss(params: ForecasterParams, sample, obs_fraction: float, pred_fraction: float,
                 teacher_forcing: bool = True, carried: dict | None = None,
                 return_state: bool = False):
    """Mean cross-entropy over the prediction window.

    ``sample`` has ``labels`` (T or B x T) and ``features`` (T x D or
    B x T x D).  The label stream sees ground truth when ``teacher_forcing``,
    else the model's own greedy choice.
    """
    labels = np.asarray(sample.labels, dtype=np.int64)
    feats = np.asarray(sample.features, dtype=np.float64)
    obs, pred = windows(labels.shape[-1], obs_fraction, pred_fraction)
    C = params.config.num_classes
    n_obs = len(obs)
    batch = labels.shape[:-1]
    state = initial_state(params, batch, carried)
    state = observe(params, feats[..., :n_obs, :], one_hot(labels[..., :n_obs], C), state)
    prev = labels[..., n_obs - 1]
    total = None
    for t in pred:
        x_label = Tensor(one_hot(prev, C)) if params.encoder_label is not None else None
        state = step(params, state, _future_visual(params, batch), x_label)
        term = nx.sum_all(nx.cross_entropy(state.logits, labels[..., t]))
        total = term if total is None else nx.add(total, term)
        prev = labels[..., t] if teacher_forcing else np.argmax(state.logits.data, axis=-1)
    loss = nx.scale(total, 1.0 / (len(pred) * max(1, int(np.prod(batch)))))
    return (loss, state) if return_state else loss


# ---------------------------------------------------------- model instances

class Forecaster:
    """A configured model: parameters plus the cross-sequence memory carry."""

    def __init__(self, params: ForecasterParams, seed: int = 0):
        self.params = params
        self.seed = seed
        self.carried: dict[str, np.ndarray] = {}

    @property
    def config(self) -> ForecasterConfig:
        return self.params.config

    @property
    def variant(self) -> str:
        return self.params.variant

    def reset_memory(self) -> None:
        self.carried = {}

    def carry_for_next(self) -> dict[str, np.ndarray] | None:
        return self.carried if self.config.persist_memory else None

    def remember(self, state: ForecasterState) -> None:
        """Keep the final slot matrices of the last sequence when persisting."""
        if not self.config.persist_memory:
            return
        for name in self.params.memories():
            M = getattr(state, name).M.data
            self.carried[name] = M.reshape((-1,) + M.shape[-2:])[-1].copy()

    def initial_state(self, batch: tuple[int, ...] = ()) -> ForecasterState:
        return initial_state(self.params, batch, self.carry_for_next())

    def forecast(self, features, labels, horizon: int,
                 policy: RolloutPolicy | None = None) -> np.ndarray:
        """Greedy (or sampled) class forecast after observing ``features``/``labels``."""
        policy = policy or RolloutPolicy()
        labels = np.asarray(labels, dtype=np.int64)
        state = self.initial_state(labels.shape[:-1])
        state = observe(self.params, features, one_hot(labels, self.config.num_classes), state)
        steps = rollout(self.params, state, labels[..., -1], horizon, policy)
        return np.stack([np.asarray(c) for _, c in steps], axis=-1)


def build_ablation(variant: str, config: ForecasterConfig, seed: int) -> Forecaster:
    return Forecaster(build(config, seed, variant), seed)


# -------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "memforecast-checkpoint"


def save_checkpoint(path, model: Forecaster) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "variant": model.variant,
        "seed": model.seed,
        "config": model.config.to_dict(),
        "params": {name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
                   for name, t in model.params.named_tensors().items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path, config: ForecasterConfig | None = None) -> Forecaster:
    """Rebuild a model from a checkpoint, validating every parameter shape."""
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a JSON document ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != 1:
        raise FormatError(f"{path}: not a version-1 {CHECKPOINT_FORMAT} document")
    try:
        cfg = config or ForecasterConfig.from_dict(doc["config"])
        params = build(cfg, 0, doc["variant"])
        stored = doc["params"]
    except (KeyError, ConfigError) as exc:
        raise FormatError(f"{path}: invalid checkpoint header ({exc})") from None
    expected = params.named_tensors()
    missing = sorted(set(expected) - set(stored))
    extra = sorted(set(stored) - set(expected))
    if missing or extra:
        raise FormatError(f"{path}: missing parameters {missing}, unexpected parameters {extra}")
    for name, t in expected.items():
        entry = stored[name]
        shape = tuple(entry.get("shape", ()))
        data = np.asarray(entry.get("data", []), dtype=np.float64)
        if shape != t.shape or data.size != t.size:
            raise FormatError(f"{path}: parameter {name} has shape {shape} "
                              f"({data.size} values), expected {t.shape}")
        t.data = data.reshape(shape)
    return Forecaster(params, int(doc.get("seed", 0)))
