"""Synthetic activity grammars, stand-in features, encodings and file formats.

Label sequences come from a Markov chain over action classes in which each
visit lasts a random number of frames.  A :class:`ComposedGrammar` first
draws a "menu" (one of several sub-grammars over a shared class set) and then
runs that sub-grammar, so the next action depends on which menu is active and
not only on the current action.

Features stand in for per-frame CNN embeddings: a class prototype, plus an
optional per-menu context vector, plus Gaussian noise.

File formats
------------
features  ``b"NMNF" | u32 version=1 | u32 T | u32 D | T*D float32``, little-endian,
          row-major.
labels    one base-10 class id per line, ``\\n``-terminated.
grammar   JSON with keys ``classes, transition, start_dist, duration_min,
          duration_max`` (or ``classes, menu_dist, menus, context_scale`` for a
          composed grammar, each menu holding the ActionGrammar keys except
          ``classes``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, FormatError

FEATURE_MAGIC = b"NMNF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


# ------------------------------------------------------------------ grammars

def _prob_vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
        raise ConfigError(f"{name} must be a non-negative vector summing to 1")
    return v


@dataclass
class ActionGrammar:
    """Markov chain over action classes with per-class duration ranges.

    Self-transitions are removed on construction (diagonal zeroed, rows
    renormalised) so that every class change is a segment boundary.
    """

    classes: list[str]
    transition: np.ndarray
    start_dist: np.ndarray
    duration_min: np.ndarray
    duration_max: np.ndarray

    def __post_init__(self):
        C = len(self.classes)
        if C < 2:
            raise ConfigError("a grammar needs at least two classes")
        T = np.asarray(self.transition, dtype=np.float64)
        if T.shape != (C, C) or np.any(T < 0):
            raise ConfigError(f"transition must be a non-negative {C}x{C} matrix")
        if np.any(np.abs(T.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigError("every transition row must sum to 1")
        T = T.copy()
        np.fill_diagonal(T, 0.0)
        rows = T.sum(axis=1)
        if np.any(rows <= 0):
            raise ConfigError("a class has no transition to any other class")
        self.transition = T / rows[:, None]
        self.start_dist = _prob_vector(self.start_dist, "start_dist")
        if self.start_dist.shape != (C,):
            raise ConfigError(f"start_dist must have length {C}")
        dmin = np.asarray(self.duration_min, dtype=np.int64)
        dmax = np.asarray(self.duration_max, dtype=np.int64)
        if dmin.shape != (C,) or dmax.shape != (C,):
            raise ConfigError(f"duration bounds must have length {C}")
        if np.any(dmin < 1) or np.any(dmin > dmax):
            raise ConfigError("need 1 <= duration_min <= duration_max for every class")
        self.duration_min, self.duration_max = dmin, dmax

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "transition": self.transition.tolist(),
            "start_dist": self.start_dist.tolist(),
            "duration_min": self.duration_min.tolist(),
            "duration_max": self.duration_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActionGrammar":
        keys = {"classes", "transition", "start_dist", "duration_min", "duration_max"}
        if set(d) != keys:
            raise ConfigError(f"grammar keys must be exactly {sorted(keys)}, got {sorted(d)}")
        return cls(list(d["classes"]), d["transition"], d["start_dist"],
                   d["duration_min"], d["duration_max"])

    def sample_segments(self, total_len: int, rng: np.random.Generator) -> list[tuple[int, int]]:
        """(class, duration) pairs; the last duration is truncated to fit."""
        segs = []
        cls_ = int(rng.choice(self.num_classes, p=self.start_dist))
        t = 0
        while t < total_len:
            d = int(rng.integers(self.duration_min[cls_], self.duration_max[cls_] + 1))
            d = min(d, total_len - t)
            segs.append((cls_, d))
            t += d
            cls_ = int(rng.choice(self.num_classes, p=self.transition[cls_]))
        return segs


@dataclass
class ComposedGrammar:
    """A menu choice over sub-grammars sharing one class set.

    Each sequence first draws a menu from ``menu_dist`` and is then generated
    entirely by that menu's grammar.  ``context_scale`` sets the norm-scale of
    the per-menu context vector added to features (0 disables it).
    """

    menus: list[ActionGrammar]
    menu_dist: np.ndarray
    context_scale: float = 0.0

    def __post_init__(self):
        if not self.menus:
            raise ConfigError("a composed grammar needs at least one menu")
        names = self.menus[0].classes
        if any(m.classes != names for m in self.menus):
            raise ConfigError("all menus must share the same class list")
        self.menu_dist = _prob_vector(self.menu_dist, "menu_dist")
        if self.menu_dist.shape != (len(self.menus),):
            raise ConfigError("menu_dist length must equal the number of menus")
        if self.context_scale < 0:
            raise ConfigError("context_scale must be non-negative")

    @property
    def classes(self) -> list[str]:
        return self.menus[0].classes

    @property
    def num_classes(self) -> int:
        return self.menus[0].num_classes

    def to_dict(self) -> dict:
        menus = []
        for m in self.menus:
            d = m.to_dict()
            del d["classes"]
            menus.append(d)
        return {"classes": list(self.classes), "menu_dist": self.menu_dist.tolist(),
                "context_scale": self.context_scale, "menus": menus}

    @classmethod
    def from_dict(cls, d: dict) -> "ComposedGrammar":
        keys = {"classes", "menu_dist", "menus", "context_scale"}
        if set(d) != keys:
            raise ConfigError(f"composed grammar keys must be exactly {sorted(keys)}, got {sorted(d)}")
        menus = [ActionGrammar.from_dict({"classes": d["classes"], **m}) for m in d["menus"]]
        return cls(menus, d["menu_dist"], float(d["context_scale"]))

    def sample_segments(self, total_len: int, rng: np.random.Generator,
                        ) -> tuple[int, list[tuple[int, int]]]:
        menu = int(rng.choice(len(self.menus), p=self.menu_dist))
        return menu, self.menus[menu].sample_segments(total_len, rng)


Grammar = ActionGrammar | ComposedGrammar


def grammar_from_dict(d: dict) -> Grammar:
    if not isinstance(d, dict):
        raise ConfigError("grammar document must be a mapping")
    return ComposedGrammar.from_dict(d) if "menus" in d else ActionGrammar.from_dict(d)


def cycle_grammar(num_classes: int = 3, duration: int = 4) -> ActionGrammar:
    """Deterministic cycle 0 -> 1 -> ... -> C-1 -> 0 with fixed durations."""
    C = num_classes
    T = np.roll(np.eye(C), 1, axis=1)
    return ActionGrammar([f"a{i}" for i in range(C)], T, np.full(C, 1.0 / C),
                         np.full(C, duration), np.full(C, duration))


# Each menu is a cycle of five actions.  Every ordered pair occurs in one
# menu only, while the single-class successor is ambiguous across menus.
MENU_CYCLES = ((0, 1, 2, 3, 4), (0, 2, 5, 3, 6), (7, 2, 1, 3, 5))


def composed_grammar(num_classes: int = 8, cycles: Sequence[Sequence[int]] = MENU_CYCLES,
                     duration_range: tuple[int, int] = (5, 20), duration_spread: int = 2,
                     branch_prob: float = 0.05, context_scale: float = 1.0,
                     seed: int = 0) -> ComposedGrammar:
    """Menu-structured grammar in which first-order prediction is insufficient.

    Each menu follows its cycle with probability ``1 - branch_prob`` and
    otherwise jumps to a uniformly chosen other member of the cycle.  Every
    class gets a characteristic duration centre drawn from ``duration_range``
    and a range of +/- ``duration_spread`` frames clipped to it.
    """
    rng = np.random.default_rng(seed)
    lo, hi = duration_range
    centres = rng.integers(lo + duration_spread, hi - duration_spread + 1, size=num_classes)
    dmin = np.maximum(centres - duration_spread, lo)
    dmax = np.minimum(centres + duration_spread, hi)
    names = [f"a{i}" for i in range(num_classes)]
    menus = []
    for cyc in cycles:
        if len(set(cyc)) != len(cyc) or max(cyc) >= num_classes:
            raise ConfigError(f"invalid menu cycle {cyc}")
        T = np.zeros((num_classes, num_classes))
        n = len(cyc)
        for j, a in enumerate(cyc):
            nxt = cyc[(j + 1) % n]
            others = [b for b in cyc if b not in (a, nxt)]
            T[a, nxt] = 1.0 - (branch_prob if others else 0.0)
            for b in others:
                T[a, b] = branch_prob / len(others)
        outside = [c for c in range(num_classes) if c not in cyc]
        for c in outside:
            T[c, cyc[0]] = 1.0
        start = np.zeros(num_classes)
        start[list(cyc)] = 1.0 / n
        menus.append(ActionGrammar(names, T, start, dmin, dmax))
    return ComposedGrammar(menus, np.full(len(menus), 1.0 / len(menus)), context_scale)


def _segments_to_labels(segs) -> np.ndarray:
    return np.concatenate([np.full(d, c, dtype=np.int64) for c, d in segs])


def sample_labels(grammar: Grammar, total_len: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one label sequence of length ``total_len``."""
    if total_len < 1:
        raise ContractError("sequence length must be >= 1")
    segs = grammar.sample_segments(total_len, rng)
    if isinstance(grammar, ComposedGrammar):
        segs = segs[1]
    return _segments_to_labels(segs)


def segments(labels: Sequence[int]) -> list[tuple[int, int, int]]:
    """Maximal constant runs as ``(start, stop, label)``."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [labels.size]])
    return [(int(a), int(b), int(labels[a])) for a, b in zip(starts, stops)]


# ------------------------------------------------------------------ features

@dataclass
class FeaturePrototypes:
    """Per-class feature means, optional per-menu context vectors, noise level."""

    prototypes: np.ndarray
    noise_std: float
    context: np.ndarray | None = None

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2:
            raise ConfigError("prototypes must be a C x D matrix")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.context is not None:
            self.context = np.asarray(self.context, dtype=np.float64)
            if self.context.ndim != 2 or self.context.shape[1] != self.feature_dim:
                raise ConfigError("context vectors must have the prototype dimension")

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.prototypes.shape[1]

    @classmethod
    def random(cls, grammar: Grammar, feature_dim: int, noise_std: float,
               rng: np.random.Generator) -> "FeaturePrototypes":
        protos = rng.normal(size=(grammar.num_classes, feature_dim))
        context = None
        if isinstance(grammar, ComposedGrammar) and grammar.context_scale > 0:
            context = grammar.context_scale * rng.normal(size=(len(grammar.menus), feature_dim))
        return cls(protos, noise_std, context)


def synth_features(labels: Sequence[int], prototypes: FeaturePrototypes,
                   rng: np.random.Generator, menu: int | None = None) -> np.ndarray:
    """``prototype[label] (+ context[menu]) + N(0, noise_std^2)`` per frame."""
    labels = np.asarray(labels, dtype=np.int64)
    C = prototypes.num_classes
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        bad = int(np.flatnonzero((labels < 0) | (labels >= C))[0])
        raise ContractError(f"label {labels[bad]} at index {bad} outside [0, {C})")
    feats = prototypes.prototypes[labels]
    if menu is not None and prototypes.context is not None:
        feats = feats + prototypes.context[menu]
    noise = rng.normal(0.0, 1.0, size=feats.shape)
    return feats + prototypes.noise_std * noise


def one_hot(labels: Sequence[int], num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if bad.size:
        i = int(bad[0])
        raise ContractError(f"label {labels.reshape(-1)[i]} at index {i} outside [0, {num_classes})")
    out = np.zeros(labels.shape + (num_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def corrupt_labels(labels: Sequence[int], p: float, rng: np.random.Generator,
                   num_classes: int | None = None) -> np.ndarray:
    """Relabel each whole segment with probability ``p``.

    A relabelled segment gets a class drawn uniformly from those differing
    from its original label and from both neighbours, so segment boundaries
    are kept.  With fewer than four classes a segment may have no such class;
    it is then left unchanged.
    """
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"corruption probability {p} outside [0, 1]")
    labels = np.asarray(labels, dtype=np.int64)
    out = labels.copy()
    if p == 0.0 or labels.size == 0:
        return out
    C = int(num_classes if num_classes is not None else labels.max() + 1)
    segs = segments(labels)
    for j, (a, b, lab) in enumerate(segs):
        if rng.random() >= p:
            continue
        left = out[a - 1] if a > 0 else -1
        right = segs[j + 1][2] if j + 1 < len(segs) else -1
        cand = [c for c in range(C) if c not in (lab, left, right)]
        if not cand:
            continue
        out[a:b] = cand[int(rng.integers(len(cand)))]
    return out


# ------------------------------------------------------------------ file I/O

def write_features(path, features) -> None:
    """Store a T x D matrix as float32 (values are rounded to float32)."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"features must be T x D, got shape {arr.shape}")
    T, D = arr.shape
    payload = arr.astype("<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, T, D) + payload)


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at offset {len(raw)} (need {_HEADER.size} bytes)")
    magic, version, T, D = _HEADER.unpack_from(raw, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    expected = _HEADER.size + 4 * T * D
    if len(raw) != expected:
        raise FormatError(
            f"{path}: header says T*D={T * D} floats, payload ends at offset {len(raw)} "
            f"instead of {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    return data.reshape(T, D)


def write_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or np.any(labels < 0):
        raise ContractError("labels must be a 1-D sequence of non-negative ids")
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def read_labels(path, num_classes: int | None = None) -> np.ndarray:
    text = Path(path).read_bytes().decode("ascii", errors="replace")
    if not text.endswith("\n"):
        raise FormatError(f"{path}: missing final newline at offset {len(text)}")
    lines = text[:-1].split("\n")
    out = np.empty(len(lines), dtype=np.int64)
    offset = 0
    for i, line in enumerate(lines):
        if not line.isdigit():
            raise FormatError(f"{path}: line {i + 1} (offset {offset}) is not a class id: {line!r}")
        v = int(line)
        if num_classes is not None and v >= num_classes:
            raise FormatError(f"{path}: line {i + 1} (offset {offset}) class {v} >= {num_classes}")
        out[i] = v
        offset += len(line) + 1
    return out


def write_grammar(path, grammar: Grammar) -> None:
    Path(path).write_text(json.dumps(grammar.to_dict(), indent=2) + "\n")


def read_grammar(path) -> Grammar:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not a JSON document ({exc})") from None
    return grammar_from_dict(doc)


# ------------------------------------------------------------------ corpora

@dataclass
class Sample:
    labels: np.ndarray
    features: np.ndarray
    menu: int = -1

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.labels.ndim != 1 or self.labels.size < 1:
            raise ContractError("a sample needs at least one label")
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.size:
            raise ContractError(
                f"features {self.features.shape} do not match {self.labels.size} labels")

    def __len__(self) -> int:
        return self.labels.size


@dataclass
class CorpusSpec:
    """Size and shape of a generated corpus."""

    length: int = 120
    num_train: int = 200
    num_test: int = 50
    feature_dim: int = 16
    noise_std: float = 1.0


@dataclass
class Corpus:
    grammar: Grammar
    train: list[Sample]
    test: list[Sample]
    prototypes: FeaturePrototypes | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.grammar.num_classes

    @property
    def feature_dim(self) -> int:
        return (self.train or self.test)[0].features.shape[1]


def make_sample(grammar: Grammar, prototypes: FeaturePrototypes, length: int,
                rng: np.random.Generator) -> Sample:
    menu = -1
    segs = grammar.sample_segments(length, rng)
    if isinstance(grammar, ComposedGrammar):
        menu, segs = segs
    labels = _segments_to_labels(segs)
    feats = synth_features(labels, prototypes, rng, menu if menu >= 0 else None)
    # float32 rounding keeps in-memory corpora identical to their files
    return Sample(labels, feats.astype(np.float32).astype(np.float64), menu)


def make_corpus(grammar: Grammar, spec: CorpusSpec | None = None, seed: int = 0) -> Corpus:
    """Deterministic train/test corpus for ``grammar``."""
    spec = spec or CorpusSpec()
    rng = np.random.default_rng(seed)
    protos = FeaturePrototypes.random(grammar, spec.feature_dim, spec.noise_std, rng)
    train = [make_sample(grammar, protos, spec.length, rng) for _ in range(spec.num_train)]
    test = [make_sample(grammar, protos, spec.length, rng) for _ in range(spec.num_test)]
    return Corpus(grammar, train, test, protos, seed)


def make_folds(grammar: Grammar, spec: CorpusSpec | None = None, seed: int = 0,
               num_folds: int = 5) -> list[Corpus]:
    """Independent seeded corpora, one per fold."""
    return [make_corpus(grammar, spec, seed + f) for f in range(num_folds)]


def write_corpus(root, corpus: Corpus) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_grammar(root / "grammar.json", corpus.grammar)
    for split in ("train", "test"):
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(getattr(corpus, split)):
            write_features(d / f"seq_{i:05d}.nmnf", s.features)
            write_labels(d / f"seq_{i:05d}.labels", s.labels)


def read_corpus(root) -> Corpus:
    root = Path(root)
    if not (root / "grammar.json").exists():
        raise FormatError(f"{root}: no grammar.json")
    grammar = read_grammar(root / "grammar.json")
    splits = {}
    for split in ("train", "test"):
        samples = []
        for fpath in sorted((root / split).glob("*.nmnf")):
            feats = read_features(fpath)
            lpath = fpath.with_suffix(".labels")
            if not lpath.exists():
                raise FormatError(f"{fpath}: missing label file {lpath.name}")
            labels = read_labels(lpath, grammar.num_classes)
            if labels.size != feats.shape[0]:
                raise FormatError(f"{lpath}: {labels.size} labels for {feats.shape[0]} feature rows")
            samples.append(Sample(labels, feats))
        splits[split] = samples
    return Corpus(grammar, splits["train"], splits["test"])
