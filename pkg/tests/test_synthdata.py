import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memforecast.errors import ConfigError, ContractError, FormatError
from memforecast.synthdata import (MENU_CYCLES, ActionGrammar, ComposedGrammar, CorpusSpec,
                                   FeaturePrototypes, composed_grammar, corrupt_labels,
                                   cycle_grammar, grammar_from_dict, make_corpus, make_folds,
                                   one_hot, read_corpus, read_features, read_grammar,
                                   read_labels, sample_labels, segments, synth_features,
                                   write_corpus, write_features, write_grammar, write_labels)


# ---------------------------------------------------------------- grammars

def test_cycle_grammar_is_forced():
    g = cycle_grammar(3, 4)
    for seed in range(5):
        labels = sample_labels(g, 12, np.random.default_rng(seed))
        start = labels[0]
        expected = np.repeat([(start + k) % 3 for k in range(3)], 4)
        assert labels.tolist() == expected.tolist()


def test_grammar_validation():
    with pytest.raises(ConfigError):
        ActionGrammar(["a"], [[1.0]], [1.0], [1], [1])
    with pytest.raises(ConfigError):
        ActionGrammar(["a", "b"], [[0.0, 0.9], [1.0, 0.0]], [0.5, 0.5], [1, 1], [2, 2])
    with pytest.raises(ConfigError):
        ActionGrammar(["a", "b"], [[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], [3, 1], [2, 2])
    with pytest.raises(ConfigError):
        ActionGrammar(["a", "b"], [[1.0, 0.0], [1.0, 0.0]], [0.5, 0.5], [1, 1], [2, 2])


def test_self_transitions_removed():
    g = ActionGrammar(["a", "b", "c"], [[0.5, 0.25, 0.25], [0.2, 0.4, 0.4], [0.3, 0.3, 0.4]],
                      [1, 0, 0], [1, 1, 1], [2, 2, 2])
    assert np.all(np.diag(g.transition) == 0)
    assert np.allclose(g.transition.sum(axis=1), 1.0, atol=1e-12)
    assert g.transition[0].tolist() == [0.0, 0.5, 0.5]


def test_durations_within_bounds_and_classes_valid():
    g = composed_grammar()
    rng = np.random.default_rng(1)
    for _ in range(200):
        menu, segs = g.sample_segments(120, rng)
        m = g.menus[menu]
        for c, d in segs[:-1]:
            assert m.duration_min[c] <= d <= m.duration_max[c]
        labels = sample_labels(g, 120, rng)
        assert labels.min() >= 0 and labels.max() < 8


def test_empirical_transitions_match_matrix():
    g = composed_grammar(branch_prob=0.3)
    m = g.menus[0]
    rng = np.random.default_rng(2)
    counts = np.zeros((8, 8))
    total = 0
    while total < 10000:
        segs = m.sample_segments(10 ** 6, rng)[:200]
        for (a, _), (b, _) in zip(segs, segs[1:]):
            counts[a, b] += 1
        total += len(segs)
    rows = counts.sum(axis=1)
    freq = counts[rows > 0] / rows[rows > 0, None]
    assert np.max(np.abs(freq - m.transition[rows > 0])) < 0.02


def test_menus_defeat_first_order_prediction():
    g = composed_grammar()
    # after class 2 the next class depends on the menu
    successors = {int(np.argmax(m.transition[2])) for m in g.menus}
    assert len(successors) == 3
    pairs = [(c[i], c[(i + 1) % 5]) for c in MENU_CYCLES for i in range(5)]
    assert len(pairs) == len(set(pairs))


def test_grammar_dict_round_trip(tmp_path):
    for g in (cycle_grammar(4, 3), composed_grammar()):
        write_grammar(tmp_path / "g.json", g)
        back = read_grammar(tmp_path / "g.json")
        assert back.to_dict() == g.to_dict()
    with pytest.raises(ConfigError):
        grammar_from_dict({"classes": ["a", "b"]})
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(FormatError):
        read_grammar(tmp_path / "bad.json")


def test_sample_labels_boundaries_only_at_expiry():
    g = cycle_grammar(3, 5)
    labels = sample_labels(g, 50, np.random.default_rng(0))
    runs = segments(labels)
    assert all(b - a == 5 for a, b, _ in runs)


# ---------------------------------------------------------------- features

def test_zero_noise_gives_prototypes():
    g = cycle_grammar()
    protos = FeaturePrototypes.random(g, 6, 0.0, np.random.default_rng(0))
    labels = np.array([0, 1, 2, 2, 1])
    assert np.array_equal(synth_features(labels, protos, np.random.default_rng(1)),
                          protos.prototypes[labels])


def test_features_deterministic():
    g = cycle_grammar()
    protos = FeaturePrototypes.random(g, 6, 1.0, np.random.default_rng(0))
    labels = np.array([0, 1, 2, 2, 1])
    a = synth_features(labels, protos, np.random.default_rng(5))
    b = synth_features(labels, protos, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_feature_noise_std():
    g = cycle_grammar()
    protos = FeaturePrototypes.random(g, 4, 0.7, np.random.default_rng(0))
    labels = np.zeros(10000, dtype=int)
    f = synth_features(labels, protos, np.random.default_rng(3))
    assert np.all(np.abs(f.std(axis=0, ddof=1) / 0.7 - 1) < 0.05)


def test_feature_label_out_of_range():
    protos = FeaturePrototypes.random(cycle_grammar(), 4, 1.0, np.random.default_rng(0))
    with pytest.raises(ContractError):
        synth_features([0, 3], protos, np.random.default_rng(0))


def test_context_shifts_features_by_menu():
    g = composed_grammar(context_scale=2.0)
    protos = FeaturePrototypes.random(g, 5, 0.0, np.random.default_rng(0))
    f0 = synth_features([1], protos, np.random.default_rng(0), menu=0)
    f1 = synth_features([1], protos, np.random.default_rng(0), menu=1)
    assert np.allclose(f0 - f1, protos.context[0] - protos.context[1])


# ----------------------------------------------------------------- one-hot

def test_one_hot():
    assert one_hot([2], 4).tolist() == [[0, 0, 1, 0]]
    with pytest.raises(ContractError, match="index 1"):
        one_hot([0, 4], 4)


@given(st.lists(st.integers(0, 6), min_size=1, max_size=30))
def test_one_hot_round_trip(labels):
    assert np.argmax(one_hot(labels, 7), axis=-1).tolist() == labels


# -------------------------------------------------------------- corruption

def test_corrupt_identity_at_zero():
    labels = sample_labels(composed_grammar(), 120, np.random.default_rng(0))
    assert np.array_equal(corrupt_labels(labels, 0.0, np.random.default_rng(1), 8), labels)


def test_corrupt_every_segment_at_one():
    labels = sample_labels(composed_grammar(), 120, np.random.default_rng(0))
    out = corrupt_labels(labels, 1.0, np.random.default_rng(1), 8)
    for a, b, lab in segments(labels):
        assert np.all(out[a:b] != lab)


def test_corrupt_probability_range():
    with pytest.raises(ContractError):
        corrupt_labels([0, 1], 1.5, np.random.default_rng(0))
    with pytest.raises(ContractError):
        corrupt_labels([0, 1], -0.1, np.random.default_rng(0))


def test_corrupt_fraction_monte_carlo():
    labels = np.repeat(np.arange(8) % 8, 3)        # 8 segments
    rng = np.random.default_rng(4)
    changed = total = 0
    for _ in range(1250):
        out = corrupt_labels(labels, 0.3, rng, 8)
        for a, b, lab in segments(labels):
            changed += int(out[a] != lab)
            total += 1
    assert total == 10000
    assert abs(changed / total - 0.3) < 0.02


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 1), st.integers(2, 8))
def test_corrupt_preserves_segment_boundaries(seed, p, C):
    g = cycle_grammar(C, 3)
    rng = np.random.default_rng(seed)
    labels = sample_labels(g, 40, rng)
    out = corrupt_labels(labels, p, rng, C)
    assert [(a, b) for a, b, _ in segments(out)] == [(a, b) for a, b, _ in segments(labels)]
    assert out.min() >= 0 and out.max() < C


# -------------------------------------------------------------------- files

@settings(max_examples=25, deadline=None)
@given(st.integers(1, 30), st.integers(1, 10), st.integers(0, 2**31))
def test_features_round_trip(T, D, seed):
    import tempfile
    from pathlib import Path
    x = np.random.default_rng(seed).normal(size=(T, D)).astype(np.float32).astype(np.float64)
    with tempfile.TemporaryDirectory() as d:
        write_features(Path(d) / "f.nmnf", x)
        back = read_features(Path(d) / "f.nmnf")
    assert back.dtype == np.float64
    assert np.array_equal(back, x)


def test_feature_file_layout(tmp_path):
    write_features(tmp_path / "f.nmnf", np.array([[1.0, 2.0, 3.0]]))
    raw = (tmp_path / "f.nmnf").read_bytes()
    assert raw[:4] == b"NMNF"
    assert raw[4:16] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert np.frombuffer(raw[16:], "<f4").tolist() == [1.0, 2.0, 3.0]


def test_feature_format_errors(tmp_path):
    path = tmp_path / "f.nmnf"
    write_features(path, np.ones((2, 3)))
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic.*offset 0"):
        read_features(path)
    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="offset"):
        read_features(path)
    path.write_bytes(raw + b"\0\0\0\0")
    with pytest.raises(FormatError):
        read_features(path)
    path.write_bytes(raw[:10])
    with pytest.raises(FormatError, match="truncated"):
        read_features(path)
    path.write_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError, match="version"):
        read_features(path)


def test_labels_round_trip_and_errors(tmp_path):
    path = tmp_path / "l.labels"
    labels = np.array([0, 3, 3, 7, 1])
    write_labels(path, labels)
    assert path.read_text() == "0\n3\n3\n7\n1\n"
    assert np.array_equal(read_labels(path), labels)
    path.write_text("0\n1\n2")
    with pytest.raises(FormatError, match="newline"):
        read_labels(path)
    path.write_text("0\nx\n")
    with pytest.raises(FormatError, match="line 2"):
        read_labels(path)
    path.write_text("0\n9\n")
    with pytest.raises(FormatError, match="class 9"):
        read_labels(path, num_classes=8)


# ------------------------------------------------------------------ corpora

def test_corpus_deterministic_and_round_trips(tmp_path):
    spec = CorpusSpec(length=30, num_train=4, num_test=3, feature_dim=5)
    a = make_corpus(composed_grammar(), spec, seed=3)
    b = make_corpus(composed_grammar(), spec, seed=3)
    for sa, sb in zip(a.train + a.test, b.train + b.test):
        assert np.array_equal(sa.labels, sb.labels) and np.array_equal(sa.features, sb.features)
    write_corpus(tmp_path / "c", a)
    back = read_corpus(tmp_path / "c")
    assert len(back.train) == 4 and len(back.test) == 3
    for sa, sb in zip(a.train + a.test, back.train + back.test):
        assert np.array_equal(sa.labels, sb.labels) and np.array_equal(sa.features, sb.features)
    assert back.grammar.to_dict() == a.grammar.to_dict()


def test_corpus_errors(tmp_path):
    with pytest.raises(FormatError):
        read_corpus(tmp_path)
    spec = CorpusSpec(length=10, num_train=1, num_test=1, feature_dim=2)
    write_corpus(tmp_path, make_corpus(cycle_grammar(), spec))
    (tmp_path / "train" / "seq_00000.labels").unlink()
    with pytest.raises(FormatError, match="missing label"):
        read_corpus(tmp_path)


def test_folds_are_distinct():
    spec = CorpusSpec(length=20, num_train=2, num_test=1, feature_dim=3)
    folds = make_folds(composed_grammar(), spec, seed=0, num_folds=5)
    assert len(folds) == 5
    assert not np.array_equal(folds[0].train[0].features, folds[1].train[0].features)


def test_composed_grammar_validation():
    with pytest.raises(ConfigError):
        composed_grammar(cycles=((0, 1, 1),))
    with pytest.raises(ConfigError):
        ComposedGrammar([], np.array([]))
