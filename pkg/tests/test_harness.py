import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from memforecast import numerics as nx
from memforecast.errors import ConfigError, FormatError, ProtocolError, TrainingError
from memforecast.forecaster import (ForecasterConfig, RolloutPolicy, build_ablation,
                                    initial_state, observe, rollout)
from memforecast.harness.config import ExperimentConfig, load_config
from memforecast.harness.evaluation import (CSV_HEADER, EvalReport, EvalRow,
                                            corruption_transform, evaluate, read_csv,
                                            write_csv, write_summary)
from memforecast.harness.runners import run_ablations, run_sensitivity
from memforecast.harness.training import (Adam, TrainConfig, clip_by_global_norm,
                                          make_batches, train)
from memforecast.memory import MemoryConfig
from memforecast.protocol import EvalProtocol, frame_accuracy, macro_accuracy, windows
from memforecast.synthdata import (CorpusSpec, Sample, composed_grammar, cycle_grammar,
                                   make_corpus, one_hot)


def tiny(C=3, D=4, **kw):
    return ForecasterConfig(num_classes=C, feature_dim=D, hidden_visual=4, hidden_label=3,
                            mem_visual=MemoryConfig(2, 4), mem_label=MemoryConfig(2, 3),
                            decoder_hidden=4, **kw)


@pytest.fixture(scope="module")
def small_corpus():
    return make_corpus(cycle_grammar(3, 4), CorpusSpec(length=20, num_train=6, num_test=5,
                                                       feature_dim=4), seed=0)


# ----------------------------------------------------------------- protocol

def test_windows_examples():
    o, p = windows(100, 0.2, 0.5)
    assert (o.start, o.stop, p.start, p.stop) == (0, 20, 20, 70)
    o, p = windows(100, 0.3, 0.1)
    assert (o.stop, p.start, p.stop) == (30, 30, 40)
    with pytest.raises(ProtocolError):
        windows(7, 0.3, 0.1)


def test_windows_clamps_observed():
    o, p = windows(4, 0.2, 0.5)
    assert len(o) == 1 and list(p) == [1, 2]


@given(st.integers(1, 500), st.floats(0.01, 0.6), st.floats(0.01, 0.4))
def test_windows_disjoint_and_in_bounds(T, obs, pred):
    try:
        o, p = windows(T, obs, pred)
    except ProtocolError:
        assert math.floor(pred * T + 1e-9) < 1 or max(1, math.floor(obs * T + 1e-9)) + math.floor(pred * T + 1e-9) > T
        return
    assert len(o) >= 1 and len(p) >= 1
    assert o.stop == p.start and p.stop <= T
    assert windows(T, obs, pred) == (o, p)


def test_frame_accuracy_examples():
    assert frame_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert frame_accuracy([1, 1, 2], [1, 2, 2]) == pytest.approx(2 / 3)
    assert frame_accuracy([0, 0], [1, 1]) == 0.0
    with pytest.raises(Exception):
        frame_accuracy([1], [1, 2])
    with pytest.raises(Exception):
        frame_accuracy([], [])


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=40))
def test_frame_accuracy_range(pairs):
    a, b = zip(*pairs)
    acc = frame_accuracy(a, b)
    assert 0.0 <= acc <= 1.0
    assert (acc == 1.0) == (list(a) == list(b))


def test_macro_accuracy():
    assert macro_accuracy([0, 0, 0, 1], [0, 0, 1, 1]) == pytest.approx((1.0 + 0.5) / 2)


def test_protocol_validation():
    assert len(EvalProtocol().cells()) == 8
    with pytest.raises(ConfigError):
        EvalProtocol([0.6], [0.5])
    with pytest.raises(ConfigError):
        EvalProtocol([0.0], [0.5])


# ----------------------------------------------------------------- training

def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(clip_norm=0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": 2, "momentum": 0.9})


def test_clip_by_global_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    clipped, before, after = clip_by_global_norm(g, 1.0)
    assert before == pytest.approx(5.0)
    assert after <= 1.0 + 1e-9
    assert np.allclose(clipped["a"], [0.6, 0.0])
    same, b2, a2 = clip_by_global_norm(g, 10.0)
    assert same["a"] is g["a"] and b2 == a2


def test_adam_first_step_moves_by_lr():
    p = nx.Tensor(np.array([1.0, -2.0]))
    opt = Adam({"p": p}, lr=0.1)
    opt.step({"p": np.array([0.5, -3.0])})
    assert np.allclose(p.data, [0.9, -1.9], atol=1e-6)


def test_make_batches_groups_equal_lengths():
    samples = [Sample(np.zeros(n, int), np.zeros((n, 2))) for n in (5, 5, 6, 5, 6)]
    batches = make_batches(samples, 2, np.random.default_rng(0))
    assert sum(b.labels.shape[0] for b in batches) == 5
    assert all(b.labels.shape[1] in (5, 6) for b in batches)


def test_training_is_deterministic(small_corpus):
    cfg = TrainConfig(epochs=2, batch_size=3, seed=4)
    a = train(build_ablation("full", tiny(), 1), small_corpus.train, cfg)
    b = train(build_ablation("full", tiny(), 1), small_corpus.train, cfg)
    assert a.losses == b.losses
    assert a.model.params.checksum() == b.model.params.checksum()


def test_zero_learning_rate_leaves_parameters(small_corpus):
    m = build_ablation("full", tiny(), 2)
    before = m.params.checksum()
    train(m, small_corpus.train, TrainConfig(epochs=2, learning_rate=0.0, batch_size=3))
    assert m.params.checksum() == before


def test_clipping_holds_every_step(small_corpus):
    res = train(build_ablation("e", tiny(), 0), small_corpus.train,
                TrainConfig(epochs=2, batch_size=2, clip_norm=0.05, learning_rate=1e-2))
    assert res.grad_norms
    assert all(after <= 0.05 + 1e-9 for _, after in res.grad_norms)
    assert any(before > 0.05 for before, _ in res.grad_norms)


def test_non_finite_loss_reports_epoch_and_step(small_corpus):
    m = build_ablation("b", tiny(), 0)
    m.params.head.bias.data[:] = [np.inf, 0.0, 0.0]
    with pytest.raises(TrainingError) as info, np.errstate(invalid="ignore"):
        train(m, small_corpus.train, TrainConfig(epochs=1, batch_size=3))
    assert info.value.epoch == 0 and info.value.step == 0


def test_training_reduces_loss(small_corpus):
    res = train(build_ablation("full", tiny(), 0), small_corpus.train,
                TrainConfig(epochs=40, batch_size=2, learning_rate=1e-2))
    assert res.losses[0] == pytest.approx(math.log(3), abs=0.3)
    assert res.losses[-1] < 0.5 * res.losses[0]


def test_train_rejects_mismatched_data(small_corpus):
    with pytest.raises(ConfigError):
        train(build_ablation("a", tiny(D=5), 0), small_corpus.train, TrainConfig(epochs=1))


# --------------------------------------------------------------- evaluation

def _constant_test_set(n=6, T=20, D=4):
    return [Sample(np.zeros(T, int), np.zeros((T, D))) for _ in range(n)]


def test_evaluate_oracle_scores_one():
    m = build_ablation("full", tiny(), 0)
    m.params.head.weight.data[:] = 0.0
    m.params.head.bias.data[:] = [50.0, 0.0, 0.0]
    report = evaluate(m, _constant_test_set())
    assert len(report.rows) == 8
    assert all(r.accuracy == 1.0 and r.num_sequences == 6 for r in report.rows)


def test_uniform_random_rollout_near_chance():
    C = 4
    m = build_ablation("b", tiny(C=C), 0)
    m.params.head.weight.data[:] = 0.0
    m.params.head.bias.data[:] = 0.0
    corpus = make_corpus(composed_grammar(4, cycles=((0, 1, 2, 3),)),
                         CorpusSpec(length=40, num_train=0, num_test=60, feature_dim=4), seed=1)
    policy = RolloutPolicy("sampled", seed=2)
    accs = []
    for s in corpus.test:
        o, p = windows(len(s), 0.3, 0.5)
        st_ = observe(m.params, s.features[:len(o)], one_hot(s.labels[:len(o)], C), initial_state(m.params))
        pred = [c for _, c in rollout(m.params, st_, s.labels[len(o) - 1], len(p), policy)]
        accs.append(frame_accuracy(pred, s.labels[p.start:p.stop]))
    assert abs(np.mean(accs) - 1 / C) < 0.05


def test_evaluate_does_not_mutate_parameters(small_corpus):
    m = build_ablation("full", tiny(), 3)
    before = m.params.checksum()
    evaluate(m, small_corpus.test)
    assert m.params.checksum() == before


def test_evaluate_skips_and_fails_when_everything_is_skipped(caplog):
    m = build_ablation("a", tiny(), 0)
    short = [Sample(np.zeros(7, int), np.zeros((7, 4)))]
    with pytest.raises(ProtocolError):
        evaluate(m, short, EvalProtocol([0.3], [0.1]))
    mixed = short + _constant_test_set(1)
    report = evaluate(m, mixed, EvalProtocol([0.3], [0.1]))
    assert report.rows[0].num_sequences == 1
    assert "skipped 1" in caplog.text


def test_batched_evaluation_matches_one_at_a_time(small_corpus):
    m = build_ablation("full", tiny(), 5)
    a = evaluate(m, small_corpus.test, batch_size=64)
    b = evaluate(m, small_corpus.test, batch_size=1)
    assert [r.accuracy for r in a.rows] == [r.accuracy for r in b.rows]


def test_persisted_memory_changes_evaluation(small_corpus):
    m = build_ablation("full", tiny(persist_memory=True), 5)
    plain = build_ablation("full", tiny(), 5)
    evaluate(m, small_corpus.test)
    assert m.carried == {}
    assert m.params.checksum() == plain.params.checksum()


def test_corruption_transform_identity_and_reproducible():
    labels = np.repeat([0, 1, 2, 0], 3)
    ident = corruption_transform(0.0, 1, 3)
    assert np.array_equal(ident(labels, 0), labels)
    t = corruption_transform(0.5, 1, 8)
    assert np.array_equal(t(labels, 3), t(labels, 3))


# ------------------------------------------------------------------ reports

def test_csv_header_round_trip_and_append(tmp_path):
    rows = [EvalRow("full", 1, 0.3, 0.5, 0.75, 50), EvalRow("a", 0, 0.2, 0.1, 0.5, 50)]
    path = tmp_path / "r.csv"
    write_csv(path, EvalReport(rows))
    text = path.read_text().splitlines()
    assert text[0] == "variant,seed,observed_frac,predicted_frac,accuracy,num_sequences"
    assert text[1].startswith("a,0,")                       # sorted
    write_csv(path, EvalReport(rows[:1]))
    back = read_csv(path)
    assert len(back.rows) == 3
    assert back.rows[0].accuracy == 0.5


def test_csv_format_errors(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("variant,seed\nx,1\n")
    with pytest.raises(FormatError):
        read_csv(path)
    with pytest.raises(FormatError):
        write_csv(path, EvalReport([EvalRow("a", 0, 0.3, 0.5, 1.0, 1)]))
    path.write_text(",".join(CSV_HEADER) + "\na,zero,0.3,0.5,1.0,1\n")
    with pytest.raises(FormatError, match="line 2"):
        read_csv(path)


def test_summary_has_macro_accuracy(tmp_path):
    report = EvalReport([EvalRow("a", 0, 0.3, 0.5, 0.5, 3, 0.25)], {"num_parameters": {"a": 10}})
    write_summary(tmp_path / "s.json", report)
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["rows"][0]["macro_accuracy"] == 0.25
    assert doc["meta"]["num_parameters"] == {"a": 10}


def test_mean_accuracy_and_cell_lookup():
    r = EvalReport([EvalRow("a", s, 0.3, 0.5, acc, 1) for s, acc in enumerate([0.2, 0.4])])
    assert r.mean_accuracy("a", 0.3, 0.5) == pytest.approx(0.3)
    with pytest.raises(KeyError):
        r.mean_accuracy("b", 0.3, 0.5)


# ------------------------------------------------------------------ runners

@pytest.fixture(scope="module")
def ablation(small_corpus):
    return run_ablations(small_corpus, tiny(), TrainConfig(epochs=1, batch_size=6),
                         seeds=(0, 1))


def test_ablation_report_shape(ablation):
    rows = ablation.report.rows
    assert len(rows) == 12
    assert {r.variant for r in rows} == {"a", "b", "c", "d", "e", "full"}
    assert all((r.observed_frac, r.predicted_frac) == (0.3, 0.5) for r in rows)
    assert rows == sorted(rows, key=EvalRow.sort_key)


def test_ablation_logs_parameter_counts(ablation):
    counts = ablation.report.meta["num_parameters"]
    assert counts["a"] < counts["full"]
    assert set(counts) == {"a", "b", "c", "d", "e", "full"}


def test_ablation_parallel_matches_serial(small_corpus, ablation):
    par = run_ablations(small_corpus, tiny(), TrainConfig(epochs=1, batch_size=6),
                        variants=("a", "full"), seeds=(0, 1), jobs=2)
    serial = [r for r in ablation.report.rows if r.variant in ("a", "full")]
    assert [r.accuracy for r in par.report.rows] == [r.accuracy for r in serial]


def test_sensitivity_rows_and_identity(small_corpus, ablation):
    models = [ablation.runs[("full", s)].model for s in (0, 1)]
    report = run_sensitivity(small_corpus, models, levels=(0.0, 0.1, 0.3))
    assert len(report.rows) == 6
    assert {r.variant for r in report.rows} == {"full/p=0", "full/p=0.1", "full/p=0.3"}
    for m in models:
        clean = evaluate(m, small_corpus.test, EvalProtocol([0.3], [0.5]))
        p0 = [r for r in report.rows if r.variant == "full/p=0" and r.seed == m.seed]
        assert p0[0].accuracy == clean.rows[0].accuracy


# ------------------------------------------------------------------- config

def test_config_defaults_and_strictness(tmp_path):
    cfg = load_config(None)
    assert cfg.train.learning_rate == 1e-3 and cfg.experiment.seeds == [0, 1, 2]
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"epochs": 3}, "model": {"hidden_label": 8,
                                "mem_label": {"slots": 4, "slot_dim": 8}}}))
    cfg = load_config(path)
    assert cfg.train.epochs == 3
    mc = cfg.model.resolve(8, 16)
    assert mc.hidden_label == 8 and mc.mem_label == MemoryConfig(4, 8)
    for bad in ({"training": {}}, {"train": {"epoch": 3}}, {"model": {"mem_label": {"slots": 2}}},
                {"experiment": {"variants": ["z"]}}):
        path.write_text(json.dumps(bad))
        with pytest.raises(ConfigError):
            load_config(path).model.resolve(8, 16)
    path.write_text("{")
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_round_trip():
    cfg = ExperimentConfig()
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).to_dict() == cfg.to_dict()
