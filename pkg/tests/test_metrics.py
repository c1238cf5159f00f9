import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vehicle_color import metrics as M
from vehicle_color import model
from vehicle_color.data import CLASS_NAMES, ArrayImageSet
from vehicle_color.errors import DatasetError
from vehicle_color.ppm import read_image

labels_and_preds = st.integers(1, 200).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 7), min_size=n, max_size=n),
        st.lists(st.integers(0, 7), min_size=n, max_size=n),
    )
)


def test_perfect_predictor():
    y = np.repeat(np.arange(8), 3)
    r = M.report_from_predictions(y, y)
    np.testing.assert_array_equal(r.confusion, 100 * np.eye(8))
    np.testing.assert_array_equal(r.per_class_accuracy, 1.0)
    assert r.overall_average == r.overall_accuracy == 1.0


def test_constant_predictor():
    y = np.repeat(np.arange(8), [5, 1, 2, 3, 4, 5, 6, 7])
    r = M.report_from_predictions(y, np.zeros_like(y))
    assert r.counts[:, 0].sum() == len(y) and r.counts[:, 1:].sum() == 0
    np.testing.assert_array_equal(r.per_class_accuracy, [1, 0, 0, 0, 0, 0, 0, 0])
    assert r.overall_average == pytest.approx(1 / 8)
    assert r.overall_accuracy == pytest.approx(5 / len(y))


@settings(max_examples=80, deadline=None)
@given(labels_and_preds)
def test_confusion_integrity(pair):
    y, p = map(np.array, pair)
    r = M.report_from_predictions(y, p)
    assert r.n_examples == len(y)
    present = r.counts.sum(axis=1) > 0
    np.testing.assert_allclose(r.confusion.sum(axis=1)[present], 100.0, atol=0.01)
    np.testing.assert_allclose(np.diag(r.confusion), 100 * r.per_class_accuracy, atol=0.01)


@settings(max_examples=40, deadline=None)
@given(labels_and_preds, st.randoms(use_true_random=False))
def test_accuracy_invariant_to_shuffling(pair, rnd):
    y, p = map(np.array, pair)
    order = list(range(len(y)))
    rnd.shuffle(order)
    a = M.report_from_predictions(y, p)
    b = M.report_from_predictions(y[order], p[order])
    np.testing.assert_array_equal(a.counts, b.counts)


def test_empty_split_is_error():
    with pytest.raises(DatasetError):
        M.report_from_predictions([], [])


def test_reference_table_average_is_weighted():
    # The printed average is not the plain mean of the printed column.
    rgb = M.REFERENCE_ACCURACY["rgb"]
    assert np.mean(list(rgb.values())) == pytest.approx(0.93769, abs=1e-5)
    assert M.REFERENCE_AVERAGE["rgb"] == 0.9447


def test_evaluate_is_deterministic():
    spec = model.NetworkSpec.tiny()
    state = model.build(spec, seed=0)
    rng = np.random.default_rng(0)
    images = ArrayImageSet(rng.uniform(0, 255, (10, 3, 40, 40)), np.arange(10) % 8)
    mean = np.full((3, 40, 40), 128, np.float32)
    a = M.evaluate(state, images, mean, batch_size=3)
    b = M.evaluate(state, images, mean, batch_size=7)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert a.n_examples == 10


def test_time_repeated():
    calls = []
    samples = M.time_repeated(lambda: calls.append(1), 1)
    assert len(samples) == 1 and len(calls) == 1
    samples = M.time_repeated(lambda: calls.append(1), 5)
    assert len(samples) == 4
    with pytest.raises(ValueError):
        M.time_repeated(lambda: None, 0)


def test_bench_inference():
    state = model.build(model.NetworkSpec.tiny(), seed=0)
    x = np.zeros((1, 3, 35, 35), np.float32)
    t = M.bench_inference(lambda: (state, None), x, repetitions=4)
    assert t.n_samples == 3 and t.threads >= 1
    assert t.mean_exec_seconds >= t.min_exec_seconds > 0
    assert t.init_seconds >= 0
    text = M.format_timing(t)
    assert "3.248" in text and "Execution time" in text


def test_outputs(tmp_path):
    y = np.repeat(np.arange(8), 4)
    p = y.copy()
    p[::3] = 0
    r = M.report_from_predictions(y, p)
    table = M.format_table(r, "rgb")
    assert "0.9447" in table and "average" in table
    assert table.index("yellow") < table.index("white") < table.index("green")
    M.write_report(r, tmp_path / "out")
    rows = list(csv.reader(open(tmp_path / "out" / "per_class_accuracy.csv")))
    assert rows[0] == ["class", "n", "accuracy"] and len(rows) == 11
    conf = list(csv.reader(open(tmp_path / "out" / "confusion_percent.csv")))
    assert conf[0][1:] == list(CLASS_NAMES)
    assert sum(float(v) for v in conf[1][1:]) == pytest.approx(100, abs=0.01)
    heat = read_image(tmp_path / "out" / "confusion.ppm")
    assert heat.shape == (3, 8 * 24, 8 * 24)
    # Class 0 is always right (every miss predicts 0): darkest cell. Empty cells are white.
    assert heat[:, 5, 5].tolist() == [8, 48, 107]
    assert heat[:, 5, 24 * 7 + 5].tolist() == [255, 255, 255]
    assert (tmp_path / "out" / "report.txt").read_text().startswith("   class")
