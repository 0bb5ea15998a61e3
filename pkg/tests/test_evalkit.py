import json
import math

import numpy as np
import pytest

from fluorotrack.evalkit import (
    MetricsReport,
    aggregate,
    error_histogram,
    match_instances,
    render_table,
    sequence_rmse,
)


def rmse_oracle(pred, gt, spacing):
    """Loop oracle with explicit greedy frame-0 matching."""
    n, k, _ = gt.shape
    first = next(t for t in range(n) if not any(math.isnan(gt[t, i, j]) for i in range(k) for j in range(2)))
    taken, order = set(), [0] * k
    for i in range(k):
        best = None
        for j in range(k):
            if j in taken:
                continue
            d = (pred[first, j, 0] - gt[first, i, 0]) ** 2 + (pred[first, j, 1] - gt[first, i, 1]) ** 2
            if best is None or d < best[0]:
                best = (d, j)
        order[i] = best[1]
        taken.add(best[1])
    total, count = 0.0, 0
    for t in range(n):
        if any(math.isnan(gt[t, i, j]) for i in range(k) for j in range(2)):
            continue
        for i in range(k):
            j = order[i]
            total += (pred[t, j, 0] - gt[t, i, 0]) ** 2 + (pred[t, j, 1] - gt[t, i, 1]) ** 2
            count += 1
    return math.sqrt(total / count) * spacing


def test_rmse_zero_for_exact_prediction():
    gt = np.random.default_rng(0).random((8, 2, 2)) * 50
    assert sequence_rmse(gt, gt, 0.2) == 0.0


def test_rmse_three_four_five_offset():
    gt = np.zeros((10, 1, 2)) + 20.0
    pred = gt + np.array([3.0, 4.0])
    assert sequence_rmse(pred, gt, 0.2) == 1.0  # 5 px * 0.2 mm/px, exactly


def test_rmse_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for k in (1, 2):
        gt = rng.random((10, k, 2)) * 64
        pred = gt + rng.normal(0, 2, size=gt.shape)
        got = sequence_rmse(pred, gt, 0.2)
        want = rmse_oracle(pred, gt, 0.2)
        assert abs(got - want) <= 1e-12 * max(want, 1.0)


def test_rmse_ignores_unannotated_frames():
    rng = np.random.default_rng(2)
    gt = rng.random((6, 1, 2)) * 32
    pred = gt.copy()
    gt_sparse = gt.copy()
    gt_sparse[3] = np.nan
    pred[3] = 999.0  # wild prediction on the unannotated frame must not count
    assert sequence_rmse(pred, gt_sparse, 0.2) == 0.0


def test_rmse_instance_matching_fixed_after_frame0():
    gt = np.zeros((4, 2, 2))
    gt[:, 0] = [10.0, 10.0]
    gt[:, 1] = [40.0, 40.0]
    pred = gt[:, ::-1].copy()  # swapped instance order throughout
    assert sequence_rmse(pred, gt, 1.0) == 0.0


def test_rmse_rejects_empty_overlap():
    gt = np.full((3, 1, 2), np.nan)
    with pytest.raises(ValueError, match="annotated"):
        sequence_rmse(np.zeros((3, 1, 2)), gt, 0.2)


def test_match_instances_greedy():
    gt0 = np.array([[0.0, 0.0], [10.0, 0.0]])
    pred0 = np.array([[9.0, 1.0], [1.0, 1.0]])
    assert list(match_instances(pred0, gt0)) == [1, 0]


def test_aggregate_single_value():
    report = aggregate([1.5])
    assert report.mean == report.median == report.max == 1.5
    assert report.std == 0.0


def test_aggregate_reference_values():
    report = aggregate([1.0, 2.0, 3.0])
    assert report.mean == 2.0 and report.median == 2.0 and report.max == 3.0
    assert report.std == pytest.approx(math.sqrt(2.0 / 3.0), rel=1e-12)


def test_aggregate_matches_loop_oracle():
    rng = np.random.default_rng(3)
    values = list(rng.random(100) * 5)
    report = aggregate(values)
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    ordered = sorted(values)
    median = (ordered[49] + ordered[50]) / 2
    assert abs(report.mean - mean) <= 1e-12
    assert abs(report.std - math.sqrt(var)) <= 1e-12
    assert abs(report.median - median) <= 1e-12
    assert report.max == max(values)
    assert report.max >= report.mean >= 0
    assert min(values) <= report.median <= max(values)


def test_aggregate_rejects_empty():
    with pytest.raises(ValueError):
        aggregate([])


def test_report_json_round_trip():
    report = aggregate([0.5, 1.5, 2.0], split="with_occlusion", fps=30.5,
                       config_hash="abc123", init_mode="auto",
                       sequence_names=["a", "b", "c"])
    once = MetricsReport.from_json(report.to_json())
    twice = MetricsReport.from_json(once.to_json())
    assert once == twice == report
    assert json.loads(report.to_json()) == json.loads(twice.to_json())


def test_render_table_alignment():
    rows = [{"split": "all", "mean": 1.23456, "max": 9.9},
            {"split": "with_occlusion", "mean": 2.0, "max": 12.25}]
    text = render_table(rows, ["split", "mean", "max"])
    lines = text.splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("split")
    assert "1.235" in lines[2] and "12.250" in lines[3]
    assert len({len(l) for l in lines[2:]}) == 1  # aligned columns


def test_error_histogram_bins():
    errors = [0.1, 0.2, 0.3, 1.0, 1.1]
    bins = error_histogram(errors, bins=5)
    assert sum(b["count"] for b in bins) == len(errors)
    assert bins[0]["bin_left"] == pytest.approx(0.1)
    assert bins[-1]["bin_right"] == pytest.approx(1.1)
    assert error_histogram([], bins=5) == []
