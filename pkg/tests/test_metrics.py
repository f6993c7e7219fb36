import json

import numpy as np
import pytest

from uanll.metrics import (
    MetricsReport,
    accuracy,
    ece,
    ece_bin_stats,
    ece_from_stats,
    make_report,
    write_report_json,
)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_none_correct(self):
        assert accuracy([0, 0], [1, 1]) == 0.0

    def test_three_of_four(self):
        assert accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            accuracy([], [])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            accuracy([1], [1, 2])

    def test_permutation_invariance(self, rng):
        preds = rng.integers(0, 4, size=50)
        labels = rng.integers(0, 4, size=50)
        perm = rng.permutation(50)
        assert accuracy(preds, labels) == accuracy(preds[perm], labels[perm])


class TestEce:
    def test_perfect_calibration(self):
        assert ece([1.0, 1.0, 1.0], [True, True, True], bins=32) == 0.0

    def test_two_sample_hand_case(self):
        # both land in one bin: |acc 0.5 - conf 0.8| = 0.3
        assert ece([0.8, 0.8], [True, False], bins=32) == pytest.approx(0.3, abs=1e-15)
        assert ece([0.8, 0.8], [True, False], bins=1) == pytest.approx(0.3, abs=1e-15)

    def test_bin_edges(self):
        # right-inclusive bins: 0.0 -> bin 0; an exact edge b/B -> bin b-1
        stats = ece_bin_stats([0.0, 0.25, 0.2500000001, 1.0], [1, 1, 1, 1], bins=4)
        assert stats[0].count == 2  # 0.0 and 0.25
        assert stats[1].count == 1  # just above the edge
        assert stats[3].count == 1  # 1.0

    def test_single_bin_identity(self, rng):
        conf = rng.uniform(0.0, 1.0, size=200)
        correct = rng.random(200) < conf
        expected = abs(np.mean(correct) - conf.mean())
        assert ece(conf, correct, bins=1) == pytest.approx(expected, abs=1e-12)

    def test_within_unit_interval(self, rng):
        for _ in range(10):
            conf = rng.uniform(0, 1, size=100)
            correct = rng.random(100) < 0.5
            v = ece(conf, correct, bins=32)
            assert 0.0 <= v <= 1.0

    def test_permutation_invariance(self, rng):
        conf = rng.uniform(0, 1, size=64)
        correct = rng.random(64) < 0.7
        perm = rng.permutation(64)
        # summation order inside a bin may differ by ulps
        assert ece(conf, correct, bins=16) == pytest.approx(
            ece(conf[perm], correct[perm], bins=16), abs=1e-12
        )

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            ece([1.2], [True], bins=4)
        with pytest.raises(ValueError):
            ece([-0.1], [True], bins=4)

    def test_bad_bins(self):
        with pytest.raises(ValueError):
            ece([0.5], [True], bins=0)

    def test_recomputable_from_bin_stats(self, rng):
        conf = rng.uniform(0, 1, size=128)
        correct = rng.random(128) < conf
        stats = ece_bin_stats(conf, correct, bins=32)
        assert ece_from_stats(stats) == ece(conf, correct, bins=32)
        assert sum(b.count for b in stats) == 128


class TestReport:
    def test_make_report(self, rng):
        preds = [0, 1, 1, 0]
        labels = [0, 1, 0, 0]
        conf = [0.9, 0.8, 0.6, 0.7]
        report = make_report(preds, labels, conf, "single-view", bins=8)
        assert report.accuracy == 0.75
        assert report.method_tag == "single-view"
        assert sum(b.count for b in report.bin_stats) == 4

    def test_json_schema(self, tmp_path):
        report = make_report([0], [0], [0.5], "MVM", bins=2)
        path = tmp_path / "report.json"
        write_report_json([report], path)
        payload = json.loads(path.read_text())
        assert payload[0]["method"] == "MVM"
        assert set(payload[0]) == {"method", "accuracy", "ece", "bins"}
        assert set(payload[0]["bins"][0]) == {"lo", "hi", "count", "conf", "acc"}
