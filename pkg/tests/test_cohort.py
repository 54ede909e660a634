import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopsurv.data import (Cohort, PatientRecord, SurvivalLabel, SynthConfig,
                           assign_bin, discretize_times,
                           generate_synthetic_cohort, load_cohort, save_cohort,
                           split_folds, subsample)
from coopsurv.exceptions import ParseError, ValidationError
from coopsurv.stats import concordance_index


def small_config(**kw):
    base = dict(n_cancer_types=2, patients_per_type=40, gene_dim=20, patch_dim=8,
                vocab_size=16, report_length=8, bag_size_range=(2, 4), seed=7)
    base.update(kw)
    return SynthConfig(**base)


def ridge_probe_corr(features, target):
    X = np.column_stack([np.asarray(features), np.ones(len(features))])
    lam = 1e-3 * len(features)
    w = np.linalg.solve(X.T @ X + lam * np.eye(X.shape[1]), X.T @ target)
    return float(np.corrcoef(X @ w, target)[0, 1])


class TestGenerator:
    def test_determinism_byte_identical(self, tmp_path):
        cfg = small_config()
        a, ta = generate_synthetic_cohort(cfg)
        b, tb = generate_synthetic_cohort(cfg)
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        save_cohort(a, pa)
        save_cohort(b, pb)
        assert pa.read_bytes() == pb.read_bytes()
        assert np.array_equal(ta.true_risk, tb.true_risk)

    def test_zero_censoring_means_all_events(self):
        cohort, _ = generate_synthetic_cohort(small_config(censoring_rate=0.0))
        assert cohort.events().all()

    def test_censoring_rate_calibrated(self):
        cohort, _ = generate_synthetic_cohort(small_config(censoring_rate=0.4))
        assert abs((1.0 - cohort.events().mean()) - 0.4) <= 0.05

    def test_zero_signal_weights_give_null_oracle(self):
        cfg = SynthConfig(n_cancer_types=4, patients_per_type=500,
                          signal_weights=(0.0, 0.0, 0.0), seed=3,
                          gene_dim=12, patch_dim=8, vocab_size=16,
                          report_length=8, bag_size_range=(2, 3))
        cohort, truth = generate_synthetic_cohort(cfg)
        c = concordance_index(truth.true_risk, cohort.times(), cohort.events())
        assert abs(c - 0.5) <= 0.05

    def test_default_config_oracle_concordance(self):
        cohort, truth = generate_synthetic_cohort(SynthConfig(seed=0))
        c = concordance_index(truth.true_risk, cohort.times(), cohort.events())
        assert c >= 0.75

    def test_each_modality_is_informative(self):
        cohort, truth = generate_synthetic_cohort(SynthConfig(seed=5))
        z = truth.true_risk
        feats = {
            "pathology": np.stack([r.pathology.mean(axis=0) for r in cohort.records]),
            "genomics": np.stack([r.genomics for r in cohort.records]),
            "report": np.stack([2.0 * r.report / cohort.vocab_size - 1.0
                                for r in cohort.records]),
        }
        for name, X in feats.items():
            assert ridge_probe_corr(X, z) > 0.3, name

    def test_missing_rates_respected_and_one_modality_kept(self):
        cfg = small_config(patients_per_type=150, missing_rates=(0.4, 0.0, 0.6))
        cohort, _ = generate_synthetic_cohort(cfg)
        miss_p = np.mean([r.pathology is None for r in cohort.records])
        miss_r = np.mean([r.report is None for r in cohort.records])
        assert abs(miss_p - 0.4) < 0.1 and abs(miss_r - 0.6) < 0.1
        assert all(len(r.present_modalities()) >= 1 for r in cohort.records)

    def test_three_droppable_modalities_rejected(self):
        with pytest.raises(ValidationError):
            small_config(missing_rates=(0.1, 0.1, 0.1))

    def test_report_tokens_within_vocab(self):
        cohort, _ = generate_synthetic_cohort(small_config())
        for r in cohort.records:
            assert r.report.min() >= 0 and r.report.max() < cohort.vocab_size


class TestDiscretizeTimes:
    def test_uniform_times_balanced_bins(self):
        times = np.arange(1.0, 101.0)
        edges = discretize_times(times, 4)
        counts = np.bincount([assign_bin(t, edges) for t in times], minlength=5)[1:]
        assert counts.tolist() == [25, 25, 25, 25]

    def test_median_edge_and_assignment_rule(self):
        edges = discretize_times([1.0, 2.0, 3.0, 4.0], 2)
        assert edges[1] == 2.5
        assert [assign_bin(t, edges) for t in (1.0, 2.0, 3.0, 4.0)] == [1, 1, 2, 2]

    def test_boundary_time_goes_to_lower_bin(self):
        edges = np.array([0.0, 2.5, np.inf])
        assert assign_bin(2.5, edges) == 1
        assert assign_bin(2.5000001, edges) == 2

    def test_all_times_equal_is_degenerate(self):
        with pytest.raises(ValidationError):
            discretize_times([5.0] * 10, 2)

    def test_fewer_events_than_bins(self):
        with pytest.raises(ValidationError, match="fewer bins"):
            discretize_times([1.0, 2.0], 4)

    @given(st.lists(st.floats(0.1, 1e5), min_size=8, max_size=60),
           st.integers(2, 4))
    @settings(max_examples=50, deadline=None)
    def test_monotone_assignment(self, times, n_bins):
        try:
            edges = discretize_times(times, n_bins)
        except ValidationError:
            return  # degenerate quantiles are a documented error, not a bug
        ordered = sorted(times)
        bins = [assign_bin(t, edges) for t in ordered]
        assert all(a <= b for a, b in zip(bins, bins[1:]))


def tiny_cohort(times, events, cancers, n_cancer_types=2, bins=None):
    edges = np.array([0.0, float(np.median(times)), np.inf])
    records = []
    for i, (t, e, c) in enumerate(zip(times, events, cancers)):
        k = bins[i] if bins else assign_bin(t, edges)
        records.append(PatientRecord(
            patient_id=f"p{i}", cancer_type=c,
            label=SurvivalLabel(time=float(t), event=bool(e), bin=int(k)),
            genomics=np.zeros(3)))
    return Cohort(records=tuple(records), n_cancer_types=n_cancer_types,
                  bin_edges=edges, gene_dim=3, patch_dim=2, vocab_size=4)


class TestSplitFolds:
    def test_partition_and_balance(self):
        # null signal keeps event rates homogeneous, so every joint stratum
        # is large enough for the (cancer x event) stratification path
        cohort, _ = generate_synthetic_cohort(
            small_config(patients_per_type=50, signal_weights=(0.0, 0.0, 0.0)))
        folds = split_folds(cohort, 5, seed=0)
        all_test = np.concatenate([test for _, test in folds])
        assert sorted(all_test.tolist()) == list(range(len(cohort)))
        global_rate = cohort.events().mean()
        for train, test in folds:
            assert len(test) == 20
            assert np.intersect1d(train, test).size == 0
            fold_rate = cohort.events()[test].mean()
            assert abs(fold_rate - global_rate) <= 0.10

    def test_two_folds_four_records_split_events(self):
        cohort = tiny_cohort([1, 2, 3, 4], [True, True, False, False], [0, 0, 0, 0],
                             n_cancer_types=1)
        folds = split_folds(cohort, 2, seed=1)
        for _, test in folds:
            assert cohort.events()[test].sum() == 1

    def test_same_seed_identical(self):
        cohort, _ = generate_synthetic_cohort(
            small_config(signal_weights=(0.0, 0.0, 0.0)))
        f1 = split_folds(cohort, 4, seed=9)
        f2 = split_folds(cohort, 4, seed=9)
        for (tr1, te1), (tr2, te2) in zip(f1, f2):
            assert np.array_equal(tr1, tr2) and np.array_equal(te1, te2)

    def test_small_stratum_falls_back_with_warning(self):
        # one cancer type has a single event: joint stratum < k_folds
        cohort = tiny_cohort([1, 2, 3, 4, 5, 6, 7, 8],
                             [True, False, False, False, True, True, False, True],
                             [0, 0, 0, 0, 1, 1, 1, 1])
        with pytest.warns(UserWarning, match="cancer-only"):
            folds = split_folds(cohort, 2, seed=0)
        all_test = np.concatenate([t for _, t in folds])
        assert sorted(all_test.tolist()) == list(range(8))


class TestSubsample:
    def test_identity_fraction(self):
        cohort, _ = generate_synthetic_cohort(small_config())
        assert subsample(cohort, 1.0, seed=0) is cohort

    def test_half_of_200(self):
        cohort, _ = generate_synthetic_cohort(small_config(patients_per_type=100))
        assert len(subsample(cohort, 0.5, seed=0)) == 100

    def test_event_rate_preserved(self):
        cohort, _ = generate_synthetic_cohort(
            SynthConfig(n_cancer_types=4, patients_per_type=250, seed=2,
                        gene_dim=10, patch_dim=6, vocab_size=16,
                        report_length=6, bag_size_range=(2, 3)))
        sub = subsample(cohort, 0.5, seed=3)
        assert abs(sub.events().mean() - cohort.events().mean()) <= 0.10

    def test_out_of_range_fraction(self):
        cohort, _ = generate_synthetic_cohort(small_config())
        with pytest.raises(ValidationError):
            subsample(cohort, 0.0, seed=0)
        with pytest.raises(ValidationError):
            subsample(cohort, 1.2, seed=0)

    def test_deterministic(self):
        cohort, _ = generate_synthetic_cohort(small_config())
        a = subsample(cohort, 0.4, seed=5)
        b = subsample(cohort, 0.4, seed=5)
        assert [r.patient_id for r in a.records] == [r.patient_id for r in b.records]


class TestCohortIO:
    def test_round_trip_bit_exact(self, tmp_path):
        cohort, _ = generate_synthetic_cohort(small_config(missing_rates=(0.3, 0.0, 0.0)))
        path = tmp_path / "cohort.json"
        save_cohort(cohort, path)
        loaded = load_cohort(path)
        assert loaded.n_cancer_types == cohort.n_cancer_types
        assert np.array_equal(loaded.bin_edges, cohort.bin_edges)
        for a, b in zip(loaded.records, cohort.records):
            assert a.patient_id == b.patient_id
            assert a.label == b.label
            for m in ("pathology", "genomics", "report"):
                va, vb = getattr(a, m), getattr(b, m)
                assert (va is None) == (vb is None)
                if va is not None:
                    assert np.array_equal(va, vb)

    def test_truncated_file_is_parse_error(self, tmp_path):
        cohort, _ = generate_synthetic_cohort(small_config())
        path = tmp_path / "cohort.json"
        save_cohort(cohort, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(ParseError):
            load_cohort(path)

    def test_zero_modality_record_names_patient(self, tmp_path):
        cohort, _ = generate_synthetic_cohort(small_config())
        path = tmp_path / "cohort.json"
        save_cohort(cohort, path)
        doc = json.loads(path.read_text())
        doc["records"][3]["pathology"] = None
        doc["records"][3]["genomics"] = None
        doc["records"][3]["report"] = None
        pid = doc["records"][3]["patient_id"]
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match=pid):
            load_cohort(path)

    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text(json.dumps({"format": "something-else"}))
        with pytest.raises(ParseError):
            load_cohort(path)
