import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import seqrisk.features as ft
from seqrisk.errors import ConfigError, DataIntegrityError, SchemaError


def events_frame(rows):
    return pd.DataFrame(rows, columns=["patient_id", "date", "code", "code_type"])


class TestGroupCode:
    def test_subcode_collapses_to_root(self):
        assert ft.group_code("X.43", "DX") == "X"
        assert ft.group_code("X.1", "DX") == "X"
        assert ft.group_code("X", "DX") == "X"

    def test_root_unchanged(self):
        assert ft.group_code("428", "DX") == "428"

    def test_procedure_codes_pass_through(self):
        assert ft.group_code("99214", "PX") == "99214"
        assert ft.group_code("99214.1", "PX") == "99214.1"

    def test_empty_code_rejected(self):
        with pytest.raises(SchemaError):
            ft.group_code("", "DX")


class TestObservationWindow:
    def test_horizons(self):
        assert ft.ObservationWindow.of("M24").horizon_months == 21
        assert ft.ObservationWindow.of("M24", "M18").horizon_months == 15
        assert ft.ObservationWindow.of("M24", "M18", "M12").horizon_months == 9
        assert ft.FULL_WINDOW.horizon_months == 3

    def test_parse(self):
        assert ft.ObservationWindow.parse("24,18").slices == ("M24", "M18")

    def test_non_prefix_rejected(self):
        with pytest.raises(ConfigError):
            ft.ObservationWindow.of("M18", "M12")
        with pytest.raises(ConfigError):
            ft.ObservationWindow.of("M6")

    def test_slice_ranges_disjoint_cover(self):
        # slices tile days [92, 821]; [0, 91] is the buffer
        edges = [ft.slice_day_range(s) for s in ("M6", "M12", "M18", "M24")]
        assert edges[0][0] == 92
        for (lo1, hi1), (lo2, _) in zip(edges, edges[1:]):
            assert lo2 == hi1 + 1
        assert edges[-1][1] == 821


class TestSliceEvents:
    INDEX = "2016-01-01"

    def one(self, days_before, code="401", code_type="DX"):
        d = pd.Timestamp(self.INDEX) - pd.Timedelta(days=days_before)
        return events_frame([("P0", d.strftime("%Y-%m-%d"), code, code_type)])

    def test_ten_months_before_lands_in_m12(self):
        out = ft.slice_events(self.one(304), self.INDEX)
        assert out["M12"] == {("DX", "401"): 1}
        assert not out["M6"] and not out["M18"] and not out["M24"]

    def test_buffer_event_dropped(self):
        out = ft.slice_events(self.one(61), self.INDEX)  # ~2 months
        assert all(not v for v in out.values())

    def test_beyond_span_dropped(self):
        out = ft.slice_events(self.one(852), self.INDEX)  # ~28 months
        assert all(not v for v in out.values())

    def test_event_after_index_is_integrity_error(self):
        with pytest.raises(DataIntegrityError):
            ft.slice_events(self.one(-1), self.INDEX)

    def test_counts_accumulate_per_grouped_code(self):
        ev = pd.concat([self.one(300, "401.1"), self.one(310, "401.9"), self.one(300, "250")])
        out = ft.slice_events(ev, self.INDEX)
        assert out["M12"][("DX", "401")] == 2
        assert out["M12"][("DX", "250")] == 1

    def test_partition_property(self):
        # sliced + dropped = total, for a spread of offsets
        offsets = [0, 50, 91, 92, 200, 456, 457, 821, 822, 900]
        ev = pd.concat([self.one(d) for d in offsets])
        out = ft.slice_events(ev, self.INDEX)
        sliced = sum(sum(c.values()) for c in out.values())
        in_span = sum(1 for d in offsets if 92 <= d <= 821)
        assert sliced == in_span


class TestVocabulary:
    def test_variance_worked_example(self):
        assert ft.concept_variance([5], 4) == pytest.approx(4.6875)
        totals = pd.DataFrame(
            [("DX", "A", "P3", 5)], columns=["code_type", "code", "patient_id", "total"]
        )
        vocab = ft.build_vocabulary(totals, n_patients=4, threshold=1.0)
        assert vocab.codes == (("DX", "A"),)
        assert vocab.variances[0] == pytest.approx(4.6875)

    def test_constant_concept_dropped(self):
        totals = pd.DataFrame(
            [("DX", "A", f"P{i}", 2) for i in range(4)],
            columns=["code_type", "code", "patient_id", "total"],
        )
        vocab = ft.build_vocabulary(totals, n_patients=4, threshold=1.0)
        assert vocab.size == 0

    def test_empty_training_set_rejected(self):
        with pytest.raises(ConfigError):
            ft.build_vocabulary(pd.DataFrame(columns=["code_type", "code", "patient_id", "total"]),
                                0)

    def test_columns_sorted_by_code(self):
        totals = pd.DataFrame(
            [("DX", "Z9", "P0", 9), ("DX", "A1", "P0", 9), ("PX", "123", "P0", 9)],
            columns=["code_type", "code", "patient_id", "total"],
        )
        vocab = ft.build_vocabulary(totals, n_patients=2, threshold=1.0)
        assert vocab.codes == (("DX", "A1"), ("DX", "Z9"), ("PX", "123"))


class TestDemographics:
    def test_layout(self):
        vec = ft.encode_demographics(1, 1950, 3, "2016-09-09")
        assert vec.shape == (12,)
        assert vec[0] == 1.0
        assert vec[1] == pytest.approx(66.69, abs=0.01)
        expected = np.zeros(10)
        expected[3] = 1.0
        np.testing.assert_array_equal(vec[2:], expected)

    def test_race_block_sums_to_one(self):
        for race in range(10):
            vec = ft.encode_demographics(0, 1970, race, "2015-01-01")
            assert vec[2:].sum() == 1.0

    def test_race_only_difference(self):
        a = ft.encode_demographics(1, 1960, 2, "2015-06-01")
        b = ft.encode_demographics(1, 1960, 7, "2015-06-01")
        assert (a[:2] == b[:2]).all()
        assert (a[2:] != b[2:]).sum() == 2

    def test_race_out_of_range(self):
        with pytest.raises(SchemaError):
            ft.encode_demographics(0, 1970, 10, "2015-01-01")


def toy_tensor(counts, t=None):
    counts = np.asarray(counts, dtype=float)
    n, t_dim, v = counts.shape
    vocab = ft.ConceptVocabulary(
        tuple(("DX", f"C{i}") for i in range(v)), tuple([1.5] * v)
    )
    return ft.SliceTensor(
        counts=counts,
        demographics=np.tile(np.r_[1.0, 50.0, 1.0, np.zeros(9)], (n, 1)),
        labels=np.zeros(n, dtype=np.int64),
        patient_ids=[f"P{i}" for i in range(n)],
        window=ft.ObservationWindow(ft.SLICE_ORDER[:t_dim]),
        vocabulary=vocab,
    )


class TestTensorOps:
    def test_aggregate_elementwise_sum(self):
        t = toy_tensor([[[2, 0], [1, 3]]])
        agg = ft.aggregate_slices(t)
        np.testing.assert_array_equal(agg.counts, [[[3, 3]]])
        assert agg.window.t == 1

    def test_aggregate_t1_identity(self):
        t = toy_tensor([[[2, 5]]])
        np.testing.assert_array_equal(ft.aggregate_slices(t).counts, t.counts)

    def test_aggregate_conserves_total(self, rng):
        t = toy_tensor(rng.poisson(1.0, (7, 3, 5)))
        assert ft.aggregate_slices(t).counts.sum() == t.counts.sum()

    def test_flatten_layout(self):
        t = toy_tensor([[[1, 2], [3, 4]]])
        flat = ft.flatten_for_tabular(t)
        np.testing.assert_array_equal(flat[0, :4], [1, 2, 3, 4])
        np.testing.assert_array_equal(flat[0, 4:], t.demographics[0])
        assert flat.shape[1] == 2 * 2 + 12

    def test_flatten_width_t1(self):
        t = toy_tensor(np.zeros((2, 1, 5)))
        assert ft.flatten_for_tabular(t).shape == (2, 5 + 12)

    def test_flatten_width_at_reference_scale(self):
        t = toy_tensor(np.zeros((1, 2, 1837)))
        assert ft.flatten_for_tabular(t).shape[1] == 2 * 1837 + 12 == 3686

    def test_binarize(self):
        t = toy_tensor([[[0, 5, 1]]])
        b = ft.binarize(t)
        np.testing.assert_array_equal(b.counts, [[[0, 1, 1]]])
        np.testing.assert_array_equal(ft.binarize(b).counts, b.counts)
        assert b.binarized

    def test_binarize_aggregate_order_matters(self):
        t = toy_tensor([[[2, 0], [3, 1]]])
        a = ft.aggregate_slices(ft.binarize(t))
        b = ft.binarize(ft.aggregate_slices(t))
        assert not np.array_equal(a.counts, b.counts)


class TestDensityFilter:
    def patients(self, ids):
        return pd.DataFrame({
            "patient_id": ids,
            "gender": 0,
            "birth_year": 1960,
            "race": 0,
            "label": "control",
            "index_date": "2016-01-01",
        })

    def events_for(self, pid, offsets):
        idx = pd.Timestamp("2016-01-01")
        return events_frame([
            (pid, (idx - pd.Timedelta(days=d)).strftime("%Y-%m-%d"), "401", "DX")
            for d in offsets
        ])

    def test_all_slices_covered_retained(self):
        pts = self.patients(["A"])
        ev = self.events_for("A", [100, 300, 500, 700])
        kept = ft.density_filter(pts, ev, 1)
        assert list(kept["patient_id"]) == ["A"]

    def test_missing_slice_dropped(self):
        pts = self.patients(["A"])
        ev = self.events_for("A", [100, 300, 700])  # nothing in M18 [457, 639]
        kept = ft.density_filter(pts, ev, 1)
        assert kept.empty

    def test_min_zero_is_identity(self):
        pts = self.patients(["A", "B"])
        kept = ft.density_filter(pts, self.events_for("A", [100]), 0)
        assert list(kept["patient_id"]) == ["A", "B"]

    def test_window_restricts_check(self):
        pts = self.patients(["A"])
        ev = self.events_for("A", [500, 700])  # covers M18 and M24 only
        kept = ft.density_filter(pts, ev, 1, ft.ObservationWindow.of("M24", "M18"))
        assert list(kept["patient_id"]) == ["A"]


class TestBuildSliceTensor:
    def setup_method(self):
        self.patients = pd.DataFrame({
            "patient_id": ["A", "B"],
            "gender": [1, 0],
            "birth_year": [1950, 1960],
            "race": [3, 4],
            "label": ["case", "control"],
            "index_date": ["2016-01-01", "2016-06-01"],
        })

    def events_at(self, pid, offsets, code="401"):
        idx = pd.Timestamp(dict(A="2016-01-01", B="2016-06-01")[pid])
        return [
            (pid, (idx - pd.Timedelta(days=d)).strftime("%Y-%m-%d"), code, "DX")
            for d in offsets
        ]

    def test_window_selection_and_counts(self):
        ev = events_frame(
            self.events_at("A", [100, 120, 500]) + self.events_at("B", [100, 700])
        )
        vocab = ft.ConceptVocabulary((("DX", "401"),), (9.9,))
        t = ft.build_slice_tensor(self.patients, ev, ft.ObservationWindow.of("M24", "M18"),
                                  vocabulary=vocab)
        assert t.counts.shape == (2, 2, 1)
        # offsets 100/120 -> M6 (outside window), 500 -> M18, 700 -> M24
        np.testing.assert_array_equal(t.counts[0, :, 0], [0, 1])
        np.testing.assert_array_equal(t.counts[1, :, 0], [1, 0])
        np.testing.assert_array_equal(t.labels, [1, 0])

    def test_unknown_codes_counted_not_added(self):
        ev = events_frame(self.events_at("A", [500], "999") + self.events_at("B", [500]))
        vocab = ft.ConceptVocabulary((("DX", "401"),), (9.9,))
        t = ft.build_slice_tensor(self.patients, ev, ft.FULL_WINDOW, vocabulary=vocab)
        assert t.vocabulary.size == 1
        assert t.unknown_dropped == 1

    def test_post_index_events_ignored(self):
        ev = events_frame(self.events_at("A", [500, -10]))
        vocab = ft.ConceptVocabulary((("DX", "401"),), (9.9,))
        t = ft.build_slice_tensor(self.patients, ev, ft.FULL_WINDOW, vocabulary=vocab)
        assert t.counts[0].sum() == 1

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_event_order_invariance(self, seed):
        rng = np.random.default_rng(seed)
        offsets = rng.integers(0, 900, 25).tolist()
        rows = self.events_at("A", offsets) + self.events_at("B", offsets[:10], "250")
        ev = events_frame(rows)
        shuffled = ev.sample(frac=1.0, random_state=seed).reset_index(drop=True)
        vocab = ft.ConceptVocabulary((("DX", "250"), ("DX", "401")), (9.9, 9.9))
        a = ft.build_slice_tensor(self.patients, ev, ft.FULL_WINDOW, vocabulary=vocab)
        b = ft.build_slice_tensor(self.patients, shuffled, ft.FULL_WINDOW, vocabulary=vocab)
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_vocabulary_from_training_split_only(self):
        # code "777" appears only for the test-split patient: must not enter vocab
        ev = events_frame(
            self.events_at("A", [500, 600, 700])
            + self.events_at("B", [500], "777")
            + self.events_at("B", [600])
        )
        split = {"A": "train", "B": "test"}
        t = ft.build_slice_tensor(self.patients, ev, ft.FULL_WINDOW, split=split,
                                  variance_threshold=0.1)
        codes = [c for _, c in t.vocabulary.codes]
        assert "777" not in codes
