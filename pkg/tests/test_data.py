import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knnroc.data import (
    CutPair,
    Dataset,
    SelectionRule,
    Unit,
    load_dataset,
    serialize,
    subsample_verification,
    validate,
)
from knnroc.errors import ValidationError

from conftest import make_dataset


class TestLoadDataset:
    def test_single_verified_row(self):
        ds = load_dataset("t,a1,v,d\n1.2,0.3,1,2\n")
        assert ds.n == 1
        assert ds.t[0] == 1.2
        assert ds.a[0].tolist() == [0.3]
        assert ds.v[0] == 1 and ds.d[0] == 2

    def test_unverified_row_has_no_label(self):
        ds = load_dataset("t,a1,v,d\n1.2,0.3,0,\n")
        assert ds.v[0] == 0
        assert ds.units[0].d is None

    def test_label_on_unverified_unit_names_row(self):
        with pytest.raises(ValidationError, match="label present for unverified unit, row 2"):
            load_dataset("t,a1,v,d\n1.2,0.3,0,2\n")

    def test_accepts_bytes_and_file_objects(self):
        text = "t,a1,a2,v,d\n1,2,3,1,3\n4,5,6,0,\n"
        a = load_dataset(text.encode())
        b = load_dataset(io.StringIO(text))
        assert a.equals(b) and a.p == 2

    @pytest.mark.parametrize(
        "text, message",
        [
            ("", "header"),
            ("t,v,d\n1,1,1\n", "header"),
            ("t,a2,v,d\n1,1,1,1\n", "header"),
            ("t,a1,v,d\n1,2,1\n", "expected 4 columns, found 3, row 2"),
            ("t,a1,v,d\nx,2,1,1\n", "malformed number 'x' in column t, row 2"),
            ("t,a1,v,d\n1,nan,1,1\n", "non-finite"),
            ("t,a1,v,d\n1,1,2,1\n", "v must be 0 or 1"),
            ("t,a1,v,d\n1,1,1,\n", "label missing for verified unit, row 2"),
            ("t,a1,v,d\n1,1,1,1\n1,1,1,4\n", "label must be 1, 2 or 3, got '4', row 3"),
            ("t,a1,v,d\n", "at least one unit"),
        ],
    )
    def test_malformed_input(self, text, message):
        with pytest.raises(ValidationError, match=message):
            load_dataset(text)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 3), st.integers(0, 2**31 - 1))
    def test_round_trip_is_bit_exact(self, n, p, seed):
        rng = np.random.default_rng(seed)
        v = rng.integers(0, 2, n)
        d = np.where(v == 1, rng.integers(1, 4, n), 0)
        ds = Dataset(rng.normal(size=n) * 1e3, rng.normal(size=(n, p)) / 7, v, d)
        assert load_dataset(serialize(ds)).equals(ds)


class TestDataset:
    def test_from_units_matches_columns(self):
        units = [Unit(1.0, (2.0,), 1, 3), Unit(0.5, (1.0,), 0)]
        ds = Dataset.from_units(units)
        assert ds.units == units
        assert ds.onehot().tolist() == [[0, 0, 1], [0, 0, 0]]
        assert ds.class_counts().tolist() == [0, 0, 1]

    def test_arrays_are_read_only(self, rng):
        ds = make_dataset(rng, 10)
        with pytest.raises(ValueError):
            ds.t[0] = 1.0

    def test_unit_invariants(self):
        with pytest.raises(ValidationError):
            Unit(0.0, (0.0,), 0, 1)
        with pytest.raises(ValidationError):
            Unit(0.0, (0.0,), 1, None)
        with pytest.raises(ValidationError):
            Unit(0.0, (0.0,), 2, 1)

    def test_take_keeps_labels_with_units(self, rng):
        ds = make_dataset(rng, 20)
        sub = ds.take([3, 3, 0])
        assert sub.t.tolist() == [ds.t[3], ds.t[3], ds.t[0]]
        assert sub.d.tolist() == [ds.d[3], ds.d[3], ds.d[0]]


class TestCutPair:
    def test_requires_order(self):
        with pytest.raises(ValidationError):
            CutPair(2.0, 2.0)

    def test_parse(self):
        assert tuple(CutPair.parse("-1,0.5")) == (-1.0, 0.5)
        with pytest.raises(ValidationError):
            CutPair.parse("1;2")


class TestValidate:
    def test_clean_dataset_has_no_warnings(self):
        ds = Dataset([1.0, 2.0, 3.0], [[0.0], [0.0], [0.0]], [1, 1, 1], [1, 2, 3])
        report = validate(ds, CutPair(1.5, 2.5))
        assert report.verification_rate == 1.0
        assert report.ok and report.warnings == ()

    def test_missing_class(self):
        ds = Dataset([1.0, 2.0, 3.0], [[0.0], [0.0], [0.0]], [1, 1, 0], [1, 2, 0])
        assert "class 3 has 0 verified units" in validate(ds, CutPair(1.5, 2.5)).warnings

    def test_cut_outside_range(self):
        ds = Dataset([1.0, 2.0, 3.0], [[0.0], [0.0], [0.0]], [1, 1, 1], [1, 2, 3])
        report = validate(ds, CutPair(0.5, 9.0))
        assert "c2 exceeds observed test range" in report.warnings
        assert "c1 is below observed test range" in report.warnings


class TestSubsample:
    def full(self, rng, n=400):
        return make_dataset(rng, n, p=2, all_verified=True)

    def test_always_one_is_identity(self, rng):
        ds = self.full(rng)
        assert subsample_verification(ds, "1", seed=3).equals(ds)

    def test_always_zero_blanks_every_label(self, rng):
        out = subsample_verification(self.full(rng), "0", seed=3)
        assert out.n_verified == 0 and np.all(out.d == 0)

    def test_rate_tracks_rule_probabilities(self, rng):
        ds = self.full(rng, 20000)
        rule = SelectionRule.parse("0.05 + 0.35*I(t>0.87) + 0.25*I(a1>0.30) + 0.35*I(a2>0.5)")
        prob = rule.probabilities(ds)
        out = subsample_verification(ds, rule, seed=11)
        se = np.sqrt(prob.mean() * (1 - prob.mean()) / ds.n)
        assert abs(out.verified.mean() - prob.mean()) < 4 * se

    def test_deterministic_under_seed(self, rng):
        ds = self.full(rng)
        a = subsample_verification(ds, "0.5", seed=9)
        b = subsample_verification(ds, "0.5", seed=9)
        assert a.equals(b)

    def test_rule_parsing(self):
        rule = SelectionRule.parse("0.1+0.2*I(a2>=3)+0.3*I(t<1e-1)")
        assert rule.intercept == pytest.approx(0.1)
        assert [(x.variable, x.op, x.threshold) for x in rule.terms] == [("a2", ">=", 3.0), ("t", "<", 0.1)]
        with pytest.raises(ValidationError):
            SelectionRule.parse("0.1+bogus")

    def test_probability_outside_unit_interval(self, rng):
        with pytest.raises(ValidationError, match="outside"):
            SelectionRule.parse("0.8+0.5*I(t>-100)").probabilities(self.full(rng, 10))

    def test_requires_complete_input(self, rng):
        with pytest.raises(ValidationError):
            subsample_verification(make_dataset(rng, 20), "1", seed=0)
