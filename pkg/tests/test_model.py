import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from dpagg.errors import DataIOError, InvalidParameterError
from dpagg.model import (Dataset, PrivacyBudget, Provenance, Record, read_result_csv,
                         read_tsv, split_budget, write_result_csv, write_tsv)


class TestSplitBudget:
    def test_experimental_split(self):
        b = split_budget(math.log(3), 1e-5, 64)
        assert b.epsilon_s == pytest.approx(0.5493061443340549, abs=1e-15)
        assert b.delta_s == 1e-5
        assert b.epsilon_m == pytest.approx(0.008582908505219608, abs=1e-15)
        assert b.delta_m == 0.0

    def test_l1_halves_evenly(self):
        b = split_budget(2.0, 0.5e-2, 1)
        assert (b.epsilon_s, b.epsilon_m) == (1.0, 1.0)

    def test_resummation(self):
        b = split_budget(1.7, 1e-6, 37)
        assert b.epsilon_s + b.l_bound * b.epsilon_m == pytest.approx(1.7, abs=1e-12)

    def test_custom_fraction(self):
        b = split_budget(1.0, 1e-5, 4, selection_fraction=0.25)
        assert b.epsilon_s == 0.25
        assert b.epsilon_m == pytest.approx(0.1875)

    @pytest.mark.parametrize("eps,delta,l_bound", [
        (0.0, 1e-5, 1), (-1.0, 1e-5, 1), (1.0, 0.0, 1), (1.0, 1.0, 1), (1.0, 1e-5, 0),
        (1.0, 1e-5, -3), (1.0, 1e-5, 2.5), (math.inf, 1e-5, 1), (math.nan, 1e-5, 1),
    ])
    def test_rejects_bad_parameters(self, eps, delta, l_bound):
        with pytest.raises(InvalidParameterError):
            split_budget(eps, delta, l_bound)

    def test_inconsistent_budget_is_rejected(self):
        with pytest.raises(InvalidParameterError):
            PrivacyBudget(epsilon=1.0, delta=1e-5, l_bound=2, epsilon_s=0.5,
                          delta_s=1e-5, epsilon_m=0.5)

    @settings(max_examples=1000, deadline=None)
    @given(eps=st.floats(1e-3, 20.0), delta=st.floats(1e-12, 0.999),
           l_bound=st.integers(1, 4096), frac=st.floats(0.01, 0.99))
    def test_identities_hold(self, eps, delta, l_bound, frac):
        b = split_budget(eps, delta, l_bound, frac)
        assert abs(b.epsilon_s + b.l_bound * b.epsilon_m - eps) <= 1e-12
        assert abs(b.delta_s + b.l_bound * b.delta_m - delta) <= 1e-15


class TestDataset:
    def test_of_validates(self):
        with pytest.raises(InvalidParameterError):
            Dataset.of([("u", "k", math.nan)])
        with pytest.raises(InvalidParameterError):
            Dataset.of([("", "k", 1.0)])

    def test_grouping_and_degree(self):
        d = Dataset.of([("a", "x", 1), ("b", "x", 1), ("a", "y", 1), ("a", "x", 2)])
        assert list(d.by_user()) == ["a", "b"]
        assert len(d.by_user()["a"]) == 3
        assert d.max_user_degree() == 2
        assert d.provenance is Provenance.RAW


class TestTsv:
    def test_single_line(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("u1\tlasagna\t1\n", encoding="utf-8")
        assert read_tsv(p).records == (Record("u1", "lasagna", 1.0),)

    def test_empty(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("", encoding="utf-8")
        assert len(read_tsv(p)) == 0

    def test_round_trip(self, tmp_path):
        recs = [Record("u1", "lasagna", 1.0), Record("u2", "kasagna", 0.1),
                Record("ü3", "日本", -2.5e-300)]
        p = tmp_path / "d.tsv"
        write_tsv(p, recs)
        again = tmp_path / "again.tsv"
        write_tsv(again, read_tsv(p))
        assert sorted(read_tsv(again)) == sorted(recs)

    def test_order_preserved_and_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("b\tk\t1\n\na\tk\t2\n", encoding="utf-8")
        d = read_tsv(p)
        assert [r.user for r in d] == ["b", "a"]
        assert read_tsv(p) == d

    @pytest.mark.parametrize("body,line", [
        ("u\tk\t1\nu\tk\n", 2), ("u\tk\tabc\n", 1), ("u\tk\tinf\n", 1),
        ("u\tk\tnan\n", 1), ("\tk\t1\n", 1), ("u\tk\t1\textra\n", 1),
    ])
    def test_malformed_reports_line(self, tmp_path, body, line):
        p = tmp_path / "d.tsv"
        p.write_text(body, encoding="utf-8")
        with pytest.raises(DataIOError) as exc:
            read_tsv(p)
        assert exc.value.line == line
        assert f":{line}:" in str(exc.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            read_tsv(tmp_path / "nope.tsv")

    def test_line_count_matches(self, tmp_path):
        rng = random.Random(3)
        lines = [f"u{rng.randrange(50)}\tk{rng.randrange(20)}\t{rng.random()}" for _ in range(500)]
        p = tmp_path / "d.tsv"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        assert len(read_tsv(p)) == 500


class TestResultCsv:
    def test_sorted_17_digits(self, tmp_path):
        p = tmp_path / "r.csv"
        write_result_csv(p, {"b": 0.1, "a": 2.0, "B": 1 / 3})
        assert p.read_text().splitlines() == [
            "B,0.33333333333333331", "a,2", "b,0.10000000000000001"]

    def test_round_trip_exact(self, tmp_path):
        vals = {f"k{i}": random.Random(i).uniform(-1e6, 1e6) for i in range(100)}
        vals["with,comma"] = 1.5
        p = tmp_path / "r.csv"
        write_result_csv(p, vals)
        assert read_result_csv(p) == vals
