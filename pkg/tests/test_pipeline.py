import datetime as dt
import gzip
import json
from collections import Counter
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from popdyn.errors import DataError
from popdyn.models import Trace
from popdyn.pipeline import (
    CorpusSummary,
    ViewingRecord,
    active_user_filter,
    build_daily_traces,
    cold_video_filter,
    prepare_corpus,
    read_records,
)

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "records_fixture.csv.gz"
EXPECTED = json.loads((DATA / "records_fixture_expected.json").read_text())
WINDOW = tuple(EXPECTED["window"])


def records_from_counts(counts, vtype="TV"):
    """One record per view; user ``u<i>`` gets ``counts[i]`` views."""
    base = dt.datetime(2020, 1, 1)
    rows = []
    for i, c in enumerate(counts):
        for j in range(c):
            rows.append(ViewingRecord(base + dt.timedelta(hours=j), f"u{i:04d}", f"v{j % 3}", vtype))
    return rows


@pytest.fixture(scope="module")
def fixture_records():
    return read_records(FIXTURE)


class TestGolden:
    def test_summary_matches_expected(self, fixture_records):
        traces, summary = prepare_corpus(fixture_records, WINDOW)
        for key in ("population", "retained_videos", "removed_users"):
            assert getattr(summary, key) == EXPECTED[key]
        for vtype, frac in EXPECTED["removed_view_fraction"].items():
            assert summary.removed_view_fraction[vtype] == pytest.approx(frac, rel=1e-12)
        totals = {t: {v: tr.total for v, tr in vids.items()} for t, vids in traces.items()}
        assert totals == EXPECTED["video_totals"]

    def test_removed_user_set(self, fixture_records):
        for vtype, ids in EXPECTED["removed_user_ids"].items():
            group = fixture_records[fixture_records["video_type"] == vtype]
            res = active_user_filter(group)
            assert set(res.removed_users) == set(ids)
            assert res.removed_fraction <= 0.25

    def test_cold_boundary(self, fixture_records):
        traces, _ = prepare_corpus(fixture_records, WINDOW)
        assert traces["TV"]["keep"].total == 1000
        assert "drop" not in traces["TV"]
        tv = fixture_records[fixture_records["video_type"] == "TV"]
        kept = active_user_filter(tv).records
        assert build_daily_traces(kept, WINDOW)["drop"].total == 999

    def test_filter_order_matters(self, fixture_records):
        # the reverse order (cold videos first, population afterwards) ranks
        # users on a different record set and ends with a different N
        tv = fixture_records[fixture_records["video_type"] == "TV"]
        pre = cold_video_filter(build_daily_traces(tv, WINDOW), 1000)
        reversed_records = tv[tv["video_id"].isin(set(pre))]
        reversed_users = active_user_filter(reversed_records)
        _, summary = prepare_corpus(fixture_records, WINDOW)
        assert summary.population["TV"] == 1000
        assert reversed_users.N == 1248
        assert reversed_users.N != summary.population["TV"]
        assert {"mixed", "cold"} <= set(pre) and "drop" not in pre

    def test_daily_traces(self, fixture_records):
        traces, _ = prepare_corpus(fixture_records, WINDOW)
        keep = traces["TV"]["keep"]
        assert keep.counts[0] > 0
        # birth on Sep 3, window ends Oct 30
        assert keep.horizon == (dt.date(2014, 10, 30) - dt.date(2014, 9, 3)).days + 1

    def test_summary_json_round_trip(self, fixture_records):
        _, summary = prepare_corpus(fixture_records, WINDOW)
        again = CorpusSummary.from_json(json.loads(json.dumps(summary.to_json())))
        assert again == summary


class TestActiveUserFilter:
    def test_documented_vector_cap_rule(self):
        res = active_user_filter(records_from_counts([1, 2, 3, 94]))
        assert res.N == 1
        assert res.removed_users == ("u0000", "u0001", "u0002")
        assert res.removed_views == 6

    def test_documented_vector_first_crossing(self):
        res = active_user_filter(records_from_counts([1, 2, 3, 94]), rule="first_crossing")
        assert res.N == 0
        assert len(res.removed_users) == 4

    def test_all_equal_small(self):
        res = active_user_filter(records_from_counts([1, 1, 1, 1]))
        assert res.N == 3
        assert res.removed_fraction == 0.25

    def test_hundred_equal_users(self):
        res = active_user_filter(records_from_counts([2] * 100))
        assert len(res.removed_users) == 25
        assert res.N == 75

    def test_always_removes_someone_under_cap(self):
        res = active_user_filter(records_from_counts([90, 95]))
        assert res.removed_users == ("u0000",)

    def test_tie_break_by_user_id(self):
        res = active_user_filter(records_from_counts([5, 5, 5, 5, 5, 5, 5, 5]))
        assert res.removed_users == ("u0000", "u0001")

    def test_idempotent_on_remaining_ranking(self):
        first = active_user_filter(records_from_counts([1, 2, 3, 94]))
        again = active_user_filter(first.records, removal_share=0.0)
        assert again.N == first.N

    def test_conservation(self):
        rng = np.random.default_rng(0)
        counts = list(rng.integers(1, 40, size=300))
        res = active_user_filter(records_from_counts(counts))
        assert len(res.records) + res.removed_views == res.total_views == sum(counts)
        assert res.N + len(res.removed_users) == 300

    def test_empty_is_error(self):
        with pytest.raises(DataError):
            active_user_filter([])


class TestTraces:
    def test_days_from_birth_with_zeros(self):
        base = dt.datetime(2020, 3, 1, 12)
        recs = [
            ViewingRecord(base, "a", "v"),
            ViewingRecord(base + dt.timedelta(hours=3), "b", "v"),
            ViewingRecord(base + dt.timedelta(days=3), "c", "v"),
        ]
        tr = build_daily_traces(recs, ("2020-03-01", "2020-03-06"))["v"]
        np.testing.assert_array_equal(tr.counts, [2, 0, 0, 1, 0, 0])

    def test_window_excludes_outside_records(self):
        recs = [
            ViewingRecord(dt.datetime(2020, 2, 28), "a", "v"),
            ViewingRecord(dt.datetime(2020, 3, 2), "b", "v"),
        ]
        tr = build_daily_traces(recs, ("2020-03-01", "2020-03-03"))["v"]
        np.testing.assert_array_equal(tr.counts, [1, 0])

    def test_horizon_cap(self):
        recs = [ViewingRecord(dt.datetime(2020, 3, d), "a", "v") for d in (1, 5, 9)]
        tr = build_daily_traces(recs, horizon_days=5)["v"]
        np.testing.assert_array_equal(tr.counts, [1, 0, 0, 0, 1])

    def test_large_groupby_against_counter(self):
        # 10^6 records; the oracle is a plain Counter over (video, day offset)
        rng = np.random.default_rng(42)
        n = 1_000_000
        vids = rng.integers(0, 50, size=n)
        secs = rng.integers(0, 30 * 86400, size=n)
        base = np.datetime64("2021-01-01T00:00:00")
        df = pd.DataFrame({
            "timestamp": base + secs.astype("timedelta64[s]"),
            "user_id": rng.integers(0, 10_000, size=n).astype(str),
            "video_id": np.char.add("v", vids.astype(str)),
            "video_type": "TV",
        })
        traces = build_daily_traces(df)
        days = secs // 86400
        births = {}
        for v, d in zip(vids, days):
            births[v] = min(births.get(v, d), d)
        oracle = Counter((f"v{v}", d - births[v]) for v, d in zip(vids.tolist(), days.tolist()))
        for (vid, off), c in list(oracle.items())[:2000]:
            assert traces[vid].counts[off] == c
        assert sum(t.total for t in traces.values()) == n


class TestColdFilter:
    def test_threshold_inclusive(self):
        traces = {"a": Trace([1000.0]), "b": Trace([999.0]), "c": Trace([500.0, 500.0])}
        assert set(cold_video_filter(traces, 1000)) == {"a", "c"}


class TestReadRecords:
    def test_gzip_and_plain_agree(self, tmp_path):
        plain = tmp_path / "r.csv"
        with gzip.open(FIXTURE, "rt") as fh:
            plain.write_text(fh.read())
        a, b = read_records(plain), read_records(FIXTURE)
        pd.testing.assert_frame_equal(a, b)

    def test_malformed_timestamp_reports_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text(
            "timestamp,user_id,video_id,video_type\n"
            "2020-01-01T00:00:00,a,v,TV\n"
            "2020-01-02T00:00:00,b,v,TV\n"
            "not-a-date,c,v,TV\n"
        )
        with pytest.raises(DataError) as info:
            read_records(p)
        assert info.value.line == 4

    def test_unknown_type_reports_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("timestamp,user_id,video_id,video_type\n2020-01-01,a,v,Cartoon\n")
        with pytest.raises(DataError) as info:
            read_records(p)
        assert info.value.line == 2

    def test_input_not_mutated(self, fixture_records):
        before = fixture_records.copy()
        prepare_corpus(fixture_records, WINDOW)
        pd.testing.assert_frame_equal(fixture_records, before)


def test_cold_filter_drops_empty_trace():
    assert cold_video_filter({"e": np.array([]), "k": Trace([1000.0])}, 1000) == {"k": Trace([1000.0])}
