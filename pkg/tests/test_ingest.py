from fractions import Fraction

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelclim import ingest
from panelclim.constants import PROVINCES
from panelclim.errors import ConfigError, DataError
from _util import write_csv

STATION_HEADER = ["station_id", "province", "latitude", "longitude", "year", "month",
                  "mean_temp", "total_precip"]


def station_rows(sid, prov, lat=50.0, lon=-100.0, years=(2000,), months=range(1, 13)):
    return [(sid, prov, lat, lon, y, m, 1.0 * m, 10.0 * m) for y in years for m in months]


def test_duplicate_station_ids_collapse_first_wins(tmp_path):
    rows = station_rows("S1", "AB", lat=51.0) + station_rows("S1", "AB", lat=52.0, years=(2001,))
    path = write_csv(tmp_path / "s.csv", rows, STATION_HEADER)
    records, meta, report = ingest.load_stations(path)
    assert len(meta) == 1
    assert meta["latitude"].iloc[0] == 51.0
    assert report.drops["duplicate_station"] == 12
    assert len(records) == 12


def test_out_of_range_latitude_dropped(tmp_path):
    rows = station_rows("S1", "AB") + [("S2", "AB", 95.0, -100.0, 2000, 1, 1.0, 1.0)]
    path = write_csv(tmp_path / "s.csv", rows, STATION_HEADER)
    records, meta, report = ingest.load_stations(path)
    assert "S2" not in set(meta["station_id"])
    assert report.drops["coordinates"] == 1


def test_missing_tokens_accepted(tmp_path):
    rows = station_rows("S1", "AB")
    rows[0] = ("S1", "AB", 50.0, -100.0, 2000, 1, "NA", "")
    path = write_csv(tmp_path / "s.csv", rows, STATION_HEADER)
    records, _, report = ingest.load_stations(path)
    assert len(records) == 12
    assert np.isnan(records["mean_temp"].iloc[0]) and np.isnan(records["total_precip"].iloc[0])
    assert report.n_dropped == 0


def test_drop_counts_add_up(tmp_path):
    rows = (station_rows("S1", "AB") + station_rows("S1", "AB", lat=49.0, years=(2002,))
            + station_rows("S2", "XX", years=(2000,), months=(1,))
            + [("S3", "BC", "abc", -120.0, 2000, 1, 1.0, 1.0), ("S4", "BC", "", -120.0, 2000, 1, 1.0, 1.0)]
            + station_rows("S5", "BC", months=(1, 1)))
    path = write_csv(tmp_path / "s.csv", rows, STATION_HEADER)
    records, _, report = ingest.load_stations(path)
    assert report.n_input == len(rows)
    assert report.n_retained + report.n_dropped == report.n_input
    assert report.drops == {"invalid": 2, "coordinates": 1, "duplicate_station": 12, "duplicate_record": 1}


def test_load_is_idempotent(tmp_path):
    rows = station_rows("S1", "AB") + station_rows("S1", "AB", lat=1.0) + station_rows("S2", "QC", years=(1999, 2000))
    path = write_csv(tmp_path / "s.csv", rows, STATION_HEADER)
    records, meta, _ = ingest.load_stations(path)
    again = ingest.station_frame(records, meta)
    again.to_csv(tmp_path / "again.csv", index=False)
    records2, meta2, report2 = ingest.load_stations(tmp_path / "again.csv")
    pd.testing.assert_frame_equal(records, records2)
    pd.testing.assert_frame_equal(meta, meta2)
    assert report2.n_dropped == 0


def test_mostly_invalid_file_is_fatal(tmp_path):
    rows = station_rows("S1", "ZZ") + station_rows("S2", "AB", months=(1,))
    path = write_csv(tmp_path / "s.csv", rows, STATION_HEADER)
    with pytest.raises(DataError, match="50%"):
        ingest.load_stations(path)


def test_unreadable_file(tmp_path):
    with pytest.raises(DataError):
        ingest.load_stations(tmp_path / "missing.csv")


def test_schema_map_renames_columns(tmp_path):
    header = ["ID", "PROV", "LAT", "LON", "YEAR", "MONTH", "T", "P"]
    path = write_csv(tmp_path / "s.csv", station_rows("S1", "AB"), header)
    schema = dict(zip(STATION_HEADER, header))
    records, meta, _ = ingest.load_stations(path, schema)
    assert len(records) == 12 and meta["station_id"].tolist() == ["S1"]


# ---------------------------------------------------------------------------
# coverage


def coverage_records(complete: dict[str, tuple[int, int]], province="AB", period=(1998, 2017)):
    """Records where station s has the given number of present temp / precip months."""
    months = [(y, m) for y in range(period[0], period[1] + 1) for m in range(1, 13)]
    rows = []
    for sid, (n_t, n_p) in complete.items():
        for k, (y, m) in enumerate(months):
            rows.append((sid, province, y, m, 1.0 if k < n_t else np.nan, 1.0 if k < n_p else np.nan))
    records = pd.DataFrame(rows, columns=list(ingest.RECORD_COLUMNS))
    meta = pd.DataFrame({"station_id": list(complete), "province": province, "latitude": 50.0,
                         "longitude": -100.0, "subregion_id": np.nan, "subregion_population": np.nan})
    return records, meta


def test_coverage_three_station_example():
    records, meta = coverage_records({"a": (240, 240), "b": (230, 230), "c": (100, 100)})
    kept = ingest.coverage_filter(records, meta, (1998, 2017))
    assert kept["station_id"].tolist() == ["a", "b"]


def test_coverage_single_complete_station():
    records, meta = coverage_records({"a": (240, 240)})
    assert ingest.coverage_filter(records, meta, (1998, 2017))["station_id"].tolist() == ["a"]


def test_coverage_requires_both_variables():
    # 213 < 0.9 * 240 = 216 on temperature only
    records, meta = coverage_records({"a": (240, 240), "b": (213, 240)})
    assert ingest.coverage_filter(records, meta, (1998, 2017))["station_id"].tolist() == ["a"]


def test_coverage_tie_at_threshold_is_kept():
    records, meta = coverage_records({"a": (240, 240), "b": (216, 216), "c": (215, 240)})
    assert ingest.coverage_filter(records, meta, (1998, 2017))["station_id"].tolist() == ["a", "b"]


def test_coverage_empty_province_is_fatal():
    records, meta = coverage_records({"a": (0, 0)})
    with pytest.raises(DataError, match="AB"):
        ingest.coverage_filter(records, meta, (1998, 2017))


def test_coverage_empty_period():
    records, meta = coverage_records({"a": (240, 240)})
    with pytest.raises(ConfigError):
        ingest.coverage_filter(records, meta, (2017, 1998))


@settings(max_examples=40, deadline=None)
@given(counts=st.lists(st.tuples(st.integers(0, 240), st.integers(0, 240)), min_size=1, max_size=6),
       lo=st.fractions(0, 1), hi=st.fractions(0, 1))
def test_coverage_monotone_in_threshold(counts, lo, hi):
    counts = [(240, 240)] + counts
    lo, hi = sorted((Fraction(lo), Fraction(hi)))
    records, meta = coverage_records({f"s{i}": c for i, c in enumerate(counts)})
    strict = set(ingest.coverage_filter(records, meta, (1998, 2017), hi)["station_id"])
    loose = set(ingest.coverage_filter(records, meta, (1998, 2017), lo)["station_id"])
    assert strict <= loose


# ---------------------------------------------------------------------------
# other tables


def test_bundled_events():
    events, report = ingest.load_events()
    assert len(events) == 38 and report.n_retained == 38
    lehman = events.set_index("event_id").loc[15]
    assert lehman["year"] == 2008
    assert set(lehman["provinces"].split(";")) == set(PROVINCES)


def test_events_all_expands(tmp_path):
    path = write_csv(tmp_path / "e.csv", [(1, "x", 2010, 3, "All"), (2, "y", 2011, 4, "BC; AB")],
                     ingest.EVENT_FIELDS)
    events, _ = ingest.load_events(path)
    assert ingest.event_provinces(events) == {1: PROVINCES, 2: ("BC", "AB")}


def test_events_duplicate_id(tmp_path):
    path = write_csv(tmp_path / "e.csv", [(1, "x", 2010, 3, "All"), (1, "y", 2011, 4, "BC")],
                     ingest.EVENT_FIELDS)
    with pytest.raises(DataError, match="duplicate"):
        ingest.load_events(path)


def rcp_rows(drop=None):
    rows = []
    for p in PROVINCES:
        for s in ("Spring", "Summer", "Fall", "Winter"):
            for h in ("near", "mid"):
                if drop != (p, s, h):
                    rows.append(("RCP4.5", p, s, h, 1.0, 5.0))
    return rows


def test_rcp_complete(tmp_path):
    rcp, _ = ingest.load_rcp(write_csv(tmp_path / "r.csv", rcp_rows(), ingest.RCP_FIELDS))
    assert len(rcp) == 80


def test_rcp_missing_mid_horizon_is_fatal(tmp_path):
    path = write_csv(tmp_path / "r.csv", rcp_rows(drop=("ON", "Winter", "mid")), ingest.RCP_FIELDS)
    with pytest.raises(DataError, match="both horizons"):
        ingest.load_rcp(path)


def econ_rows(years=range(1997, 2000)):
    return [(p, y, "TOTAL", 1e9 * (1 + 0.01 * (y - 1997)), 1e6) for p in PROVINCES for y in years]


def test_econ_duplicate_key(tmp_path):
    rows = econ_rows() + [econ_rows()[0]]
    with pytest.raises(DataError, match="duplicate"):
        ingest.load_econ(write_csv(tmp_path / "g.csv", rows, ingest.ECON_FIELDS))


def test_econ_missing_year(tmp_path):
    rows = [r for r in econ_rows() if not (r[0] == "ON" and r[1] == 1998)]
    with pytest.raises(DataError, match="missing years"):
        ingest.load_econ(write_csv(tmp_path / "g.csv", rows, ingest.ECON_FIELDS))


def test_econ_nonpositive(tmp_path):
    rows = econ_rows()
    rows[0] = rows[0][:3] + (0.0, 1e6)
    with pytest.raises(DataError, match="positive"):
        ingest.load_econ(write_csv(tmp_path / "g.csv", rows, ingest.ECON_FIELDS))


def test_indices_unemployment_needs_province(tmp_path):
    rows = [("world_gdp", "", 2000, 1.0), ("unemployment", "", 2000, 6.5)]
    with pytest.raises(DataError, match="unemployment"):
        ingest.load_indices(write_csv(tmp_path / "i.csv", rows, ingest.INDEX_FIELDS))


def test_indices_nonfinite(tmp_path):
    rows = [("world_gdp", "", 2000, 1.0), ("world_gdp", "", 2001, "inf")]
    with pytest.raises(DataError, match="finite"):
        ingest.load_indices(write_csv(tmp_path / "i.csv", rows, ingest.INDEX_FIELDS))
