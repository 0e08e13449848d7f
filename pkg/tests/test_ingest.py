"""Preprocessing stages: filtering, masking, upscaling, grouping."""

import numpy as np
import pytest

from sifgrid import ingest, model
from sifgrid.ingest import (
    BiomeMap,
    LandCoverMap,
    RejectionCounters,
    aggregate_time,
    cell_indices,
    exclude_cells,
    filter_quality,
    group_cell_year,
    mask_ocean,
    read_grid,
    upscale_landcover,
    write_grid,
)
from sifgrid.model import SOUNDING_DTYPE, OverpassDay, year_start_epoch


def make_records(rows):
    """rows: (lat, lon, doy, sif, var, flag) tuples for year 2019."""
    t0 = year_start_epoch(2019)
    out = np.empty(len(rows), dtype=SOUNDING_DTYPE)
    for k, (lat, lon, doy, sif, var, flag) in enumerate(rows):
        out[k] = (lat, lon, t0 + doy * 86400.0, doy, sif, var, flag)
    return out


def uniform_map005(code=10):
    return LandCoverMap(resolution=0.05,
                        codes=np.full((3600, 7200), code, dtype=np.uint8))


class TestFilterQuality:
    def test_retains_best_and_good_in_order(self):
        recs = make_records([(0.5, 0.5, 10.5, 0.1, 0.01, 0),
                             (0.5, 0.5, 11.5, 0.2, 0.01, 1),
                             (0.5, 0.5, 12.5, 0.3, 0.01, 2),
                             (0.5, 0.5, 13.5, 0.4, 0.01, 0)])
        counters = RejectionCounters()
        kept = filter_quality(recs, counters)
        np.testing.assert_array_equal(kept["sif"], [0.1, 0.2, 0.4])
        assert counters.quality == 1

    def test_all_failed_gives_empty(self):
        recs = make_records([(0.5, 0.5, 10.5, 0.1, 0.01, 2)] * 3)
        assert len(filter_quality(recs)) == 0

    def test_idempotent_on_clean_input(self):
        recs = make_records([(0.5, 0.5, 10.5, 0.1, 0.01, 0),
                             (0.5, 0.5, 11.5, 0.2, 0.01, 1)])
        once = filter_quality(recs)
        twice = filter_quality(once)
        np.testing.assert_array_equal(once, twice)


class TestMaskOcean:
    def _map_with_water_pixel(self, lat, lon):
        m = uniform_map005(12)
        row = int(np.floor(lat * 20)) + 1800
        col = int(np.floor(lon * 20)) + 3600
        m.codes[row, col] = 17
        return m

    def test_drops_water_pixel_records(self):
        recs = make_records([(0.52, 0.52, 10.5, 0.1, 0.01, 0),
                             (0.58, 0.58, 10.5, 0.2, 0.01, 0)])
        m = self._map_with_water_pixel(0.52, 0.52)
        counters = RejectionCounters()
        kept = mask_ocean(recs, m, counters)
        np.testing.assert_array_equal(kept["sif"], [0.2])
        assert counters.ocean == 1

    def test_keeps_vegetated_pixel_records(self):
        recs = make_records([(10.2, 20.2, 50.5, 0.4, 0.01, 0)])
        kept = mask_ocean(recs, uniform_map005(12))
        assert len(kept) == 1

    def test_boundary_on_pixel_edge_uses_half_open_interval(self):
        # 0.25 degrees is exactly a pixel edge: the record belongs to the
        # pixel starting at 0.25
        recs = make_records([(0.25, 0.25, 10.5, 0.1, 0.01, 0)])
        m = uniform_map005(12)
        m.codes[1800 + 5, 3600 + 5] = 17  # pixel [0.25, 0.30)
        counters = RejectionCounters()
        kept = mask_ocean(recs, m, counters)
        assert len(kept) == 0 and counters.ocean == 1
        m.codes[1800 + 5, 3600 + 5] = 12
        m.codes[1800 + 4, 3600 + 4] = 17  # pixel [0.20, 0.25): not containing
        assert len(mask_ocean(recs, m)) == 1

    def test_out_of_bounds_latitude_rejected_with_count(self):
        recs = make_records([(91.0, 0.5, 10.5, 0.1, 0.01, 0),
                             (0.5, 0.5, 10.5, 0.2, 0.01, 0)])
        counters = RejectionCounters()
        kept = mask_ocean(recs, uniform_map005(), counters)
        assert len(kept) == 1
        assert counters.out_of_bounds == 1

    def test_longitude_wraps(self):
        recs = make_records([(0.5, 180.0, 10.5, 0.1, 0.01, 0),
                             (0.5, -180.0, 10.5, 0.2, 0.01, 0)])
        kept = mask_ocean(recs, uniform_map005())
        assert len(kept) == 2

    def test_commutes_with_quality_filter(self):
        rng = np.random.default_rng(8)
        rows = [(float(rng.uniform(-60, 60)), float(rng.uniform(-179, 179)),
                 float(rng.uniform(0, 365)), 0.1, 0.01, int(rng.integers(0, 3)))
                for _ in range(300)]
        recs = make_records(rows)
        m = uniform_map005(12)
        m.codes[::7, ::11] = 17
        a = mask_ocean(filter_quality(recs), m)
        b = filter_quality(mask_ocean(recs, m))
        np.testing.assert_array_equal(a, b)


class TestUpscale:
    def test_mode_excluding_water(self):
        m = uniform_map005(17)
        block = m.codes[0:20, 0:20]
        block.flat[0:250] = 12
        block.flat[250:350] = 10
        block.flat[350:400] = 17
        up = upscale_landcover(m)
        assert up.codes[0, 0] == 12

    def test_all_water_cell_stays_water(self):
        up = upscale_landcover(uniform_map005(17))
        assert up.codes[37, 101] == 17

    def test_tie_breaks_to_lower_code(self):
        m = uniform_map005(17)
        block = m.codes[40:60, 40:60]
        block.flat[0:175] = 10
        block.flat[175:350] = 4
        block.flat[350:400] = 17
        up = upscale_landcover(m)
        assert up.codes[2, 2] == 4

    def test_invariant_to_pixel_traversal_order(self):
        rng = np.random.default_rng(1)
        m = uniform_map005(17)
        m.codes[:40, :40] = rng.integers(1, 18, (40, 40)).astype(np.uint8)
        up1 = upscale_landcover(m)
        flipped = LandCoverMap(resolution=0.05,
                               codes=np.ascontiguousarray(m.codes[::-1, ::-1]))
        up2 = upscale_landcover(flipped)
        np.testing.assert_array_equal(up1.codes, up2.codes[::-1, ::-1])

    def test_unclassified_loses_ties_to_numbered_classes(self):
        m = uniform_map005(17)
        block = m.codes[0:20, 20:40]
        block.flat[0:200] = 255
        block.flat[200:400] = 16
        up = upscale_landcover(m)
        assert up.codes[0, 1] == 16


class TestExcludeCells:
    def test_excluded_classes(self):
        codes = np.full((180, 360), 12, dtype=np.uint8)
        codes[0, 0] = 15
        codes[0, 1] = 16
        codes[0, 2] = 17
        codes[0, 3] = 255
        mask = exclude_cells(LandCoverMap(resolution=1.0, codes=codes))
        assert not mask[0, 0] and not mask[0, 1] and not mask[0, 2]
        assert mask[0, 3]  # unclassified remains modeled
        assert mask[100, 200]
        assert ingest.count_unclassified_cells(
            LandCoverMap(resolution=1.0, codes=codes), mask) == 1


class TestGroupCellYear:
    def _map1(self, code=10):
        return LandCoverMap(resolution=1.0,
                            codes=np.full((180, 360), code, dtype=np.uint8))

    def test_groups_by_cell_and_day(self):
        recs = make_records([(0.5, 0.5, 10.25, 0.1, 0.01, 0),
                             (0.6, 0.6, 10.75, 0.2, 0.01, 0),
                             (0.5, 0.5, 42.5, 0.3, 0.01, 0)])
        m1 = self._map1()
        datasets = group_cell_year(recs, m1, exclude_cells(m1), 2019)
        assert len(datasets) == 1
        ds = datasets[0]
        assert ds.cell_id == (90, 180)
        assert ds.land_cover == 10
        assert [d.n for d in ds.days] == [2, 1]
        assert ds.days[0].t == pytest.approx(10.5)

    def test_masked_cell_records_absent_and_counted(self):
        recs = make_records([(0.5, 0.5, 10.5, 0.1, 0.01, 0),
                             (10.5, 10.5, 10.5, 0.2, 0.01, 0)])
        m1 = self._map1()
        m1.codes[100, 190] = 16  # cell of (10.5, 10.5) becomes barren
        counters = RejectionCounters()
        datasets = group_cell_year(recs, m1, exclude_cells(m1), 2019, counters)
        assert [d.cell_id for d in datasets] == [(90, 180)]
        assert counters.masked_cell == 1

    def test_wrong_year_counted(self):
        recs = make_records([(0.5, 0.5, 10.5, 0.1, 0.01, 0)])
        counters = RejectionCounters()
        datasets = group_cell_year(recs, self._map1(),
                                   np.ones((180, 360), bool), 2020, counters)
        assert datasets == [] and counters.wrong_year == 1

    def test_conservation_on_large_random_input(self):
        rng = np.random.default_rng(12)
        n = 1_000_000
        recs = np.empty(n, dtype=SOUNDING_DTYPE)
        recs["latitude"] = rng.uniform(-89.9, 89.9, n)
        recs["longitude"] = rng.uniform(-180, 180, n)
        doy = rng.uniform(0, 365, n)
        recs["time"] = year_start_epoch(2019) + doy * 86400.0
        recs["day_of_year"] = doy
        recs["sif"] = rng.normal(0.3, 0.2, n)
        recs["sif_variance"] = 0.01
        recs["quality_flag"] = 0
        m1 = self._map1()
        m1.codes[::5, ::3] = 17  # a masked stripe pattern
        mask = exclude_cells(m1)
        counters = RejectionCounters()
        datasets = group_cell_year(recs, m1, mask, 2019, counters)
        kept = sum(d.n_soundings for d in datasets)
        assert kept + counters.total() == n
        assert counters.masked_cell > 0
        # partitioning: each dataset's soundings lie inside its cell (the
        # constructor enforces this) and days are strictly increasing
        probe = datasets[::500]
        for ds in probe:
            t = ds.t
            assert np.all(np.diff(t) > 0)


class TestAggregateTime:
    def _day(self, times):
        t0 = year_start_epoch(2019)
        doy = (np.asarray(times, dtype=float) - t0) / 86400.0
        recs = np.empty(len(times), dtype=SOUNDING_DTYPE)
        recs["latitude"] = 0.5
        recs["longitude"] = 0.5
        recs["time"] = times
        recs["day_of_year"] = doy
        recs["sif"] = 0.1
        recs["sif_variance"] = 0.01
        recs["quality_flag"] = 0
        return OverpassDay(t=float(doy.mean()), soundings=recs)

    def test_simple_average(self):
        t0 = year_start_epoch(2019)
        day = self._day([t0 + 100.0, t0 + 200.0])
        assert aggregate_time(day) == int(t0) + 150

    def test_single_sounding_passthrough(self):
        t0 = year_start_epoch(2019)
        day = self._day([t0 + 86400.0 * 3 + 41.0])
        assert aggregate_time(day) == int(t0) + 86400 * 3 + 41

    def test_rounding_half_up(self):
        t0 = year_start_epoch(2019)
        day = self._day([t0 + 100.0, t0 + 101.0])  # mean x.5 rounds up
        assert aggregate_time(day) == int(t0) + 101

    def test_coincident_time_takes_precedence(self):
        t0 = year_start_epoch(2019)
        day = self._day([t0 + 100.0])
        assert aggregate_time(day, coincident_xco2_time=t0 + 7777) == int(t0) + 7777


class TestGridIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        codes = rng.integers(0, 16, (180, 360)).astype(np.uint8)
        path = tmp_path / "biome.grid"
        write_grid(path, codes, 1.0)
        back, res, origin = read_grid(path)
        np.testing.assert_array_equal(back, codes)
        assert res == 1.0 and origin == (-90.0, -180.0)

    def test_landcover_map_roundtrip(self, tmp_path):
        m = uniform_map005(12)
        m.codes[7, 9] = 255
        path = tmp_path / "lc.grid"
        m.write(path)
        back = LandCoverMap.read(path)
        assert back.resolution == 0.05
        np.testing.assert_array_equal(back.codes, m.codes)

    def test_truncated_grid_rejected(self, tmp_path):
        path = tmp_path / "bad.grid"
        write_grid(path, np.full((180, 360), 10, np.uint8), 1.0)
        raw = path.read_bytes()
        path.write_bytes(raw[:-100])
        with pytest.raises(ValueError):
            read_grid(path)

    def test_biome_map_validates_codes(self):
        with pytest.raises(ValueError):
            BiomeMap(codes=np.full((180, 360), 99, dtype=np.uint8))


class TestSoundingsIO:
    def test_roundtrip(self, tmp_path):
        recs = make_records([(0.5, 0.5, 10.25, 0.1, 0.01, 0),
                             (-45.5, 120.5, 200.75, -0.05, 0.02, 1)])
        path = tmp_path / "soundings.csv"
        ingest.write_soundings(path, recs)
        back = ingest.read_soundings(path)
        np.testing.assert_array_equal(back, recs)

    def test_rejects_bad_variance(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("latitude,longitude,time_epoch_s,sif_740nm,"
                        "sif_variance,quality_flag\n0.5,0.5,1e9,0.1,0.0,0\n")
        with pytest.raises(ValueError, match="sif_variance"):
            ingest.read_soundings(path)

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="columns"):
            ingest.read_soundings(path)


class TestCellIndices:
    def test_half_open_cells(self):
        i, j, valid = cell_indices([0.0, -0.5, 89.999, -90.0],
                                   [0.0, -0.5, 179.999, -180.0])
        np.testing.assert_array_equal(i, [90, 89, 179, 0])
        np.testing.assert_array_equal(j, [180, 179, 359, 0])
        assert valid.all()

    def test_north_pole_is_out_of_range(self):
        _, _, valid = cell_indices([90.0], [0.0])
        assert not valid[0]
