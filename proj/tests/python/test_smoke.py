import math

import pytest

import lapstrat


def test_version():
    assert lapstrat.__version__


def test_lap_simulation_on_preset():
    g = lapstrat.make_preset("oval-1km")
    assert g.length == pytest.approx(1000.0)
    p = lapstrat.default_params()
    lap = lapstrat.simulate_lap(g, p, lapstrat.StrategyBudgets.unlimited(g))
    assert 15.0 < lap.lap_time < 60.0
    assert len(lap.speed) == 500
    assert min(lap.speed) > 0.0

    fuel_only = lapstrat.StrategyBudgets.unlimited(g)
    fuel_only.e_el_j = [0.0 for _ in fuel_only.e_el_j]
    slower = lapstrat.simulate_lap(g, p, fuel_only)
    assert slower.lap_time > lap.lap_time
    assert slower.e_el_used_j == pytest.approx(0.0)


def test_dbscan_labels():
    labels = lapstrat.dbscan([1.0, 1.1, 1.2, 40.0], eps=0.5, min_pts=3)
    assert labels == [0, 0, 0, -1]


def test_cleaning_round_trip():
    records = []
    for lap in range(1, 11):
        r = lapstrat.SectorTimeRecord()
        r.car_number = 7
        r.lap = lap
        r.car_class = "LMP1"
        r.s1, r.s2, r.s3 = 30.0, 28.0, 22.0
        if lap == 4:
            r.s2 += 15.0
        r.elapsed = 80.0 * lap
        records.append(r)
    cleaned = lapstrat.clean_laps(records, eps_s=2.0, min_pts=5)
    assert len(cleaned.retained) == 9
    assert [r.lap for r in cleaned.rejected] == [4]
    assert cleaned.rejected[0].reason == "outlier"

    text = lapstrat.sector_times_to_string(records)
    again = lapstrat.parse_sector_times_string(text)
    assert [r.lap_time for r in again] == pytest.approx([r.lap_time for r in records])


def test_speed_reconstruction_round_trip():
    g = lapstrat.make_preset("oval-1km")
    p = lapstrat.default_params()
    lap = lapstrat.simulate_lap(g, p, lapstrat.StrategyBudgets.unlimited(g))

    ref = lapstrat.ReferenceProfile()
    n = len(lap.speed)
    ref.s = [g.length * k / n for k in range(n + 1)]
    ref.v = lap.speed + [lap.speed[0]]
    ref.sector_times = lapstrat.lethargy_sector_times(ref, [1.0, 1.0, 1.0], g)
    ref.validate(g)

    scaled = [1.05 * t for t in ref.sector_times]
    v = lapstrat.reconstruct_speed(ref, scaled, g)
    back = lapstrat.lethargy_sector_times(ref, scaled, g)
    assert len(v) == len(ref.v)
    for got, want in zip(back, scaled):
        assert got == pytest.approx(want, rel=0.01)


def test_pipeline_stages(tmp_path):
    cfg = lapstrat.config_from_string(
        "\n".join(
            [
                "seed = 3",
                f"out_dir = {tmp_path}/out",
                "synth.cars_lmp1 = 1",
                "synth.cars_lmp2 = 0",
                "synth.cars_gtepro = 0",
                "synth.cars_gteam = 2",
                "synth.laps = 30",
                "stages = synth, ingest, stats",
            ]
        )
    )
    results = lapstrat.run_stages(cfg)
    assert [r.stage for r in results] == ["synth", "ingest", "stats"]
    for r in results:
        assert r.artifacts and r.artifacts[-1].endswith("manifest.json")

    with pytest.raises(lapstrat.PipelineError, match="run simulate first"):
        lapstrat.cmd_evaluate(cfg)

    round_trip = lapstrat.config_from_string(lapstrat.config_to_string(cfg))
    assert lapstrat.config_to_string(round_trip) == lapstrat.config_to_string(cfg)


def test_math_is_finite_everywhere():
    g = lapstrat.make_preset("road-2km")
    p = lapstrat.default_params()
    lap = lapstrat.simulate_lap(g, p, lapstrat.StrategyBudgets.unlimited(g))
    assert all(math.isfinite(v) for v in lap.speed)
    assert math.isfinite(lap.fuel_kg) and lap.fuel_kg > 0.0
