from __future__ import annotations

import dataclasses
import math

import pytest
from hypothesis import given, strategies as st

from dclc.catalog import (CatalogError, GrowthRegime, HardwareSku, ModelSpec, format_month, frontier_models,
                          lineages, model_from_record, model_to_record, parse_month, project_hardware_roadmap,
                          project_model_roadmap, release_cadence, seed_catalog, sku_from_record, sku_to_record)

from oracles import geometric_next, linear_next

LINEAR = GrowthRegime("medium-linear", 1.0)


def sku(id="X", month="2020-01", flops=100.0, bw=1e12, mem=8e11, tdp=10_000, cost=10_000_000, **kw):
    return HardwareSku(id, "gpu-server", parse_month(month), kw.pop("delay", 3), flops, bw, mem, tdp, 8, cost,
                       "nvlink", **kw)


def model(id="m", month="2022-01", params=100e9, arch="dense-transformer", **kw):
    return ModelSpec(id, parse_month(month), params, kw.pop("active", params), arch, 80, 8192, 2, 3e5, **kw)


def test_month_round_trip():
    assert parse_month("2024-03") == 2024 * 12 + 2
    assert format_month(parse_month("2015-12")) == "2015-12"
    with pytest.raises(CatalogError):
        parse_month("2024-13")


def test_available_month_is_derived():
    s = sku(delay=9)
    assert s.available_month == s.release_month + 9
    assert "available_month" not in {f.name for f in dataclasses.fields(HardwareSku)}


@pytest.mark.parametrize("field,value", [("peak_flops", 0.0), ("mem_bandwidth", -1.0), ("tdp_server_watts", 0),
                                         ("server_cost_cents", 0)])
def test_sku_rejects_non_positive(field, value):
    with pytest.raises(CatalogError):
        dataclasses.replace(sku(), **{field: value})


def test_sku_rejects_negative_delay():
    with pytest.raises(CatalogError):
        sku(delay=-1)


def test_dense_model_needs_equal_active_params():
    with pytest.raises(CatalogError):
        model(active=50e9)
    assert model(arch="moe", active=50e9).active_params == 50e9


def test_zero_kv_only_for_ssm():
    with pytest.raises(CatalogError):
        dataclasses.replace(model(), kv_bytes_per_token=0.0)
    ssm = dataclasses.replace(model(arch="ssm"), kv_bytes_per_token=0.0, state_bytes=1e6)
    assert ssm.kv_bytes_per_token == 0


def test_lineage_release_months_must_increase():
    with pytest.raises(CatalogError):
        lineages([sku("a", "2020-01"), sku("b", "2020-01")])


def test_regime_validation():
    with pytest.raises(CatalogError):
        GrowthRegime("medium-linear", 0.0)
    with pytest.raises(CatalogError):
        GrowthRegime("quadratic", 1.0)


def test_shipped_catalog_round_trips():
    skus, models = seed_catalog()
    assert skus and models
    for s in skus:
        assert sku_from_record(sku_to_record(s)) == s
    for m in models:
        assert model_from_record(model_to_record(m)) == m


def test_shipped_lineage_projects_about_one_generation_per_year():
    skus, _ = seed_catalog()
    nvidia = lineages(skus)["nvidia"]
    out = project_hardware_roadmap(nvidia, parse_month("2030-12"), LINEAR)
    cadence = release_cadence([s.release_month for s in nvidia])
    assert 6 <= cadence <= 18
    added = out[len(nvidia):]
    assert len(added) >= 3
    gaps = {b.release_month - a.release_month for a, b in zip(out[len(nvidia) - 1:], added)}
    assert gaps == {cadence}


def test_horizon_at_last_release_leaves_roadmap_unchanged():
    seeds = [sku("a", "2018-01"), sku("b", "2020-01", flops=200.0)]
    assert project_hardware_roadmap(seeds, seeds[-1].release_month, LINEAR) == seeds
    ms = [model("a", "2020-01", 10e9), model("b", "2022-01", 20e9)]
    assert project_model_roadmap(ms, ms[-1].release_month, LINEAR) == ms


def test_two_point_linear_flops():
    seeds = [sku("a", "2020-01", flops=100.0), sku("b", "2022-01", flops=200.0)]
    out = project_hardware_roadmap(seeds, parse_month("2024-01"), LINEAR)
    assert len(out) == 3
    assert out[2].release_month == parse_month("2024-01")
    assert out[2].peak_flops == pytest.approx(linear_next(2020, 100, 2022, 200, 2024))
    assert out[2].peak_flops == pytest.approx(300.0)


def test_two_point_geometric_params():
    seeds = [model("a", "2022-01", 100e9), model("b", "2024-01", 200e9)]
    out = project_model_roadmap(seeds, parse_month("2026-01"), GrowthRegime("fast-exponential", 1.0))
    assert out[-1].total_params == pytest.approx(geometric_next(2022, 100e9, 2024, 200e9, 2026))
    assert out[-1].total_params == pytest.approx(400e9)


def test_sublinear_is_square_root_in_years():
    seeds = [sku("a", "2020-01", flops=100.0), sku("b", "2022-01", flops=200.0)]
    out = project_hardware_roadmap(seeds, parse_month("2026-01"), GrowthRegime("slow-sublinear", 1.0))
    # slope 50/yr applied to sqrt(years since the last seed)
    assert [s.peak_flops for s in out[2:]] == pytest.approx([200 + 50 * math.sqrt(2), 200 + 50 * 2])


def test_model_projection_grows_linearly_past_seeds():
    _, models = seed_catalog()
    seeds = frontier_models(models)
    out = project_model_roadmap(seeds, parse_month("2030-12"), LINEAR)[len(seeds):]
    assert len(out) >= 3
    steps = [b.total_params - a.total_params for a, b in zip(out, out[1:])]
    assert all(s > 0 for s in steps)
    assert steps == pytest.approx([steps[0]] * len(steps))
    assert all(m.architecture == seeds[-1].architecture and m.bytes_per_param == seeds[-1].bytes_per_param
               for m in out)


def test_projection_errors():
    with pytest.raises(CatalogError):
        project_hardware_roadmap([], parse_month("2030-01"), LINEAR)
    seeds = [sku("a", "2020-01"), sku("b", "2022-01")]
    with pytest.raises(CatalogError):
        project_hardware_roadmap(seeds, parse_month("2021-01"), LINEAR)
    falling = [sku("a", "2020-01", tdp=20_000), sku("b", "2022-01", tdp=10_000)]
    with pytest.raises(CatalogError, match="non-positive"):
        project_hardware_roadmap(falling, parse_month("2030-01"), GrowthRegime("medium-linear", 3.0))


def test_projected_skus_carry_the_synthetic_delay():
    seeds = [sku("a", "2020-01"), sku("b", "2022-01", flops=200.0)]
    out = project_hardware_roadmap(seeds, parse_month("2026-01"), GrowthRegime("medium-linear", 1.0, synthetic_delay=11))
    assert {s.availability_delay_months for s in out[2:]} == {11}
    assert GrowthRegime("medium-linear", 1.0).synthetic_delay == 9


def test_flat_cost_option():
    seeds = [sku("a", "2020-01", cost=100), sku("b", "2022-01", flops=200.0, cost=300)]
    flat = GrowthRegime("medium-linear", 1.0, cost_follows_trend=False)
    out = project_hardware_roadmap(seeds, parse_month("2026-01"), flat)
    assert {s.server_cost_cents for s in out[2:]} == {300}


# --- properties ------------------------------------------------------------

seed_series = st.lists(st.tuples(st.integers(6, 30), st.floats(1.0, 1e3), st.floats(1.0, 1e3)),
                       min_size=2, max_size=6)
shapes = st.sampled_from(("slow-sublinear", "medium-linear", "fast-exponential"))


def _seeds(series):
    month = parse_month("2010-01")
    out = []
    flops = bw = 0.0
    for gap, df, db in series:
        month += gap
        flops += df
        bw += db
        out.append(sku(f"s{month}", format_month(month), flops=flops, bw=bw))
    return out


@given(seed_series, shapes, st.floats(0.2, 2.0), st.integers(0, 120))
def test_projection_is_monotone_and_deterministic(series, shape, rate, extra):
    seeds = _seeds(series)
    regime = GrowthRegime(shape, rate)
    horizon = seeds[-1].release_month + extra
    out = project_hardware_roadmap(seeds, horizon, regime)
    assert out == project_hardware_roadmap(seeds, horizon, regime)
    flops = [s.peak_flops for s in out[len(seeds) - 1:]]
    assert all(b >= a for a, b in zip(flops, flops[1:]))


@given(seed_series, shapes, st.integers(0, 120), st.integers(0, 120))
def test_truncation_idempotence(series, shape, a, b):
    seeds = _seeds(series)
    regime = GrowthRegime(shape, 1.0)
    short, long = sorted((a, b))
    h_short = seeds[-1].release_month + short
    h_long = seeds[-1].release_month + long
    trimmed = [s for s in project_hardware_roadmap(seeds, h_long, regime) if s.release_month <= h_short]
    assert trimmed == project_hardware_roadmap(seeds, h_short, regime)


@given(st.lists(st.tuples(st.integers(6, 30), st.floats(1.0, 1e11)), min_size=2, max_size=6), shapes)
def test_model_params_non_decreasing(series, shape):
    month = parse_month("2012-01")
    seeds, params = [], 0.0
    for gap, dp in series:
        month += gap
        params += dp
        seeds.append(model(f"m{month}", format_month(month), params))
    out = project_model_roadmap(seeds, month + 96, GrowthRegime(shape, 1.0))
    sizes = [m.total_params for m in out[len(seeds) - 1:]]
    assert all(b >= a for a, b in zip(sizes, sizes[1:]))
