import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

import hypercube.sweep as sweep_mod
from hypercube.config import ConfigError, find_config, load_config, opt_config, parse_config, setting
from hypercube.enumeration import EnumConfig
from hypercube.optimizer import OptConfig
from hypercube.svg import emit_scatter_svg, render_scatter_svg
from hypercube.sweep import (
    CSV_HEADER,
    FitResult,
    InsufficientData,
    RecordFormatError,
    SweepError,
    SweepRecord,
    fit_scaling,
    read_fit,
    read_records,
    run_sweep,
    write_fit,
    write_records,
)

CHEAP = OptConfig(restarts=1, penalty_schedule=((10.0, 200), (100.0, 200)), polish=False)
SVG_NS = {"svg": "http://www.w3.org/2000/svg"}


def make_record(order=5, loop_id=0, h=1, nv=0.5, B=2.8, R=0.4, converged=True, seed=0):
    n2 = order * order
    return SweepRecord(
        order=order, loop_id=loop_id, canonical_hash=h, n_v_norm=nv,
        H_min=(B + R) * n2, B_min=B * n2, R_min=R * n2,
        feas_residual=2e-4, converged=converged, restarts_used=8, seed=seed,
    )


def synthetic_records(c_R=0.5, c_B=0.14, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i, nv in enumerate(np.linspace(0, 1.5, 12)):
        order = 5 + i % 2
        R = c_R * nv + noise * rng.standard_normal()
        B = 3 - c_B * nv + noise * rng.standard_normal()
        out.append(make_record(order=order, loop_id=i, h=1000 + i, nv=float(nv), B=B, R=R))
    return out


# --- CSV ------------------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    recs = [make_record(h=2**63 + 5, nv=1 / 3), make_record(order=6, h=7, converged=False)]
    path = tmp_path / "s.csv"
    write_records(recs, path)
    assert read_records(path) == sorted(recs, key=SweepRecord.sort_key)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert "8000000000000005" in lines[1] and "false" in lines[2]


def test_empty_record_list_writes_header_only(tmp_path):
    path = tmp_path / "e.csv"
    write_records([], path)
    assert path.read_text() == ",".join(CSV_HEADER) + "\n"
    assert read_records(path) == []


def test_missing_column_is_reported(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(",".join(h for h in CSV_HEADER if h != "R_min") + "\n")
    with pytest.raises(RecordFormatError) as err:
        read_records(path)
    assert err.value.line == 1 and "R_min" in str(err.value)


def test_bad_row_names_its_line(tmp_path):
    path = tmp_path / "bad.csv"
    write_records([make_record(h=1), make_record(h=2)], path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace("true", "maybe")
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(RecordFormatError, match="line 3"):
        read_records(path)
    path.write_text("")
    with pytest.raises(RecordFormatError, match="line 1"):
        read_records(path)


# --- fits -------------------------------------------------------------------------


@pytest.mark.parametrize("fixed", [True, False])
def test_fit_recovers_exact_slopes(fixed):
    fit = fit_scaling(synthetic_records(), fixed_intercepts=fixed)
    assert fit.c_R == pytest.approx(0.5, abs=1e-12)
    assert fit.c_B == pytest.approx(0.14, abs=1e-12)
    assert fit.c_H == pytest.approx(0.36, abs=1e-12)
    assert fit.c_ratio == pytest.approx(0.28, abs=1e-12)
    assert fit.intercept_B == pytest.approx(3.0, abs=1e-12)
    assert fit.r_squared[0] == pytest.approx(1.0)
    assert fit.line("B") == (pytest.approx(3.0), pytest.approx(-0.14))
    assert set(fit.per_order) == {5, 6}


@pytest.mark.parametrize("fixed", [True, False])
def test_fit_slope_identity_with_noise(fixed):
    fit = fit_scaling(synthetic_records(noise=0.05, seed=3), fixed_intercepts=fixed)
    assert fit.c_H == pytest.approx(fit.c_R - fit.c_B, abs=1e-12)


def test_fit_quarantines_unconverged():
    recs = synthetic_records()
    recs.append(make_record(h=99, nv=0.7, B=0.0, R=50.0, converged=False))
    fit = fit_scaling(recs)
    assert fit.n_points == 12
    assert fit.quarantine == [{"order": 5, "loop_id": 0, "canonical_hash": f"{99:016x}"}]
    assert fit.c_R == pytest.approx(0.5, abs=1e-12)


def test_fit_needs_spread():
    with pytest.raises(InsufficientData):
        fit_scaling([make_record(h=1), make_record(h=2)])
    with pytest.raises(InsufficientData):
        fit_scaling([])


def test_fit_json_round_trip(tmp_path):
    fit = fit_scaling(synthetic_records(noise=0.01))
    path = tmp_path / "fit.json"
    write_fit(fit, path)
    json.loads(path.read_text())
    back = read_fit(path)
    assert back == fit
    assert FitResult.from_json(fit.to_json()) == fit


# --- sweep runner -----------------------------------------------------------------


def test_sweep_order4_and_resume(tmp_path, monkeypatch):
    path = tmp_path / "s4.csv"
    recs = run_sweep([4], CHEAP, path=path)
    assert len(recs) == 2
    assert sorted(r.n_v_norm for r in recs)[0] == 0.0
    assert read_records(path) == recs

    calls = []
    original = sweep_mod.optimize_loop
    monkeypatch.setattr(sweep_mod, "optimize_loop", lambda *a: calls.append(a) or original(*a))
    again = run_sweep([4], CHEAP, path=path)
    assert calls == [] and again == recs

    # a different optimizer setting invalidates the cached records
    run_sweep([4], OptConfig(restarts=1, penalty_schedule=((10.0, 150),), polish=False), path=path)
    assert len(calls) == 2


def test_sweep_workers_match_serial():
    serial = run_sweep([4], CHEAP)
    parallel = run_sweep([4], CHEAP, workers=2)
    assert serial == parallel


def test_sweep_order5_has_six_records():
    recs = run_sweep([5], CHEAP)
    assert len(recs) == 6
    assert len({r.canonical_hash for r in recs}) == 6
    assert sum(r.n_v_norm == 0 for r in recs) == 1


def test_sweep_guards():
    with pytest.raises(SweepError):
        run_sweep([9], CHEAP)
    with pytest.raises(SweepError):
        run_sweep([4], CHEAP, enum_cfgs={4: EnumConfig(4, dedup="none")})
    with pytest.raises(SweepError):
        run_sweep([4], CHEAP, workers=0)


# --- SVG --------------------------------------------------------------------------


def test_svg_has_three_panels_and_is_deterministic(tmp_path):
    recs = synthetic_records(noise=0.02)
    fit = fit_scaling(recs)
    text = render_scatter_svg(recs, fit)
    root = ET.fromstring(text)
    panels = root.findall(".//svg:g[@class='panel']", SVG_NS)
    assert [p.get("id") for p in panels] == ["panel-H", "panel-R", "panel-B"]
    assert len(root.findall(".//svg:text[@class='slope']", SVG_NS)) == 3
    assert render_scatter_svg(recs, fit) == text
    emit_scatter_svg(recs, fit, tmp_path / "a.svg")
    assert (tmp_path / "a.svg").read_text() == text


def test_svg_single_point_has_no_fit_line():
    root = ET.fromstring(render_scatter_svg([make_record()], None))
    assert root.findall(".//svg:text[@class='slope']", SVG_NS) == []
    assert len(root.findall(".//svg:g[@class='panel']", SVG_NS)) == 3
    with pytest.raises(ValueError):
        render_scatter_svg([])


# --- config -----------------------------------------------------------------------


def test_parse_config():
    vals = parse_config("# comment\nrestarts = 3\npenalty_schedule = 10:5,100:7\npolish = off\nc = 0.3\n")
    assert vals == {"restarts": 3, "penalty_schedule": ((10.0, 5), (100.0, 7)), "polish": False, "c": 0.3}
    with pytest.raises(ConfigError, match="x.conf:2"):
        parse_config("restarts = 2\nbogus = 1\n", "x.conf")
    with pytest.raises(ConfigError, match=":1:"):
        parse_config("restarts = many\n")
    with pytest.raises(ConfigError):
        parse_config("restarts\n")


def test_config_precedence(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("HYPERCUBE_CONF", raising=False)
    assert find_config() is None and load_config() == {}
    (tmp_path / "hypercube.conf").write_text("restarts = 3\nseed = 4\nworkers = 2\n")
    other = tmp_path / "other.conf"
    other.write_text("restarts = 5\n")
    assert load_config()["restarts"] == 3
    monkeypatch.setenv("HYPERCUBE_CONF", str(other))
    assert load_config() == {"restarts": 5}
    assert load_config(tmp_path / "hypercube.conf")["seed"] == 4

    file_values = load_config(tmp_path / "hypercube.conf")
    cfg = opt_config(file_values, {"seed": 9, "restarts": None})
    assert (cfg.restarts, cfg.seed) == (3, 9)
    assert setting("workers", None, file_values, 1) == 2
    assert setting("workers", 6, file_values, 1) == 6
    assert setting("sample", None, file_values, 200) == 200
    with pytest.raises(ConfigError):
        opt_config({"restarts": 0})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.conf")


# --- invariants on the cached order 5 and 6 sweep ------------------------------


def test_sweep_record_invariants(sweep_records):
    assert len(sweep_records) == 6 + 109
    assert sweep_records == sorted(sweep_records, key=SweepRecord.sort_key)
    for r in sweep_records:
        if not r.converged:
            continue
        assert abs(r.H_min - r.B_min - r.R_min) < 1e-6 * max(1.0, r.H_min)
        assert r.H_norm >= 3 - 0.02
        if r.n_v_norm == 0:
            assert r.R_norm < 1e-3
        else:
            assert r.R_norm > 1e-3
    group5 = [r for r in sweep_records if r.order == 5 and r.n_v_norm == 0]
    assert len(group5) == 1 and abs(group5[0].H_norm - 3.0) <= 0.05


def test_svg_of_order5_sweep(sweep_records):
    order5 = [r for r in sweep_records if r.order == 5]
    root = ET.fromstring(render_scatter_svg(order5, fit_scaling(order5)))
    for panel in root.findall(".//svg:g[@class='panel']", SVG_NS):
        markers = panel.findall(".//svg:*[@class='point']", SVG_NS)
        assert len(markers) == 6
