import json
import logging
from dataclasses import replace

import numpy as np
import pytest

from csstrack.bench.cli import main
from csstrack.bench.config import ConfigError, gyro_study, load_config, piezo_study, render_template
from csstrack.bench.plants import (
    GYRO_TS,
    GyroParams,
    GyroProfile,
    PiezoParams,
    build_gyro,
    draw_piezo,
    gyro_design,
    piezo_antiresonance,
    piezo_discrete,
    piezo_resonance,
    sensitivity,
    theoretical_resonance,
)
from csstrack.bench.scenarios import MonteCarloSpec, RunResult, combo_summary, run_piezo_monte_carlo
from csstrack.tracker import TrackerConfig


# ------------------------------------------------------------------ piezo
def test_piezo_resonances():
    p = PiezoParams()
    assert piezo_resonance(p) == pytest.approx(3.4837e5, rel=1e-4)
    assert piezo_antiresonance(p) == pytest.approx(3.5526e5, rel=1e-4)


def test_piezo_discrete_dc_gain_and_mode():
    p = PiezoParams()
    sys = piezo_discrete(p)
    dc = sys.C @ np.linalg.solve(np.eye(sys.n) - sys.A, sys.B) + sys.D
    assert dc[0, 0] == pytest.approx((p.C0 + p.Cm) * 1e6, rel=1e-9)
    lam = np.linalg.eigvals(sys.A)
    wn = piezo_resonance(p) * 1e-6
    assert np.max(np.abs(np.angle(lam))) == pytest.approx(wn, rel=1e-3)


def test_piezo_draws_are_uniform_and_bounded():
    rng = np.random.default_rng(0)
    nominal = PiezoParams()
    draws = np.array([[getattr(draw_piezo(nominal, 0.1, rng), f) / getattr(nominal, f)
                       for f in ("C0", "Rm", "Lm", "Cm")] for _ in range(4000)])
    assert draws.min() >= 0.9 and draws.max() <= 1.1
    assert np.allclose(draws.mean(axis=0), 1.0, atol=0.005)
    assert np.allclose(draws.std(axis=0), 0.1 / np.sqrt(3), rtol=0.05)
    assert draw_piezo(nominal, 0.0, rng) == nominal


# ------------------------------------------------------------------- gyro
def test_gyro_open_loop_modes():
    p = GyroParams()
    wn = np.sqrt(np.linalg.eigvalsh(np.asarray(p.K_g))) * GYRO_TS
    assert theoretical_resonance(p, 0.0) == pytest.approx(wn[0], rel=1e-4)
    A = build_gyro(p, 0.7).A
    Om = -(A[2:, 2:] + np.asarray(p.D_g)) / 2
    assert np.allclose(Om, -Om.T) and Om[1, 0] == pytest.approx(0.7)


def test_gyro_rotation_splits_modes_and_is_reversible():
    p = GyroParams()
    w0 = theoretical_resonance(p, 0.0)
    assert theoretical_resonance(p, 0.5) < w0
    upper = lambda wz: theoretical_resonance(p, wz, hint=0.41)  # noqa: E731
    assert upper(0.5) > upper(0.0)
    assert theoretical_resonance(p, -0.5) == pytest.approx(theoretical_resonance(p, 0.5), abs=1e-12)


@pytest.mark.parametrize("feedback,expected", [(False, 0.15), (True, 0.5)])
def test_gyro_sensitivity(feedback, expected):
    p = GyroParams()
    K = gyro_design(p).K if feedback else None
    s = sensitivity(p, K)
    assert abs(s) == pytest.approx(expected, rel=0.2)
    d = 1e-4
    central = (theoretical_resonance(p, 0.5 + d, K) - theoretical_resonance(p, 0.5 - d, K)) / (2 * d * GYRO_TS)
    assert central == pytest.approx(s, rel=0.1)


def test_gyro_profiles():
    assert [GyroProfile("step")(k, 9) for k in (0, 2, 3, 8)] == [0, 0, 1, 1]
    ramp = GyroProfile("ramp", 2.0)
    assert [ramp(k, 9) for k in (0, 3, 4, 6, 8)] == pytest.approx([0, 0, 2 / 3, 2, 2])
    assert GyroProfile("constant", 0.3)(0, 10) == 0.3
    with pytest.raises(ValueError):
        GyroProfile("sine")
    with pytest.raises(ValueError):
        GyroParams(K_g=((1.0, 2.0), (2.0, 1.0)))


# -------------------------------------------------------------- Monte Carlo
SMALL = MonteCarloSpec(n_plants=1, steps=4000, envelope_sources=("exact-css",), estimators=("rpem",),
                       update_laws=("direct",))


def test_nominal_plant_converges():
    # starts on the true resonance; only the noise-driven transient must settle
    (r,) = run_piezo_monte_carlo(replace(SMALL, relative_uncertainty=0.0, steps=10_000))
    assert r.meta["converged"] and not r.meta["diverged"]
    assert r.relative_error[0] == pytest.approx(0.0, abs=1e-12)
    assert r.meta["omega_true"] == pytest.approx(np.median(r.column("omega")), rel=1e-3)


def test_oracle_column_matches_plant_eigenvalue():
    (r,) = run_piezo_monte_carlo(replace(SMALL, steps=200))
    sys = piezo_discrete(PiezoParams(**r.meta["params"]))
    w = max(np.angle(np.linalg.eigvals(sys.A)))
    assert np.all(r.column("omega_true") == r.meta["omega_true"])
    assert r.meta["omega_true"] == pytest.approx(w, abs=1e-12)


def test_failed_run_is_logged_and_batch_continues(caplog):
    bad = replace(TrackerConfig(), gamma=-1.0)
    spec = replace(SMALL, n_plants=2, steps=200)
    with caplog.at_level(logging.ERROR):
        res = run_piezo_monte_carlo(spec, {"rpem": bad})
    assert len(res) == 2 and all("error" in r.meta for r in res)
    assert "failed" in caplog.text
    summary = combo_summary(res)
    assert summary["exact-css/rpem/direct"]["converged"] == 0


def test_relative_error_metrics():
    rows = np.zeros((10, 9))
    rows[:, 8] = 1.0
    rows[:, 1] = [1.1, 1.0, 1.05, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0005]
    r = RunResult(rows)
    assert r.convergence_time(1e-2) == 3
    assert r.steady_error() == pytest.approx(5e-4)
    with pytest.raises(ValueError):
        RunResult(np.zeros((3, 4)))


def test_batch_is_deterministic_across_workers(tmp_path):
    spec = MonteCarloSpec(n_plants=2, steps=600, envelope_sources=("sndtft",), estimators=("rpem",))
    a = run_piezo_monte_carlo(spec)
    b = run_piezo_monte_carlo(replace(spec, workers=2))
    for i, (x, y) in enumerate(zip(a, b)):
        x.to_csv(tmp_path / f"a{i}.csv")
        y.to_csv(tmp_path / f"b{i}.csv")
        assert (tmp_path / f"a{i}.csv").read_bytes() == (tmp_path / f"b{i}.csv").read_bytes()


# ------------------------------------------------------------------ config
def test_defaults_round_trip_through_template():
    for study in ("piezo", "gyro"):
        assert load_config(None, study, text=render_template(study), env={}) == load_config(None, study, env={})


@pytest.mark.parametrize("text,needle", [
    ("[run]\nseed = 1\n[bogus]\nx = 1\n", "<config>:3: unknown section [bogus]"),
    ("[run]\nseed = 1\nspeed = 2\n", "<config>:3: unknown key 'speed'"),
    ("[run]\nseed = one\n", "<config>:2: [run] seed"),
    ("seed = 1\n", "<config>:1: key outside"),
    ("[run]\nseed = 1\nseed = 2\n", "<config>:3: duplicate key"),
    ("[run]\nbackend = gpu\n", "expected one of compiled, python"),
])
def test_config_errors_name_the_line(text, needle):
    with pytest.raises(ConfigError) as exc:
        load_config(None, "piezo", text=text, env={})
    assert needle in str(exc.value)


def test_config_semantic_errors():
    cfg = load_config(None, "piezo", text="[rpem]\ngamma = -1\n", env={})
    with pytest.raises(ConfigError):
        piezo_study(cfg)
    cfg = load_config(None, "gyro", text="[gyro]\nK_g = 1, 2, 3\n", env={})
    with pytest.raises(ConfigError, match="4 numbers"):
        gyro_study(cfg)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/x.cfg", "piezo")


def test_seed_environment_override():
    assert load_config(None, "piezo", text="[run]\nseed = 3\n", env={"TRACK_SEED": "11"})["run"]["seed"] == 11
    assert load_config(None, "piezo", text="[run]\nseed = 3\n", env={})["run"]["seed"] == 3
    with pytest.raises(ConfigError):
        load_config(None, "piezo", env={"TRACK_SEED": "x"})


def test_config_values_reach_the_study():
    cfg = load_config(None, "piezo", env={}, text="[montecarlo]\nn_plants = 3\nestimators = mhe\n"
                                                  "[mhe]\nNh = 100\n[rayleigh]\nlive_h = yes\n")
    st = piezo_study(cfg)
    assert st.spec.n_plants == 3 and st.spec.estimators == ("mhe",)
    assert st.configs["mhe"].Nh == 100 and st.configs["mhe"].rayleigh_live_h
    g = gyro_study(load_config(None, "gyro", env={}, text="[gyro]\nfeedback = no\n"), profile="ramp")
    assert g.spec.Qc is None and g.params.omega_z_profile.kind == "ramp"


# --------------------------------------------------------------------- CLI
def test_cli_piezo_writes_csv_and_summary(tmp_path, capsys):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("[montecarlo]\nn_plants = 1\nenvelope_sources = exact-css\nupdate_laws = direct\n")
    assert main(["piezo", "--config", str(cfg), "--steps", "300", "--out", str(tmp_path / "o")]) == 0
    files = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert files == ["piezo_000_exact-css_mhe_direct.csv", "piezo_000_exact-css_rpem_direct.csv",
                     "summary.json"]
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["spec"]["steps"] == 300 and "workers" not in summary["spec"]
    header = (tmp_path / "o" / files[0]).read_text().splitlines()[0]
    assert header == "k,omega,theta,h_re,h_im,lambda_re,lambda_im,innovation,omega_true"
    assert "exact-css/rpem/direct" in capsys.readouterr().out


def test_cli_gyro_and_oracle(tmp_path, capsys):
    assert main(["gyro", "--steps", "600", "--profile", "step", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "gyro_step_rpem_rayleigh.csv").exists()
    assert main(["oracle", "gyro"]) == 0
    out = capsys.readouterr().out
    assert "sensitivity closed loop -0.4357" in out
    assert main(["oracle", "piezo", "--plants", "2"]) == 0
    assert "plant   1" in capsys.readouterr().out


def test_cli_errors_and_template(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nsteps = many\n")
    assert main(["piezo", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert f"{bad}:2:" in capsys.readouterr().err
    assert main(["template", "gyro"]) == 0
    assert "[profile]" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        main(["piezo", "--backend", "gpu"])


def test_cli_verify_subset(capsys):
    assert main(["verify", "--criteria", "2", "4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and all(line.startswith("[PASS]") for line in lines)
