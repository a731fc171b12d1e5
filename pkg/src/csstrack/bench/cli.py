"""``track`` command-line front end."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import SCHEMAS, ConfigError, gyro_study, load_config, piezo_study, render_template
from .plants import (
    GyroProfile,
    gyro_design,
    piezo_antiresonance,
    piezo_discrete,
    piezo_resonance,
    sensitivity,
    theoretical_resonance,
)
from .scenarios import combo_summary, plant_draw, run_gyro_scenario, run_piezo_monte_carlo

log = logging.getLogger("csstrack.cli")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _write_json(path: Path, data) -> None:
    text = json.dumps(data, sort_keys=True, indent=2, default=_jsonable, allow_nan=True)
    path.write_text(text + "\n", encoding="utf-8")


def _spec_dict(spec) -> dict:
    d = asdict(spec)
    d.pop("workers", None)  # scheduling only; results do not depend on it
    return d


# ------------------------------------------------------------------ commands
def cmd_piezo(args) -> int:
    cfg = load_config(args.config, "piezo")
    study = piezo_study(cfg)
    spec = study.spec
    over = {k: v for k, v in (("seed", args.seed), ("n_plants", args.plants), ("steps", args.steps),
                              ("workers", args.workers), ("backend", args.backend)) if v is not None}
    spec = replace(spec, **over)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_piezo_monte_carlo(spec, study.configs)
    for r in results:
        m = r.meta
        r.to_csv(out / f"piezo_{m['run']:03d}_{m['envelope_source']}_{m['estimator']}_{m['update_law']}.csv")
    summary = combo_summary(results)
    _write_json(out / "summary.json", {"study": "piezo", "spec": _spec_dict(spec),
                                       "combinations": summary, "runs": [r.meta for r in results]})
    for key, s in summary.items():
        fmt = lambda v, f: "n/a" if v is None else format(v, f)  # noqa: E731
        print(f"{key:28s} converged {s['converged']}/{s['runs']}  "
              f"mean convergence {fmt(s['mean_convergence_time'], '.0f')}  "
              f"max steady {fmt(s['max_steady_error'], '.3g')}")
    if args.plot:
        from .report import plot_piezo
        plot_piezo(results, out / "piezo.png")
    return 0


def cmd_gyro(args) -> int:
    cfg = load_config(args.config, "gyro")
    study = gyro_study(cfg, profile=args.profile, update_law=args.update, estimator=args.estimator)
    over = {k: v for k, v in (("seed", args.seed), ("steps", args.steps), ("backend", args.backend))
            if v is not None}
    spec = replace(study.spec, **over)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_gyro_scenario(study.params, spec=spec, overrides=study.overrides)
    m = res.meta
    name = f"gyro_{m['profile']['kind']}_{m['estimator']}_{m['update_law']}"
    res.to_csv(out / f"{name}.csv")
    err = (res.column("omega") - res.column("omega_true")) / spec.Ts
    m["max_abs_error"] = float(np.nanmax(np.abs(err)))
    _write_json(out / "summary.json", {"study": "gyro", "spec": _spec_dict(spec), "run": m})
    print(f"{name}: steady offset {m['steady_error']:.4g} rad/time "
          f"(theoretical shift {m['theoretical_shift']:.4g}, std {m['steady_std']:.3g})")
    if args.plot:
        from .report import plot_gyro
        plot_gyro(res, spec.Ts, out / f"{name}.png")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suites
    results = run_suites(args.criteria, seed=args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_oracle(args) -> int:
    cfg = load_config(args.config, args.study)
    if args.study == "piezo":
        spec = piezo_study(cfg).spec
        if args.plants is not None:
            spec = replace(spec, n_plants=args.plants)
        p = spec.nominal
        wr, wa = piezo_resonance(p), piezo_antiresonance(p)
        print(f"nominal resonance      {wr:.6g} rad/s  {wr / (2 * np.pi):.6g} Hz")
        print(f"nominal anti-resonance {wa:.6g} rad/s  {wa / (2 * np.pi):.6g} Hz")
        from ..linsys import eigen_pairs, select_resonant_mode
        for i in range(spec.n_plants):
            sys = piezo_discrete(plant_draw(spec, i), spec.Ts, spec.output_scale)
            w = np.angle(select_resonant_mode(eigen_pairs(sys.A)).lam)
            print(f"plant {i:3d}  omega_true {w:.10f} rad/sample  {w / spec.Ts / (2 * np.pi):.6g} Hz")
        return 0
    st = gyro_study(cfg, profile=args.profile)
    spec = st.spec
    params = replace(st.params, omega_z_profile=GyroProfile())
    design = gyro_design(params, spec.Ts, spec.Qc, spec.Rc, spec.design_Q, spec.design_R)
    prof = st.params.omega_z_profile
    print(f"primary resonance (closed loop) {design.omega_lambda:.10f} rad/sample "
          f"{design.omega_lambda / spec.Ts:.6g} rad/time")
    print(f"sensitivity open loop   {sensitivity(params, None, Ts=spec.Ts):.4f}")
    if design.K is not None:
        print(f"sensitivity closed loop {sensitivity(params, design.K, Ts=spec.Ts):.4f}")
    for wz in np.linspace(0.0, prof.magnitude, 5):
        w = theoretical_resonance(params, wz, design.K, spec.Ts, design.omega_lambda)
        print(f"omega_z {wz:8.4f}  resonance {w:.10f} rad/sample  {w / spec.Ts:.6g} rad/time")
    return 0


def cmd_template(args) -> int:
    sys.stdout.write(render_template(args.study))
    return 0


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="track", description="Resonance tracking studies.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, steps=True):
        p.add_argument("--config", help="INI configuration file (defaults apply without one)")
        p.add_argument("--seed", type=int, help="master seed (overrides config and TRACK_SEED)")
        if steps:
            p.add_argument("--steps", type=int, help="samples per run")
        p.add_argument("--backend", choices=("compiled", "python"))

    p = sub.add_parser("piezo", help="piezo Monte-Carlo batch")
    common(p)
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--plants", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--plot", action="store_true", help="write a PNG (needs matplotlib)")
    p.set_defaults(func=cmd_piezo)

    p = sub.add_parser("gyro", help="gyroscope step/ramp scenario")
    common(p)
    p.add_argument("--out", default="runs")
    p.add_argument("--profile", choices=("step", "ramp", "constant"))
    p.add_argument("--update", choices=("direct", "rayleigh"))
    p.add_argument("--estimator", choices=("rpem", "mhe"))
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_gyro)

    p = sub.add_parser("verify", help="run the numerical property suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--criteria", type=int, nargs="+", choices=range(1, 9), metavar="N")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", help="print theoretical resonances")
    p.add_argument("study", choices=sorted(SCHEMAS))
    p.add_argument("--config")
    p.add_argument("--plants", type=int)
    p.add_argument("--profile", choices=("step", "ramp", "constant"))
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("template", help="print a configuration file with all defaults")
    p.add_argument("study", choices=sorted(SCHEMAS))
    p.set_defaults(func=cmd_template)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"track: config error: {exc}", file=sys.stderr)
        return 2
    except ImportError as exc:
        print(f"track: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
