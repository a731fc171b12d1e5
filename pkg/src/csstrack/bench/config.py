"""INI-style study configuration with typed keys and line-anchored errors.

Every key has a default, so an empty file (or no file) reproduces the
reference studies.  Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, replace
from typing import Any, Callable

import numpy as np

from ..tracker import TrackerConfig
from .plants import GYRO_TS, GyroParams, GyroProfile, PiezoParams
from .scenarios import GyroSpec, MonteCarloSpec, piezo_tracker_config

__all__ = [
    "ConfigError",
    "SCHEMAS",
    "load_config",
    "render_template",
    "piezo_study",
    "gyro_study",
    "PiezoStudy",
    "GyroStudy",
]

SEED_ENV = "TRACK_SEED"


class ConfigError(ValueError):
    """Invalid configuration; the message starts with ``file:line:`` when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


# ------------------------------------------------------------------ parsers
def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> tuple:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if not parts:
        raise ValueError("expected a list of numbers")
    return tuple(float(p) for p in parts)


def _words(text: str) -> tuple:
    parts = tuple(p for p in re.split(r"[,\s]+", text.strip()) if p)
    if not parts:
        raise ValueError("expected a non-empty list")
    return parts


def _choice(*options) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t
    parse.__name__ = "choice"
    return parse


def _subset(*options) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        words = _words(text)
        bad = [w for w in words if w not in options]
        if bad:
            raise ValueError(f"unknown entries {bad}; allowed: {', '.join(options)}")
        return words
    parse.__name__ = "subset"
    return parse


def _optional_float(text: str):
    t = text.strip().lower()
    return None if t in ("", "none") else float(t)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


# Each entry: key -> (parser, default, comment)
_SOURCES = ("sndtft", "exact-css")
_RAYLEIGH_PIEZO = {
    "S_lambda0": (float, 2.5, "initial lambda scale"),
    "S_chi0": (float, 0.25, "initial chi scale"),
    "gamma_lambda": (float, 0.15, ""),
    "gamma_chi": (float, 0.15, ""),
    "mu_lambda": (float, 0.0025, ""),
    "mu_chi": (float, 0.0025, ""),
    "live_h": (_bool, False, "use the live h estimate in z_A (default h = 1)"),
}

PIEZO_SCHEMA: dict = {
    "run": {
        "seed": (int, 0, f"master seed; {SEED_ENV} overrides"),
        "steps": (int, 30000, "samples per run"),
        "workers": (int, 1, "parallel processes"),
        "backend": (_choice("compiled", "python"), "compiled", "loop implementation"),
    },
    "piezo": {
        "C0": (float, 2e-9, "F"),
        "Rm": (float, 50.0, "ohm"),
        "Lm": (float, 0.103, "H"),
        "Cm": (float, 80e-12, "F"),
        "Ts": (float, 1e-6, "s"),
        "output_scale": (float, 1e6, "charge unit factor (1e6: microcoulomb)"),
        "drive": (float, 1.0, "drive envelope s_k in V"),
        "Qs": (float, 0.01, "input noise variance, V^2"),
        "R": (float, 6.4e-5, "measurement noise variance in output units (64 nC^2)"),
    },
    "montecarlo": {
        "n_plants": (int, 20, ""),
        "relative_uncertainty": (float, 0.10, "uniform +- fraction per parameter"),
        "tolerance": (float, 1e-3, "relative frequency error counted as converged"),
        "envelope_sources": (_subset(*_SOURCES), _SOURCES, ""),
        "estimators": (_subset("rpem", "mhe"), ("rpem", "mhe"), ""),
        "update_laws": (_subset("direct", "rayleigh"), ("direct", "rayleigh"), ""),
    },
    "tracker": {
        "d_m": (float, 0.9999, "domain margin"),
        "update_every": (int, 1, "frequency update decimation"),
        "band_low": (_optional_float, None, "clamp band lower edge, rad/sample (none: 0.2 w)"),
        "band_high": (_optional_float, None, "clamp band upper edge (none: min(pi, 3 w))"),
    },
    "rpem": {
        "gamma": (float, 0.0025, ""),
        "S0": (float, 0.01, "uC^2"),
        "mu_e": (float, 0.0008, "uC^2"),
        "Nf": (int, 24, "sNDTFT window with RPEM"),
    },
    "mhe": {
        "Nh": (int, 350, "horizon"),
        "Nf": (int, 32, "sNDTFT window with MHE"),
        "gn_max_iters": (int, 1, "Gauss-Newton iterations per sample"),
        "gn_tolerance": (float, 1e-10, ""),
        "trust_radius": (_optional_float, 0.002, "max |dh| per iteration (none: off)"),
        "cap": (float, 1.02, "radial limit |h| rho <= cap for iterates"),
    },
    "rayleigh": dict(_RAYLEIGH_PIEZO),
}

GYRO_SCHEMA: dict = {
    "run": {
        "seed": (int, 0, f"master seed; {SEED_ENV} overrides"),
        "steps": (int, 24000, ""),
        "backend": (_choice("compiled", "python"), "compiled", ""),
    },
    "gyro": {
        "K_g": (_floats, (355.3, 70.99, 70.99, 532.9), "stiffness, row-major 2x2"),
        "D_g": (_floats, (0.01, 0.002, 0.002, 0.01), "damping, row-major 2x2"),
        "Ts": (float, GYRO_TS, "normalized sample time (primary mode near 0.1 pi)"),
        "s_r": (_floats, (10.0, 100.0), "reference drive envelope"),
        "Q": (_floats, (0.04, 0.04), "input noise variances"),
        "R": (_floats, (1.6e-5, 1.6e-5), "measurement noise variances"),
        "design_Q": (float, 1500.0, "predictor design: Q = design_Q * B B^T"),
        "design_R": (float, 0.1, "predictor design: R = design_R * I"),
        "feedback": (_bool, True, "LQR state feedback"),
        "Qc": (_floats, (54.0, 84.0, 0.0036, 189.0), "LQR state weights"),
        "Rc": (_floats, (0.4, 0.49), "LQR input weights"),
    },
    "profile": {
        "kind": (_choice("step", "ramp", "constant"), "step", ""),
        "magnitude": (float, 1.0, "final omega_z, rad/time"),
        "start": (float, 1 / 3, "fraction of the run"),
        "end": (float, 2 / 3, "ramp end, fraction of the run"),
    },
    "tracker": {
        "update_law": (_choice("direct", "rayleigh"), "rayleigh", ""),
        "estimator": (_choice("rpem", "mhe"), "rpem", ""),
        "envelope_source": (_choice(*_SOURCES), "exact-css",
                            "sndtft delays the LQR feedback envelope; unstable at Nf = 32"),
        "d_m": (float, 0.9999, ""),
        "update_every": (int, 1, ""),
        "band_low": (_optional_float, None, ""),
        "band_high": (_optional_float, None, ""),
    },
    "rpem": {
        "gamma": (float, 0.013, ""),
        "S0": (float, 1000.0, ""),
        "S_c0": (float, 1000.0, ""),
        "mu_e": (float, 0.0, ""),
        "Nf": (int, 32, ""),
    },
    "mhe": {
        "Nh": (int, 185, ""),
        "Nf": (int, 32, ""),
        "gn_max_iters": (int, 1, ""),
        "gn_tolerance": (float, 1e-10, ""),
        "trust_radius": (_optional_float, 0.002, ""),
        "cap": (float, 1.02, ""),
    },
    "rayleigh": {
        "S_lambda0": (float, 1000.0, ""),
        "S_chi0": (float, 1000.0, ""),
        "gamma_lambda": (float, 0.02, ""),
        "gamma_chi": (float, 0.02, ""),
        "mu_lambda": (float, 0.0, ""),
        "mu_chi": (float, 0.0, ""),
        "live_h": (_bool, True, ""),
    },
}

SCHEMAS = {"piezo": PIEZO_SCHEMA, "gyro": GYRO_SCHEMA}


# ------------------------------------------------------------------ loading
def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` to 1-based line numbers by a light scan."""
    out, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = i
            continue
        m = re.match(r"([^=:\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            out.setdefault((section, m.group(1).strip()), i)
    return out


def load_config(path: str | None, study: str, *, text: str | None = None,
                env: dict | None = None) -> dict:
    """Parse a study configuration into ``{section: {key: value}}``.

    Missing keys take their defaults.  ``TRACK_SEED`` in `env` (defaults to
    the process environment) overrides ``[run] seed``.
    """
    if study not in SCHEMAS:
        raise ValueError(f"unknown study {study!r}")
    schema = SCHEMAS[study]
    name = path or "<config>"
    if text is None and path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", name) from None
    text = text or ""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                       strict=True)
    parser.optionxform = str  # keys are case-sensitive (S0, Nh, ...)
    try:
        parser.read_string(text, source=name)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", name, exc.lineno) from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        what = "section" if isinstance(exc, configparser.DuplicateSectionError) else "key"
        raise ConfigError(f"duplicate {what}: {_dup_name(exc)}",
                          name, exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"cannot parse line {line}", name, lineno) from None
    lines = _key_lines(text)
    out = {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in schema.items()}
    for sec in parser.sections():
        if sec not in schema:
            raise ConfigError(f"unknown section [{sec}]", name, lines.get((sec, None)))
        for key, raw in parser.items(sec):
            if key not in schema[sec]:
                raise ConfigError(f"unknown key '{key}' in [{sec}]", name, lines.get((sec, key)))
            parse = schema[sec][key][0]
            try:
                out[sec][key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}", name, lines.get((sec, key))) from None
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "").strip():
        try:
            out["run"]["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return out


def _dup_name(exc) -> str:
    if isinstance(exc, configparser.DuplicateOptionError):
        return f"'{exc.option}' in [{exc.section}]"
    return f"[{exc.section}]"


def render_template(study: str) -> str:
    """Configuration file listing every key with its default."""
    lines = [f"# {study} study configuration; every key shows its default."]
    for sec, keys in SCHEMAS[study].items():
        lines.append("")
        lines.append(f"[{sec}]")
        for key, (_, default, doc) in keys.items():
            lines.append(f"{key} = {_fmt(default)}" + (f"  # {doc}" if doc else ""))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ builders
def _band(tr):
    lo, hi = tr["band_low"], tr["band_high"]
    if lo is None and hi is None:
        return None
    if lo is None or hi is None or not (0 < lo < hi < np.pi):
        raise ConfigError("[tracker] band_low and band_high must both be set with 0 < low < high < pi")
    return (lo, hi)


@dataclass(frozen=True)
class PiezoStudy:
    spec: MonteCarloSpec
    configs: dict


def piezo_study(cfg: dict) -> PiezoStudy:
    """Monte-Carlo spec and per-estimator tracker templates from a parsed config."""
    try:
        run, pz, mc, tr = cfg["run"], cfg["piezo"], cfg["montecarlo"], cfg["tracker"]
        nominal = PiezoParams(pz["C0"], pz["Rm"], pz["Lm"], pz["Cm"])
        spec = MonteCarloSpec(
            n_plants=mc["n_plants"], relative_uncertainty=mc["relative_uncertainty"],
            seed=run["seed"], steps=run["steps"], nominal=nominal, Ts=pz["Ts"],
            output_scale=pz["output_scale"], drive=pz["drive"], Qs=pz["Qs"], R=pz["R"],
            tolerance=mc["tolerance"], envelope_sources=mc["envelope_sources"],
            estimators=mc["estimators"], update_laws=mc["update_laws"], workers=run["workers"],
            backend=run["backend"])
        ray = _rayleigh_fields(cfg["rayleigh"])
        common = dict(d_m=tr["d_m"], update_every=tr["update_every"], band=_band(tr), **ray)
        r, m = cfg["rpem"], cfg["mhe"]
        configs = {
            "rpem": piezo_tracker_config("rpem", gamma=r["gamma"], S0=r["S0"], mu_e=r["mu_e"],
                                         Nf=r["Nf"], **common),
            "mhe": piezo_tracker_config("mhe", Nh=m["Nh"], Nf=m["Nf"], gn_max_iters=m["gn_max_iters"],
                                        gn_tolerance=m["gn_tolerance"], trust_radius=m["trust_radius"],
                                        mhe_cap=m["cap"], **common),
        }
        for c in configs.values():
            c.validate()
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return PiezoStudy(spec, configs)


def _rayleigh_fields(rs):
    return dict(S_lambda0=rs["S_lambda0"], S_chi0=rs["S_chi0"], gamma_lambda=rs["gamma_lambda"],
                gamma_chi=rs["gamma_chi"], mu_lambda=rs["mu_lambda"], mu_chi=rs["mu_chi"],
                rayleigh_live_h=rs["live_h"])


@dataclass(frozen=True)
class GyroStudy:
    params: GyroParams
    spec: GyroSpec
    overrides: dict


def gyro_study(cfg: dict, *, profile: str | None = None, update_law: str | None = None,
               estimator: str | None = None) -> GyroStudy:
    """Plant, scenario spec and tracker overrides from a parsed config.

    The tracker itself depends on the LQR/predictor design, so it is built
    by `run_gyro_scenario`; `overrides` carries the configured fields.
    """
    try:
        run, g, pr, tr = cfg["run"], cfg["gyro"], cfg["profile"], cfg["tracker"]
        for key in ("K_g", "D_g"):
            if len(g[key]) != 4:
                raise ConfigError(f"[gyro] {key} needs 4 numbers (row-major 2x2)")
        for key, n in (("s_r", 2), ("Q", 2), ("R", 2), ("Qc", 4), ("Rc", 2)):
            if len(g[key]) not in (1, n):
                raise ConfigError(f"[gyro] {key} needs 1 or {n} numbers")
        prof = GyroProfile(profile or pr["kind"], pr["magnitude"], pr["start"], pr["end"])
        params = GyroParams(tuple(np.reshape(g["K_g"], (2, 2)).tolist()),
                            tuple(np.reshape(g["D_g"], (2, 2)).tolist()), prof)
        two = lambda v: tuple(np.broadcast_to(v, (2,)).tolist())  # noqa: E731
        spec = GyroSpec(steps=run["steps"], seed=run["seed"], Ts=g["Ts"], s_r=two(g["s_r"]),
                        Q=two(g["Q"]), R=two(g["R"]), design_Q=g["design_Q"], design_R=g["design_R"],
                        Qc=tuple(np.broadcast_to(g["Qc"], (4,)).tolist()) if g["feedback"] else None,
                        Rc=two(g["Rc"]), backend=run["backend"])
        r, m = cfg["rpem"], cfg["mhe"]
        est = estimator or tr["estimator"]
        overrides = dict(
            update_law=update_law or tr["update_law"], estimator=est,
            envelope_source=tr["envelope_source"], d_m=tr["d_m"], update_every=tr["update_every"],
            band=_band(tr), gamma=r["gamma"], S0=r["S0"], S_c0=r["S_c0"], mu_e=r["mu_e"],
            Nf=m["Nf"] if est == "mhe" else r["Nf"], Nh=m["Nh"], gn_max_iters=m["gn_max_iters"],
            gn_tolerance=m["gn_tolerance"], trust_radius=m["trust_radius"], mhe_cap=m["cap"],
            **_rayleigh_fields(cfg["rayleigh"]))
        replace(TrackerConfig(), **overrides).validate()
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return GyroStudy(params, spec, overrides)
