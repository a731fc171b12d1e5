"""Plant builders and resonance oracles for the piezo and gyroscope studies."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..css import ComplexStateSpace, to_css
from ..linsys import (
    ContinuousStateSpace,
    NoiseSpec,
    RealStateSpace,
    dare_kalman,
    eigen_pairs,
    lqr_design,
    modal_form,
    select_resonant_mode,
    zoh_discretize,
)

__all__ = [
    "PiezoParams",
    "GyroParams",
    "GyroProfile",
    "build_piezo",
    "piezo_resonance",
    "piezo_antiresonance",
    "piezo_discrete",
    "draw_piezo",
    "PiezoDesign",
    "piezo_design",
    "build_gyro",
    "GYRO_TS",
    "GYRO_TAGS",
    "GyroDesign",
    "gyro_design",
    "gyro_discrete",
    "theoretical_resonance",
    "sensitivity",
]


# ---------------------------------------------------------------------- piezo
@dataclass(frozen=True)
class PiezoParams:
    """Butterworth-Van Dyke parameters: clamped capacitance and motional branch."""

    C0: float = 2e-9
    Rm: float = 50.0
    Lm: float = 0.103
    Cm: float = 80e-12

    def __post_init__(self):
        for name in ("C0", "Rm", "Lm", "Cm"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive")


def build_piezo(params: PiezoParams, output_scale: float = 1.0) -> ContinuousStateSpace:
    """Voltage-to-charge model ``G(s) = C0 + (1/Lm) / (s^2 + (Rm/Lm) s + 1/(Lm Cm))``.

    Controllable canonical form; `output_scale` converts the charge unit
    (1e6 gives microcoulombs).
    """
    p = params
    a0 = 1.0 / (p.Lm * p.Cm)
    a1 = p.Rm / p.Lm
    A = [[0.0, 1.0], [-a0, -a1]]
    B = [[0.0], [1.0]]
    C = [[output_scale / p.Lm, 0.0]]
    D = [[output_scale * p.C0]]
    return ContinuousStateSpace(A, B, C, D)


def piezo_resonance(params: PiezoParams) -> float:
    """Undamped motional resonance ``1/sqrt(Lm Cm)`` in rad/s."""
    return 1.0 / np.sqrt(params.Lm * params.Cm)


def piezo_antiresonance(params: PiezoParams) -> float:
    """Anti-resonance ``sqrt((Cm + C0) / (Lm Cm C0))`` in rad/s."""
    p = params
    return np.sqrt((p.Cm + p.C0) / (p.Lm * p.Cm * p.C0))


def piezo_discrete(params: PiezoParams, Ts: float = 1e-6, output_scale: float = 1e6) -> RealStateSpace:
    """ZOH model in a scaled modal realization (well conditioned at Ts = 1 us)."""
    return modal_form(zoh_discretize(build_piezo(params, output_scale), Ts))[0]


def draw_piezo(nominal: PiezoParams, uncertainty: float, rng: np.random.Generator) -> PiezoParams:
    """Independent uniform draws within ``+-uncertainty`` of each nominal value."""
    u = rng.uniform(-1.0, 1.0, 4)
    vals = [getattr(nominal, f) * (1.0 + uncertainty * x) for f, x in zip(("C0", "Rm", "Lm", "Cm"), u)]
    return PiezoParams(*vals)


@dataclass(frozen=True)
class PiezoDesign:
    """Nominal estimator model and predictor gain for the piezo study."""

    params: PiezoParams
    sys: RealStateSpace
    css: ComplexStateSpace
    L: np.ndarray
    omega_lambda: float


@lru_cache(maxsize=8)
def piezo_design(params: PiezoParams = PiezoParams(), Ts: float = 1e-6, output_scale: float = 1e6,
                 Qs: float = 0.01, R: float = 6.4e-5) -> PiezoDesign:
    """Nominal model plus steady Kalman gain with ``Q = B Qs B^T`` (input-referred)."""
    sys = piezo_discrete(params, Ts, output_scale)
    noise = NoiseSpec(sys.B @ sys.B.T * Qs, np.atleast_2d(R))
    L = dare_kalman(sys, noise).gain
    wl = float(np.angle(select_resonant_mode(eigen_pairs(sys.A)).lam))
    return PiezoDesign(params, sys, to_css(sys), L, wl)


# ---------------------------------------------------------------------- gyro
@dataclass(frozen=True)
class GyroProfile:
    """Rotation-speed profile over a run of ``steps`` samples.

    ``step`` jumps from 0 to `magnitude` at ``start * steps``; ``ramp`` rises
    linearly between ``start * steps`` and ``end * steps``; ``constant``
    holds `magnitude` throughout.
    """

    kind: str = "step"
    magnitude: float = 1.0
    start: float = 1 / 3
    end: float = 2 / 3

    def __post_init__(self):
        if self.kind not in ("step", "ramp", "constant"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if not (0 <= self.start < self.end <= 1):
            raise ValueError("profile needs 0 <= start < end <= 1")
        if not np.isfinite(self.magnitude):
            raise ValueError("profile magnitude must be finite")

    def __call__(self, k: int, steps: int) -> float:
        if self.kind == "constant":
            return float(self.magnitude)
        k0 = int(self.start * steps)
        if self.kind == "step":
            return float(self.magnitude) if k >= k0 else 0.0
        k1 = int(self.end * steps)
        return float(self.magnitude * min(max((k - k0) / (k1 - k0), 0.0), 1.0))


@dataclass(frozen=True)
class GyroParams:
    """Stiffness and damping of the two coupled proof-mass oscillators, plus
    the rotation-speed profile applied in scenarios."""

    K_g: tuple = ((355.3, 70.99), (70.99, 532.9))
    D_g: tuple = ((0.01, 0.002), (0.002, 0.01))
    omega_z_profile: GyroProfile = GyroProfile()

    def __post_init__(self):
        for name in ("K_g", "D_g"):
            M = np.asarray(getattr(self, name), float)
            if M.shape != (2, 2) or not np.allclose(M, M.T):
                raise ValueError(f"{name} must be a symmetric 2x2 matrix")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
            object.__setattr__(self, name, tuple(tuple(float(x) for x in row) for row in M))


# Carrier normalization: the primary mode sits near 0.1 pi rad/sample.
GYRO_TS = 0.1 * np.pi / 18.18
# Physical primary-oscillator states get h, secondary-oscillator states conj(h).
GYRO_TAGS = ("direct", "conjugate", "direct", "conjugate")


def build_gyro(params: GyroParams, omega_z: float = 0.0) -> ContinuousStateSpace:
    """``x'' + (D + 2 Omega) x' + K x = u`` with ``Omega = [[0, -wz], [wz, 0]]``.

    State order ``[x_pm, x_sm, v_pm, v_sm]``; outputs are the displacements.
    """
    K = np.asarray(params.K_g)
    D = np.asarray(params.D_g)
    Om = np.array([[0.0, -omega_z], [omega_z, 0.0]])
    A = np.block([[np.zeros((2, 2)), np.eye(2)], [-K, -(D + 2 * Om)]])
    B = np.vstack([np.zeros((2, 2)), np.eye(2)])
    C = np.hstack([np.eye(2), np.zeros((2, 2))])
    return ContinuousStateSpace(A, B, C, np.zeros((2, 2)))


def gyro_discrete(params: GyroParams, omega_z: float = 0.0, Ts: float = GYRO_TS) -> RealStateSpace:
    return zoh_discretize(build_gyro(params, omega_z), Ts)


@dataclass(frozen=True)
class GyroDesign:
    """Nominal gyroscope model, LQR feedback and predictor gain."""

    params: GyroParams
    sys: RealStateSpace
    css: ComplexStateSpace
    K: np.ndarray | None
    L: np.ndarray
    omega_lambda: float
    Ts: float = field(default=GYRO_TS)


def _diag(v, n):
    v = np.atleast_1d(np.asarray(v, float))
    return np.diag(np.broadcast_to(v, (n,)))


@lru_cache(maxsize=8)
def gyro_design(params: GyroParams = GyroParams(), Ts: float = GYRO_TS,
                Qc: tuple | None = (54.0, 84.0, 0.0036, 189.0), Rc: tuple = (0.4, 0.49),
                design_Q: float = 1500.0, design_R: float = 0.1) -> GyroDesign:
    """LQR on the discrete ``omega_z = 0`` model and a predictor gain designed with
    input-referred ``Q = design_Q * B B^T`` and ``R = design_R * I``.

    ``Qc=None`` disables feedback.
    """
    sys = gyro_discrete(params, 0.0, Ts)
    K = None
    A_nom = sys.A
    if Qc is not None:
        K = lqr_design(sys, _diag(Qc, 4), _diag(Rc, 2)).gain
        A_nom = sys.A + sys.B @ K
    noise = NoiseSpec(design_Q * sys.B @ sys.B.T, _diag(design_R, 2))
    L = dare_kalman(sys, noise).gain
    wl = float(np.angle(_primary(A_nom).lam))
    css = to_css(sys, GYRO_TAGS, check_modes=False)
    return GyroDesign(params, sys, css, K, L, wl, Ts)


def _primary(A):
    """Lower-frequency oscillatory pair (the primary mode)."""
    pairs = [p for p in eigen_pairs(A) if p.lam.imag > 0]
    return min(pairs, key=lambda p: np.angle(p.lam))


def theoretical_resonance(params: GyroParams, omega_z: float, K=None, Ts: float = GYRO_TS,
                          hint: float | None = None) -> float:
    """Angle (rad/sample) of the tracked primary eigenvalue at rotation `omega_z`.

    With `K`, the closed loop ``A_d + B_d K`` is used.  The tracked pair is
    the one closest to `hint`; without a hint, the lower-frequency pair.
    """
    sys = gyro_discrete(params, omega_z, Ts)
    A = sys.A if K is None else sys.A + sys.B @ np.asarray(K)
    if hint is None:
        return float(np.angle(_primary(A).lam))
    return float(np.angle(select_resonant_mode(eigen_pairs(A), hint).lam))


def sensitivity(params: GyroParams, K=None, omega_z_range=(0.0, 1.0), Ts: float = GYRO_TS,
                mode: str = "primary") -> float:
    """Secant ``d(resonance)/d(omega_z)`` in (rad/time)/(rad/time) over a range.

    `mode` selects the primary (lower) or secondary (upper) pair at the
    start of the range and follows it by continuity.
    """
    a, b = omega_z_range
    sys = gyro_discrete(params, a, Ts)
    A = sys.A if K is None else sys.A + sys.B @ np.asarray(K)
    pairs = sorted((p for p in eigen_pairs(A) if p.lam.imag > 0), key=lambda p: np.angle(p.lam))
    start = np.angle((pairs[0] if mode == "primary" else pairs[-1]).lam)
    end = theoretical_resonance(params, b, K, Ts, hint=start)
    return (end - start) / Ts / (b - a)
