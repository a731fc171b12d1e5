"""Sliding non-uniform DTFT (sNDTFT) envelope extraction.

For a real sample stream ``y_k`` whose carrier phase advances by a known,
time-varying increment ``omega_k = theta_k - theta_{k-1}``, the filter keeps

    Y_k = sum_{i=0}^{Nf-1} y_{k-i} exp(j (theta_k - theta_{k-i}))

recursively through ``Y_k = Y_{k-1} e^{j omega_k} - y_{k-Nf} e^{j dw_k} + y_k``
with ``dw_k = theta_k - theta_{k-Nf}``.  The same recursion runs at offsets
``+-2 pi / Nf``; subtracting the averaged side bins applies a Hann window in
the frequency domain.  The envelope is ``q_k = (2 / Nf) Y_hann e^{-j theta_k}``.
"""
from __future__ import annotations

import cmath

import numpy as np

__all__ = ["SndtftFilter", "sndtft_push", "batch_ndtft"]


class SndtftFilter:
    """Multi-channel sNDTFT state.

    Parameters
    ----------
    Nf : int
        Window length in samples (>= 4).
    channels : int
        Number of independent real input channels sharing the carrier.
    resync_every : int
        Rebuild the accumulators from the ring buffer every this many pushes
        to stop round-off drift of the marginally stable recursion.

    Notes
    -----
    Before the first push the rings hold ``y = 0`` and ``omega = 0``.  Outputs
    are flagged as warm-up until the window has been filled once.
    """

    def __init__(self, Nf: int, channels: int = 1, resync_every: int = 4096):
        if Nf < 4:
            raise ValueError("Nf must be at least 4")
        self.Nf = int(Nf)
        self.channels = int(channels)
        self.resync_every = int(resync_every)
        self.offsets = np.array([0.0, -2 * np.pi / Nf, 2 * np.pi / Nf])
        self._off_rot = np.exp(1j * self.offsets)
        self._sub_rot = np.exp(1j * Nf * self.offsets)
        self.Y = np.zeros((3, channels), complex)
        self.delta_omega = 0.0
        self.sample_ring = np.zeros((Nf, channels))
        self.omega_ring = np.zeros(Nf)
        self.head = 0
        self.count = 0

    @property
    def Y_center(self):
        return self.Y[0]

    @property
    def Y_low(self):
        return self.Y[1]

    @property
    def Y_high(self):
        return self.Y[2]

    @property
    def warm(self) -> bool:
        """True for the first `Nf` outputs, which involve the zero prefill."""
        return self.count <= self.Nf

    def window(self):
        """Ring contents ordered oldest to newest: ``(samples, omegas)``."""
        idx = (self.head + np.arange(self.Nf)) % self.Nf
        return self.sample_ring[idx], self.omega_ring[idx]

    def resync(self):
        """Recompute all bins and the phase accumulator from the ring buffer."""
        y, w = self.window()
        self.delta_omega = float(w.sum())
        for b, off in enumerate(self.offsets):
            self.Y[b] = _accumulate(y, w, off)

    def push(self, y, omega: float, theta: float) -> np.ndarray:
        """Consume one sample per channel and return the Hann envelope ``q_k``.

        `omega` is the phase increment that led to `theta`, i.e.
        ``theta_k - theta_{k-1}``.
        """
        h = self.head
        y_old = self.sample_ring[h].copy()
        self.sample_ring[h] = y
        y = self.sample_ring[h]
        self.delta_omega += omega - self.omega_ring[h]
        rot = cmath.exp(1j * omega) * self._off_rot
        sub = cmath.exp(1j * self.delta_omega) * self._sub_rot
        Y = self.Y
        Y *= rot[:, None]
        Y -= np.multiply.outer(sub, y_old)
        Y += y
        self.omega_ring[h] = omega
        self.head = (h + 1) % self.Nf
        self.count += 1
        if self.resync_every and self.count % self.resync_every == 0:
            self.resync()
        return self.envelope(theta)

    def envelope(self, theta: float) -> np.ndarray:
        """Hann-combined envelope at carrier phase `theta`."""
        Y = self.Y
        return (Y[0] - 0.5 * (Y[1] + Y[2])) * ((2.0 / self.Nf) * cmath.exp(-1j * theta))

    def raw_envelope(self, theta: float) -> np.ndarray:
        """Rectangular-window (center bin only) envelope."""
        return (2.0 / self.Nf) * self.Y[0] * np.exp(-1j * theta)


def sndtft_push(filt: SndtftFilter, y, omega: float, theta: float):
    """Functional wrapper: returns ``(q_k, warm_up_flag)``."""
    q = filt.push(y, omega, theta)
    return q, filt.warm


def _accumulate(y, omegas, offset: float = 0.0):
    """``sum_i y_{k-i} exp(j (theta_k - theta_{k-i}) + j i offset)`` over a window."""
    y = np.asarray(y, float)
    w = np.asarray(omegas, float)
    N = len(w)
    # phase[i] = theta_k - theta_{k-i}, i counted back from the newest sample
    back = w[::-1]
    phase = np.concatenate(([0.0], np.cumsum(back[:-1])))
    ph = np.exp(1j * (phase + offset * np.arange(N)))
    yb = y[::-1]
    return ph @ yb if yb.ndim > 1 else np.dot(ph, yb)


def batch_ndtft(y, omegas, theta_end: float, *, hann: bool = False, raw: bool = False):
    """Direct evaluation of the window transform.

    Parameters
    ----------
    y : array_like, shape (Nf,) or (Nf, channels)
        Samples ordered oldest to newest.
    omegas : array_like, shape (Nf,)
        Phase increments ``theta_i - theta_{i-1}`` aligned with `y`.
    theta_end : float
        Carrier phase of the newest sample.
    hann : bool
        Apply the frequency-domain Hann combination.
    raw : bool
        Return the accumulator ``Y`` itself instead of the envelope.
    """
    y = np.asarray(y, float)
    omegas = np.asarray(omegas, float)
    if len(y) != len(omegas):
        raise ValueError("sample and frequency windows differ in length")
    Nf = len(y)
    Y = _accumulate(y, omegas)
    if hann:
        d = 2 * np.pi / Nf
        Y = Y - 0.5 * (_accumulate(y, omegas, -d) + _accumulate(y, omegas, d))
    if raw:
        return Y
    return (2.0 / Nf) * Y * np.exp(-1j * theta_end)
