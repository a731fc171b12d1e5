import numpy as np
import pytest

from csstrack.envelope import SndtftFilter, batch_ndtft, sndtft_push


def _run(f, y, omegas, theta0=0.0):
    theta = theta0
    out = []
    for yk, w in zip(y, omegas):
        theta += w
        out.append(f.push(yk, w, theta)[0])
    return np.array(out), theta


def test_zero_input_gives_zero_envelope():
    f = SndtftFilter(24)
    q, _ = _run(f, np.zeros(100), np.full(100, 0.4))
    assert np.all(q == 0)
    assert np.all(batch_ndtft(np.zeros(24), np.full(24, 0.3), 1.0) == 0)


def test_uniform_window_is_a_dft_bin():
    rng = np.random.default_rng(0)
    Nf = 32
    y = rng.standard_normal(Nf)
    w0 = 2 * np.pi * 5 / Nf
    Y = batch_ndtft(y, np.full(Nf, w0), 0.0, raw=True)
    # newest sample carries phase 0; sample i back carries e^{j i w0}
    dft = np.sum(y[::-1] * np.exp(1j * w0 * np.arange(Nf)))
    assert Y == pytest.approx(dft, rel=1e-13)


@pytest.mark.parametrize("Nf", [24, 32])
def test_tone_recovery_at_study_carrier(Nf):
    beta, psi, w0 = 1.7, -0.9, 0.348
    n = 6 * Nf
    theta = 0.3 + w0 * np.arange(1, n + 1)
    f = SndtftFilter(Nf)
    q, _ = _run(f, beta * np.cos(theta + psi), np.full(n, w0), 0.3)
    q = q[Nf:]
    assert np.max(np.abs(np.abs(q) / beta - 1)) < 0.02
    assert np.max(np.abs(np.angle(q * np.exp(-1j * psi)))) < 0.02


def test_warm_flag_and_prefill():
    f = SndtftFilter(8)
    flags = []
    theta = 0.0
    for k in range(12):
        theta += 0.5
        _, warm = sndtft_push(f, [1.0], 0.5, theta)
        flags.append(warm)
    assert flags == [True] * 8 + [False] * 4
    with pytest.raises(ValueError):
        SndtftFilter(3)


def test_recursion_matches_batch_with_varying_frequency():
    rng = np.random.default_rng(4)
    f = SndtftFilter(24, resync_every=0)  # no resync: raw recursion drift
    w = 0.5
    theta = 0.0
    worst = 0.0
    for _ in range(3000):
        w = float(np.clip(w + rng.uniform(-0.01, 0.01), 0.1, 3.0))
        theta += w
        f.push(rng.standard_normal(), w, theta)
        y, om = f.window()
        worst = max(worst, abs(f.Y_center[0] - batch_ndtft(y[:, 0], om, theta, raw=True)))
    assert worst < 1e-9


def test_hann_envelope_matches_batch():
    rng = np.random.default_rng(5)
    f = SndtftFilter(32)
    w = rng.uniform(0.3, 0.4, 200)
    y = rng.standard_normal(200)
    q, theta = _run(f, y, w)
    ys, ws = f.window()
    assert q[-1] == pytest.approx(batch_ndtft(ys[:, 0], ws, theta, hann=True), rel=1e-10)


def test_off_bin_rejection():
    Nf = 32
    w0 = 1.0
    n = 6 * Nf
    f = SndtftFilter(Nf)
    off = w0 + 4 * np.pi / Nf
    q, _ = _run(f, np.cos(off * np.arange(1, n + 1)), np.full(n, w0))
    assert np.max(np.abs(q[Nf:])) < 0.1


def test_channels_are_independent():
    f2 = SndtftFilter(24, channels=2)
    a, b = SndtftFilter(24), SndtftFilter(24)
    rng = np.random.default_rng(6)
    theta = 0.0
    for _ in range(60):
        y = rng.standard_normal(2)
        theta += 0.4
        q2 = f2.push(y, 0.4, theta)
        assert q2[0] == pytest.approx(a.push([y[0]], 0.4, theta)[0], rel=1e-12, abs=1e-15)
        assert q2[1] == pytest.approx(b.push([y[1]], 0.4, theta)[0], rel=1e-12, abs=1e-15)


def test_batch_length_mismatch():
    with pytest.raises(ValueError):
        batch_ndtft(np.zeros(4), np.zeros(5), 0.0)
