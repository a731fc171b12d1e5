"""Compiled inner loops.

Kept in a real module so numba can cache the machine code on disk.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def rollout(F, G, L, C, D, dmask, cmask, h, z0, S, Q, W):
    """Run the one-step predictor over a window from a fixed anchor.

    Entry 0 of `S`, `Q`, `W` is the anchor step; prediction errors and output
    derivatives are recorded for entries ``1..N``.

    Returns
    -------
    E, Gh, Gc : (N, p) complex
        Prediction errors and ``dq/dh``, ``dq/dconj(h)``.
    z : (n,) complex
        Predicted state at the last entry.
    """
    n = F.shape[0]
    N = S.shape[0] - 1
    p = C.shape[0]
    m = S.shape[1]
    hc = np.conj(h)
    hv = np.empty(n, np.complex128)
    for a in range(n):
        hv[a] = dmask[a] * h + cmask[a] * hc + (1.0 - dmask[a] - cmask[a])
    z = z0.copy()
    zh = np.zeros(n, np.complex128)
    zc = np.zeros(n, np.complex128)
    w = np.empty(n, np.complex128)
    zh2 = np.empty(n, np.complex128)
    zc2 = np.empty(n, np.complex128)
    E = np.zeros((N, p), np.complex128)
    Gh = np.zeros((N, p), np.complex128)
    Gc = np.zeros((N, p), np.complex128)
    for i in range(N + 1):
        if i > 0:
            for r in range(p):
                acc = 0j
                ah = 0j
                ac = 0j
                for c in range(n):
                    acc += C[r, c] * z[c]
                    ah += C[r, c] * zh[c]
                    ac += C[r, c] * zc[c]
                for c in range(m):
                    acc += D[r, c] * S[i, c]
                E[i - 1, r] = Q[i, r] - acc
                Gh[i - 1, r] = ah
                Gc[i - 1, r] = ac
            if i == N:
                break
        rot = np.exp(-1j * W[i])
        for a in range(n):
            acc = 0j
            ah = 0j
            ac = 0j
            for c in range(n):
                acc += F[a, c] * z[c]
                ah += F[a, c] * zh[c]
                ac += F[a, c] * zc[c]
            for c in range(m):
                acc += G[a, c] * S[i, c]
            for c in range(p):
                acc += L[a, c] * Q[i, c]
            w[a] = acc * rot
            zh2[a] = dmask[a] * w[a] + hv[a] * ah * rot
            zc2[a] = cmask[a] * w[a] + hv[a] * ac * rot
        for a in range(n):
            z[a] = hv[a] * w[a]
            zh[a] = zh2[a]
            zc[a] = zc2[a]
    return E, Gh, Gc, z


@numba.njit(cache=True)
def _wrap(t):
    w = np.angle(np.exp(1j * t))
    return np.pi if w == -np.pi else w


@numba.njit(cache=True)
def _clamp(w, lo, hi):
    if w < lo:
        return lo, 1
    if w > hi:
        return hi, 1
    return w, 0


@numba.njit(cache=True)
def _matvec(M, v):
    out = np.zeros(M.shape[0], np.complex128)
    for a in range(M.shape[0]):
        acc = 0j
        for c in range(M.shape[1]):
            acc += M[a, c] * v[c]
        out[a] = acc
    return out


@numba.njit(cache=True)
def _resync(Y, ring_y, ring_w, head, offsets):
    Nf = ring_w.shape[0]
    ch = ring_y.shape[1]
    delta = 0.0
    for i in range(Nf):
        delta += ring_w[(head + i) % Nf]
    for b in range(3):
        for c in range(ch):
            Y[b, c] = 0j
        phase = 0.0
        for i in range(Nf):
            # i counts back from the newest sample
            j = (head - 1 - i) % Nf
            ph = np.exp(1j * (phase + offsets[b] * i))
            for c in range(ch):
                Y[b, c] += ph * ring_y[j, c]
            phase += ring_w[j]
    return delta


@numba.njit(cache=True)
def closed_loop(As, Bs, Cs, Ds, plant_idx, Wn, Vn, exact,
                F, G, L, Cm, Dm, Bm, dmask, cmask, Kf, s_r,
                use_mhe, use_rayleigh, live_h, update_every,
                rho, d_m, gamma, S0, Sc0, mu_e,
                Nh, gn_iters, gn_tol, trust, cap,
                Nf, resync_every,
                lam0, chi0, Sl0, Sx0, gl, gx, ml, mx,
                omega_lambda, lo, hi, omega0, theta0, div_limit):
    """Compiled counterpart of the simulated tracking loop.

    Mirrors ``tracker_step`` plus the plant simulation in ``bench.scenarios``
    step for step.  ``trust < 0`` disables the MHE trust region.  Returns the
    log rows (without the oracle column), the largest plant state norm, and
    fault / divergence / clamp counters.
    """
    N = plant_idx.shape[0]
    n = F.shape[0]
    m = G.shape[1]
    p = Cm.shape[0]
    conj_mode = False
    for a in range(n):
        if cmask[a] != 0.0:
            conj_mode = True
    rows = np.full((N, 8), np.nan)
    x = np.zeros(As.shape[1], np.complex128)
    # predictor
    z = np.zeros(n, np.complex128)
    zh = np.zeros(n, np.complex128)
    zc = np.zeros(n, np.complex128)
    h = 1.0 + 0j
    S = S0
    Sc = Sc0
    # mhe buffer
    size = Nh + 1
    bS = np.zeros((2 * size, m), np.complex128)
    bQ = np.zeros((2 * size, p), np.complex128)
    bW = np.zeros(2 * size)
    bcount = 0
    bstart = 0
    anchor = np.zeros(n, np.complex128)
    hm = 1.0 + 0j
    # sndtft
    offsets = np.array([0.0, -2 * np.pi / Nf, 2 * np.pi / Nf])
    off_rot = np.exp(1j * offsets)
    sub_rot = np.exp(1j * Nf * offsets)
    Y = np.zeros((3, p), np.complex128)
    ring_y = np.zeros((Nf, p))
    ring_w = np.zeros(Nf)
    rhead = 0
    rcount = 0
    delta = 0.0
    # rayleigh
    lam = lam0
    chi = chi0 / np.sqrt(np.sum(np.abs(chi0) ** 2))
    Sl = Sl0
    Sx = Sx0
    Bsr = _matvec(Bm, s_r)
    omega = omega0
    omega_prev = omega0
    theta = _wrap(theta0)
    s = s_r + _matvec(Kf, z)
    max_state = 0.0
    fault = False
    clamps = 0
    diverged = False
    e_last = np.zeros(Cm.shape[0], np.complex128)
    for k in range(N):
        A = As[plant_idx[k]]
        B = Bs[plant_idx[k]]
        C = Cs[plant_idx[k]]
        D = Ds[plant_idx[k]]
        q = np.zeros(p, np.complex128)
        if exact:
            cx = _matvec(C, x)
            ds = _matvec(D, s)
            for r in range(p):
                q[r] = cx[r] + ds[r] + Vn[k, r]
            sw = s + Wn[k]
            ax = _matvec(A, x)
            bsw = _matvec(B, sw)
            rot = np.exp(-1j * omega)
            for a in range(x.shape[0]):
                x[a] = (ax[a] + bsw[a]) * rot
        else:
            u = (s * np.exp(1j * theta)).real + 0j
            cx = _matvec(C, x)
            du = _matvec(D, u)
            y = np.empty(p)
            for r in range(p):
                y[r] = (cx[r] + du[r]).real + Vn[k, r].real
            uw = u + Wn[k].real
            ax = _matvec(A, x)
            buw = _matvec(B, uw)
            for a in range(x.shape[0]):
                x[a] = ax[a] + buw[a]
            # sNDTFT push with increment omega_prev
            hd = rhead
            y_old = ring_y[hd].copy()
            for r in range(p):
                ring_y[hd, r] = y[r]
            delta += omega_prev - ring_w[hd]
            er = np.exp(1j * omega_prev)
            ed = np.exp(1j * delta)
            for b in range(3):
                rb = er * off_rot[b]
                sb = ed * sub_rot[b]
                for r in range(p):
                    Y[b, r] = Y[b, r] * rb - sb * y_old[r] + y[r]
            ring_w[hd] = omega_prev
            rhead = (hd + 1) % Nf
            rcount += 1
            if resync_every > 0 and rcount % resync_every == 0:
                delta = _resync(Y, ring_y, ring_w, rhead, offsets)
            scale = (2.0 / Nf) * np.exp(-1j * theta)
            for r in range(p):
                q[r] = (Y[0, r] - 0.5 * (Y[1, r] + Y[2, r])) * scale
        hold = False
        if not exact:
            limit = Nf + (Nh if use_mhe else 0)
            hold = rcount <= limit

        z_k = z.copy()
        h_old = h
        ok = True
        rot = np.exp(-1j * omega)
        cz = _matvec(Cm, z)
        dsm = _matvec(Dm, s)
        q_hat = cz + dsm
        e = q - q_hat
        fz = _matvec(F, z)
        gs = _matvec(G, s)
        lq = _matvec(L, q)
        w = (fz + gs + lq) * rot
        if not use_mhe:
            if not hold:
                g = _matvec(Cm, zh)
                step = np.vdot(g, e)
                gg = np.vdot(g, g).real
                if conj_mode:
                    gcv = _matvec(Cm, zc)
                    step = step + np.conj(np.vdot(gcv, e))
                    h_try = h + gamma * (1.0 / S + 1.0 / Sc) * step
                    S_new = S + gamma * (gg - S + mu_e)
                    Sc_new = Sc + gamma * (np.vdot(gcv, gcv).real - Sc + mu_e)
                else:
                    h_try = h + gamma / S * step
                    S_new = S + gamma * (gg - S + mu_e)
                    Sc_new = Sc
                S = max(S_new, 1e-12)
                Sc = max(Sc_new, 1e-12)
                if np.isfinite(h_try.real) and np.isfinite(h_try.imag) and abs(h_try) * rho <= d_m:
                    h = h_try
                hc = np.conj(h)
                hv = dmask * h + cmask * hc + (1.0 - dmask - cmask)
                fzh = _matvec(F, zh)
                zh = dmask * w + hv * fzh * rot
                if conj_mode:
                    fzc = _matvec(F, zc)
                    zc = cmask * w + hv * fzc * rot
            hv = dmask * h + cmask * np.conj(h) + (1.0 - dmask - cmask)
            z = hv * w
        else:
            # push (q, s, omega)
            if bcount < size:
                i = bcount
            else:
                i = bstart
                bstart = (bstart + 1) % size
            for j in (i, i + size):
                for c in range(m):
                    bS[j, c] = s[c]
                for r in range(p):
                    bQ[j, r] = q[r]
                bW[j] = omega
            bcount += 1
            if bcount >= size:
                a0 = bstart
                wS = bS[a0:a0 + size]
                wQ = bQ[a0:a0 + size]
                wW = bW[a0:a0 + size]
                if not hold:
                    hh = hm
                    for it in range(gn_iters):
                        E, Gh, Gc, _ = rollout(F, G, L, Cm, Dm, dmask, cmask, hh, anchor, wS, wQ, wW)
                        M00 = 0.0
                        M01 = 0.0
                        M10 = 0.0
                        M11 = 0.0
                        r0 = 0.0
                        r1 = 0.0
                        for t in range(E.shape[0]):
                            for r in range(p):
                                av = Gh[t, r] + Gc[t, r]
                                bv = 1j * (Gh[t, r] - Gc[t, r])
                                ev = E[t, r]
                                M00 += (np.conj(av) * av).real
                                M01 += (np.conj(av) * bv).real
                                M10 += (np.conj(bv) * av).real
                                M11 += (np.conj(bv) * bv).real
                                r0 += (np.conj(av) * ev).real
                                r1 += (np.conj(bv) * ev).real
                        det = M00 * M11 - M01 * M10
                        if not (M00 > 0 and det > 1e-300 * max(M00 * M11, 1e-300)):
                            ok = False
                            break
                        dh = complex((M11 * r0 - M01 * r1) / det, (M00 * r1 - M10 * r0) / det)
                        if trust >= 0 and abs(dh) > trust:
                            dh *= trust / abs(dh)
                        hh += dh
                        if rho > 0 and abs(hh) * rho > cap:
                            hh *= cap / (abs(hh) * rho)
                        if abs(dh) < gn_tol:
                            break
                    if ok:
                        hm = hh
                if ok:
                    hva = dmask * hm + cmask * np.conj(hm) + (1.0 - dmask - cmask)
                    wa = (_matvec(F, anchor) + _matvec(G, wS[0]) + _matvec(L, wQ[0])) * np.exp(-1j * wW[0])
                    anchor = hva * wa
            h = hm
            hv = dmask * h + cmask * np.conj(h) + (1.0 - dmask - cmask)
            z = hv * w
        if ok:
            ok = np.isfinite(h.real) and np.isfinite(h.imag)
            for a in range(n):
                if not (np.isfinite(z[a].real) and np.isfinite(z[a].imag)):
                    ok = False
        if not ok:
            fault = True
            z = z_k
            h = h_old
            hm = h_old
            e = e_last
        e_last = e

        new_omega = omega
        if ok and (k + 1) % update_every == 0:
            if use_rayleigh:
                if live_h:
                    hvr = dmask * h + cmask * np.conj(h) + (1.0 - dmask - cmask)
                    zA = z * np.exp(1j * omega) - hvr * Bsr
                else:
                    zA = z * np.exp(1j * omega) - Bsr
                res = zA - lam * z_k
                czv = np.vdot(chi, z_k)
                crv = np.vdot(chi, res)
                lam_new = lam + gl / Sl * np.conj(czv) * crv
                chi_new = chi - gx / Sx * res * np.conj(crv)
                Sl = max(Sl + gl * (abs(czv) ** 2 - Sl + ml), 1e-12)
                Sx = max(Sx + gx * (np.vdot(res, res).real - Sx + mx), 1e-12)
                nrm = np.sqrt(np.sum(np.abs(chi_new) ** 2))
                if not np.isfinite(nrm) or nrm == 0:
                    chi_new = chi
                    nrm = 1.0
                chi = chi_new / nrm
                lam = lam_new
                new_omega, c = _clamp(np.angle(lam_new), lo, hi)
                clamps += c
            else:
                new_omega, c = _clamp(omega_lambda + np.angle(h), lo, hi)
                clamps += c

        rows[k, 0] = k
        rows[k, 1] = omega
        rows[k, 2] = theta
        rows[k, 3] = h.real
        rows[k, 4] = h.imag
        if use_rayleigh:
            rows[k, 5] = lam.real
            rows[k, 6] = lam.imag
        rows[k, 7] = np.sqrt(np.vdot(e, e).real)

        theta = _wrap(theta + omega)
        omega_prev = omega
        omega = new_omega
        s = s_r + _matvec(Kf, z)

        nx = np.sqrt(np.vdot(x, x).real)
        if nx > max_state:
            max_state = nx
        if not np.isfinite(nx) or nx > div_limit:
            diverged = True
            for kk in range(k + 1, N):
                for c in range(8):
                    rows[kk, c] = np.nan
            break
    return rows, max_state, fault, diverged, clamps
