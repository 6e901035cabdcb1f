"""Adaptive Dormand-Prince 5(4) integrator for the Lindblad equation on small
dense density matrices, compiled with numba.

The model handed to the kernel is

    H(t) = diag(h_diag) + sum_j g_j(t) * (ops[j] o P(t)),   P_ab(t) = exp(i (e_a - e_b) t)

where ``o`` is the elementwise product and ``e`` are the energies of an
optional interaction picture (all zero for no picture change). Each scalar
``g_j`` is a sum of tones ``amp * env(t) * sin(2 pi f t + phase)``. Jump
operators must be eigenoperators of ``diag(e)`` so the dissipator is the same
in both pictures.

Envelope windows and the global clip time are evaluated at the midpoint of
the current step. The driver stops exactly on every breakpoint, so each step
lies inside one smooth piece of the drive.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# Dormand-Prince tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40

KIND_RECT = 0
KIND_GAUSS = 1

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_NONFINITE = 2


@njit(cache=True)
def drive_values(t, t_mid, n_ops, tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time, out):
    for j in range(n_ops):
        out[j] = 0.0
    if t_mid >= clip_time:
        return
    for k in range(tone_op.shape[0]):
        if tone_kind[k] == KIND_RECT:
            if t_mid < tone_par[k, 0] or t_mid >= tone_par[k, 1]:
                continue
            env = 1.0
        else:
            mu = tone_par[k, 0]
            sig = tone_par[k, 1]
            hw = tone_par[k, 2]
            if t_mid < mu - hw or t_mid > mu + hw:
                continue
            x = t - mu
            env = math.exp(-x * x / (2.0 * sig * sig))
        out[tone_op[k]] += tone_amp[k] * env * math.sin(2.0 * math.pi * tone_freq[k] * t + tone_phase[k])


@njit(cache=True)
def _rhs(t, t_mid, rho, out, h_diag, energies, use_picture, ops, g,
         tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time,
         lops, lsum, hbuf, ubuf):
    n = rho.shape[0]
    n_ops = ops.shape[0]
    drive_values(t, t_mid, n_ops, tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time, g)

    if use_picture:
        for a in range(n):
            ubuf[a] = complex(math.cos(energies[a] * t), math.sin(energies[a] * t))
    for a in range(n):
        for b in range(n):
            v = 0j
            for j in range(n_ops):
                v += g[j] * ops[j, a, b]
            if use_picture:
                v *= ubuf[a] * ubuf[b].conjugate()
            if a == b:
                v += h_diag[a]
            hbuf[a, b] = v

    # -i [H, rho] - 1/2 {lsum, rho}
    for a in range(n):
        for b in range(n):
            acc = 0j
            for c in range(n):
                acc += -1j * (hbuf[a, c] * rho[c, b] - rho[a, c] * hbuf[c, b])
                acc += -0.5 * (lsum[a, c] * rho[c, b] + rho[a, c] * lsum[c, b])
            out[a, b] = acc

    # sum_k L rho L^dagger
    for k in range(lops.shape[0]):
        for a in range(n):
            for b in range(n):
                acc = 0j
                for c in range(n):
                    lac = lops[k, a, c]
                    if lac == 0:
                        continue
                    for d in range(n):
                        lbd = lops[k, b, d]
                        if lbd != 0:
                            acc += lac * rho[c, d] * lbd.conjugate()
                out[a, b] += acc


@njit(cache=True)
def _err_norm(y, y_new, err, rtol, atol):
    n = y.shape[0]
    s = 0.0
    for a in range(n):
        for b in range(n):
            sc = atol + rtol * max(abs(y[a, b]), abs(y_new[a, b]))
            r = abs(err[a, b]) / sc
            s += r * r
    return math.sqrt(s / (n * n))


@njit(cache=True)
def integrate(rho0, t0, stops, is_output, rtol, atol, max_step, renormalize, renorm_tol,
              h_diag, energies, use_picture, ops,
              tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time, lops):
    """Integrate from ``t0`` through the sorted ``stops``.

    Returns (states at output stops, status, time of failure, accepted steps,
    trace renormalizations, max trace drift seen before renormalizing).
    """
    n = rho0.shape[0]
    n_out = 0
    for i in range(stops.shape[0]):
        if is_output[i]:
            n_out += 1
    states = np.zeros((n_out, n, n), dtype=np.complex128)

    lsum = np.zeros((n, n), dtype=np.complex128)
    for k in range(lops.shape[0]):
        for a in range(n):
            for b in range(n):
                acc = 0j
                for c in range(n):
                    acc += lops[k, c, a].conjugate() * lops[k, c, b]
                lsum[a, b] += acc

    g = np.zeros(max(ops.shape[0], 1))
    hbuf = np.zeros((n, n), dtype=np.complex128)
    ubuf = np.zeros(n, dtype=np.complex128)
    k1 = np.zeros((n, n), dtype=np.complex128)
    k2 = np.zeros_like(k1)
    k3 = np.zeros_like(k1)
    k4 = np.zeros_like(k1)
    k5 = np.zeros_like(k1)
    k6 = np.zeros_like(k1)
    k7 = np.zeros_like(k1)
    ytmp = np.zeros_like(k1)
    y_new = np.zeros_like(k1)
    err = np.zeros_like(k1)

    y = rho0.copy()
    t = t0
    i_out = 0
    n_steps = 0
    n_renorm = 0
    max_drift = 0.0
    h = -1.0
    k1_valid = False

    for i_stop in range(stops.shape[0]):
        t_stop = stops[i_stop]
        while t < t_stop:
            span = t_stop - t
            if h < 0.0:
                # initial step from the scale of rho and its derivative
                _rhs(t, t + 0.5 * min(span, max_step), y, k1, h_diag, energies, use_picture, ops, g,
                     tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time, lops, lsum, hbuf, ubuf)
                d0 = 0.0
                d1 = 0.0
                for a in range(n):
                    for b in range(n):
                        sc = atol + rtol * abs(y[a, b])
                        d0 += (abs(y[a, b]) / sc) ** 2
                        d1 += (abs(k1[a, b]) / sc) ** 2
                d0 = math.sqrt(d0 / (n * n))
                d1 = math.sqrt(d1 / (n * n))
                if d0 < 1e-5 or d1 < 1e-5:
                    h = 1e-6
                else:
                    h = 0.01 * d0 / d1
            hh = min(h, max_step)
            last = False
            if hh >= span * (1.0 - 1e-12):
                hh = span
                last = True
            t_mid = t + 0.5 * hh
            if not k1_valid:
                _rhs(t, t_mid, y, k1, h_diag, energies, use_picture, ops, g,
                     tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time, lops, lsum, hbuf, ubuf)

            for a in range(n):
                for b in range(n):
                    ytmp[a, b] = y[a, b] + hh * A21 * k1[a, b]
            _rhs(t + C2 * hh, t_mid, ytmp, k2, h_diag, energies, use_picture, ops, g,
                 tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time, lops, lsum, hbuf, ubuf)
            for a in range(n):
                for b in range(n):
                    ytmp[a, b] = y[a, b] + hh * (A31 * k1[a, b] + A32 * k2[a, b])
            _rhs(t + C3 * hh, t_mid, ytmp, k3, h_diag, energies, use_picture, ops, g,
                 tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time, lops, lsum, hbuf, ubuf)
            for a in range(n):
                for b in range(n):
                    ytmp[a, b] = y[a, b] + hh * (A41 * k1[a, b] + A42 * k2[a, b] + A43 * k3[a, b])
            _rhs(t + C4 * hh, t_mid, ytmp, k4, h_diag, energies, use_picture, ops, g,
                 tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time, lops, lsum, hbuf, ubuf)
            for a in range(n):
                for b in range(n):
                    ytmp[a, b] = y[a, b] + hh * (A51 * k1[a, b] + A52 * k2[a, b] + A53 * k3[a, b] + A54 * k4[a, b])
            _rhs(t + C5 * hh, t_mid, ytmp, k5, h_diag, energies, use_picture, ops, g,
                 tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time, lops, lsum, hbuf, ubuf)
            for a in range(n):
                for b in range(n):
                    ytmp[a, b] = y[a, b] + hh * (A61 * k1[a, b] + A62 * k2[a, b] + A63 * k3[a, b]
                                                 + A64 * k4[a, b] + A65 * k5[a, b])
            _rhs(t + hh, t_mid, ytmp, k6, h_diag, energies, use_picture, ops, g,
                 tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time, lops, lsum, hbuf, ubuf)
            for a in range(n):
                for b in range(n):
                    y_new[a, b] = y[a, b] + hh * (B1 * k1[a, b] + B3 * k3[a, b] + B4 * k4[a, b]
                                                  + B5 * k5[a, b] + B6 * k6[a, b])
            _rhs(t + hh, t_mid, y_new, k7, h_diag, energies, use_picture, ops, g,
                 tone_op, tone_amp, tone_freq, tone_phase, tone_kind, tone_par, clip_time, lops, lsum, hbuf, ubuf)
            for a in range(n):
                for b in range(n):
                    err[a, b] = hh * (E1 * k1[a, b] + E3 * k3[a, b] + E4 * k4[a, b] + E5 * k5[a, b]
                                      + E6 * k6[a, b] + E7 * k7[a, b])
            en = _err_norm(y, y_new, err, rtol, atol)

            if not math.isfinite(en):
                return states, STATUS_NONFINITE, t, n_steps, n_renorm, max_drift

            if en <= 1.0:
                t = t_stop if last else t + hh
                for a in range(n):
                    for b in range(n):
                        y[a, b] = y_new[a, b]
                n_steps += 1
                if renormalize:
                    tr = 0.0
                    for a in range(n):
                        tr += y[a, a].real
                    drift = abs(tr - 1.0)
                    if drift > max_drift:
                        max_drift = drift
                    if drift > renorm_tol:
                        for a in range(n):
                            for b in range(n):
                                y[a, b] /= tr
                        n_renorm += 1
                if last:
                    k1_valid = False
                else:
                    k1_valid = True
                    for a in range(n):
                        for b in range(n):
                            k1[a, b] = k7[a, b]
                if en == 0.0:
                    fac = 10.0
                else:
                    fac = min(10.0, max(0.2, 0.9 * en ** -0.2))
                # a step shortened to hit a stop says nothing about the next one
                h = max(h, hh * fac) if last else hh * fac
            else:
                k1_valid = True
                h = hh * max(0.2, 0.9 * en ** -0.2)
                if h < 1e-14 * max(1.0, abs(t)):
                    return states, STATUS_STEP_UNDERFLOW, t, n_steps, n_renorm, max_drift
        if is_output[i_stop]:
            for a in range(n):
                for b in range(n):
                    states[i_out, a, b] = y[a, b]
            i_out += 1
    return states, STATUS_OK, t, n_steps, n_renorm, max_drift
