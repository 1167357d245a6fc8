"""Compiled fine-step loop for small Hilbert spaces.

Mirrors ``FineStepper.step`` exactly; used when a loop over many small
matrices beats batched numpy calls.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True, fastmath=True, error_model="numpy", boundscheck=False)
def _sandwich(A, r, tmp, out, scale, accumulate):
    """out (+)= scale * A r A^dag, using tmp as scratch."""
    d = r.shape[0]
    for i in range(d):
        for j in range(d):
            s = 0j
            for k in range(d):
                s += A[i, k] * r[k, j]
            tmp[i, j] = s
    for i in range(d):
        for j in range(d):
            s = 0j
            for k in range(d):
                s += tmp[i, k] * np.conj(A[j, k])
            if accumulate:
                out[i, j] += scale * s
            else:
                out[i, j] = scale * s


@nb.njit(cache=True, fastmath=True, error_model="numpy", boundscheck=False)
def advance(rho, xi, u, A0, cdiff, cc, extra, jL, jeta, jtheta, dt, diff_idx, jump_idx, acc):
    """Advance every state in ``rho`` (B, d, d) in place through xi.shape[1] steps.

    Record increments are added to ``acc`` (B, m).
    """
    B = rho.shape[0]
    d = rho.shape[1]
    nsteps = xi.shape[1]
    nd = cdiff.shape[0]
    nj = jL.shape[0]
    ne = extra.shape[0]
    sq = np.sqrt(dt)
    dY = np.zeros(nd)
    r = np.empty((d, d), dtype=np.complex128)
    M = np.empty((d, d), dtype=np.complex128)
    tmp = np.empty((d, d), dtype=np.complex128)
    new = np.empty((d, d), dtype=np.complex128)
    LrL = np.empty((nj, d, d), dtype=np.complex128)
    for b in range(B):
        r[:, :] = rho[b]
        for s in range(nsteps):
            M[:, :] = A0
            for c in range(nd):
                tr = 0j
                for i in range(d):
                    for k in range(d):
                        tr += cdiff[c, i, k] * r[k, i]
                dY[c] = 2.0 * tr.real * dt + sq * xi[b, s, c]
                acc[b, diff_idx[c]] += dY[c]
                for i in range(d):
                    for k in range(d):
                        M[i, k] += dY[c] * cdiff[c, i, k]
            for c in range(nd):
                for e in range(nd):
                    q = 0.5 * (dY[c] * dY[e] - (dt if c == e else 0.0))
                    for i in range(d):
                        for k in range(d):
                            M[i, k] += q * cc[c, e, i, k]
            _sandwich(M, r, tmp, new, 1.0, False)
            for e in range(ne):
                _sandwich(extra[e], r, tmp, new, dt, True)
            for j in range(nj):
                _sandwich(jL[j], r, tmp, LrL[j], 1.0, False)
            for j in range(nj):
                trL = 0.0
                for i in range(d):
                    trL += LrL[j, i, i].real
                rate = jtheta[j] + jeta[j] * trL
                if u[b, s, j] < rate * dt:
                    for i in range(d):
                        for k in range(d):
                            new[i, k] = jtheta[j] * r[i, k] + jeta[j] * LrL[j, i, k]
                    acc[b, jump_idx[j]] += 1.0
            tr = 0.0
            for i in range(d):
                tr += new[i, i].real
            for i in range(d):
                for k in range(i, d):
                    h = 0.5 * (new[i, k] + np.conj(new[k, i])) / tr
                    r[i, k] = h
                    r[k, i] = np.conj(h)
        rho[b] = r
