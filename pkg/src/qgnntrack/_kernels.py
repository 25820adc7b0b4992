"""Compiled per-row circuit evaluation for {RY, CNOT} programs.

Each row (one angle assignment) is simulated to completion in a single
scratch buffer, which keeps states of up to ~2**15 amplitudes cache
resident. Only readout probabilities leave the kernel.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

RY, CNOT = 0, 1


def _readout_prob_one(n, kinds, q0, q1, n_head, theta, readout, out):
    dim = 1 << n
    psi = np.empty(dim)
    n_rows = theta.shape[0]
    n_gates = kinds.shape[0]
    enc_c = np.ones(n)
    enc_s = np.zeros(n)
    for r in range(n_rows):
        for q in range(n):
            enc_c[q] = 1.0
            enc_s[q] = 0.0
        for g in range(n_head):
            half = 0.5 * theta[r, g]
            enc_c[q0[g]] = np.cos(half)
            enc_s[q0[g]] = np.sin(half)
        psi[0] = 1.0
        size = 1
        for q in range(n):
            c = enc_c[q]
            s = enc_s[q]
            for j in range(size):
                psi[j + size] = s * psi[j]
                psi[j] = c * psi[j]
            size *= 2

        for g in range(n_head, n_gates):
            if kinds[g] == RY:
                half = 0.5 * theta[r, g]
                c = np.cos(half)
                s = np.sin(half)
                stride = 1 << q0[g]
                for base in range(0, dim, 2 * stride):
                    for j in range(base, base + stride):
                        a = psi[j]
                        b = psi[j + stride]
                        psi[j] = c * a - s * b
                        psi[j + stride] = s * a + c * b
            else:
                cbit = 1 << q0[g]
                tbit = 1 << q1[g]
                for idx in range(dim):
                    if (idx & cbit) != 0 and (idx & tbit) == 0:
                        other = idx | tbit
                        tmp = psi[idx]
                        psi[idx] = psi[other]
                        psi[other] = tmp

        for k in range(readout.shape[0]):
            bit = 1 << readout[k]
            acc = 0.0
            for idx in range(dim):
                if (idx & bit) != 0:
                    acc += psi[idx] * psi[idx]
            out[r, k] = acc


if njit is not None:
    _readout_prob_one = njit(cache=True)(_readout_prob_one)

HAVE_NUMBA = njit is not None


def readout_prob_one(n, kinds, q0, q1, n_head, theta, readout) -> np.ndarray:
    out = np.empty((theta.shape[0], readout.shape[0]))
    _readout_prob_one(
        n,
        np.ascontiguousarray(kinds, dtype=np.int64),
        np.ascontiguousarray(q0, dtype=np.int64),
        np.ascontiguousarray(q1, dtype=np.int64),
        int(n_head),
        np.ascontiguousarray(theta, dtype=np.float64),
        np.ascontiguousarray(readout, dtype=np.int64),
        out,
    )
    return np.clip(out, 0.0, 1.0)
