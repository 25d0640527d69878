"""Compiled amplitude-update loops.

All kernels take a 2-D ``(2**n, batch)`` complex array and update it in
place.  ``ctrl_mask`` has a bit set for every control qubit; only basis
indices with all of those bits set are touched.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _insert_zero(i, bit):
    low = i & ((1 << bit) - 1)
    return ((i >> bit) << (bit + 1)) | low


@njit(cache=True, nogil=True)
def mat1(state, m, target, ctrl_mask):
    n_pairs = state.shape[0] >> 1
    nb = state.shape[1]
    tk = 1 << target
    m00, m01, m10, m11 = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    for g in range(n_pairs):
        i0 = _insert_zero(g, target)
        if (i0 & ctrl_mask) != ctrl_mask:
            continue
        i1 = i0 | tk
        for b in range(nb):
            a0 = state[i0, b]
            a1 = state[i1, b]
            state[i0, b] = m00 * a0 + m01 * a1
            state[i1, b] = m10 * a0 + m11 * a1


@njit(cache=True, nogil=True)
def diag1(state, d0, d1, target, ctrl_mask):
    n_pairs = state.shape[0] >> 1
    nb = state.shape[1]
    tk = 1 << target
    for g in range(n_pairs):
        i0 = _insert_zero(g, target)
        if (i0 & ctrl_mask) != ctrl_mask:
            continue
        i1 = i0 | tk
        for b in range(nb):
            state[i0, b] *= d0
            state[i1, b] *= d1


@njit(cache=True, nogil=True)
def flip1(state, target, ctrl_mask):
    n_pairs = state.shape[0] >> 1
    nb = state.shape[1]
    tk = 1 << target
    for g in range(n_pairs):
        i0 = _insert_zero(g, target)
        if (i0 & ctrl_mask) != ctrl_mask:
            continue
        i1 = i0 | tk
        for b in range(nb):
            t = state[i0, b]
            state[i0, b] = state[i1, b]
            state[i1, b] = t


@njit(cache=True, nogil=True)
def swap2(state, p, q, ctrl_mask):
    lo, hi = min(p, q), max(p, q)
    nb = state.shape[1]
    pk = 1 << p
    qk = 1 << q
    for g in range(state.shape[0] >> 2):
        base = _insert_zero(_insert_zero(g, lo), hi)
        if (base & ctrl_mask) != ctrl_mask:
            continue
        i = base | pk
        j = base | qk
        for b in range(nb):
            t = state[i, b]
            state[i, b] = state[j, b]
            state[j, b] = t


@njit(cache=True, nogil=True)
def dense(state, u, wires, out):
    """``out = U_wires state`` for a ``2**k`` matrix; bit j of U's index is ``wires[j]``."""
    k = wires.shape[0]
    dim = 1 << k
    nb = state.shape[1]
    order = np.sort(wires)
    offsets = np.zeros(dim, dtype=np.int64)
    for r in range(dim):
        off = 0
        for j in range(k):
            if (r >> j) & 1:
                off |= 1 << wires[j]
        offsets[r] = off
    buf = np.empty(dim, dtype=state.dtype)
    for g in range(state.shape[0] >> k):
        base = g
        for j in range(k):
            base = _insert_zero(base, order[j])
        for b in range(nb):
            for c in range(dim):
                buf[c] = state[base | offsets[c], b]
            for r in range(dim):
                acc = 0j
                for c in range(dim):
                    acc += u[r, c] * buf[c]
                out[base | offsets[r], b] = acc


@njit(cache=True, nogil=True)
def pauli_inner(bra, ket, pauli, target, ctrl_mask):
    """``sum_b <bra_b| P_target |ket_b>`` restricted to the controls-set subspace.

    ``pauli`` is 0, 1, 2 for X, Y, Z.
    """
    n_pairs = ket.shape[0] >> 1
    nb = ket.shape[1]
    tk = 1 << target
    acc = 0j
    for g in range(n_pairs):
        i0 = _insert_zero(g, target)
        if (i0 & ctrl_mask) != ctrl_mask:
            continue
        i1 = i0 | tk
        for b in range(nb):
            l0 = bra[i0, b].conjugate()
            l1 = bra[i1, b].conjugate()
            k0 = ket[i0, b]
            k1 = ket[i1, b]
            if pauli == 0:
                acc += l0 * k1 + l1 * k0
            elif pauli == 1:
                acc += -1j * l0 * k1 + 1j * l1 * k0
            else:
                acc += l0 * k0 - l1 * k1
    return acc
