"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ext.pyx``.
The band and rounding kernels are bitwise identical across the two; the
Jacobi sweep uses a different pair ordering (round-robin here, cyclic in the
compiled version) so results agree only to rounding level.
"""

import numpy as np


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    r = np.trunc(x)
    frac = x - r  # exact for binary floats
    return r + np.where(np.abs(frac) >= 0.5, np.sign(x), 0.0)


def quantize_codes(w, scale, zero, qmax):
    """clamp(round(w / scale) + zero, 0, qmax) with broadcastable params."""
    t = round_half_away(np.asarray(w, dtype=np.float64) / scale) + zero
    return np.clip(t, 0, qmax).astype(np.int64)


def band_scatter(values, a):
    """Place a (2n+1) x b band tensor into a dense a x b matrix.

    Row ``r`` of ``values`` is the diagonal at offset ``o = r - n``; entry
    ``values[r, j]`` lands at ``(j + o, j)`` when that row index is valid.
    """
    values = np.asarray(values, dtype=np.float64)
    ndiag, b = values.shape
    n = (ndiag - 1) // 2
    out = np.zeros((a, b))
    cols = np.arange(b)
    for r in range(ndiag):
        rows = cols + (r - n)
        ok = (rows >= 0) & (rows < a)
        out[rows[ok], cols[ok]] = values[r, ok]
    return out


def band_gather(g, n):
    """Adjoint of :func:`band_scatter`: read the band of ``g`` back out.

    Skipped placements read as 0.
    """
    g = np.asarray(g, dtype=np.float64)
    a, b = g.shape
    out = np.zeros((2 * n + 1, b))
    cols = np.arange(b)
    for r in range(2 * n + 1):
        rows = cols + (r - n)
        ok = (rows >= 0) & (rows < a)
        out[r, ok] = g[rows[ok], cols[ok]]
    return out


def _round_robin(b):
    # Circle-method tournament: b-1 rounds (b even) of disjoint column pairs.
    m = b + (b % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < b and q < b]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_sweeps(A, V, tol, max_sweeps):
    """One-sided Jacobi orthogonalization of the columns of ``A`` in place.

    Rotations are accumulated into ``V`` (in place). Returns the number of
    sweeps used, or -1 if ``max_sweeps`` passed without convergence.
    A pair (p, q) is rotated while |a_p . a_q| > tol * |a_p| |a_q|.
    """
    b = A.shape[1]
    if b < 2:
        return 0
    rounds = _round_robin(b)
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for P, Q in rounds:
            Ap, Aq = A[:, P], A[:, Q]
            alpha = np.einsum("ij,ij->j", Ap, Ap)
            beta = np.einsum("ij,ij->j", Aq, Aq)
            gamma = np.einsum("ij,ij->j", Ap, Aq)
            act = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not act.any():
                continue
            rotated = True
            P, Q = P[act], Q[act]
            alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            Ap, Aq = A[:, P], A[:, Q]
            A[:, P] = c * Ap - s * Aq
            A[:, Q] = s * Ap + c * Aq
            Vp, Vq = V[:, P], V[:, Q]
            V[:, P] = c * Vp - s * Vq
            V[:, Q] = s * Vp + c * Vq
        if not rotated:
            return sweep
    return -1
