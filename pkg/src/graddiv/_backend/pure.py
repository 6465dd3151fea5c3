"""Pure numpy implementations of the hot Monte Carlo kernels.

Each function consumes a block of trials at once; the trial axis is leading
everywhere and all reductions stay inside numpy, so this fallback is fully
vectorized rather than a per-trial Python loop.  The compiled extension in
``_core.pyx`` implements the same contracts with scalar C loops; the two are
interchangeable up to floating-point reassociation (parity is asserted in the
test suite at 1e-10 relative).

Trial layout for the linear-network kernels: one row of ``normals`` holds
[student weights W_1..W_L | teacher weights | inputs X], each block row-major,
with widths K_0..K_{L-1} and a single output (K_L = 1).
"""

from __future__ import annotations

import numpy as np

NAME = "pure"


def _parse_layers(normals: np.ndarray, widths, n: int):
    widths = [int(w) for w in widths]
    L = len(widths)
    dims = [(widths[a + 1] if a + 1 < L else 1, widths[a]) for a in range(L)]
    T = normals.shape[0]
    student, teacher = [], []
    off = 0
    for rows, cols in dims:
        student.append(normals[:, off : off + rows * cols].reshape(T, rows, cols))
        off += rows * cols
    for rows, cols in dims:
        teacher.append(normals[:, off : off + rows * cols].reshape(T, rows, cols))
        off += rows * cols
    d = widths[0]
    X = normals[:, off : off + n * d].reshape(T, n, d)
    off += n * d
    if off != normals.shape[1]:
        raise ValueError(f"normals row length {normals.shape[1]} != required {off}")
    return student, teacher, X, L


def _suffix_chain(layers, T: int):
    """Row vectors r_a = W_L ... W_{a+1} for a = L..0 (r_L = [1]).

    Returns the list indexed by a (length L+1); r_0 is the full product.
    """
    L = len(layers)
    r = [None] * (L + 1)
    r[L] = np.ones((T, 1))
    for a in range(L - 1, -1, -1):
        r[a] = np.einsum("tp,tpq->tq", r[a + 1], layers[a])
    return r


def lnn_block_stats(normals: np.ndarray, widths, n: int) -> np.ndarray:
    """Per-trial (n*sum||g_i||^2, ||sum g_i||^2, cross) for a linear network.

    Uses the outer-product structure of linear-network gradients: layer a's
    per-example gradient is e_i * r_a^T u_{a,i}^T with r_a the suffix product
    row and u_{a,i} the prefix activation, so norms and sums factor.
    """
    student, teacher, X, L = _parse_layers(normals, widths, n)
    T = normals.shape[0]

    r = _suffix_chain(student, T)
    rn = [None] * (L + 1)
    for a in range(1, L + 1):
        rn[a] = np.square(r[a]).sum(axis=1)
    w_full = r[0]
    w_teacher = _suffix_chain(teacher, T)[0]

    e = np.einsum("td,tnd->tn", w_full - w_teacher, X)
    e_sq = e * e

    S1 = np.zeros(T)
    normsum = np.zeros(T)
    u = X
    for a in range(1, L + 1):
        S1 += rn[a] * np.einsum("tn,tn->t", e_sq, np.square(u).sum(axis=2))
        msum = np.einsum("tn,tnq->tq", e, u)
        normsum += rn[a] * np.square(msum).sum(axis=1)
        if a < L:
            u = np.einsum("tpq,tnq->tnp", student[a - 1], u)

    out = np.empty((T, 3))
    out[:, 0] = n * S1
    out[:, 1] = normsum
    out[:, 2] = normsum - S1
    return out


def lnn_block_layer_stats(normals: np.ndarray, widths, n: int) -> np.ndarray:
    """Per-trial, per-layer entry-averaged samples for every layer at once.

    Column a-1 holds the layer-a squared sample (mean over the n examples and
    the K_a*K_{a-1} entries of (df_i/dW_{a,p,q})^2) and column L+a-1 the
    matching cross sample over ordered example pairs.  Every entry of a layer
    shares one expectation, so these estimate the same per-entry values as
    :func:`lnn_block_entry_stats` with far less variance.
    """
    student, teacher, X, L = _parse_layers(normals, widths, n)
    T = normals.shape[0]
    if n < 2:
        raise ValueError("cross samples need n >= 2")

    r = _suffix_chain(student, T)
    w_teacher = _suffix_chain(teacher, T)[0]
    e = np.einsum("td,tnd->tn", r[0] - w_teacher, X)
    e_sq = e * e

    out = np.empty((T, 2 * L))
    u = X
    for a in range(1, L + 1):
        rn = np.square(r[a]).sum(axis=1)
        entries = r[a].shape[1] * u.shape[2]
        block_sq = rn * np.einsum("tn,tn->t", e_sq, np.square(u).sum(axis=2))
        msum = np.einsum("tn,tnq->tq", e, u)
        block_cross = rn * np.square(msum).sum(axis=1) - block_sq
        out[:, a - 1] = block_sq / (n * entries)
        out[:, L + a - 1] = block_cross / (n * (n - 1) * entries)
        if a < L:
            u = np.einsum("tpq,tnq->tnp", student[a - 1], u)
    return out


def lnn_block_entry_stats(normals: np.ndarray, widths, n: int, a: int, p: int, q: int) -> np.ndarray:
    """Per-trial samples of the layer-a entry (p, q) expectations.

    Column 0 averages (df_i/dW_{a,p,q})^2 over the n examples of the trial;
    column 1 averages df_i * df_j over ordered pairs i != j (requires n >= 2).
    """
    student, teacher, X, L = _parse_layers(normals, widths, n)
    T = normals.shape[0]
    if not 1 <= a <= L:
        raise ValueError(f"layer index {a} outside 1..{L}")
    if n < 2:
        raise ValueError("per-entry cross sample needs n >= 2")

    r = _suffix_chain(student, T)
    if not 0 <= p < r[a].shape[1]:
        raise ValueError(f"row index {p} out of range for layer {a}")
    w_full = r[0]
    w_teacher = _suffix_chain(teacher, T)[0]
    e = np.einsum("td,tnd->tn", w_full - w_teacher, X)

    u = X
    for layer in range(1, a):
        u = np.einsum("tpq,tnq->tnp", student[layer - 1], u)
    if not 0 <= q < u.shape[2]:
        raise ValueError(f"column index {q} out of range for layer {a}")

    g = e * r[a][:, p : p + 1] * u[:, :, q]
    g_sq_sum = np.square(g).sum(axis=1)
    g_sum = g.sum(axis=1)
    out = np.empty((T, 2))
    out[:, 0] = g_sq_sum / n
    out[:, 1] = (g_sum * g_sum - g_sq_sum) / (n * (n - 1))
    return out


def twolayer_block_terms(
    w2: np.ndarray,
    w2_teacher: np.ndarray,
    s: np.ndarray,
    s_teacher: np.ndarray,
    dz: np.ndarray,
    x: np.ndarray,
) -> np.ndarray:
    """Per-trial (A1, A2, B1, B2) of a conditioned two-layer network.

    The first-layer responses are fixed for the whole block: ``s`` and
    ``s_teacher`` hold sigma(W_1 x_i) and sigma(W_1* x_i), ``dz`` holds
    sigma'(W_1 x_i); only the output rows ``w2``/``w2_teacher`` vary by trial.
    """
    T, K = w2.shape
    n = s.shape[0]
    e = w2 @ s.T - w2_teacher @ s_teacher.T  # (T, n)
    e_sq = e * e

    xsq = np.square(x).sum(axis=1)
    ssq = np.square(s).sum(axis=1)

    hidden_weight = (w2 * w2) @ (dz * dz * xsq[:, None]).T  # (T, n)
    a1 = n * (e_sq * hidden_weight).sum(axis=1)
    a2 = n * (e_sq @ ssq)

    out_sums = e @ s  # (T, K)
    b2 = np.square(out_sums).sum(axis=1)

    b1 = np.zeros(T)
    for pcol in range(K):
        v = (e * dz[:, pcol]) @ x  # (T, dim)
        b1 += np.square(w2[:, pcol]) * np.square(v).sum(axis=1)

    return np.column_stack([a1, a2, b1, b2])
