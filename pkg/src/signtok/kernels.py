"""Hot numeric kernels.

Everything here is written in the numpy subset that numba's nopython mode
accepts, so the same source runs on two paths: compiled via ``@njit`` when
numba is enabled (the default), or as plain numpy/Python when the
environment variable ``SIGNTOK_NUMBA`` is set to ``0``/``false``/``off``.
``benchmarks/bench_kernels.py`` times both paths.

All float arrays are expected C-contiguous float64; callers are responsible
for that (``np.ascontiguousarray`` at the boundary).
"""

import os

import numpy as np

NUMBA_ENABLED = os.environ.get("SIGNTOK_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "off",
)

if NUMBA_ENABLED:
    from numba import njit
else:

    def njit(*args, **kwargs):
        # stand-in decorator: leaves the function as pure Python/numpy
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


@njit(cache=True)
def nearest_rows(X, rows):
    """Index of the closest row (squared Euclidean) for each vector in X.

    Ties resolve to the lowest row index because the scan keeps the first
    strict improvement only.
    """
    T = X.shape[0]
    m = rows.shape[0]
    d = X.shape[1]
    ids = np.empty(T, dtype=np.int64)
    for t in range(T):
        best = 0
        best_dist = np.inf
        for j in range(m):
            dist = 0.0
            for k in range(d):
                diff = X[t, k] - rows[j, k]
                dist += diff * diff
            if dist < best_dist:
                best_dist = dist
                best = j
        ids[t] = best
    return ids


@njit(cache=True)
def gru_forward(x, h0, Wr, Wu, Wn, Ur, Uu, Un, br, bu, bn):
    """Unroll a single gated recurrent cell over a sequence.

    x: (T, D) inputs, h0: (H,) initial state.  Gate convention:

        r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
        u_t = sigmoid(Wu x_t + Uu h_{t-1} + bu)
        n_t = tanh(Wn x_t + Un (r_t * h_{t-1}) + bn)
        h_t = u_t * h_{t-1} + (1 - u_t) * n_t

    Returns (h, r, u, n), each (T, H).  The gate caches feed gru_backward.
    """
    T = x.shape[0]
    H = h0.shape[0]
    h = np.empty((T, H), dtype=np.float64)
    r = np.empty((T, H), dtype=np.float64)
    u = np.empty((T, H), dtype=np.float64)
    n = np.empty((T, H), dtype=np.float64)
    h_prev = h0.copy()
    for t in range(T):
        xt = x[t]
        rt = 1.0 / (1.0 + np.exp(-(np.dot(Wr, xt) + np.dot(Ur, h_prev) + br)))
        ut = 1.0 / (1.0 + np.exp(-(np.dot(Wu, xt) + np.dot(Uu, h_prev) + bu)))
        nt = np.tanh(np.dot(Wn, xt) + np.dot(Un, rt * h_prev) + bn)
        ht = ut * h_prev + (1.0 - ut) * nt
        r[t] = rt
        u[t] = ut
        n[t] = nt
        h[t] = ht
        h_prev = ht
    return h, r, u, n


@njit(cache=True)
def gru_backward(x, h0, h, r, u, n, Wr, Wu, Wn, Ur, Uu, Un, dh_out):
    """Backpropagation through time for gru_forward.

    dh_out: (T, H) per-step gradient injections dL/dh_t coming from the
    loss side (zero rows where a step does not feed the loss directly).

    Returns (dWr, dWu, dWn, dUr, dUu, dUn, dbr, dbu, dbn, dx, dh0).
    """
    T = x.shape[0]
    H = h0.shape[0]
    D = x.shape[1]
    dWr = np.zeros((H, D), dtype=np.float64)
    dWu = np.zeros((H, D), dtype=np.float64)
    dWn = np.zeros((H, D), dtype=np.float64)
    dUr = np.zeros((H, H), dtype=np.float64)
    dUu = np.zeros((H, H), dtype=np.float64)
    dUn = np.zeros((H, H), dtype=np.float64)
    dbr = np.zeros(H, dtype=np.float64)
    dbu = np.zeros(H, dtype=np.float64)
    dbn = np.zeros(H, dtype=np.float64)
    dx = np.zeros((T, D), dtype=np.float64)
    carry = np.zeros(H, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        if t == 0:
            h_prev = h0
        else:
            h_prev = h[t - 1]
        dh = dh_out[t] + carry
        rt = r[t]
        ut = u[t]
        nt = n[t]
        dn = dh * (1.0 - ut)
        du = dh * (h_prev - nt)
        carry_prev = dh * ut
        dn_pre = dn * (1.0 - nt * nt)
        dWn += np.outer(dn_pre, x[t])
        dbn += dn_pre
        dUn += np.outer(dn_pre, rt * h_prev)
        drh = np.dot(Un.T, dn_pre)
        dr = drh * h_prev
        carry_prev = carry_prev + drh * rt
        du_pre = du * ut * (1.0 - ut)
        dWu += np.outer(du_pre, x[t])
        dbu += du_pre
        dUu += np.outer(du_pre, h_prev)
        carry_prev = carry_prev + np.dot(Uu.T, du_pre)
        dr_pre = dr * rt * (1.0 - rt)
        dWr += np.outer(dr_pre, x[t])
        dbr += dr_pre
        dUr += np.outer(dr_pre, h_prev)
        carry_prev = carry_prev + np.dot(Ur.T, dr_pre)
        dx[t] = np.dot(Wn.T, dn_pre) + np.dot(Wu.T, du_pre) + np.dot(Wr.T, dr_pre)
        carry = carry_prev
    return dWr, dWu, dWn, dUr, dUu, dUn, dbr, dbu, dbn, dx, carry


@njit(cache=True)
def lcs_length(a, b):
    """Length of the longest common subsequence of two int64 sequences."""
    la = a.shape[0]
    lb = b.shape[0]
    if la == 0 or lb == 0:
        return 0
    prev = np.zeros(lb + 1, dtype=np.int64)
    cur = np.zeros(lb + 1, dtype=np.int64)
    for i in range(1, la + 1):
        for j in range(1, lb + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                if prev[j] >= cur[j - 1]:
                    cur[j] = prev[j]
                else:
                    cur[j] = cur[j - 1]
        for j in range(lb + 1):
            prev[j] = cur[j]
            cur[j] = 0
    return prev[lb]


@njit(cache=True)
def pairwise_sq_dists(X, Y):
    """Squared Euclidean distance matrix between row sets X and Y."""
    nx = X.shape[0]
    ny = Y.shape[0]
    d = X.shape[1]
    out = np.empty((nx, ny), dtype=np.float64)
    for i in range(nx):
        for j in range(ny):
            acc = 0.0
            for k in range(d):
                diff = X[i, k] - Y[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out
