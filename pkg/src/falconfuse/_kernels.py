"""Optional numba-compiled hot loops for the depthwise convolution.

Depthwise convs are arithmetically cheap but memory-hungry under an
im2col formulation (a kH*kW-fold column expansion per step); these
kernels do the direct sliding-window accumulation instead, parallelized
over (sample, channel). No thread ever participates in another thread's
reduction, so results are bitwise deterministic for ANY thread count
(fastmath stays off: no float reassociation).

Everything degrades to the pure-numpy path in ops.py when numba is
missing; see HAVE_NUMBA.
"""

from __future__ import annotations

import warnings

import numpy as np

try:
    with warnings.catch_warnings():
        # numba probes TBB on import and warns when it is too old; the
        # omp/workqueue layers it falls back to are fine for us.
        warnings.simplefilter("ignore")
        import numba
        from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


def set_threads(n: int) -> None:
    """Pin the kernel thread pool (results do not depend on this)."""
    if HAVE_NUMBA:
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


if HAVE_NUMBA:

    @njit(parallel=True, fastmath=False, cache=True)
    def dw_forward(xp, wv, out, stride):
        # Inner loop runs along the output row so LLVM can vectorize it;
        # each output element keeps its own sequential (i, j) accumulation
        # chain, so results are exact and thread-count independent.
        n, c = xp.shape[0], xp.shape[1]
        kh, kw = wv.shape[1], wv.shape[2]
        ho, wo = out.shape[2], out.shape[3]
        for nc in prange(n * c):
            ni = nc // c
            ci = nc % c
            for y in range(ho):
                orow = out[ni, ci, y]
                for x in range(wo):
                    orow[x] = 0.0
                for i in range(kh):
                    xrow = xp[ni, ci, y * stride + i]
                    for j in range(kw):
                        w_ij = wv[ci, i, j]
                        if stride == 1:
                            for x in range(wo):
                                orow[x] += w_ij * xrow[x + j]
                        else:
                            for x in range(wo):
                                orow[x] += w_ij * xrow[x * stride + j]

    @njit(parallel=True, fastmath=False, cache=True)
    def dw_backward_input(g, wv, gxp, stride):
        n, c = g.shape[0], g.shape[1]
        ho, wo = g.shape[2], g.shape[3]
        kh, kw = wv.shape[1], wv.shape[2]
        for nc in prange(n * c):
            ni = nc // c
            ci = nc % c
            for y in range(ho):
                grow = g[ni, ci, y]
                for i in range(kh):
                    xrow = gxp[ni, ci, y * stride + i]
                    for j in range(kw):
                        w_ij = wv[ci, i, j]
                        if stride == 1:
                            for x in range(wo):
                                xrow[x + j] += w_ij * grow[x]
                        else:
                            for x in range(wo):
                                xrow[x * stride + j] += w_ij * grow[x]

    @njit(parallel=True, fastmath=False, cache=True)
    def dw_backward_weight(g, xp, gw, stride):
        # Reduction runs in 8 fixed lanes (then a fixed-order combine), so
        # the inner loop vectorizes without any float reassociation the
        # compiler could vary: the summation order is part of the code.
        n, c = g.shape[0], g.shape[1]
        ho, wo = g.shape[2], g.shape[3]
        kh, kw = gw.shape[2], gw.shape[3]
        nblk = wo - (wo % 8)
        for ci in prange(c):
            lanes = np.zeros(8, dtype=np.float64)
            for i in range(kh):
                for j in range(kw):
                    for l in range(8):
                        lanes[l] = 0.0
                    tail = 0.0
                    for ni in range(n):
                        for y in range(ho):
                            grow = g[ni, ci, y]
                            xrow = xp[ni, ci, y * stride + i]
                            if stride == 1:
                                for x in range(0, nblk, 8):
                                    for l in range(8):
                                        lanes[l] += grow[x + l] * xrow[x + l + j]
                                for x in range(nblk, wo):
                                    tail += grow[x] * xrow[x + j]
                            else:
                                for x in range(0, nblk, 8):
                                    for l in range(8):
                                        lanes[l] += grow[x + l] * xrow[(x + l) * stride + j]
                                for x in range(nblk, wo):
                                    tail += grow[x] * xrow[x * stride + j]
                    acc = tail
                    for l in range(8):
                        acc += lanes[l]
                    gw[ci, 0, i, j] = acc

    # ---- stride-2 depthwise via even/odd column split ----
    # Column index x*2 + j maps to x + j//2 in the parity-(j%2) half, so
    # the inner loops stay contiguous and vectorizable.

    @njit(parallel=True, fastmath=False, cache=True)
    def dw_forward_s2(xpe, xpo, wv, out):
        n, c = xpe.shape[0], xpe.shape[1]
        kh, kw = wv.shape[1], wv.shape[2]
        ho, wo = out.shape[2], out.shape[3]
        for nc in prange(n * c):
            ni = nc // c
            ci = nc % c
            for y in range(ho):
                orow = out[ni, ci, y]
                for x in range(wo):
                    orow[x] = 0.0
                for i in range(kh):
                    erow = xpe[ni, ci, y * 2 + i]
                    orow_src = xpo[ni, ci, y * 2 + i]
                    for j in range(kw):
                        w_ij = wv[ci, i, j]
                        half = j // 2
                        if j % 2 == 0:
                            for x in range(wo):
                                orow[x] += w_ij * erow[x + half]
                        else:
                            for x in range(wo):
                                orow[x] += w_ij * orow_src[x + half]

    @njit(parallel=True, fastmath=False, cache=True)
    def dw_backward_input_s2(g, wv, gxpe, gxpo):
        n, c = g.shape[0], g.shape[1]
        ho, wo = g.shape[2], g.shape[3]
        kh, kw = wv.shape[1], wv.shape[2]
        for nc in prange(n * c):
            ni = nc // c
            ci = nc % c
            for y in range(ho):
                grow = g[ni, ci, y]
                for i in range(kh):
                    erow = gxpe[ni, ci, y * 2 + i]
                    orow = gxpo[ni, ci, y * 2 + i]
                    for j in range(kw):
                        w_ij = wv[ci, i, j]
                        half = j // 2
                        if j % 2 == 0:
                            for x in range(wo):
                                erow[x + half] += w_ij * grow[x]
                        else:
                            for x in range(wo):
                                orow[x + half] += w_ij * grow[x]

    @njit(parallel=True, fastmath=False, cache=True)
    def dw_backward_weight_s2(g, xpe, xpo, gw):
        n, c = g.shape[0], g.shape[1]
        ho, wo = g.shape[2], g.shape[3]
        kh, kw = gw.shape[2], gw.shape[3]
        nblk = wo - (wo % 8)
        for ci in prange(c):
            lanes = np.zeros(8, dtype=np.float64)
            for i in range(kh):
                for j in range(kw):
                    for l in range(8):
                        lanes[l] = 0.0
                    tail = 0.0
                    half = j // 2
                    for ni in range(n):
                        for y in range(ho):
                            grow = g[ni, ci, y]
                            if j % 2 == 0:
                                xrow = xpe[ni, ci, y * 2 + i]
                            else:
                                xrow = xpo[ni, ci, y * 2 + i]
                            for x in range(0, nblk, 8):
                                for l in range(8):
                                    lanes[l] += grow[x + l] * xrow[x + l + half]
                            for x in range(nblk, wo):
                                tail += grow[x] * xrow[x + half]
                    acc = tail
                    for l in range(8):
                        acc += lanes[l]
                    gw[ci, 0, i, j] = acc

    # ---- batch norm over N×C×H×W, channel-parallel ----

    @njit(parallel=True, fastmath=False, cache=True)
    def bn_train_forward(x, gamma, beta, mu, var, inv, xhat, out, eps):
        n, c, h, w = x.shape
        m = n * h * w
        for ci in prange(c):
            s1 = 0.0
            s2 = 0.0
            for ni in range(n):
                for y in range(h):
                    for xx in range(w):
                        v = x[ni, ci, y, xx]
                        s1 += v
                        s2 += v * v
            mean = s1 / m
            v2 = s2 / m - mean * mean
            if v2 < 0.0:
                v2 = 0.0
            mu[ci] = mean
            var[ci] = v2
            iv = 1.0 / np.sqrt(v2 + eps)
            inv[ci] = iv
            gm = gamma[ci]
            bt = beta[ci]
            for ni in range(n):
                for y in range(h):
                    for xx in range(w):
                        xh = (x[ni, ci, y, xx] - mean) * iv
                        xhat[ni, ci, y, xx] = xh
                        out[ni, ci, y, xx] = gm * xh + bt

    @njit(parallel=True, fastmath=False, cache=True)
    def bn_train_backward(g, xhat, gamma, inv, gx, dgamma, dbeta):
        n, c, h, w = g.shape
        m = n * h * w
        for ci in prange(c):
            s1 = 0.0
            s2 = 0.0
            for ni in range(n):
                for y in range(h):
                    for xx in range(w):
                        gv = g[ni, ci, y, xx]
                        s1 += gv
                        s2 += gv * xhat[ni, ci, y, xx]
            dbeta[ci] = s1
            dgamma[ci] = s2
            k1 = gamma[ci] * inv[ci]
            mean_g = s1 / m
            mean_gx = s2 / m
            for ni in range(n):
                for y in range(h):
                    for xx in range(w):
                        gx[ni, ci, y, xx] = k1 * (
                            g[ni, ci, y, xx] - mean_g - xhat[ni, ci, y, xx] * mean_gx
                        )

    # ---- layer norm over the channel axis, position-parallel ----

    @njit(parallel=True, fastmath=False, cache=True)
    def ln_forward(x, gamma, beta, inv, xhat, out, eps):
        # x viewed as (N, C, L); normalization per (n, l) position
        n, c, length = x.shape
        for nl in prange(n * length):
            ni = nl // length
            li = nl % length
            s1 = 0.0
            s2 = 0.0
            for ci in range(c):
                v = x[ni, ci, li]
                s1 += v
                s2 += v * v
            mean = s1 / c
            var = s2 / c - mean * mean
            if var < 0.0:
                var = 0.0
            iv = 1.0 / np.sqrt(var + eps)
            inv[ni, li] = iv
            for ci in range(c):
                xh = (x[ni, ci, li] - mean) * iv
                xhat[ni, ci, li] = xh
                out[ni, ci, li] = gamma[ci] * xh + beta[ci]

    @njit(parallel=True, fastmath=False, cache=True)
    def ln_backward_input(g, xhat, gamma, inv, gx):
        n, c, length = g.shape
        for nl in prange(n * length):
            ni = nl // length
            li = nl % length
            s1 = 0.0
            s2 = 0.0
            for ci in range(c):
                dxh = g[ni, ci, li] * gamma[ci]
                s1 += dxh
                s2 += dxh * xhat[ni, ci, li]
            m1 = s1 / c
            m2 = s2 / c
            iv = inv[ni, li]
            for ci in range(c):
                dxh = g[ni, ci, li] * gamma[ci]
                gx[ni, ci, li] = iv * (dxh - m1 - xhat[ni, ci, li] * m2)

    @njit(parallel=True, fastmath=False, cache=True)
    def ln_backward_affine(g, xhat, dgamma, dbeta):
        n, c, length = g.shape
        for ci in prange(c):
            s1 = 0.0
            s2 = 0.0
            for ni in range(n):
                for li in range(length):
                    gv = g[ni, ci, li]
                    s1 += gv * xhat[ni, ci, li]
                    s2 += gv
            dgamma[ci] = s1
            dbeta[ci] = s2
