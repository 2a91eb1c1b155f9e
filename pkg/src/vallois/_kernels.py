"""Compiled path kernels: Philox4x32-10 normals and nested barrier exits."""

import math
import os

import numba as nb
import numpy as np

# prefer OpenMP over TBB, which warns on older installs, unless the user chose
if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ and "NUMBA_THREADING_LAYER" not in os.environ:
    nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x32 on counter (c0..c3) with key (k0, k1)."""
    for _ in range(10):
        p0 = np.uint64(c0) * _M0
        p1 = np.uint64(c2) * _M1
        hi0 = np.uint32(p0 >> _S32)
        lo0 = np.uint32(p0 & _LO32)
        hi1 = np.uint32(p1 >> _S32)
        lo1 = np.uint32(p1 & _LO32)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = np.uint32(k0 + _W0)
        k1 = np.uint32(k1 + _W1)
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def normal_pair(block, path, k0, k1):
    """Two standard normals for counter (block, path) via Box-Muller."""
    r0, r1, r2, r3 = philox4x32(np.uint32(block & 0xFFFFFFFF), np.uint32(block >> 32),
                                np.uint32(path & 0xFFFFFFFF), np.uint32(path >> 32), k0, k1)
    # 53-bit uniforms in [0, 1)
    u1 = (float(r0 >> np.uint32(5)) * 67108864.0 + float(r1 >> np.uint32(6))) / 9007199254740992.0
    u2 = (float(r2 >> np.uint32(5)) * 67108864.0 + float(r3 >> np.uint32(6))) / 9007199254740992.0
    rad = math.sqrt(-2.0 * math.log(1.0 - u1))
    theta = 2.0 * math.pi * u2
    return rad * math.cos(theta), rad * math.sin(theta)


@nb.njit(cache=True)
def normals(n, path, k0, k1):
    out = np.empty(n)
    for j in range(0, n, 2):
        z0, z1 = normal_pair(np.uint64(j // 2), np.uint64(path), k0, k1)
        out[j] = z0
        if j + 1 < n:
            out[j + 1] = z1
    return out


@nb.njit(cache=True, parallel=True)
def nested_exits(k0, k1, path_offset, n_paths, sqdt, eps, max_steps,
                 upper, lower, a_up, a_dn, hedge,
                 out_b, out_n, out_steps, out_gains, out_censored):
    """Simulate paths until they exit K nested barriers in turn.

    Local time is kept as an integer count n of window visits, so the level
    is n * dt / (2 eps) and barrier tables are indexed by n directly.
    Barrier k is exited at the first step with B >= upper[k, n] or
    B <= lower[k, n].  With ``hedge`` set, gains accumulate
    Delta(B_{k-1}, L_{k-1}) * (B_k - B_{k-1}) until the first exit.
    """
    K = upper.shape[0]
    n_lat = upper.shape[1]
    for i in nb.prange(n_paths):
        path = np.uint64(path_offset + i)
        b = 0.0
        n = 0
        k = 0
        step = 0
        gains = 0.0
        z1 = 0.0
        while step < max_steps:
            if step % 2 == 0:
                z0, z1 = normal_pair(np.uint64(step // 2), path, k0, k1)
                z = z0
            else:
                z = z1
            idx = n if n < n_lat else n_lat - 1
            delta = 0.0
            if hedge and k == 0:
                delta = -a_up[idx] if b > 0.0 else -a_dn[idx]
            if abs(b) <= eps:
                n += 1
            db = sqdt * z
            gains += delta * db
            b += db
            step += 1
            idx = n if n < n_lat else n_lat - 1
            while k < K and (b >= upper[k, idx] or b <= lower[k, idx]):
                out_b[i, k] = b
                out_n[i, k] = n
                out_steps[i, k] = step
                k += 1
            if k == K:
                break
        out_censored[i] = k < K
        while k < K:
            out_b[i, k] = b
            out_n[i, k] = n
            out_steps[i, k] = step
            k += 1
        out_gains[i] = gains
