"""Compiled inner loops for the stream simulators and the Fokker-Planck solver.

The simulator kernels consume pre-drawn blocks of randomness and fuse the
update of step k with the inner products needed by step k+1, so each step is
a single pass over the n coordinates.  Reductions are reassociated for SIMD;
use the exact numpy backend when bitwise permutation invariance matters.
"""

import numpy as np
from numba import njit

_FAST = {"reassoc", "contract"}


@njit(cache=True, inline="always")
def _sgn(v):
    return (v > 0.0) - (v < 0.0)


# phi implementations, indexed like regularizers.KINDS
@njit(inline="always")
def _phi_none(v, strength, p1, p2):
    return 0.0


@njit(inline="always")
def _phi_l1(v, strength, p1, p2):
    return strength * _sgn(v)


@njit(inline="always")
def _phi_smoothed_l1(v, strength, p1, p2):
    return strength * np.tanh(v / p1)


@njit(inline="always")
def _phi_elastic(v, strength, p1, p2):
    return strength * (2.0 * p1 * v + p2 * _sgn(v))


@njit(inline="always")
def _phi_tanh(v, strength, p1, p2):
    c = np.cosh(p1 * v)
    return strength * p1 * _sgn(v) / (c * c)


_PHIS = (_phi_none, _phi_l1, _phi_smoothed_l1, _phi_elastic, _phi_tanh)
_CHECK_EVERY = 64


@njit(nogil=True)
def _first_bad(x, limit):
    for i in range(x.size):
        if not abs(x[i]) <= limit:
            return i
    return -1


def _make_regression_kernel(phi):
    @njit(fastmath=_FAST, nogil=True)
    def kernel(x, xi, a, w, start, stop, tau, strength, p1, p2, limit):
        n = x.size
        rn = 1.0 / np.sqrt(n)
        inv_n = 1.0 / n
        s = 0.0
        for i in range(n):
            s += a[start, i] * (x[i] - xi[i])
        for k in range(start, stop):
            r = tau * (w[k] - s * rn) * rn
            if k + 1 < stop:
                s = 0.0
                for i in range(n):
                    v = x[i] + r * a[k, i]
                    v -= inv_n * phi(v, strength, p1, p2)
                    x[i] = v
                    s += a[k + 1, i] * (v - xi[i])
            else:
                for i in range(n):
                    v = x[i] + r * a[k, i]
                    v -= inv_n * phi(v, strength, p1, p2)
                    x[i] = v
            if (k - start) % _CHECK_EVERY == _CHECK_EVERY - 1 or k + 1 == stop:
                if _first_bad(x, limit) >= 0:
                    return k
        return -1

    return kernel


def _make_pca_kernel(phi):
    @njit(fastmath=_FAST, nogil=True)
    def kernel(x, xi, a, c, start, stop, tau, omega, beta, strength, p1, p2, limit):
        n = x.size
        inv_n = 1.0 / n
        sw = np.sqrt(omega * inv_n)
        sqn = np.sqrt(n)
        scale = 1.0
        A = 0.0
        X = 0.0
        for i in range(n):
            A += a[start, i] * x[i]
            X += xi[i] * x[i]
        status = -1
        bi = beta * inv_n
        for k in range(start, stop):
            yx = scale * (sw * c[k] * X + A)
            coef = tau * inv_n * yx
            cs = sw * c[k]
            N2 = 0.0
            X = 0.0
            A = 0.0
            if k + 1 < stop:
                for i in range(n):
                    xt = scale * x[i] + coef * (cs * xi[i] + a[k, i])
                    v = xt - bi * phi(xt, strength, p1, p2)
                    x[i] = v
                    N2 += v * v
                    X += xi[i] * v
                    A += a[k + 1, i] * v
            else:
                for i in range(n):
                    xt = scale * x[i] + coef * (cs * xi[i] + a[k, i])
                    v = xt - bi * phi(xt, strength, p1, p2)
                    x[i] = v
                    N2 += v * v
            if N2 == 0.0:
                status = -2
                break
            scale = sqn / np.sqrt(N2)
            if not scale * scale * N2 <= limit * limit * n:
                status = k
                break
            if (k - start) % _CHECK_EVERY == _CHECK_EVERY - 1:
                if _first_bad(x, limit / scale) >= 0:
                    status = k
                    break
        for i in range(n):
            x[i] *= scale
        return status

    return kernel


_regression_kernels = {}
_pca_kernels = {}


def regression_kernel(code: int):
    """Compiled regression block kernel specialized to regularizer ``code``.

    kernel(x, xi, a, w, start, stop, tau, strength, p1, p2, limit) advances
    block rows start..stop-1 in place and returns -1, or the row at which a
    coordinate was found beyond ``limit`` (checked every few steps).
    """
    if code not in _regression_kernels:
        _regression_kernels[code] = _make_regression_kernel(_PHIS[code])
    return _regression_kernels[code]


def pca_kernel(code: int):
    """Compiled PCA block kernel; x is carried as scale * u between steps.

    Returns -1 on success, -2 on a zero-norm eta output, else the diverging row.
    """
    if code not in _pca_kernels:
        _pca_kernels[code] = _make_pca_kernel(_PHIS[code])
    return _pca_kernels[code]


@njit(cache=True, inline="always")
def _bernoulli(z):
    # z / (exp(z) - 1), continuous at 0
    if abs(z) < 1e-10:
        return 1.0 - 0.5 * z
    return z / np.expm1(z)


@njit(cache=True, inline="always")
def _flux_coeffs(v, D, dx, alpha, beta):
    """Chang-Cooper / Scharfetter-Gummel interface coefficients.

    Flux F_{j+1/2} = alpha_j p_j - beta_j p_{j+1} for F = v p - D dp/dx.
    """
    for j in range(v.size):
        # past |w| = 700 the fitted fluxes equal upwinding to within exp(-700)
        if D > 0.0 and abs(v[j]) * dx < 700.0 * D:
            w = v[j] * dx / D
            g = D / dx
            alpha[j] = g * _bernoulli(-w)
            beta[j] = g * _bernoulli(w)
        else:
            alpha[j] = max(v[j], 0.0)
            beta[j] = max(-v[j], 0.0)


@njit(cache=True, nogil=True)
def fp_sweep(p, V, D, dx, dt, theta, nsteps, probe_w, probe_every, probe_out, save_rows,
             save_out, diag):
    """Theta-scheme steps of dp/dt = -d/dx (v p - D dp/dx) with zero-flux ends.

    V[k] holds interface velocities and D[k] the diffusion coefficient at time
    row k; step k goes from row k to k+1.  The grid has end cells of width
    dx/2, so sum(h p) (the trapezoid mass) is conserved up to roundoff.  After
    every ``probe_every`` steps the projections probe_w @ p are written to
    probe_out.  Densities at step counts listed in ``save_rows`` go to save_out.

    diag = [max |mass change| per step, clip count, clipped mass, bad solves].
    Returns -1, or the step at which the tridiagonal solve broke down.
    """
    m = p.size
    ih = np.full(m, 1.0 / dx)
    ih[0] = 2.0 / dx
    ih[-1] = 2.0 / dx
    a0 = np.empty(m - 1)
    b0 = np.empty(m - 1)
    a1 = np.empty(m - 1)
    b1 = np.empty(m - 1)
    lo = np.empty(m)
    di = np.empty(m)
    up = np.empty(m)
    rhs = np.empty(m)
    cp = np.empty(m)
    _flux_coeffs(V[0], D[0], dx, a0, b0)
    mass = 0.0
    for j in range(m):
        mass += p[j] / ih[j]
    nsave = 0
    if save_rows.size > 0 and save_rows[0] == 0:
        save_out[0, :] = p
        nsave = 1
    ce = (1.0 - theta) * dt
    ci = theta * dt
    for k in range(nsteps):
        _flux_coeffs(V[k + 1], D[k + 1], dx, a1, b1)
        # explicit part: p + ce/h * (F_{j-1/2} - F_{j+1/2})
        for j in range(m):
            acc = 0.0
            if j > 0:
                acc += a0[j - 1] * p[j - 1] - b0[j - 1] * p[j]
            if j < m - 1:
                acc -= a0[j] * p[j] - b0[j] * p[j + 1]
            rhs[j] = p[j] + ce * ih[j] * acc
        for j in range(m):
            c = ci * ih[j]
            d = 0.0
            if j > 0:
                lo[j] = -c * a1[j - 1]
                d += b1[j - 1]
            else:
                lo[j] = 0.0
            if j < m - 1:
                up[j] = -c * b1[j]
                d += a1[j]
            else:
                up[j] = 0.0
            di[j] = 1.0 + c * d
        # Thomas algorithm; the implicit matrix is a column diagonally dominant M-matrix
        den = di[0]
        if not den > 0.0:
            diag[3] += 1.0
            return k
        cp[0] = up[0] / den
        p[0] = rhs[0] / den
        for j in range(1, m):
            den = di[j] - lo[j] * cp[j - 1]
            if not den > 0.0:
                diag[3] += 1.0
                return k
            cp[j] = up[j] / den
            p[j] = (rhs[j] - lo[j] * p[j - 1]) / den
        for j in range(m - 2, -1, -1):
            p[j] -= cp[j] * p[j + 1]
        new_mass = 0.0
        for j in range(m):
            if p[j] < 0.0:
                diag[1] += 1.0
                diag[2] += -p[j] / ih[j]
                p[j] = 0.0
            new_mass += p[j] / ih[j]
        dm = abs(new_mass - mass)
        if dm > diag[0]:
            diag[0] = dm
        mass = new_mass
        for j in range(m - 1):
            a0[j] = a1[j]
            b0[j] = b1[j]
        if probe_every > 0 and (k + 1) % probe_every == 0:
            r = (k + 1) // probe_every
            for l in range(probe_w.shape[0]):
                acc = 0.0
                for j in range(m):
                    acc += probe_w[l, j] * p[j]
                probe_out[r, l] = acc
        if nsave < save_rows.size and save_rows[nsave] == k + 1:
            save_out[nsave, :] = p
            nsave += 1
    return -1
