# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Hot kernels for the hard-sphere collision machinery.

All routines share one quadrature layout: an outer node v_i on the main grid,
an integration node v_s on a (possibly coarser) mapped sub-grid, and a sphere
direction u built in a frame aligned with g = v_i - v_s.  In that frame the
kernel |g.u| = |g| c with c > 0 on the evaluated hemisphere (the rule is
doubled by the exact u -> -u symmetry of the collision map), so the angular
integrand is smooth.  The loss term's angular integral is the exact 2 pi |g|,
which this rule reproduces exactly.

Fields enter as h = f / sqrt(mu); the Gaussian prefactors combine exactly via
mu(v') mu(v*') = mu(v) mu(v*), so only the smooth h-fields are evaluated at
post-collision states: exactly for polynomial fields, by order-p
tensor-Lagrange stencils otherwise.  Stencil windows clamp to the grid and
extrapolate beyond it: they reproduce polynomials of degree < p everywhere,
and far extrapolation is suppressed by the Gaussian pair weight.

Each prange body delegates to a per-row worker function so all scratch arrays
are genuinely thread-private (function-scope C arrays in a prange body are
shared between threads).  The gain-only table builders leave the separable
loss terms to the NumPy wrapper.
"""
import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, fabs

cnp.import_array()

cdef extern from "omp.h":
    void omp_set_num_threads(int)
    int omp_get_max_threads()

DEF MAXP = 6        # max points per axis of a stencil
DEF MAXNB = 36      # monomial basis size cap (deg <= 4 -> 35)
DEF MAXNF = 16      # cross-table field cap
DEF MAXBATCH = 32   # pair batch cap for gamma_batch


def set_num_threads(int n):
    if n > 0:
        omp_set_num_threads(n)


def get_max_threads():
    return omp_get_max_threads()


cdef inline long _axis_window(double x, const double* ax, long n, long p,
                              double* wl) noexcept nogil:
    """Lagrange window start and p weights for coordinate x (clamped window)."""
    cdef long lo = 0, hi = n, mid, iw, a, b
    cdef double num, den, xa
    while lo < hi:
        mid = (lo + hi) >> 1
        if ax[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    iw = lo - (p >> 1)
    if iw < 0:
        iw = 0
    if iw > n - p:
        iw = n - p
    for a in range(p):
        num = 1.0
        den = 1.0
        xa = ax[iw + a]
        for b in range(p):
            if b != a:
                num *= x - ax[iw + b]
                den *= xa - ax[iw + b]
        wl[a] = num / den
    return iw


cdef inline void _frame(double gx, double gy, double gz, double gn,
                        double* e1, double* e2, double* e3) noexcept nogil:
    cdef double invg = 1.0 / gn
    cdef double mx, my, mz, d, inv1, a0, a1, a2
    e3[0] = gx * invg; e3[1] = gy * invg; e3[2] = gz * invg
    a0 = fabs(e3[0]); a1 = fabs(e3[1]); a2 = fabs(e3[2])
    if a0 <= a1 and a0 <= a2:
        mx = 1.0; my = 0.0; mz = 0.0
    elif a1 <= a2:
        mx = 0.0; my = 1.0; mz = 0.0
    else:
        mx = 0.0; my = 0.0; mz = 1.0
    d = mx * e3[0] + my * e3[1] + mz * e3[2]
    e1[0] = mx - d * e3[0]; e1[1] = my - d * e3[1]; e1[2] = mz - d * e3[2]
    inv1 = 1.0 / sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2])
    e1[0] *= inv1; e1[1] *= inv1; e1[2] *= inv1
    e2[0] = e3[1] * e1[2] - e3[2] * e1[1]
    e2[1] = e3[2] * e1[0] - e3[0] * e1[2]
    e2[2] = e3[0] * e1[1] - e3[1] * e1[0]


cdef inline void _monomials(double x, double y, double z, const int* pw, long nb,
                            double* out) noexcept nogil:
    cdef double xp[5]
    cdef double yp[5]
    cdef double zp[5]
    cdef long k
    xp[0] = 1.0; yp[0] = 1.0; zp[0] = 1.0
    for k in range(1, 5):
        xp[k] = xp[k - 1] * x
        yp[k] = yp[k - 1] * y
        zp[k] = zp[k - 1] * z
    for k in range(nb):
        out[k] = xp[pw[3 * k]] * yp[pw[3 * k + 1]] * zp[pw[3 * k + 2]]


cdef inline void _gather(const double* hT, long count, long rowstride,
                         long stride, long stride2,
                         long ix, long iy, long iz, long p,
                         const double* wlx, const double* wly, const double* wlz,
                         double* acc) noexcept nogil:
    """acc[m] = stencil-weighted sum of hT[node*rowstride + m], m < count."""
    cdef long a, b, c_, m
    cdef double wa, wab, w3
    cdef const double* row
    for m in range(count):
        acc[m] = 0.0
    for a in range(p):
        wa = wlx[a]
        for b in range(p):
            wab = wa * wly[b]
            row = hT + ((ix + a) * stride2 + (iy + b) * stride + iz) * rowstride
            for c_ in range(p):
                w3 = wab * wlz[c_]
                for m in range(count):
                    acc[m] += w3 * row[c_ * rowstride + m]


# ---------------------------------------------------------------------------


cdef void _gamma_row(long i, const double* hFT, const double* hGT,
                     const double* hFsT, const double* hGsT,
                     const double* nodes, const double* sub_nodes, long Ns,
                     const double* sub_wmu,
                     const double* ax, long nax,
                     const double* cs, const double* cphi, const double* sphi,
                     const double* wu, long Nu,
                     long p, long npair, double two_pi,
                     double* out_col) noexcept nogil:
    cdef double e1[3]
    cdef double e2[3]
    cdef double e3[3]
    cdef double wlx[MAXP]
    cdef double wly[MAXP]
    cdef double wlz[MAXP]
    cdef double hFp[MAXBATCH]
    cdef double hGp[MAXBATCH]
    cdef double hFq[MAXBATCH]
    cdef double hGq[MAXBATCH]
    cdef double acc[MAXBATCH]
    cdef long s, k, m, ixp, iyp, izp, ixq, iyq, izq
    cdef double vix = nodes[3 * i], viy = nodes[3 * i + 1], viz = nodes[3 * i + 2]
    cdef double gx, gy, gz, gn, wsmu, gu, Bk, ccu, sphk, ux, uy, uz
    cdef double vpx, vpy, vpz, vqx, vqy, vqz, lossu
    cdef long stride = nax, stride2 = nax * nax
    for m in range(npair):
        acc[m] = 0.0
    for s in range(Ns):
        gx = vix - sub_nodes[3 * s]
        gy = viy - sub_nodes[3 * s + 1]
        gz = viz - sub_nodes[3 * s + 2]
        gn = sqrt(gx * gx + gy * gy + gz * gz)
        if gn < 1e-14:
            continue
        wsmu = sub_wmu[s]
        _frame(gx, gy, gz, gn, e1, e2, e3)
        for k in range(Nu):
            ccu = cs[k]
            sphk = sqrt(1.0 - ccu * ccu)
            ux = ccu * e3[0] + sphk * (cphi[k] * e1[0] + sphi[k] * e2[0])
            uy = ccu * e3[1] + sphk * (cphi[k] * e1[1] + sphi[k] * e2[1])
            uz = ccu * e3[2] + sphk * (cphi[k] * e1[2] + sphi[k] * e2[2])
            gu = gn * ccu
            Bk = wu[k] * gu * wsmu
            vpx = vix - gu * ux
            vpy = viy - gu * uy
            vpz = viz - gu * uz
            vqx = sub_nodes[3 * s] + gu * ux
            vqy = sub_nodes[3 * s + 1] + gu * uy
            vqz = sub_nodes[3 * s + 2] + gu * uz
            ixp = _axis_window(vpx, ax, nax, p, wlx)
            iyp = _axis_window(vpy, ax, nax, p, wly)
            izp = _axis_window(vpz, ax, nax, p, wlz)
            _gather(hFT, npair, npair, stride, stride2, ixp, iyp, izp, p, wlx, wly, wlz, hFp)
            _gather(hGT, npair, npair, stride, stride2, ixp, iyp, izp, p, wlx, wly, wlz, hGp)
            ixq = _axis_window(vqx, ax, nax, p, wlx)
            iyq = _axis_window(vqy, ax, nax, p, wly)
            izq = _axis_window(vqz, ax, nax, p, wlz)
            _gather(hFT, npair, npair, stride, stride2, ixq, iyq, izq, p, wlx, wly, wlz, hFq)
            _gather(hGT, npair, npair, stride, stride2, ixq, iyq, izq, p, wlx, wly, wlz, hGq)
            for m in range(npair):
                acc[m] += Bk * (hFp[m] * hGq[m] + hGp[m] * hFq[m])
        lossu = two_pi * gn * wsmu
        for m in range(npair):
            acc[m] -= lossu * (hFT[i * npair + m] * hGsT[s * npair + m]
                               + hGT[i * npair + m] * hFsT[s * npair + m])
    for m in range(npair):
        out_col[m] = acc[m]


def gamma_batch(double[:, ::1] hF, double[:, ::1] hG,
                double[:, ::1] hF_sub, double[:, ::1] hG_sub,
                double[:, ::1] nodes, double[:, ::1] sub_nodes,
                double[::1] sub_wmu,
                double[::1] ax_nodes,
                double[::1] cs, double[::1] cphi, double[::1] sphi, double[::1] wu,
                long p, double vmax, double pref_two_pi):
    """Raw batched bilinear form (npair, N); see _gamma_row for the summand."""
    cdef long N = nodes.shape[0], Ns = sub_nodes.shape[0], Nu = cs.shape[0]
    cdef long npair = hF.shape[0], nax = ax_nodes.shape[0]
    if npair > MAXBATCH:
        raise ValueError(f"pair batch {npair} exceeds {MAXBATCH}; chunk the call")
    if p > MAXP:
        raise ValueError(f"stencil order {p} exceeds {MAXP}")
    hFT_np = np.ascontiguousarray(np.asarray(hF).T)
    hGT_np = np.ascontiguousarray(np.asarray(hG).T)
    hFsT_np = np.ascontiguousarray(np.asarray(hF_sub).T)
    hGsT_np = np.ascontiguousarray(np.asarray(hG_sub).T)
    cdef double[:, ::1] hFT = hFT_np
    cdef double[:, ::1] hGT = hGT_np
    cdef double[:, ::1] hFsT = hFsT_np
    cdef double[:, ::1] hGsT = hGsT_np
    outT_np = np.zeros((N, npair))
    cdef double[:, ::1] outT = outT_np
    cdef long i
    for i in prange(N, nogil=True, schedule="static"):
        _gamma_row(i, &hFT[0, 0], &hGT[0, 0], &hFsT[0, 0], &hGsT[0, 0],
                   &nodes[0, 0], &sub_nodes[0, 0], Ns, &sub_wmu[0],
                   &ax_nodes[0], nax, &cs[0], &cphi[0], &sphi[0], &wu[0], Nu,
                   p, npair, pref_two_pi, &outT[i, 0])
    return np.ascontiguousarray(outT_np.T)


# ---------------------------------------------------------------------------


cdef void _assemble_row(long i, double* row, double* nu_out,
                        const double* nodes, const double* sub_nodes, long Ns,
                        const double* sub_wmu,
                        const long* sub_idx, const double* sub_w, long nsub_st,
                        const double* ax, long nax,
                        const double* cs, const double* cphi, const double* sphi,
                        const double* wu, long Nu,
                        long p, double two_pi) noexcept nogil:
    cdef double e1[3]
    cdef double e2[3]
    cdef double e3[3]
    cdef double wlx[MAXP]
    cdef double wly[MAXP]
    cdef double wlz[MAXP]
    cdef long s, k, a, b, c_, t, ix, iy, iz, base
    cdef double vix = nodes[3 * i], viy = nodes[3 * i + 1], viz = nodes[3 * i + 2]
    cdef double gx, gy, gz, gn, wsmu, gu, Bk, ccu, sphk, ux, uy, uz
    cdef double vpx, vpy, vpz, vqx, vqy, vqz, lossu, wa, wab, nu_i
    cdef long stride = nax, stride2 = nax * nax
    nu_i = 0.0
    for s in range(Ns):
        gx = vix - sub_nodes[3 * s]
        gy = viy - sub_nodes[3 * s + 1]
        gz = viz - sub_nodes[3 * s + 2]
        gn = sqrt(gx * gx + gy * gy + gz * gz)
        if gn < 1e-14:
            continue
        wsmu = sub_wmu[s]
        _frame(gx, gy, gz, gn, e1, e2, e3)
        for k in range(Nu):
            ccu = cs[k]
            sphk = sqrt(1.0 - ccu * ccu)
            ux = ccu * e3[0] + sphk * (cphi[k] * e1[0] + sphi[k] * e2[0])
            uy = ccu * e3[1] + sphk * (cphi[k] * e1[1] + sphi[k] * e2[1])
            uz = ccu * e3[2] + sphk * (cphi[k] * e1[2] + sphi[k] * e2[2])
            gu = gn * ccu
            Bk = wu[k] * gu * wsmu
            vpx = vix - gu * ux
            vpy = viy - gu * uy
            vpz = viz - gu * uz
            vqx = sub_nodes[3 * s] + gu * ux
            vqy = sub_nodes[3 * s + 1] + gu * uy
            vqz = sub_nodes[3 * s + 2] + gu * uz
            ix = _axis_window(vpx, ax, nax, p, wlx)
            iy = _axis_window(vpy, ax, nax, p, wly)
            iz = _axis_window(vpz, ax, nax, p, wlz)
            for a in range(p):
                wa = Bk * wlx[a]
                for b in range(p):
                    wab = wa * wly[b]
                    base = (ix + a) * stride2 + (iy + b) * stride + iz
                    for c_ in range(p):
                        row[base + c_] += wab * wlz[c_]
            ix = _axis_window(vqx, ax, nax, p, wlx)
            iy = _axis_window(vqy, ax, nax, p, wly)
            iz = _axis_window(vqz, ax, nax, p, wlz)
            for a in range(p):
                wa = Bk * wlx[a]
                for b in range(p):
                    wab = wa * wly[b]
                    base = (ix + a) * stride2 + (iy + b) * stride + iz
                    for c_ in range(p):
                        row[base + c_] += wab * wlz[c_]
        lossu = two_pi * gn * wsmu
        nu_i = nu_i + lossu
        for t in range(nsub_st):
            row[sub_idx[s * nsub_st + t]] -= lossu * sub_w[s * nsub_st + t]
    nu_out[0] = nu_i


def assemble_rows(double[:, ::1] nodes, double[:, ::1] sub_nodes,
                  double[::1] sub_wmu,
                  long[:, ::1] sub_stencil_idx, double[:, ::1] sub_stencil_w,
                  double[::1] ax_nodes,
                  double[::1] cs, double[::1] cphi, double[::1] sphi, double[::1] wu,
                  long p, double vmax, double pref_two_pi):
    """Collocation rows (R, nu_hat) of the gain/loss operator in h-coordinates:
    L_c = diag(sqrt_mu) (nu_hat I - R) diag(1/sqrt_mu)."""
    cdef long N = nodes.shape[0], Ns = sub_nodes.shape[0], Nu = cs.shape[0]
    cdef long nax = ax_nodes.shape[0], nsub_st = sub_stencil_idx.shape[1]
    if p > MAXP:
        raise ValueError(f"stencil order {p} exceeds {MAXP}")
    R_np = np.zeros((N, N))
    nu_np = np.zeros(N)
    cdef double[:, ::1] R = R_np
    cdef double[::1] nu = nu_np
    cdef long i
    for i in prange(N, nogil=True, schedule="static"):
        _assemble_row(i, &R[i, 0], &nu[i], &nodes[0, 0], &sub_nodes[0, 0], Ns,
                      &sub_wmu[0], &sub_stencil_idx[0, 0], &sub_stencil_w[0, 0],
                      nsub_st, &ax_nodes[0], nax,
                      &cs[0], &cphi[0], &sphi[0], &wu[0], Nu, p, pref_two_pi)
    return R_np, nu_np


# ---------------------------------------------------------------------------


cdef void _polytab_row(long i, double* Tcol, long nb,
                       const double* nodes, const double* sub_nodes, long Ns,
                       const double* sub_wmu, const int* pw,
                       const double* cs, const double* cphi, const double* sphi,
                       const double* wu, long Nu) noexcept nogil:
    """Gain-only monomial pair table for one output node (upper-triangle order)."""
    cdef double e1[3]
    cdef double e2[3]
    cdef double e3[3]
    cdef double Pp[MAXNB]
    cdef double Pq[MAXNB]
    cdef double M[1296]  # MAXNB * MAXNB
    cdef long s, k, a, b, t
    cdef double vix = nodes[3 * i], viy = nodes[3 * i + 1], viz = nodes[3 * i + 2]
    cdef double gx, gy, gz, gn, wsmu, gu, Bk, ccu, sphk, ux, uy, uz
    cdef double vpx, vpy, vpz, vqx, vqy, vqz, pa
    for t in range(nb * nb):
        M[t] = 0.0
    for s in range(Ns):
        gx = vix - sub_nodes[3 * s]
        gy = viy - sub_nodes[3 * s + 1]
        gz = viz - sub_nodes[3 * s + 2]
        gn = sqrt(gx * gx + gy * gy + gz * gz)
        if gn < 1e-14:
            continue
        wsmu = sub_wmu[s]
        _frame(gx, gy, gz, gn, e1, e2, e3)
        for k in range(Nu):
            ccu = cs[k]
            sphk = sqrt(1.0 - ccu * ccu)
            ux = ccu * e3[0] + sphk * (cphi[k] * e1[0] + sphi[k] * e2[0])
            uy = ccu * e3[1] + sphk * (cphi[k] * e1[1] + sphi[k] * e2[1])
            uz = ccu * e3[2] + sphk * (cphi[k] * e1[2] + sphi[k] * e2[2])
            gu = gn * ccu
            Bk = wu[k] * gu * wsmu
            vpx = vix - gu * ux
            vpy = viy - gu * uy
            vpz = viz - gu * uz
            vqx = sub_nodes[3 * s] + gu * ux
            vqy = sub_nodes[3 * s + 1] + gu * uy
            vqz = sub_nodes[3 * s + 2] + gu * uz
            _monomials(vpx, vpy, vpz, pw, nb, Pp)
            _monomials(vqx, vqy, vqz, pw, nb, Pq)
            for a in range(nb):
                pa = Bk * Pp[a]
                for b in range(nb):
                    M[a * nb + b] += pa * Pq[b]
    t = 0
    for a in range(nb):
        for b in range(a, nb):
            Tcol[t] = M[a * nb + b] + M[b * nb + a]
            t = t + 1


def poly_tables_gain(double[:, ::1] nodes, double[:, ::1] sub_nodes,
                     double[::1] sub_wmu, int[:, ::1] powers,
                     double[::1] cs, double[::1] cphi, double[::1] sphi,
                     double[::1] wu):
    """Gain part of the monomial pair tables, shape (nb*(nb+1)/2, N).

    The separable loss part is added by the caller in closed form.
    """
    cdef long N = nodes.shape[0], Ns = sub_nodes.shape[0], Nu = cs.shape[0]
    cdef long nb = powers.shape[0]
    if nb > MAXNB:
        raise ValueError(f"basis size {nb} exceeds {MAXNB}")
    cdef long npairs = nb * (nb + 1) // 2
    TT_np = np.zeros((N, npairs))
    cdef double[:, ::1] TT = TT_np
    cdef long i
    for i in prange(N, nogil=True, schedule="static"):
        _polytab_row(i, &TT[i, 0], nb, &nodes[0, 0], &sub_nodes[0, 0], Ns,
                     &sub_wmu[0], &powers[0, 0],
                     &cs[0], &cphi[0], &sphi[0], &wu[0], Nu)
    return np.ascontiguousarray(TT_np.T)


# ---------------------------------------------------------------------------


cdef void _linrow(long i, double* out_row, long nb,
                  const double* nodes, const double* sub_nodes, long Ns,
                  const double* sub_wmu, const int* pw,
                  const double* cs, const double* cphi, const double* sphi,
                  const double* wu, long Nu) noexcept nogil:
    """Gain sums sum_{s,u} B~ [P_b(v') + P_b(v*')] for all monomials b."""
    cdef double e1[3]
    cdef double e2[3]
    cdef double e3[3]
    cdef double Pp[MAXNB]
    cdef double Pq[MAXNB]
    cdef double acc[MAXNB]
    cdef long s, k, b
    cdef double vix = nodes[3 * i], viy = nodes[3 * i + 1], viz = nodes[3 * i + 2]
    cdef double gx, gy, gz, gn, wsmu, gu, Bk, ccu, sphk, ux, uy, uz
    cdef double vpx, vpy, vpz, vqx, vqy, vqz
    for b in range(nb):
        acc[b] = 0.0
    for s in range(Ns):
        gx = vix - sub_nodes[3 * s]
        gy = viy - sub_nodes[3 * s + 1]
        gz = viz - sub_nodes[3 * s + 2]
        gn = sqrt(gx * gx + gy * gy + gz * gz)
        if gn < 1e-14:
            continue
        wsmu = sub_wmu[s]
        _frame(gx, gy, gz, gn, e1, e2, e3)
        for k in range(Nu):
            ccu = cs[k]
            sphk = sqrt(1.0 - ccu * ccu)
            ux = ccu * e3[0] + sphk * (cphi[k] * e1[0] + sphi[k] * e2[0])
            uy = ccu * e3[1] + sphk * (cphi[k] * e1[1] + sphi[k] * e2[1])
            uz = ccu * e3[2] + sphk * (cphi[k] * e1[2] + sphi[k] * e2[2])
            gu = gn * ccu
            Bk = wu[k] * gu * wsmu
            vpx = vix - gu * ux
            vpy = viy - gu * uy
            vpz = viz - gu * uz
            vqx = sub_nodes[3 * s] + gu * ux
            vqy = sub_nodes[3 * s + 1] + gu * uy
            vqz = sub_nodes[3 * s + 2] + gu * uz
            _monomials(vpx, vpy, vpz, pw, nb, Pp)
            _monomials(vqx, vqy, vqz, pw, nb, Pq)
            for b in range(nb):
                acc[b] += Bk * (Pp[b] + Pq[b])
    for b in range(nb):
        out_row[b] = acc[b]


def linear_poly_rows(double[:, ::1] nodes, double[:, ::1] sub_nodes,
                     double[::1] sub_wmu, int[:, ::1] powers,
                     double[::1] cs, double[::1] cphi, double[::1] sphi,
                     double[::1] wu):
    """Gain sums of the linearized operator on the monomial basis, shape (nb, N)."""
    cdef long N = nodes.shape[0], Ns = sub_nodes.shape[0], Nu = cs.shape[0]
    cdef long nb = powers.shape[0]
    if nb > MAXNB:
        raise ValueError(f"basis size {nb} exceeds {MAXNB}")
    out_np = np.zeros((N, nb))
    cdef double[:, ::1] out = out_np
    cdef long i
    for i in prange(N, nogil=True, schedule="static"):
        _linrow(i, &out[i, 0], nb, &nodes[0, 0], &sub_nodes[0, 0], Ns,
                &sub_wmu[0], &powers[0, 0], &cs[0], &cphi[0], &sphi[0], &wu[0], Nu)
    return np.ascontiguousarray(out_np.T)


# ---------------------------------------------------------------------------


cdef void _cross_row(long i, double* GAcol, double* AAcol, long nb, long nA,
                     const double* hAT,
                     const double* nodes, const double* sub_nodes, long Ns,
                     const double* sub_wmu, const int* pw,
                     const double* ax, long nax,
                     const double* cs, const double* cphi, const double* sphi,
                     const double* wu, long Nu, long p) noexcept nogil:
    """Gain-only cross tables for one output node: monomial x field and field x field."""
    cdef double e1[3]
    cdef double e2[3]
    cdef double e3[3]
    cdef double wlx[MAXP]
    cdef double wly[MAXP]
    cdef double wlz[MAXP]
    cdef double Pp[MAXNB]
    cdef double Pq[MAXNB]
    cdef double Ap[MAXNF]
    cdef double Aq[MAXNF]
    cdef double Mga[576]   # MAXNB * MAXNF
    cdef double Maa[256]   # MAXNF * MAXNF
    cdef long s, k, a, b, t, l, ix, iy, iz
    cdef double vix = nodes[3 * i], viy = nodes[3 * i + 1], viz = nodes[3 * i + 2]
    cdef double gx, gy, gz, gn, wsmu, gu, Bk, ccu, sphk, ux, uy, uz
    cdef double vpx, vpy, vpz, vqx, vqy, vqz, wa, wb
    cdef long stride = nax, stride2 = nax * nax
    for t in range(nb * nA):
        Mga[t] = 0.0
    for t in range(nA * nA):
        Maa[t] = 0.0
    for s in range(Ns):
        gx = vix - sub_nodes[3 * s]
        gy = viy - sub_nodes[3 * s + 1]
        gz = viz - sub_nodes[3 * s + 2]
        gn = sqrt(gx * gx + gy * gy + gz * gz)
        if gn < 1e-14:
            continue
        wsmu = sub_wmu[s]
        _frame(gx, gy, gz, gn, e1, e2, e3)
        for k in range(Nu):
            ccu = cs[k]
            sphk = sqrt(1.0 - ccu * ccu)
            ux = ccu * e3[0] + sphk * (cphi[k] * e1[0] + sphi[k] * e2[0])
            uy = ccu * e3[1] + sphk * (cphi[k] * e1[1] + sphi[k] * e2[1])
            uz = ccu * e3[2] + sphk * (cphi[k] * e1[2] + sphi[k] * e2[2])
            gu = gn * ccu
            Bk = wu[k] * gu * wsmu
            vpx = vix - gu * ux
            vpy = viy - gu * uy
            vpz = viz - gu * uz
            vqx = sub_nodes[3 * s] + gu * ux
            vqy = sub_nodes[3 * s + 1] + gu * uy
            vqz = sub_nodes[3 * s + 2] + gu * uz
            _monomials(vpx, vpy, vpz, pw, nb, Pp)
            _monomials(vqx, vqy, vqz, pw, nb, Pq)
            ix = _axis_window(vpx, ax, nax, p, wlx)
            iy = _axis_window(vpy, ax, nax, p, wly)
            iz = _axis_window(vpz, ax, nax, p, wlz)
            _gather(hAT, nA, nA, stride, stride2, ix, iy, iz, p, wlx, wly, wlz, Ap)
            ix = _axis_window(vqx, ax, nax, p, wlx)
            iy = _axis_window(vqy, ax, nax, p, wly)
            iz = _axis_window(vqz, ax, nax, p, wlz)
            _gather(hAT, nA, nA, stride, stride2, ix, iy, iz, p, wlx, wly, wlz, Aq)
            for a in range(nb):
                wa = Bk * Pp[a]
                wb = Bk * Pq[a]
                for l in range(nA):
                    Mga[a * nA + l] += wa * Aq[l] + wb * Ap[l]
            for l in range(nA):
                wa = Bk * Ap[l]
                for t in range(nA):
                    Maa[l * nA + t] += wa * Aq[t]
    for t in range(nb * nA):
        GAcol[t] = Mga[t]
    t = 0
    for a in range(nA):
        for b in range(a, nA):
            AAcol[t] = Maa[a * nA + b] + Maa[b * nA + a]
            t = t + 1


def cross_tables_gain(double[:, ::1] hA,
                      double[:, ::1] nodes, double[:, ::1] sub_nodes,
                      double[::1] sub_wmu, int[:, ::1] powers,
                      double[::1] ax_nodes,
                      double[::1] cs, double[::1] cphi, double[::1] sphi,
                      double[::1] wu, long p):
    """Gain parts of the (monomial x field) and (field x field) tables."""
    cdef long N = nodes.shape[0], Ns = sub_nodes.shape[0], Nu = cs.shape[0]
    cdef long nb = powers.shape[0], nA = hA.shape[0], nax = ax_nodes.shape[0]
    if nb > MAXNB or nA > MAXNF:
        raise ValueError("basis or field count exceeds compiled caps")
    if p > MAXP:
        raise ValueError(f"stencil order {p} exceeds {MAXP}")
    hAT_np = np.ascontiguousarray(np.asarray(hA).T)
    cdef double[:, ::1] hAT = hAT_np
    GAT_np = np.zeros((N, nb * nA))
    AAT_np = np.zeros((N, nA * (nA + 1) // 2))
    cdef double[:, ::1] GAT = GAT_np
    cdef double[:, ::1] AAT = AAT_np
    cdef long i
    for i in prange(N, nogil=True, schedule="static"):
        _cross_row(i, &GAT[i, 0], &AAT[i, 0], nb, nA, &hAT[0, 0],
                   &nodes[0, 0], &sub_nodes[0, 0], Ns, &sub_wmu[0],
                   &powers[0, 0], &ax_nodes[0], nax,
                   &cs[0], &cphi[0], &sphi[0], &wu[0], Nu, p)
    return np.ascontiguousarray(GAT_np.T), np.ascontiguousarray(AAT_np.T)


# ---------------------------------------------------------------------------


cdef void _interp_point(long j, const double* hT, long nf, const double* pts,
                        const double* ax, long nax, long p,
                        double* out_col) noexcept nogil:
    cdef double wlx[MAXP]
    cdef double wly[MAXP]
    cdef double wlz[MAXP]
    cdef double acc[64]
    cdef long ix, iy, iz, m, lo, chunk
    cdef long stride = nax, stride2 = nax * nax
    ix = _axis_window(pts[3 * j], ax, nax, p, wlx)
    iy = _axis_window(pts[3 * j + 1], ax, nax, p, wly)
    iz = _axis_window(pts[3 * j + 2], ax, nax, p, wlz)
    lo = 0
    while lo < nf:
        chunk = nf - lo
        if chunk > 64:
            chunk = 64
        _gather(hT + lo, chunk, nf, stride, stride2, ix, iy, iz, p, wlx, wly, wlz, acc)
        for m in range(chunk):
            out_col[lo + m] = acc[m]
        lo = lo + 64


def interp_eval(double[:, ::1] h, double[:, ::1] pts, double[::1] ax_nodes,
                long p, double vmax):
    """Order-p tensor-Lagrange evaluation of nodal fields h (m, N) at points (M, 3)."""
    cdef long M = pts.shape[0], nax = ax_nodes.shape[0], nf = h.shape[0]
    if p > MAXP:
        raise ValueError(f"stencil order {p} exceeds {MAXP}")
    hT_np = np.ascontiguousarray(np.asarray(h).T)
    cdef double[:, ::1] hT = hT_np
    outT_np = np.zeros((M, nf))
    cdef double[:, ::1] outT = outT_np
    cdef long j
    for j in prange(M, nogil=True, schedule="static"):
        _interp_point(j, &hT[0, 0], nf, &pts[0, 0], &ax_nodes[0], nax, p,
                      &outT[j, 0])
    return np.ascontiguousarray(outT_np.T)
