"""Per-horizontal-mode Green's kernels on the half-line z > 0.

For diffusivity D = kappa * eta and horizontal mode xi the three kernel kinds
solve d_t G = D (d_z^2 - |xi|^2) G with

  free:      whole-line Gaussian (normalized),
  dirichlet: odd image pair, G(t, 0, y) = 0,
  robin:     (d_z + |xi|) G = 0 at z = 0; Neumann image pair plus the exact
             residual corrector R(t, z + y) = a e^{-a w} erfc(w / (2 sqrt(D t))
             - a sqrt(D t)), a = |xi|, obtained by Laplace inversion in z.

The corrector depends on z + y only and vanishes identically at xi = 0, where
the Robin condition degenerates to Neumann.  Evaluation uses the scaled
complementary error function to stay stable for all arguments.

Kernel *actions* on sampled profiles integrate the exact kernels against the
piecewise-linear interpolant of the samples: the Gaussian image parts have
closed-form moments on each cell (erf/exp), the smooth corrector is handled
by fixed-order Gauss panels per cell.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import erf, erfc, erfcx

SQRT_PI = np.sqrt(np.pi)


class KernelError(ValueError):
    pass


def _ximag(xi) -> float:
    xi = np.asarray(xi, dtype=float)
    return float(np.linalg.norm(xi)) if xi.ndim else float(abs(xi))


def heat_kernel(t: float, x, y, xi, kappa_eta: float):
    """Normalized free kernel (4 pi D t)^{-1/2} e^{-(x-y)^2/(4 D t)} e^{-D |xi|^2 t}."""
    if t <= 0:
        raise KernelError(f"heat kernel needs t > 0, got {t}")
    D = kappa_eta
    a = _ximag(xi)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (np.exp(-((x - y) ** 2) / (4 * D * t)) / np.sqrt(4 * np.pi * D * t)
            * np.exp(-D * a * a * t))


def dirichlet_kernel(t: float, x, y, xi, kappa_eta: float):
    """Half-line kernel vanishing at the wall: H(x - y) - H(x + y)."""
    return heat_kernel(t, x, y, xi, kappa_eta) - heat_kernel(t, x, -np.asarray(y, dtype=float), xi, kappa_eta)


def robin_residual(t: float, w, xi, kappa_eta: float):
    """Residual corrector R(t, w), w = x + y, of the Robin kernel.

    R = a e^{a^2 D t - a w} erfc(w / (2 sqrt(D t)) - a sqrt(D t)); evaluated
    through erfcx when the erfc argument is positive to avoid underflow.
    """
    if t <= 0:
        raise KernelError(f"robin residual needs t > 0, got {t}")
    a = _ximag(xi)
    if a == 0.0:
        return np.zeros_like(np.asarray(w, dtype=float))
    D = kappa_eta
    w = np.asarray(w, dtype=float)
    sq = np.sqrt(D * t)
    z = w / (2 * sq) - a * sq
    out = np.empty_like(np.asarray(w, dtype=float))
    pos = z > 0
    # a e^{a^2 D t - a w} erfc(z) = a erfcx(z) e^{-w^2/(4 D t)} for z > 0 (stable)
    out[pos] = a * erfcx(z[pos]) * np.exp(-(np.asarray(w, dtype=float)[pos] ** 2) / (4 * D * t))
    out[~pos] = a * np.exp(a * a * D * t - a * np.asarray(w, dtype=float)[~pos]) * erfc(z[~pos])
    return out


def robin_kernel(t: float, x, y, xi, kappa_eta: float):
    """Half-line kernel with (d_z + |xi|) G = 0 at the wall."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a = _ximag(xi)
    D = kappa_eta
    pair = (heat_kernel(t, x, y, xi, kappa_eta)
            + heat_kernel(t, x, -y, xi, kappa_eta))
    return pair + robin_residual(t, x + y, xi, kappa_eta) * np.exp(-D * a * a * t)


# ---------------------------------------------------------------------------
# graded vertical grid


@dataclass(frozen=True)
class ZGrid:
    """Graded half-line mesh resolving a sqrt(kappa)-wide wall layer."""

    z: np.ndarray
    kappa: float
    zmax: float

    @property
    def size(self) -> int:
        return len(self.z)

    def trapz_weights(self) -> np.ndarray:
        z = self.z
        w = np.zeros_like(z)
        w[1:-1] = 0.5 * (z[2:] - z[:-2])
        w[0] = 0.5 * (z[1] - z[0])
        w[-1] = 0.5 * (z[-1] - z[-2])
        return w

    def d_dz_matrix(self) -> np.ndarray:
        """Three-point first-derivative matrix on the nonuniform mesh."""
        z = self.z
        n = len(z)
        Dm = np.zeros((n, n))
        for i in range(1, n - 1):
            hm = z[i] - z[i - 1]
            hp = z[i + 1] - z[i]
            Dm[i, i - 1] = -hp / (hm * (hm + hp))
            Dm[i, i] = (hp - hm) / (hm * hp)
            Dm[i, i + 1] = hm / (hp * (hm + hp))
        h0 = z[1] - z[0]
        h1 = z[2] - z[1]
        Dm[0, 0] = -(2 * h0 + h1) / (h0 * (h0 + h1))
        Dm[0, 1] = (h0 + h1) / (h0 * h1)
        Dm[0, 2] = -h0 / (h1 * (h0 + h1))
        hn = z[-1] - z[-2]
        hn1 = z[-2] - z[-3]
        Dm[-1, -1] = (2 * hn + hn1) / (hn * (hn + hn1))
        Dm[-1, -2] = -(hn + hn1) / (hn * hn1)
        Dm[-1, -3] = hn / (hn1 * (hn + hn1))
        return Dm

    def d2_dz2_matrix(self) -> np.ndarray:
        z = self.z
        n = len(z)
        Dm = np.zeros((n, n))
        for i in range(1, n - 1):
            hm = z[i] - z[i - 1]
            hp = z[i + 1] - z[i]
            Dm[i, i - 1] = 2.0 / (hm * (hm + hp))
            Dm[i, i] = -2.0 / (hm * hp)
            Dm[i, i + 1] = 2.0 / (hp * (hm + hp))
        Dm[0] = Dm[1]
        Dm[-1] = Dm[-2]
        return Dm


def build_zgrid(zmax: float = 10.0, h0: float = 0.08, kappa: float = 0.1,
                layer_fraction: float = 0.2) -> ZGrid:
    """Mesh with spacing growing from ~h0*layer_fraction*sqrt(kappa) at the
    wall to h0 at z = 1, uniform h0 beyond."""
    hmin = h0 * layer_fraction * np.sqrt(kappa)
    pts = [0.0]
    while pts[-1] < zmax:
        zc = pts[-1]
        h = hmin + (h0 - hmin) * min(zc, 1.0)
        pts.append(zc + h)
    pts[-1] = zmax
    return ZGrid(z=np.array(pts), kappa=kappa, zmax=zmax)


# ---------------------------------------------------------------------------
# exact-moment actions of the Gaussian parts on piecewise-linear profiles


def _gauss_cell_moments(lo, hi, c, s):
    """(m0, m1): integrals of N(c, s^2)-kernel and x*kernel over [lo, hi].

    Kernel normalized as e^{-(x-c)^2/(2 s^2)} / (s sqrt(2 pi)).
    """
    a = (lo - c) / (s * np.sqrt(2))
    b = (hi - c) / (s * np.sqrt(2))
    m0 = 0.5 * (erf(b) - erf(a))
    m1 = c * m0 - s / np.sqrt(2 * np.pi) * (np.exp(-b * b) - np.exp(-a * a))
    return m0, m1


def _pl_action_row(y, centers, s, signs):
    """Row of the action matrix: for each output point, the exact integral of
    a sum of signed Gaussians (centers, common width s) against the hat basis
    on the grid y.  Returns (len(centers-set), len(y)) accumulated weights."""
    ny = len(y)
    row = np.zeros(ny)
    for c, sg in zip(centers, signs):
        lo = y[:-1]
        hi = y[1:]
        m0, m1 = _gauss_cell_moments(lo, hi, c, s)
        left = (m1 - lo * m0) / (hi - lo)
        right = (hi * m0 - m1) / (hi - lo)
        row[:-1] += sg * right
        row[1:] += sg * left
    return row


def kernel_action_matrix(kind: str, zgrid: ZGrid, t: float, xi,
                         kappa_eta: float, npanel: int = 6) -> np.ndarray:
    """Matrix A with (A g)(z_i) = int_0^inf G(t, z_i, y) PL[g](y) dy.

    The image-pair parts are integrated exactly against the hat functions;
    the Robin corrector (smooth on the sqrt(D t) scale) uses fixed Gauss
    panels per cell.
    """
    if t <= 0:
        raise KernelError("kernel action needs t > 0")
    D = kappa_eta
    a = _ximag(xi)
    z = zgrid.z
    n = len(z)
    s = np.sqrt(2 * D * t)
    decay = np.exp(-D * a * a * t)
    A = np.zeros((n, n))
    for i, zi in enumerate(z):
        if kind == "free":
            A[i] = _pl_action_row(z, [zi], s, [1.0])
        elif kind == "dirichlet":
            A[i] = _pl_action_row(z, [zi, -zi], s, [1.0, -1.0])
        elif kind == "robin":
            A[i] = _pl_action_row(z, [zi, -zi], s, [1.0, 1.0])
        else:
            raise KernelError(f"unknown kernel kind {kind!r}")
    if kind == "robin" and a > 0.0:
        gx, gw = leggauss(npanel)
        lo = z[:-1]
        hi = z[1:]
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        ys = mid[:, None] + half[:, None] * gx[None, :]
        wts = half[:, None] * gw[None, :]
        for i, zi in enumerate(z):
            rv = robin_residual(t, zi + ys, xi, kappa_eta)
            lam = (ys - lo[:, None]) / (hi - lo)[:, None]
            contrib_left = np.sum(rv * wts * (1 - lam), axis=1)
            contrib_right = np.sum(rv * wts * lam, axis=1)
            A[i, :-1] += contrib_left
            A[i, 1:] += contrib_right
    A *= decay
    return A


def boundary_flux_vector(kind: str, zgrid: ZGrid, dt: float, xi,
                         kappa_eta: float, nquad: int = 48) -> np.ndarray:
    """J(z_i) = int_0^dt G(tau, z_i, 0) dtau, for the wall-trace Duhamel term.

    Uses the sqrt-substitution tau = sigma^2 to remove the integrable kernel
    singularity at tau -> 0.
    """
    gx, gw = leggauss(nquad)
    sig = 0.5 * np.sqrt(dt) * (gx + 1.0)
    wts = 0.5 * np.sqrt(dt) * gw * 2.0 * sig
    out = np.zeros(zgrid.size)
    for s_, w_ in zip(sig, wts):
        tau = s_ * s_
        if kind == "robin":
            out += w_ * robin_kernel(tau, zgrid.z, 0.0, xi, kappa_eta)
        elif kind == "dirichlet":
            out += w_ * dirichlet_kernel(tau, zgrid.z, 0.0, xi, kappa_eta)
        else:
            raise KernelError(f"no boundary flux for kind {kind!r}")
    return out


# ---------------------------------------------------------------------------
# elliptic inverse (|xi|^2 - d_z^2) with Dirichlet wall data


def elliptic_action_matrices(zgrid: ZGrid, xi) -> tuple[np.ndarray, np.ndarray]:
    """(Phi, dPhi): exact P1 actions of the half-line Dirichlet Green kernel
    sinh(|xi| z_<) e^{-|xi| z_>} / |xi| and its z-derivative.

    For xi = 0 the mean-mode branch applies: phi(z) = int_0^z int_s^inf w.
    """
    a = _ximag(xi)
    z = zgrid.z
    n = len(z)
    if a == 0.0:
        return _mean_mode_matrices(zgrid)
    Phi = np.zeros((n, n))
    dPhi = np.zeros((n, n))
    # integrate exp(+-a y) against hat functions exactly per cell
    lo, hi = z[:-1], z[1:]
    h = hi - lo

    def cell_exp_moments(sign):
        # integrals of e^{sign a y} and y e^{sign a y} over each cell
        e_lo = np.exp(sign * a * lo)
        e_hi = np.exp(sign * a * hi)
        m0 = (e_hi - e_lo) / (sign * a)
        m1 = (hi * e_hi - lo * e_lo) / (sign * a) - m0 / (sign * a)
        return m0, m1

    for i, zi in enumerate(z):
        row_phi = np.zeros(n)
        row_dphi = np.zeros(n)
        # region y < zi: kernel = sinh(a y) e^{-a zi} / a, z-derivative
        # -a sinh(a y) e^{-a zi} / a; region y > zi: kernel = sinh(a zi)
        # e^{-a y} / a, derivative cosh(a zi) e^{-a y}.  sinh assembled from
        # the exponential cell moments.
        mp0, mp1 = cell_exp_moments(+1)
        mm0, mm1 = cell_exp_moments(-1)
        below = hi <= zi + 1e-300
        cross = (~below) & (lo < zi)
        # full cells below zi
        for (m0s, m1s, coef) in ((mp0, mp1, 0.5), (mm0, mm1, -0.5)):
            w_right = (m1s - lo * m0s) / h
            w_left = (hi * m0s - m1s) / h
            fac = coef * np.exp(-a * zi) / a
            row_phi[:-1] += np.where(below, fac * w_left, 0.0)
            row_phi[1:] += np.where(below, fac * w_right, 0.0)
            dfac = -coef * np.exp(-a * zi)
            row_dphi[:-1] += np.where(below, dfac * w_left, 0.0)
            row_dphi[1:] += np.where(below, dfac * w_right, 0.0)
        # full cells above zi
        above = lo >= zi - 1e-300
        w_right = (mm1 - lo * mm0) / h
        w_left = (hi * mm0 - mm1) / h
        fac = np.sinh(a * zi) / a
        dfac = np.cosh(a * zi)
        row_phi[:-1] += np.where(above, fac * w_left, 0.0)
        row_phi[1:] += np.where(above, fac * w_right, 0.0)
        row_dphi[:-1] += np.where(above, dfac * w_left, 0.0)
        row_dphi[1:] += np.where(above, dfac * w_right, 0.0)
        # the straddling cell: split at zi (linear profile interpolated)
        idx = np.nonzero(cross)[0]
        if len(idx) == 1:
            j = idx[0]
            yl, yr = lo[j], hi[j]
            for part_lo, part_hi, region in ((yl, zi, "below"), (zi, yr, "above")):
                if part_hi <= part_lo:
                    continue
                gx, gw = leggauss(8)
                ys = 0.5 * (part_lo + part_hi) + 0.5 * (part_hi - part_lo) * gx
                ws = 0.5 * (part_hi - part_lo) * gw
                if region == "below":
                    ker = np.sinh(a * ys) * np.exp(-a * zi) / a
                    dker = -np.sinh(a * ys) * np.exp(-a * zi)
                else:
                    ker = np.sinh(a * zi) * np.exp(-a * ys) / a
                    dker = np.cosh(a * zi) * np.exp(-a * ys)
                lam = (ys - yl) / (yr - yl)
                row_phi[j] += np.sum(ker * ws * (1 - lam))
                row_phi[j + 1] += np.sum(ker * ws * lam)
                row_dphi[j] += np.sum(dker * ws * (1 - lam))
                row_dphi[j + 1] += np.sum(dker * ws * lam)
        Phi[i] = row_phi
        dPhi[i] = row_dphi
    return Phi, dPhi


def _mean_mode_matrices(zgrid: ZGrid) -> tuple[np.ndarray, np.ndarray]:
    """xi = 0 branch: phi(z) = int_0^z int_s^inf w(y) dy ds (decaying data)."""
    z = zgrid.z
    n = len(z)
    wts = zgrid.trapz_weights()
    # dphi(z) = int_z^inf w: cumulative from the top (trapezoid)
    Tail = np.zeros((n, n))
    for i in range(n):
        seg = np.zeros(n)
        zi = z[i]
        for j in range(n - 1):
            a_, b_ = z[j], z[j + 1]
            if b_ <= zi:
                continue
            lo = max(a_, zi)
            lam0 = (lo - a_) / (b_ - a_)
            L = b_ - lo
            # linear interpolant weights: int_{lo}^{b} (1-lam) and lam
            seg[j] += L * (1 - 0.5 * (lam0 + 1.0))
            seg[j + 1] += L * 0.5 * (lam0 + 1.0)
        Tail[i] = seg
    # phi(z_i) = int_0^{z_i} dphi: trapezoid over the grid restricted to [0, z_i]
    Phi = np.zeros((n, n))
    acc = np.zeros(n)
    for i in range(1, n):
        h = z[i] - z[i - 1]
        acc = acc + 0.5 * h * (Tail[i] + Tail[i - 1])
        Phi[i] = acc
    return Phi, Tail


def elliptic_apply(omega_profile: np.ndarray, xi, zgrid: ZGrid,
                   tail_tol: float = 1e-6, matrices=None):
    """Solve (|xi|^2 - d_z^2) phi = omega with phi(0) = 0 and decay at infinity.

    Exact for the piecewise-linear interpolant of the samples; the xi = 0
    branch is the decaying double integral.  Returns (phi, dphi).  Raises if
    the data has a non-decaying tail that makes the half-line problem
    ill-posed on the box.
    """
    w = np.asarray(omega_profile)
    scale = np.max(np.abs(w)) if np.max(np.abs(w)) > 0 else 1.0
    tail = np.max(np.abs(w[-3:]))
    if tail > 0.05 * scale and tail > tail_tol:
        raise KernelError(
            f"profile tail {tail:.3e} vs scale {scale:.3e}: data does not decay "
            "within the computational box")
    Phi, dPhi = matrices if matrices is not None else elliptic_action_matrices(zgrid, xi)
    return Phi @ w, dPhi @ w


def elliptic_eval_points(omega_profile: np.ndarray, xi, zgrid: ZGrid,
                         points: np.ndarray) -> np.ndarray:
    """phi at arbitrary points (kernel quadrature against the P1 data).

    Test helper for accurate finite-difference residual checks off the mesh.
    """
    a = _ximag(xi)
    z = zgrid.z
    w = np.asarray(omega_profile)
    out = np.zeros(len(points))
    gx, gw = leggauss(12)

    def kernel_vals(ys, zp):
        if a > 0:
            return np.where(ys < zp, np.sinh(a * ys) * np.exp(-a * zp),
                            np.sinh(a * zp) * np.exp(-a * ys)) / a
        return np.minimum(ys, zp)

    for i, zp in enumerate(points):
        total = 0.0
        for j in range(len(z) - 1):
            lo, hi = z[j], z[j + 1]
            # split the cell at the kernel kink y = zp
            cuts = [lo, hi] if not (lo < zp < hi) else [lo, zp, hi]
            for s0, s1 in zip(cuts[:-1], cuts[1:]):
                ys = 0.5 * (s0 + s1) + 0.5 * (s1 - s0) * gx
                wts = 0.5 * (s1 - s0) * gw
                lam = (ys - lo) / (hi - lo)
                wy = (1 - lam) * w[j] + lam * w[j + 1]
                total += np.sum(kernel_vals(ys, zp) * wy * wts)
        out[i] = total
    return out


def trace_B(N_h_profiles: np.ndarray, xi, zgrid: ZGrid) -> np.ndarray:
    """B = d_z (-Lap_xi)^{-1} N_h at the wall: B_c = int_0^inf e^{-|xi| y} N_c(y) dy."""
    a = _ximag(xi)
    prof = np.atleast_2d(N_h_profiles)
    z = zgrid.z
    if a == 0.0:
        wts = zgrid.trapz_weights()
        out = prof @ wts
    else:
        # exact P1 integration of e^{-a y}
        lo, hi = z[:-1], z[1:]
        h = hi - lo
        e_lo = np.exp(-a * lo)
        e_hi = np.exp(-a * hi)
        m0 = (e_lo - e_hi) / a
        m1 = (lo * e_lo - hi * e_hi) / a + m0 / a
        w_left = (hi * m0 - m1) / h
        w_right = (m1 - lo * m0) / h
        wts = np.zeros(len(z))
        wts[:-1] += w_left
        wts[1:] += w_right
        out = prof @ wts
    return out if N_h_profiles.ndim > 1 else float(out)
