"""Pseudo-spectral Navier-Stokes-Fourier solver on T^2 x (0, inf) in vorticity
form, advanced by the mild (Duhamel) representation per horizontal mode.

Per mode xi the horizontal vorticity evolves with the Robin wall kernel driven
by the nonlinear trace, the vertical component and the heat field with the
Dirichlet kernel:

  w_xi(t+dt) = K_robin(dt) w_xi(t) + int_0^dt K(dt-s) N_xi(s) ds
               - int_0^dt K(dt-s, ., 0) (B_xi(s), 0) ds,
  th_xi(t+dt) = K_dirichlet(dt) th_xi(t) + int_0^dt K(dt-s) M_xi(s) ds,

with the in-step nonlinearity fixed by Picard iteration (exponential
trapezoid in s).  Velocity comes from the per-mode stream solve (Biot-Savart)
and the nonlinear products are formed pseudo-spectrally on a dealiased
horizontal grid with vertical derivatives on the graded mesh.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import cacheio
from .kernels import (ZGrid, boundary_flux_vector, build_zgrid,
                      elliptic_action_matrices, kernel_action_matrix, trace_B)


def _trace_weights(zgrid: ZGrid, a: float) -> np.ndarray:
    """Quadrature weights of B = int e^{-a y} N(y) dy against P1 samples."""
    z = zgrid.z
    if a == 0.0:
        return zgrid.trapz_weights()
    lo, hi = z[:-1], z[1:]
    h = hi - lo
    e_lo = np.exp(-a * lo)
    e_hi = np.exp(-a * hi)
    m0 = (e_lo - e_hi) / a
    m1 = (lo * e_lo - hi * e_hi) / a + m0 / a
    wts = np.zeros(len(z))
    wts[:-1] += (hi * m0 - m1) / h
    wts[1:] += (m1 - lo * m0) / h
    return wts

log = logging.getLogger(__name__)

MAGIC_STATE = b"BHSTATE1"


class StepError(RuntimeError):
    pass


@dataclass
class SpectralState:
    """Per-mode complex vertical profiles of vorticity (3) and heat (1).

    omega has shape (3, nmx, nmy, nz) and theta (nmx, nmy, nz), with mode
    indices m1, m2 in [0, 2M] standing for xi = (m1 - M, m2 - M).
    """

    time: float
    M: int
    zgrid: ZGrid
    omega: np.ndarray
    theta: np.ndarray
    kappa: float
    eta_v: float
    eta_c: float

    @property
    def nmodes(self) -> int:
        return 2 * self.M + 1

    def xi_of(self, m1: int, m2: int) -> tuple[int, int]:
        return (m1 - self.M, m2 - self.M)

    def copy(self) -> "SpectralState":
        return SpectralState(self.time, self.M, self.zgrid, self.omega.copy(),
                             self.theta.copy(), self.kappa, self.eta_v, self.eta_c)

    def reality_defect(self) -> float:
        """max |f(-xi) - conj(f(xi))| over all stored fields."""
        d = 0.0
        for arr in (self.omega, self.theta):
            flipped = np.conj(arr[..., ::-1, ::-1, :]) if arr.ndim == 3 else \
                np.conj(arr[:, ::-1, ::-1, :])
            d = max(d, float(np.max(np.abs(arr - flipped))))
        return d

    def divergence_defect(self) -> float:
        """max over modes of || i xi . omega_h + d_z omega_3 ||_inf."""
        Dz = _dz_matrix(self.zgrid)
        m = np.arange(self.nmodes) - self.M
        div = (1j * m[:, None, None] * self.omega[0]
               + 1j * m[None, :, None] * self.omega[1]
               + np.einsum("ij,xyj->xyi", Dz, self.omega[2]))
        return float(np.max(np.abs(div)))


_DZ_CACHE: dict = {}


def _dz_matrix(zgrid: ZGrid) -> np.ndarray:
    key = id(zgrid)
    if key not in _DZ_CACHE:
        _DZ_CACHE[key] = zgrid.d_dz_matrix()
    return _DZ_CACHE[key]


@dataclass
class FluidState:
    """Physical-space fields on the (nx, ny, nz) tensor grid."""

    time: float
    xh: np.ndarray            # horizontal sample points (nphys,)
    zgrid: ZGrid
    u: np.ndarray             # (3, nphys, nphys, nz)
    theta: np.ndarray         # (nphys, nphys, nz)
    rho: np.ndarray
    p: np.ndarray | None = None


class ModeWorkspace:
    """Precomputed per-|xi| kernel actions and elliptic inverses for one dt."""

    def __init__(self, M: int, zgrid: ZGrid, dt: float, kappa: float,
                 eta_v: float, eta_c: float):
        self.M = M
        self.zgrid = zgrid
        self.dt = dt
        mags = sorted({m1 * m1 + m2 * m2
                       for m1 in range(-M, M + 1) for m2 in range(-M, M + 1)})
        self.robin = {}
        self.dir_v = {}
        self.dir_c = {}
        self.flux = {}
        self.phi = {}
        self.dphi = {}
        self.trace_w = {}
        Dv = kappa * eta_v
        Dc = kappa * eta_c
        for q in mags:
            xi = np.sqrt(q)
            self.robin[q] = kernel_action_matrix("robin", zgrid, dt, xi, Dv)
            self.dir_v[q] = kernel_action_matrix("dirichlet", zgrid, dt, xi, Dv)
            self.dir_c[q] = kernel_action_matrix("dirichlet", zgrid, dt, xi, Dc)
            self.flux[q] = boundary_flux_vector("robin", zgrid, dt, xi, Dv)
            Phi, dPhi = elliptic_action_matrices(zgrid, xi)
            self.phi[q] = Phi
            self.dphi[q] = dPhi
            self.trace_w[q] = _trace_weights(zgrid, xi)


def make_state(M: int, zgrid: ZGrid, kappa: float, eta_v: float, eta_c: float,
               omega_fun=None, theta_fun=None) -> SpectralState:
    """State from physical-space callables omega(x, y, z) -> (3,), theta -> scalar."""
    nm = 2 * M + 1
    nphys = _phys_points(M)
    xh = 2 * np.pi * np.arange(nphys) / nphys - np.pi
    z = zgrid.z
    omega = np.zeros((3, nm, nm, len(z)), dtype=complex)
    theta = np.zeros((nm, nm, len(z)), dtype=complex)
    if omega_fun is not None or theta_fun is not None:
        X, Y = np.meshgrid(xh, xh, indexing="ij")
        om_phys = np.zeros((3, nphys, nphys, len(z)))
        th_phys = np.zeros((nphys, nphys, len(z)))
        for k, zk in enumerate(z):
            if omega_fun is not None:
                om_phys[:, :, :, k] = omega_fun(X, Y, zk)
            if theta_fun is not None:
                th_phys[:, :, :, k] = theta_fun(X, Y, zk)
        omega = _to_modes(om_phys, M)
        theta = _to_modes(th_phys, M)
    return SpectralState(0.0, M, zgrid, omega, theta, kappa, eta_v, eta_c)


def _phys_points(M: int) -> int:
    # 2/3-rule dealiasing for quadratic products
    n = 3 * M + 1
    return int(2 ** np.ceil(np.log2(n)))


def _to_modes(phys: np.ndarray, M: int) -> np.ndarray:
    """FFT of physical samples onto the centered mode window [-M, M]^2."""
    nphys = phys.shape[-3]
    spec = np.fft.fft2(phys, axes=(-3, -2)) / nphys**2
    spec = np.fft.fftshift(spec, axes=(-3, -2))
    c = nphys // 2
    sl = slice(c - M, c + M + 1)
    return np.ascontiguousarray(spec[..., sl, sl, :])


def _to_phys(modes: np.ndarray, M: int) -> np.ndarray:
    nm = 2 * M + 1
    nphys = _phys_points(M)
    shape = modes.shape[:-3] + (nphys, nphys, modes.shape[-1])
    spec = np.zeros(shape, dtype=complex)
    c = nphys // 2
    sl = slice(c - M, c + M + 1)
    spec[..., sl, sl, :] = modes
    spec = np.fft.ifftshift(spec, axes=(-3, -2))
    phys = np.fft.ifft2(spec, axes=(-3, -2)) * nphys**2
    return np.real(phys)


def biot_savart(state: SpectralState, ws: ModeWorkspace) -> np.ndarray:
    """Velocity modes u = curl (-Lap)^{-1} omega, shape (3, nm, nm, nz)."""
    M = state.M
    nm = state.nmodes
    u = np.zeros_like(state.omega)
    for m1 in range(nm):
        for m2 in range(nm):
            k1, k2 = m1 - M, m2 - M
            q = k1 * k1 + k2 * k2
            Phi = ws.phi[q]
            dPhi = ws.dphi[q]
            ph = np.stack([Phi @ state.omega[c, m1, m2] for c in range(3)])
            dph = np.stack([dPhi @ state.omega[c, m1, m2] for c in range(3)])
            u[0, m1, m2] = 1j * k2 * ph[2] - dph[1]
            u[1, m1, m2] = dph[0] - 1j * k1 * ph[2]
            u[2, m1, m2] = 1j * k1 * ph[1] - 1j * k2 * ph[0]
    return u


def nonlinear_terms(state: SpectralState, ws: ModeWorkspace,
                    u_modes: np.ndarray | None = None):
    """(N, M_theta, B): vorticity source -u.grad w + w.grad u, heat source
    -u.grad theta, and the per-mode wall trace B_xi of the horizontal part."""
    M = state.M
    if u_modes is None:
        u_modes = biot_savart(state, ws)
    Dz = _dz_matrix(state.zgrid)
    m = np.arange(state.nmodes) - M

    def grad_modes(f):   # f: (..., nm, nm, nz) -> (3, ..., nm, nm, nz)
        gx = 1j * m[:, None, None] * f
        gy = 1j * m[None, :, None] * f
        gz = np.einsum("ij,...xyj->...xyi", Dz, f)
        return np.stack([gx, gy, gz])

    u_phys = _to_phys(u_modes, M)
    w_phys = _to_phys(state.omega, M)
    N_phys = np.zeros_like(w_phys)
    for c in range(3):
        gw_c = _to_phys(grad_modes(state.omega[c]), M)
        gu_c = _to_phys(grad_modes(u_modes[c]), M)
        N_phys[c] = (np.einsum("kxyz,kxyz->xyz", w_phys, gu_c)
                     - np.einsum("kxyz,kxyz->xyz", u_phys, gw_c))
    gth_p = _to_phys(grad_modes(state.theta), M)
    Mth_phys = -np.einsum("kxyz,kxyz->xyz", u_phys, gth_p)
    N = _to_modes(N_phys, M)
    Mth = _to_modes(Mth_phys, M)
    B = np.zeros((2, state.nmodes, state.nmodes), dtype=complex)
    for m1 in range(state.nmodes):
        for m2 in range(state.nmodes):
            q = (m1 - M) ** 2 + (m2 - M) ** 2
            tw = ws.trace_w[q]
            B[0, m1, m2] = N[0, m1, m2] @ tw
            B[1, m1, m2] = N[1, m1, m2] @ tw
    return N, Mth, B, u_modes


def step(state: SpectralState, ws: ModeWorkspace, n_picard: int = 3,
         tau_picard: float = 1e-9, forcing=None) -> tuple[SpectralState, dict]:
    """One mild step of size ws.dt with in-step Picard on the nonlinearity.

    forcing, if given, is (N_extra, M_extra) added to the nonlinear sources
    (manufactured-solution hook).
    """
    M, nm, dt = state.M, state.nmodes, ws.dt
    N0, Mth0, B0, _ = nonlinear_terms(state, ws)
    if forcing is not None:
        Nf, Mf = forcing(state.time)
        N0 = N0 + Nf
        Mth0 = Mth0 + Mf
    new = state.copy()
    mvec = np.arange(nm) - M
    q_of = lambda m1, m2: (m1 - M) ** 2 + (m2 - M) ** 2

    # half-step propagated pieces, fixed over Picard iterations
    base_w = np.empty_like(state.omega)
    base_t = np.empty_like(state.theta)
    KN0_w = np.empty_like(state.omega)
    KN0_t = np.empty_like(state.theta)
    for m1 in range(nm):
        for m2 in range(nm):
            q = q_of(m1, m2)
            Kr, Kd, Kc = ws.robin[q], ws.dir_v[q], ws.dir_c[q]
            for c in range(2):
                base_w[c, m1, m2] = Kr @ state.omega[c, m1, m2]
                KN0_w[c, m1, m2] = Kr @ N0[c, m1, m2]
            base_w[2, m1, m2] = Kd @ state.omega[2, m1, m2]
            KN0_w[2, m1, m2] = Kd @ N0[2, m1, m2]
            base_t[m1, m2] = Kc @ state.theta[m1, m2]
            KN0_t[m1, m2] = Kc @ Mth0[m1, m2]

    N1, Mth1, B1 = N0, Mth0, B0
    resid = np.inf
    for it in range(max(1, n_picard)):
        prev_w = new.omega.copy()
        for m1 in range(nm):
            for m2 in range(nm):
                q = q_of(m1, m2)
                fx = ws.flux[q]
                for c in range(2):
                    new.omega[c, m1, m2] = (base_w[c, m1, m2]
                                            + 0.5 * dt * (KN0_w[c, m1, m2]
                                                          + N1[c, m1, m2])
                                            - fx * 0.5 * (B0[c, m1, m2]
                                                          + B1[c, m1, m2]))
                new.omega[2, m1, m2] = (base_w[2, m1, m2]
                                        + 0.5 * dt * (KN0_w[2, m1, m2]
                                                      + N1[2, m1, m2]))
                new.theta[m1, m2] = (base_t[m1, m2]
                                     + 0.5 * dt * (KN0_t[m1, m2] + Mth1[m1, m2]))
        new.time = state.time + dt
        if it < n_picard - 1:
            N1, Mth1, B1, _ = nonlinear_terms(new, ws)
            if forcing is not None:
                Nf, Mf = forcing(new.time)
                N1 = N1 + Nf
                Mth1 = Mth1 + Mf
        resid = float(np.max(np.abs(new.omega - prev_w)))
        if it > 0 and resid < tau_picard:
            break
    scale = max(float(np.max(np.abs(new.omega))), 1e-300)
    info = {"picard_residual": resid, "picard_relative": resid / scale}
    if n_picard > 1 and resid / scale > 1e-2:
        raise StepError(
            f"Picard iteration did not contract: relative residual {resid/scale:.3e}; "
            "reduce dt")
    return new, info


def to_fluid(state: SpectralState, ws: ModeWorkspace) -> FluidState:
    """Physical-space fields; rho = -theta by the Boussinesq relation."""
    u_modes = biot_savart(state, ws)
    u = _to_phys(u_modes, state.M)
    th = _to_phys(state.theta, state.M)
    nphys = u.shape[1]
    xh = 2 * np.pi * np.arange(nphys) / nphys - np.pi
    return FluidState(time=state.time, xh=xh, zgrid=state.zgrid, u=u,
                      theta=th, rho=-th)


def pressure(state: SpectralState, ws: ModeWorkspace) -> np.ndarray:
    """Mode profiles of p solving -Lap p = div(u.grad u), Neumann wall data
    from the vertical momentum balance, p -> 0 as z -> inf."""
    M = state.M
    nm = state.nmodes
    z = state.zgrid.z
    Dz = _dz_matrix(state.zgrid)
    u_modes = biot_savart(state, ws)
    u_phys = _to_phys(u_modes, M)
    m = np.arange(nm) - M
    gu = np.stack([1j * m[:, None, None] * u_modes,
                   1j * m[None, :, None] * u_modes,
                   np.einsum("ij,cxyj->cxyi", Dz, u_modes)])
    gu_p = _to_phys(gu, M)
    conv = np.einsum("kxyz,kcxyz->cxyz", u_phys, gu_p)  # (u.grad u)_c
    conv_modes = _to_modes(conv, M)
    rhs = (1j * m[:, None, None] * conv_modes[0]
           + 1j * m[None, :, None] * conv_modes[1]
           + np.einsum("ij,xyj->xyi", Dz, conv_modes[2]))
    # wall Neumann data: d_z p(0) = kappa eta_v d_z^2 u_3(0)  (no-slip wall)
    D2 = state.zgrid.d2_dz2_matrix()
    dz2u3 = np.einsum("ij,xyj->xyi", D2, u_modes[2])
    gwall = state.kappa * state.eta_v * dz2u3[..., 0]
    nz = len(z)
    p = np.zeros((nm, nm, nz), dtype=complex)
    for m1 in range(nm):
        for m2 in range(nm):
            k1, k2 = m1 - M, m2 - M
            q = k1 * k1 + k2 * k2
            p[m1, m2] = _helmholtz_neumann(q, state.zgrid, -rhs[m1, m2],
                                           gwall[m1, m2])
    return p


def _helmholtz_neumann(q: float, zgrid: ZGrid, rhs: np.ndarray, gwall: complex
                       ) -> np.ndarray:
    """(q - d_z^2) p = rhs, d_z p(0) = gwall, decay at zmax (p(zmax) = 0 for
    q > 0; for q = 0 integrate twice with the decay gauge)."""
    z = zgrid.z
    n = len(z)
    if q == 0:
        # d_z p = -int_z^inf rhs; p = -int_z^inf d_z p
        w = zgrid.trapz_weights()
        dp = np.zeros(n, dtype=complex)
        # cumulative tail integral of rhs
        for i in range(n - 2, -1, -1):
            h = z[i + 1] - z[i]
            dp[i] = dp[i + 1] - 0.5 * h * (rhs[i] + rhs[i + 1])
        # gauge: dp already decays; enforce wall Neumann by construction check
        p = np.zeros(n, dtype=complex)
        for i in range(n - 2, -1, -1):
            h = z[i + 1] - z[i]
            p[i] = p[i + 1] - 0.5 * h * (dp[i] + dp[i + 1])
        return p
    D2 = zgrid.d2_dz2_matrix()
    A = q * np.eye(n) - D2
    b = rhs.astype(complex).copy()
    # one-sided first derivative at the wall row
    h0 = z[1] - z[0]
    h1 = z[2] - z[1]
    A[0] = 0.0
    A[0, 0] = -(2 * h0 + h1) / (h0 * (h0 + h1))
    A[0, 1] = (h0 + h1) / (h0 * h1)
    A[0, 2] = -h0 / (h1 * (h0 + h1))
    b[0] = gwall
    A[-1] = 0.0
    A[-1, -1] = 1.0
    b[-1] = 0.0
    return np.linalg.solve(A, b)


# ---------------------------------------------------------------------------
# diagnostics and initial data


def no_slip_residual(state: SpectralState, ws: ModeWorkspace) -> float:
    u = biot_savart(state, ws)
    return float(np.max(np.abs(u[:, :, :, 0])))


def theta_energy(state: SpectralState) -> tuple[float, float]:
    """(||theta||_L2^2, ||grad theta||_L2^2) by Parseval over T^2."""
    wts = state.zgrid.trapz_weights()
    Dz = _dz_matrix(state.zgrid)
    m = np.arange(state.nmodes) - state.M
    fac = (2 * np.pi) ** 2
    e = float(np.sum(np.abs(state.theta) ** 2 * wts)) * fac
    gz = np.einsum("ij,xyj->xyi", Dz, state.theta)
    gh2 = (m[:, None, None] ** 2 + m[None, :, None] ** 2) * np.abs(state.theta) ** 2
    ge = float(np.sum((gh2 + np.abs(gz) ** 2) * wts)) * fac
    return e, ge


def dissipation_check(before: SpectralState, after: SpectralState,
                      dt: float) -> dict:
    """Discrete heat-energy balance: (E1 - E0)/dt + 2 kappa eta_c ||grad th||^2
    evaluated at the endpoint average."""
    e0, g0 = theta_energy(before)
    e1, g1 = theta_energy(after)
    diss = 2.0 * before.kappa * before.eta_c * 0.5 * (g0 + g1)
    lhs = (e1 - e0) / dt + diss
    return {"dE_dt_plus_diss": lhs, "E": e1, "grad2": 0.5 * (g0 + g1)}


def time_derivative_check(history: list, ws: ModeWorkspace) -> dict:
    """Compare the algebraic d_t omega (heat RHS + nonlinearity) against the
    centered time difference of the evolved modes, and likewise for the
    chain-rule second derivative.  Exercises the representation of the
    evolved fields' time regularity without separate evolution equations."""
    if len(history) < 3:
        raise ValueError("need at least three snapshots")
    sm, s0, sp = history[-3], history[-2], history[-1]
    dt = sp.time - s0.time
    rhs0 = _omega_rhs(s0, ws)
    fd1 = (sp.omega - sm.omega) / (2 * dt)
    # algebraic second derivative: d_t(rhs) by chain rule via FD of rhs
    rhs_m = _omega_rhs(sm, ws)
    rhs_p = _omega_rhs(sp, ws)
    fd2 = (sp.omega - 2 * s0.omega + sm.omega) / dt**2
    alg2 = (rhs_p - rhs_m) / (2 * dt)
    scale1 = max(float(np.max(np.abs(rhs0))), 1e-300)
    scale2 = max(float(np.max(np.abs(alg2))), 1e-300)
    return {
        "dt_omega_rel": float(np.max(np.abs(fd1 - rhs0))) / scale1,
        "dt2_omega_rel": float(np.max(np.abs(fd2 - alg2))) / scale2,
    }


def _omega_rhs(state: SpectralState, ws: ModeWorkspace) -> np.ndarray:
    N, _, _, _ = nonlinear_terms(state, ws)
    D2 = state.zgrid.d2_dz2_matrix()
    m = np.arange(state.nmodes) - state.M
    lap = (np.einsum("ij,cxyj->cxyi", D2, state.omega)
           - (m[:, None, None] ** 2 + m[None, :, None] ** 2) * state.omega)
    return state.kappa * state.eta_v * lap + N


def check_compatibility(state: SpectralState, ws: ModeWorkspace) -> dict:
    """Boundary residuals of the no-initial-layer conditions.

    Rows: the Robin trace balance of the horizontal vorticity, the wall values
    of omega_3, dt omega_3, theta, dt theta, dt^2 theta.
    """
    M = state.M
    nm = state.nmodes
    Dz = _dz_matrix(state.zgrid)
    N, Mth, B, u_modes = nonlinear_terms(state, ws)
    dzw = np.einsum("ij,cxyj->cxyi", Dz, state.omega)
    out = {}
    res_robin = 0.0
    for m1 in range(nm):
        for m2 in range(nm):
            k1, k2 = m1 - M, m2 - M
            xi = np.hypot(k1, k2)
            for c in range(2):
                lhs = state.kappa * state.eta_v * (dzw[c, m1, m2, 0]
                                                   + xi * state.omega[c, m1, m2, 0])
                res_robin = max(res_robin, abs(lhs - B[c, m1, m2]))
    out["robin_trace"] = res_robin
    out["omega3_wall"] = float(np.max(np.abs(state.omega[2, :, :, 0])))
    dt_w3 = _omega_rhs(state, ws)[2, :, :, 0]
    out["dt_omega3_wall"] = float(np.max(np.abs(dt_w3)))
    out["theta_wall"] = float(np.max(np.abs(state.theta[:, :, 0])))
    dt_th = _theta_rhs(state, ws)
    out["dt_theta_wall"] = float(np.max(np.abs(dt_th[:, :, 0])))
    # second time derivative of theta at the wall, assembled by the chain rule:
    # dt2 th = kappa eta_c Lap(dt th) - u . grad(dt th) - dt_u . grad th
    Dzm = _dz_matrix(state.zgrid)
    D2 = state.zgrid.d2_dz2_matrix()
    m = np.arange(nm) - M
    lap_dt = (np.einsum("ij,xyj->xyi", D2, dt_th)
              - (m[:, None, None] ** 2 + m[None, :, None] ** 2) * dt_th)
    dt_state = state.copy()
    dt_state.omega = _omega_rhs(state, ws)
    dt_u = biot_savart(dt_state, ws)
    u_p = _to_phys(u_modes, M)
    dtu_p = _to_phys(dt_u, M)

    def gradm(f):
        gx = 1j * m[:, None, None] * f
        gy = 1j * m[None, :, None] * f
        gz = np.einsum("ij,xyj->xyi", Dzm, f)
        return np.stack([gx, gy, gz])

    g_dtth = _to_phys(gradm(dt_th), M)
    g_th = _to_phys(gradm(state.theta), M)
    adv = (np.einsum("kxyz,kxyz->xyz", u_p, g_dtth)
           + np.einsum("kxyz,kxyz->xyz", dtu_p, g_th))
    dt_th2 = state.kappa * state.eta_c * lap_dt - _to_modes(adv, M)
    out["dt2_theta_wall"] = float(np.max(np.abs(dt_th2[:, :, 0])))
    return out


def _theta_rhs(state: SpectralState, ws: ModeWorkspace) -> np.ndarray:
    _, Mth, _, _ = nonlinear_terms(state, ws)
    D2 = state.zgrid.d2_dz2_matrix()
    m = np.arange(state.nmodes) - state.M
    lap = (np.einsum("ij,xyj->xyi", D2, state.theta)
           - (m[:, None, None] ** 2 + m[None, :, None] ** 2) * state.theta)
    return state.kappa * state.eta_c * lap + Mth


def save_state(path, state: SpectralState) -> None:
    arrays = {
        "meta": np.array([state.time, state.M, state.kappa, state.eta_v,
                          state.eta_c]),
        "z": state.zgrid.z,
        "omega_re": np.real(state.omega),
        "omega_im": np.imag(state.omega),
        "theta_re": np.real(state.theta),
        "theta_im": np.imag(state.theta),
    }
    cacheio.write_container(path, MAGIC_STATE, "state", arrays)


def load_state(path) -> SpectralState:
    arrays = cacheio.read_container(path, MAGIC_STATE, "state")
    meta = arrays["meta"]
    zg = ZGrid(z=arrays["z"], kappa=float(meta[2]), zmax=float(arrays["z"][-1]))
    return SpectralState(
        time=float(meta[0]), M=int(meta[1]), zgrid=zg,
        omega=arrays["omega_re"] + 1j * arrays["omega_im"],
        theta=arrays["theta_re"] + 1j * arrays["theta_im"],
        kappa=float(meta[2]), eta_v=float(meta[3]), eta_c=float(meta[4]))
