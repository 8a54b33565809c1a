"""Pure-NumPy fallback for the collision hot kernels.

Same contracts as the compiled extension, vectorized per output row over the
joint (sub-node, direction) set.  Usable for modest grids (n <= 12); the
compiled core is the intended path for production resolutions.  Stencils clamp
to the grid and extrapolate beyond it, matching the compiled kernels.
"""
from __future__ import annotations

import numpy as np

BACKEND = "numpy-fallback"


def set_num_threads(n):  # numpy threading is managed by BLAS; nothing to do
    return None


def get_max_threads():
    return 1


def _frames(g, gn):
    e3 = g / gn[:, None]
    m = np.zeros_like(e3)
    pick = np.argmin(np.abs(e3), axis=1)
    m[np.arange(len(pick)), pick] = 1.0
    d = np.sum(m * e3, axis=1)
    e1 = m - d[:, None] * e3
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(e3, e1)
    return e1, e2, e3


def _axis_windows(x, ax, p):
    n = len(ax)
    idx = np.searchsorted(ax, x)
    iw = np.clip(idx - p // 2, 0, n - p)
    offs = np.arange(p)
    xs = ax[iw[:, None] + offs[None, :]]
    w = np.ones((len(x), p))
    for a in range(p):
        for b in range(p):
            if a != b:
                w[:, a] *= (x - xs[:, b]) / (xs[:, a] - xs[:, b])
    return iw, w


def _stencil(points, ax, p):
    """Flat stencil indices and weights (M, p^3); windows clamp/extrapolate."""
    n = len(ax)
    iwx, wx = _axis_windows(points[:, 0], ax, p)
    iwy, wy = _axis_windows(points[:, 1], ax, p)
    iwz, wz = _axis_windows(points[:, 2], ax, p)
    offs = np.arange(p)
    ix = (iwx[:, None] + offs[None, :])[:, :, None, None]
    iy = (iwy[:, None] + offs[None, :])[:, None, :, None]
    iz = (iwz[:, None] + offs[None, :])[:, None, None, :]
    idx = (ix * n + iy) * n + iz
    w = wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]
    M = len(points)
    return idx.reshape(M, -1), w.reshape(M, -1)


def _row_geometry(vi, sub_nodes, cs, cphi, sphi):
    g = vi[None, :] - sub_nodes
    gn = np.linalg.norm(g, axis=1)
    ok = gn > 1e-14
    e1, e2, e3 = _frames(g[ok], gn[ok])
    sph = np.sqrt(1.0 - cs**2)
    u = (cs[None, :, None] * e3[:, None, :]
         + (sph * cphi)[None, :, None] * e1[:, None, :]
         + (sph * sphi)[None, :, None] * e2[:, None, :])
    gu = gn[ok, None] * cs[None, :]
    vp = vi[None, None, :] - gu[:, :, None] * u
    vq = sub_nodes[ok][:, None, :] + gu[:, :, None] * u
    return ok, gn, vp.reshape(-1, 3), vq.reshape(-1, 3)


def gamma_batch(hF, hG, hF_sub, hG_sub, nodes, sub_nodes, sub_wmu, ax_nodes,
                cs, cphi, sphi, wu, p, vmax, pref_two_pi):
    N = len(nodes)
    npair = hF.shape[0]
    out = np.zeros((npair, N))
    for i in range(N):
        ok, gn, vp, vq = _row_geometry(nodes[i], sub_nodes, cs, cphi, sphi)
        Bk = (wu[None, :] * gn[ok, None] * cs[None, :] * sub_wmu[ok, None]).ravel()
        idxp, wp = _stencil(vp, ax_nodes, p)
        idxq, wq = _stencil(vq, ax_nodes, p)
        lossu = pref_two_pi * gn[ok] * sub_wmu[ok]
        for m in range(npair):
            hFp = np.sum(wp * hF[m][idxp], axis=1)
            hGp = np.sum(wp * hG[m][idxp], axis=1)
            hFq = np.sum(wq * hF[m][idxq], axis=1)
            hGq = np.sum(wq * hG[m][idxq], axis=1)
            gain = np.sum(Bk * (hFp * hGq + hGp * hFq))
            loss = np.sum(lossu * (hF[m, i] * hG_sub[m][ok] + hG[m, i] * hF_sub[m][ok]))
            out[m, i] = gain - loss
    return out


def assemble_rows(nodes, sub_nodes, sub_wmu, sub_stencil_idx, sub_stencil_w,
                  ax_nodes, cs, cphi, sphi, wu, p, vmax, pref_two_pi):
    N = len(nodes)
    R = np.zeros((N, N))
    nu = np.zeros(N)
    for i in range(N):
        ok, gn, vp, vq = _row_geometry(nodes[i], sub_nodes, cs, cphi, sphi)
        Bk = (wu[None, :] * gn[ok, None] * cs[None, :] * sub_wmu[ok, None]).ravel()
        idxp, wp = _stencil(vp, ax_nodes, p)
        idxq, wq = _stencil(vq, ax_nodes, p)
        row = np.zeros(N)
        np.add.at(row, idxp.ravel(), (Bk[:, None] * wp).ravel())
        np.add.at(row, idxq.ravel(), (Bk[:, None] * wq).ravel())
        lossu = pref_two_pi * gn[ok] * sub_wmu[ok]
        np.add.at(row, sub_stencil_idx[ok].ravel(),
                  -(lossu[:, None] * sub_stencil_w[ok]).ravel())
        R[i] = row
        nu[i] = lossu.sum()
    return R, nu


def _basis_values(points, powers):
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    return np.stack([x**px * y**py * z**pz for px, py, pz in powers], axis=0)


def poly_tables_gain(nodes, sub_nodes, sub_wmu, powers, cs, cphi, sphi, wu):
    N = len(nodes)
    nb = len(powers)
    T = np.zeros((nb * (nb + 1) // 2, N))
    iu, ju = np.triu_indices(nb)
    for i in range(N):
        ok, gn, vp, vq = _row_geometry(nodes[i], sub_nodes, cs, cphi, sphi)
        Bk = (wu[None, :] * gn[ok, None] * cs[None, :] * sub_wmu[ok, None]).ravel()
        Pp = _basis_values(vp, powers)
        Pq = _basis_values(vq, powers)
        M = (Bk[None, :] * Pp) @ Pq.T
        T[:, i] = (M + M.T)[iu, ju]
    return T


def linear_poly_rows(nodes, sub_nodes, sub_wmu, powers, cs, cphi, sphi, wu):
    N = len(nodes)
    nb = len(powers)
    out = np.zeros((nb, N))
    for i in range(N):
        ok, gn, vp, vq = _row_geometry(nodes[i], sub_nodes, cs, cphi, sphi)
        Bk = (wu[None, :] * gn[ok, None] * cs[None, :] * sub_wmu[ok, None]).ravel()
        Pp = _basis_values(vp, powers)
        Pq = _basis_values(vq, powers)
        out[:, i] = (Pp + Pq) @ Bk
    return out


def cross_tables_gain(hA, nodes, sub_nodes, sub_wmu, powers, ax_nodes,
                      cs, cphi, sphi, wu, p):
    N = len(nodes)
    nb, nA = len(powers), hA.shape[0]
    GA = np.zeros((nb * nA, N))
    AA = np.zeros((nA * (nA + 1) // 2, N))
    iu, ju = np.triu_indices(nA)
    for i in range(N):
        ok, gn, vp, vq = _row_geometry(nodes[i], sub_nodes, cs, cphi, sphi)
        Bk = (wu[None, :] * gn[ok, None] * cs[None, :] * sub_wmu[ok, None]).ravel()
        idxp, wp = _stencil(vp, ax_nodes, p)
        idxq, wq = _stencil(vq, ax_nodes, p)
        Pp = _basis_values(vp, powers)
        Pq = _basis_values(vq, powers)
        Ap = np.stack([np.sum(wp * hA[l][idxp], axis=1) for l in range(nA)], axis=0)
        Aq = np.stack([np.sum(wq * hA[l][idxq], axis=1) for l in range(nA)], axis=0)
        Mga = (Bk[None, :] * Pp) @ Aq.T + (Bk[None, :] * Pq) @ Ap.T
        Maa = (Bk[None, :] * Ap) @ Aq.T
        GA[:, i] = Mga.ravel()
        AA[:, i] = (Maa + Maa.T)[iu, ju]
    return GA, AA


def interp_eval(h, pts, ax_nodes, p, vmax):
    idx, w = _stencil(pts, ax_nodes, p)
    return np.stack([np.sum(w * hm[idx], axis=1) for hm in h], axis=0)
