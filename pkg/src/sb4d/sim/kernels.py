"""Numba kernels: MLS-MPM forward transfers and their hand-derived adjoints.

Layout conventions shared by every kernel here:

* particles are SoA float64 arrays: x/v (N, d), F/C (N, d, d), scalars (N,)
* the grid is flattened row-major; ``nn`` holds the node counts per axis and
  node (i, j[, k]) maps to ``(i * nn[1] + j) * nn[2] + k``
* transfers use the quadratic B-spline over the 3^d stencil with
  ``base = floor(x / dx - 0.5)``
* the internal force is fused into the particle-to-grid transfer through the
  matrix G = -dt * (4 / dx^2) * vol0 * tau, where tau is the Kirchhoff-type
  stress of the neo-Hookean model plus the actuation offset -u * F * F^T

Serial kernels scatter in ascending particle order, which makes them bitwise
deterministic; the *_par variants scatter into per-thread buffers that are
reduced in thread order.
"""

import numpy as np
from numba import njit, prange, get_thread_id

MODE_COULOMB = 0
MODE_NO_SLIP = 1
MODE_STICKY_ALWAYS = 2

ERR_NONE = 0
ERR_OUT_OF_DOMAIN = 1
ERR_SINGULAR_F = 2


@njit(cache=True, inline="always")
def _weights(xp, inv_dx, d, base, w, dw):
    """Quadratic B-spline weights and d(weight)/dx per axis for one particle.

    Returns False when the 3-node stencil would leave the grid interior.
    """
    for a in range(d):
        xa = xp[a] * inv_dx
        ba = int(np.floor(xa - 0.5))
        base[a] = ba
        fa = xa - ba
        w[a, 0] = 0.5 * (1.5 - fa) ** 2
        w[a, 1] = 0.75 - (fa - 1.0) ** 2
        w[a, 2] = 0.5 * (fa - 0.5) ** 2
        dw[a, 0] = -(1.5 - fa) * inv_dx
        dw[a, 1] = -2.0 * (fa - 1.0) * inv_dx
        dw[a, 2] = (fa - 0.5) * inv_dx
    return True


@njit(cache=True, inline="always")
def _stencil_ok(base, nn, d):
    for a in range(d):
        if base[a] < 0 or base[a] + 2 > nn[a] - 1:
            return False
    return True


@njit(cache=True, inline="always")
def _det(F, p, d):
    if d == 2:
        return F[p, 0, 0] * F[p, 1, 1] - F[p, 0, 1] * F[p, 1, 0]
    return (
        F[p, 0, 0] * (F[p, 1, 1] * F[p, 2, 2] - F[p, 1, 2] * F[p, 2, 1])
        - F[p, 0, 1] * (F[p, 1, 0] * F[p, 2, 2] - F[p, 1, 2] * F[p, 2, 0])
        + F[p, 0, 2] * (F[p, 1, 0] * F[p, 2, 1] - F[p, 1, 1] * F[p, 2, 0])
    )


@njit(cache=True, inline="always")
def _kirchhoff(F, p, lam_p, mu_p, u_p, d, tau):
    """Combined Kirchhoff-type stress mu(FF^T - I) + lam log(J) I - u FF^T.

    Returns J; the caller must treat J <= 0 as a singular-F error.
    """
    J = _det(F, p, d)
    if J <= 0.0:
        return J
    logJ = np.log(J)
    for i in range(d):
        for j in range(d):
            b = 0.0
            for k in range(d):
                b += F[p, i, k] * F[p, j, k]
            tau[i, j] = (mu_p - u_p) * b
        tau[i, i] += -mu_p + lam_p * logJ
    return J


@njit(cache=True)
def p2g(x, v, F, C, mass, lam, mu, u, vol0, dt, inv_dx, nn, grid_mass, grid_mom, err):
    """Scatter mass and momentum (with fused internal force) to the grid."""
    n = x.shape[0]
    d = x.shape[1]
    dx = 1.0 / inv_dx
    dinv = 4.0 * inv_dx * inv_dx
    n_nodes = grid_mass.shape[0]
    for idx in range(n_nodes):
        grid_mass[idx] = 0.0
        for a in range(d):
            grid_mom[idx, a] = 0.0
    err[0] = ERR_NONE
    err[1] = -1

    base = np.empty(3, dtype=np.int64)
    w = np.empty((3, 3))
    dw = np.empty((3, 3))
    tau = np.empty((3, 3))
    affine = np.empty((3, 3))
    okmax = 3 if d == 3 else 1

    for p in range(n):
        _weights(x[p], inv_dx, d, base, w, dw)
        if not _stencil_ok(base, nn, d):
            err[0] = ERR_OUT_OF_DOMAIN
            err[1] = p
            return
        J = _kirchhoff(F, p, lam[p], mu[p], u[p], d, tau)
        if J <= 0.0:
            err[0] = ERR_SINGULAR_F
            err[1] = p
            return
        gfac = -dt * dinv * vol0[p]
        m_p = mass[p]
        for i in range(d):
            for j in range(d):
                affine[i, j] = m_p * C[p, i, j] + gfac * tau[i, j]

        for oi in range(3):
            for oj in range(3):
                for ok in range(okmax):
                    if d == 2:
                        wgt = w[0, oi] * w[1, oj]
                        idx = (base[0] + oi) * nn[1] + (base[1] + oj)
                    else:
                        wgt = w[0, oi] * w[1, oj] * w[2, ok]
                        idx = ((base[0] + oi) * nn[1] + (base[1] + oj)) * nn[2] + (base[2] + ok)
                    grid_mass[idx] += wgt * m_p
                    # momentum row a: w * (m v_a + sum_b affine_ab dpos_b)
                    for a in range(d):
                        acc = m_p * v[p, a]
                        for b in range(d):
                            if b == 0:
                                dpos = (base[0] + oi) * dx - x[p, 0]
                            elif b == 1:
                                dpos = (base[1] + oj) * dx - x[p, 1]
                            else:
                                dpos = (base[2] + ok) * dx - x[p, 2]
                            acc += affine[a, b] * dpos
                        grid_mom[idx, a] += wgt * acc


@njit(cache=True, inline="always")
def _node_in_region(node0, node1, node2, b, lo, hi, d):
    if node0 < lo[b, 0] or node0 > hi[b, 0]:
        return False
    if node1 < lo[b, 1] or node1 > hi[b, 1]:
        return False
    if d == 3 and (node2 < lo[b, 2] or node2 > hi[b, 2]):
        return False
    return True


@njit(cache=True, inline="always")
def _apply_bc(vcur, b, mode, normal, mu_f, vr, d, vout):
    """One boundary stage applied to a node velocity. Returns 1 when the
    constrained branch was taken (velocity overwritten/corrected)."""
    if mode[b] == MODE_STICKY_ALWAYS:
        for a in range(d):
            vout[a] = vr[b, a]
        return 1
    vn = 0.0
    for a in range(d):
        vn += (vcur[a] - vr[b, a]) * normal[b, a]
    if vn >= 0.0:
        for a in range(d):
            vout[a] = vcur[a]
        return 0
    if mode[b] == MODE_NO_SLIP:
        for a in range(d):
            vout[a] = vr[b, a]
        return 1
    # Coulomb friction: kill the normal part, shrink the tangential part.
    s2 = 0.0
    for a in range(d):
        vt = (vcur[a] - vr[b, a]) - vn * normal[b, a]
        vout[a] = vt  # stash tangential component
        s2 += vt * vt
    s = np.sqrt(s2)
    coef = s - mu_f[b] * (-vn)
    if coef > 0.0 and s > 0.0:
        scale = coef / s
        for a in range(d):
            vout[a] = vr[b, a] + scale * vout[a]
    else:
        for a in range(d):
            vout[a] = vr[b, a]
    return 1


@njit(cache=True)
def grid_update(grid_mass, grid_mom, gravity, dt, nn, b_lo, b_hi, b_normal, b_mode,
                b_mu, vr, vel_pre, vel_post, branch_count):
    """Momentum -> velocity with gravity, then the boundary stages in order.

    ``vel_pre`` is the velocity after gravity but before any boundary stage
    (the reference state for contact-force extraction); ``vel_post`` is the
    final grid velocity used by the grid-to-particle transfer.
    """
    d = grid_mom.shape[1]
    n_b = b_mode.shape[0]
    n_nodes = grid_mass.shape[0]
    vcur = np.empty(3)
    vnew = np.empty(3)
    taken = 0
    for idx in range(n_nodes):
        m = grid_mass[idx]
        if m <= 0.0:
            for a in range(d):
                vel_pre[idx, a] = 0.0
                vel_post[idx, a] = 0.0
            continue
        if d == 2:
            node0 = idx // nn[1]
            node1 = idx - node0 * nn[1]
            node2 = 0
        else:
            node2 = idx % nn[2]
            rest = idx // nn[2]
            node1 = rest % nn[1]
            node0 = rest // nn[1]
        for a in range(d):
            vcur[a] = grid_mom[idx, a] / m + dt * gravity[a]
            vel_pre[idx, a] = vcur[a]
        for b in range(n_b):
            if _node_in_region(node0, node1, node2, b, b_lo, b_hi, d):
                taken += _apply_bc(vcur, b, b_mode, b_normal, b_mu, vr, d, vnew)
                for a in range(d):
                    vcur[a] = vnew[a]
        for a in range(d):
            vel_post[idx, a] = vcur[a]
    branch_count[0] += taken


@njit(cache=True)
def g2p(x, v, F, C, vel_post, dt, inv_dx, nn, stats):
    """Gather grid velocities back to particles and advance x and F.

    stats[0] accumulates max |v|^2 over particles, stats[1] the min det(F)
    after the update.
    """
    n = x.shape[0]
    d = x.shape[1]
    dx = 1.0 / inv_dx
    dinv = 4.0 * inv_dx * inv_dx
    base = np.empty(3, dtype=np.int64)
    w = np.empty((3, 3))
    dw = np.empty((3, 3))
    newv = np.empty(3)
    newC = np.empty((3, 3))
    newF = np.empty((3, 3))
    okmax = 3 if d == 3 else 1

    for p in range(n):
        _weights(x[p], inv_dx, d, base, w, dw)
        for a in range(d):
            newv[a] = 0.0
            for bb in range(d):
                newC[a, bb] = 0.0
        for oi in range(3):
            for oj in range(3):
                for ok in range(okmax):
                    if d == 2:
                        wgt = w[0, oi] * w[1, oj]
                        idx = (base[0] + oi) * nn[1] + (base[1] + oj)
                    else:
                        wgt = w[0, oi] * w[1, oj] * w[2, ok]
                        idx = ((base[0] + oi) * nn[1] + (base[1] + oj)) * nn[2] + (base[2] + ok)
                    for a in range(d):
                        newv[a] += wgt * vel_post[idx, a]
                    for a in range(d):
                        for bb in range(d):
                            if bb == 0:
                                dpos = (base[0] + oi) * dx - x[p, 0]
                            elif bb == 1:
                                dpos = (base[1] + oj) * dx - x[p, 1]
                            else:
                                dpos = (base[2] + ok) * dx - x[p, 2]
                            newC[a, bb] += dinv * wgt * vel_post[idx, a] * dpos
        v2 = 0.0
        for a in range(d):
            v[p, a] = newv[a]
            x[p, a] += dt * newv[a]
            v2 += newv[a] * newv[a]
        if v2 > stats[0]:
            stats[0] = v2
        # F <- (I + dt C) F with the freshly gathered C
        for i in range(d):
            for j in range(d):
                acc = F[p, i, j]
                for k in range(d):
                    acc += dt * newC[i, k] * F[p, k, j]
                newF[i, j] = acc
        for i in range(d):
            for j in range(d):
                F[p, i, j] = newF[i, j]
                C[p, i, j] = newC[i, j]
        J = _det(F, p, d)
        if J < stats[1]:
            stats[1] = J


# ---------------------------------------------------------------------------
# parallel forward variants (per-thread scatter buffers, reduced in order)
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def p2g_par(x, v, F, C, mass, lam, mu, u, vol0, dt, inv_dx, nn,
            tbuf_mass, tbuf_mom, grid_mass, grid_mom, err):
    n = x.shape[0]
    d = x.shape[1]
    dx = 1.0 / inv_dx
    dinv = 4.0 * inv_dx * inv_dx
    nt = tbuf_mass.shape[0]
    n_nodes = grid_mass.shape[0]
    okmax = 3 if d == 3 else 1
    err[0] = ERR_NONE
    err[1] = -1

    for t in prange(nt):
        for idx in range(n_nodes):
            tbuf_mass[t, idx] = 0.0
            for a in range(d):
                tbuf_mom[t, idx, a] = 0.0

    for p in prange(n):
        t = get_thread_id()
        base = np.empty(3, dtype=np.int64)
        w = np.empty((3, 3))
        dw = np.empty((3, 3))
        tau = np.empty((3, 3))
        affine = np.empty((3, 3))
        _weights(x[p], inv_dx, d, base, w, dw)
        if not _stencil_ok(base, nn, d):
            err[0] = ERR_OUT_OF_DOMAIN
            err[1] = p
            continue
        J = _kirchhoff(F, p, lam[p], mu[p], u[p], d, tau)
        if J <= 0.0:
            err[0] = ERR_SINGULAR_F
            err[1] = p
            continue
        gfac = -dt * dinv * vol0[p]
        m_p = mass[p]
        for i in range(d):
            for j in range(d):
                affine[i, j] = m_p * C[p, i, j] + gfac * tau[i, j]
        for oi in range(3):
            for oj in range(3):
                for ok in range(okmax):
                    if d == 2:
                        wgt = w[0, oi] * w[1, oj]
                        idx = (base[0] + oi) * nn[1] + (base[1] + oj)
                    else:
                        wgt = w[0, oi] * w[1, oj] * w[2, ok]
                        idx = ((base[0] + oi) * nn[1] + (base[1] + oj)) * nn[2] + (base[2] + ok)
                    tbuf_mass[t, idx] += wgt * m_p
                    for a in range(d):
                        acc = m_p * v[p, a]
                        for bb in range(d):
                            if bb == 0:
                                dpos = (base[0] + oi) * dx - x[p, 0]
                            elif bb == 1:
                                dpos = (base[1] + oj) * dx - x[p, 1]
                            else:
                                dpos = (base[2] + ok) * dx - x[p, 2]
                            acc += affine[a, bb] * dpos
                        tbuf_mom[t, idx, a] += wgt * acc

    for idx in prange(n_nodes):
        macc = 0.0
        for t in range(nt):
            macc += tbuf_mass[t, idx]
        grid_mass[idx] = macc
        for a in range(d):
            acc = 0.0
            for t in range(nt):
                acc += tbuf_mom[t, idx, a]
            grid_mom[idx, a] = acc


@njit(cache=True, parallel=True)
def grid_update_par(grid_mass, grid_mom, gravity, dt, nn, b_lo, b_hi, b_normal,
                    b_mode, b_mu, vr, vel_pre, vel_post, branch_count):
    d = grid_mom.shape[1]
    n_b = b_mode.shape[0]
    n_nodes = grid_mass.shape[0]
    taken = 0
    for idx in prange(n_nodes):
        vcur = np.empty(3)
        vnew = np.empty(3)
        m = grid_mass[idx]
        if m <= 0.0:
            for a in range(d):
                vel_pre[idx, a] = 0.0
                vel_post[idx, a] = 0.0
            continue
        if d == 2:
            node0 = idx // nn[1]
            node1 = idx - node0 * nn[1]
            node2 = 0
        else:
            node2 = idx % nn[2]
            rest = idx // nn[2]
            node1 = rest % nn[1]
            node0 = rest // nn[1]
        for a in range(d):
            vcur[a] = grid_mom[idx, a] / m + dt * gravity[a]
            vel_pre[idx, a] = vcur[a]
        for b in range(n_b):
            if _node_in_region(node0, node1, node2, b, b_lo, b_hi, d):
                taken += _apply_bc(vcur, b, b_mode, b_normal, b_mu, vr, d, vnew)
                for a in range(d):
                    vcur[a] = vnew[a]
        for a in range(d):
            vel_post[idx, a] = vcur[a]
    branch_count[0] += taken


@njit(cache=True, parallel=True)
def g2p_par(x, v, F, C, vel_post, dt, inv_dx, nn, stats):
    n = x.shape[0]
    d = x.shape[1]
    dx = 1.0 / inv_dx
    dinv = 4.0 * inv_dx * inv_dx
    okmax = 3 if d == 3 else 1
    maxv2 = 0.0
    minj = stats[1]
    for p in prange(n):
        base = np.empty(3, dtype=np.int64)
        w = np.empty((3, 3))
        dw = np.empty((3, 3))
        newv = np.empty(3)
        newC = np.empty((3, 3))
        newF = np.empty((3, 3))
        _weights(x[p], inv_dx, d, base, w, dw)
        for a in range(d):
            newv[a] = 0.0
            for bb in range(d):
                newC[a, bb] = 0.0
        for oi in range(3):
            for oj in range(3):
                for ok in range(okmax):
                    if d == 2:
                        wgt = w[0, oi] * w[1, oj]
                        idx = (base[0] + oi) * nn[1] + (base[1] + oj)
                    else:
                        wgt = w[0, oi] * w[1, oj] * w[2, ok]
                        idx = ((base[0] + oi) * nn[1] + (base[1] + oj)) * nn[2] + (base[2] + ok)
                    for a in range(d):
                        newv[a] += wgt * vel_post[idx, a]
                    for a in range(d):
                        for bb in range(d):
                            if bb == 0:
                                dpos = (base[0] + oi) * dx - x[p, 0]
                            elif bb == 1:
                                dpos = (base[1] + oj) * dx - x[p, 1]
                            else:
                                dpos = (base[2] + ok) * dx - x[p, 2]
                            newC[a, bb] += dinv * wgt * vel_post[idx, a] * dpos
        v2 = 0.0
        for a in range(d):
            v[p, a] = newv[a]
            x[p, a] += dt * newv[a]
            v2 += newv[a] * newv[a]
        maxv2 = max(maxv2, v2)
        for i in range(d):
            for j in range(d):
                acc = F[p, i, j]
                for k in range(d):
                    acc += dt * newC[i, k] * F[p, k, j]
                newF[i, j] = acc
        for i in range(d):
            for j in range(d):
                F[p, i, j] = newF[i, j]
                C[p, i, j] = newC[i, j]
        minj = min(minj, _det(F, p, d))
    stats[0] = max(stats[0], maxv2)
    stats[1] = minj


# ---------------------------------------------------------------------------
# adjoint kernels (serial: gradient evaluation always runs deterministically)
# ---------------------------------------------------------------------------


@njit(cache=True)
def g2p_backward(x_old, F_old, C_new, vel_post, dt, inv_dx, nn,
                 xbar, vbar, Cbar, Fbar, gbar_vel):
    """Adjoint of the gather + position/defgrad update.

    On entry (xbar, vbar, Cbar, Fbar) are cotangents of the post-step state;
    on exit xbar holds the position cotangent of the pre-step state, Fbar the
    pre-step deformation-gradient cotangent, and gbar_vel accumulates the grid
    velocity cotangent. vbar/Cbar are left stale: the p2g adjoint overwrites
    them, because v and C of a state are read only by the next transfer.
    """
    n = x_old.shape[0]
    d = x_old.shape[1]
    dx = 1.0 / inv_dx
    dinv = 4.0 * inv_dx * inv_dx
    base = np.empty(3, dtype=np.int64)
    w = np.empty((3, 3))
    dw = np.empty((3, 3))
    cbt = np.empty((3, 3))
    fbo = np.empty((3, 3))
    vbt = np.empty(3)
    accx = np.empty(3)
    dwvec = np.empty(3)
    okmax = 3 if d == 3 else 1

    for p in range(n):
        _weights(x_old[p], inv_dx, d, base, w, dw)
        # F_new = (I + dt C_new) F_old
        for i in range(d):
            for j in range(d):
                acc = Cbar[p, i, j]
                for k in range(d):
                    acc += dt * Fbar[p, i, k] * F_old[p, j, k]
                cbt[i, j] = acc
        for i in range(d):
            for j in range(d):
                acc = Fbar[p, i, j]
                for k in range(d):
                    acc += dt * C_new[p, k, i] * Fbar[p, k, j]
                fbo[i, j] = acc
        # x_new = x_old + dt v_new
        for a in range(d):
            vbt[a] = vbar[p, a] + dt * xbar[p, a]
            accx[a] = 0.0

        for oi in range(3):
            for oj in range(3):
                for ok in range(okmax):
                    if d == 2:
                        wgt = w[0, oi] * w[1, oj]
                        idx = (base[0] + oi) * nn[1] + (base[1] + oj)
                        dwvec[0] = dw[0, oi] * w[1, oj]
                        dwvec[1] = w[0, oi] * dw[1, oj]
                    else:
                        wgt = w[0, oi] * w[1, oj] * w[2, ok]
                        idx = ((base[0] + oi) * nn[1] + (base[1] + oj)) * nn[2] + (base[2] + ok)
                        dwvec[0] = dw[0, oi] * w[1, oj] * w[2, ok]
                        dwvec[1] = w[0, oi] * dw[1, oj] * w[2, ok]
                        dwvec[2] = w[0, oi] * w[1, oj] * dw[2, ok]
                    vdotv = 0.0
                    cquad = 0.0
                    for a in range(d):
                        ga = vel_post[idx, a]
                        vdotv += ga * vbt[a]
                        # grid cotangent: w * vbar + Dinv * w * Cbar @ dpos
                        acc = wgt * vbt[a]
                        for bb in range(d):
                            if bb == 0:
                                dpos = (base[0] + oi) * dx - x_old[p, 0]
                            elif bb == 1:
                                dpos = (base[1] + oj) * dx - x_old[p, 1]
                            else:
                                dpos = (base[2] + ok) * dx - x_old[p, 2]
                            acc += dinv * wgt * cbt[a, bb] * dpos
                        gbar_vel[idx, a] += acc
                    for a in range(d):
                        for bb in range(d):
                            if bb == 0:
                                dpos = (base[0] + oi) * dx - x_old[p, 0]
                            elif bb == 1:
                                dpos = (base[1] + oj) * dx - x_old[p, 1]
                            else:
                                dpos = (base[2] + ok) * dx - x_old[p, 2]
                            cquad += vel_post[idx, a] * cbt[a, bb] * dpos
                    for a in range(d):
                        accx[a] += dwvec[a] * (vdotv + dinv * cquad)
                    # dpos = x_i - x_p term of C_new: d(dpos)/dx_p = -I
                    for bb in range(d):
                        acc = 0.0
                        for a in range(d):
                            acc += cbt[a, bb] * vel_post[idx, a]
                        accx[bb] -= dinv * wgt * acc
        for a in range(d):
            xbar[p, a] += accx[a]
        for i in range(d):
            for j in range(d):
                Fbar[p, i, j] = fbo[i, j]


@njit(cache=True, inline="always")
def _inv_transpose(F, p, d, J, out):
    if d == 2:
        out[0, 0] = F[p, 1, 1] / J
        out[0, 1] = -F[p, 1, 0] / J
        out[1, 0] = -F[p, 0, 1] / J
        out[1, 1] = F[p, 0, 0] / J
    else:
        out[0, 0] = (F[p, 1, 1] * F[p, 2, 2] - F[p, 1, 2] * F[p, 2, 1]) / J
        out[0, 1] = (F[p, 1, 2] * F[p, 2, 0] - F[p, 1, 0] * F[p, 2, 2]) / J
        out[0, 2] = (F[p, 1, 0] * F[p, 2, 1] - F[p, 1, 1] * F[p, 2, 0]) / J
        out[1, 0] = (F[p, 0, 2] * F[p, 2, 1] - F[p, 0, 1] * F[p, 2, 2]) / J
        out[1, 1] = (F[p, 0, 0] * F[p, 2, 2] - F[p, 0, 2] * F[p, 2, 0]) / J
        out[1, 2] = (F[p, 0, 1] * F[p, 2, 0] - F[p, 0, 0] * F[p, 2, 1]) / J
        out[2, 0] = (F[p, 0, 1] * F[p, 1, 2] - F[p, 0, 2] * F[p, 1, 1]) / J
        out[2, 1] = (F[p, 0, 2] * F[p, 1, 0] - F[p, 0, 0] * F[p, 1, 2]) / J
        out[2, 2] = (F[p, 0, 0] * F[p, 1, 1] - F[p, 0, 1] * F[p, 1, 0]) / J


@njit(cache=True)
def p2g_backward(x, v, F, C, mass, lam, mu, u, vol0, dt, inv_dx, nn,
                 gbar_mass, gbar_mom, xbar, vbar, Cbar, Fbar,
                 mbar, lambar, mubar, ubar):
    """Adjoint of the scatter: gather grid cotangents back to the particles.

    vbar, Cbar and ubar are overwritten (v, C and u of this step are consumed
    only here); xbar, Fbar, mbar, lambar, mubar accumulate.
    """
    n = x.shape[0]
    d = x.shape[1]
    dx = 1.0 / inv_dx
    dinv = 4.0 * inv_dx * inv_dx
    base = np.empty(3, dtype=np.int64)
    w = np.empty((3, 3))
    dw = np.empty((3, 3))
    tau = np.empty((3, 3))
    affine = np.empty((3, 3))
    gbar = np.empty((3, 3))
    taubar = np.empty((3, 3))
    finvt = np.empty((3, 3))
    accx = np.empty(3)
    accv = np.empty(3)
    dwvec = np.empty(3)
    dposv = np.empty(3)
    okmax = 3 if d == 3 else 1

    for p in range(n):
        _weights(x[p], inv_dx, d, base, w, dw)
        J = _kirchhoff(F, p, lam[p], mu[p], u[p], d, tau)
        gfac = -dt * dinv * vol0[p]
        m_p = mass[p]
        for i in range(d):
            for j in range(d):
                affine[i, j] = m_p * C[p, i, j] + gfac * tau[i, j]
                gbar[i, j] = 0.0
        for a in range(d):
            accx[a] = 0.0
            accv[a] = 0.0
        mb = 0.0

        for oi in range(3):
            for oj in range(3):
                for ok in range(okmax):
                    if d == 2:
                        wgt = w[0, oi] * w[1, oj]
                        idx = (base[0] + oi) * nn[1] + (base[1] + oj)
                        dwvec[0] = dw[0, oi] * w[1, oj]
                        dwvec[1] = w[0, oi] * dw[1, oj]
                        dposv[0] = (base[0] + oi) * dx - x[p, 0]
                        dposv[1] = (base[1] + oj) * dx - x[p, 1]
                    else:
                        wgt = w[0, oi] * w[1, oj] * w[2, ok]
                        idx = ((base[0] + oi) * nn[1] + (base[1] + oj)) * nn[2] + (base[2] + ok)
                        dwvec[0] = dw[0, oi] * w[1, oj] * w[2, ok]
                        dwvec[1] = w[0, oi] * dw[1, oj] * w[2, ok]
                        dwvec[2] = w[0, oi] * w[1, oj] * dw[2, ok]
                        dposv[0] = (base[0] + oi) * dx - x[p, 0]
                        dposv[1] = (base[1] + oj) * dx - x[p, 1]
                        dposv[2] = (base[2] + ok) * dx - x[p, 2]
                    gm_dot_mom = 0.0
                    gm_dot_vc = 0.0
                    gM = gbar_mass[idx]
                    for a in range(d):
                        gma = gbar_mom[idx, a]
                        accv[a] += wgt * m_p * gma
                        mom_a = m_p * v[p, a]
                        vc_a = v[p, a]
                        for bb in range(d):
                            mom_a += affine[a, bb] * dposv[bb]
                            vc_a += C[p, a, bb] * dposv[bb]
                            gbar[a, bb] += wgt * gma * dposv[bb]
                        gm_dot_mom += gma * mom_a
                        gm_dot_vc += gma * vc_a
                    mb += wgt * (gm_dot_vc + gM)
                    for a in range(d):
                        accx[a] += dwvec[a] * (gm_dot_mom + m_p * gM)
                        # d(dpos)/dx_p = -I inside affine @ dpos
                        acc = 0.0
                        for i in range(d):
                            acc += affine[i, a] * gbar_mom[idx, i]
                        accx[a] -= wgt * acc

        # stress chain: Gbar = gbar, taubar = gfac * gbar
        trt = 0.0
        for i in range(d):
            for j in range(d):
                taubar[i, j] = gfac * gbar[i, j]
            trt += gfac * gbar[i, i]
        logJ = np.log(J)
        lambar[p] += logJ * trt
        # mubar: <taubar, F F^T - I>; ubar: -<taubar, F F^T>
        bdot = 0.0
        trtb = 0.0
        for i in range(d):
            for j in range(d):
                bij = 0.0
                for k in range(d):
                    bij += F[p, i, k] * F[p, j, k]
                bdot += taubar[i, j] * bij
            trtb += taubar[i, i]
        mubar[p] += bdot - trtb
        ubar[p] = -bdot
        # Fbar += (mu - u) (taubar + taubar^T) F + lam tr(taubar) F^{-T}
        _inv_transpose(F, p, d, J, finvt)
        coef = mu[p] - u[p]
        for i in range(d):
            for j in range(d):
                acc = 0.0
                for k in range(d):
                    acc += (taubar[i, k] + taubar[k, i]) * F[p, k, j]
                Fbar[p, i, j] += coef * acc + lam[p] * trt * finvt[i, j]
        for a in range(d):
            vbar[p, a] = accv[a]
            xbar[p, a] += accx[a]
        for i in range(d):
            for j in range(d):
                Cbar[p, i, j] = m_p * gbar[i, j]
        mbar[p] += mb


@njit(cache=True)
def grid_backward(grid_mass, grid_mom, gravity, dt, nn, b_lo, b_hi, b_normal,
                  b_mode, b_mu, vr, gbar_vel, gbar_mass, gbar_mom):
    """Adjoint of grid_update: post-BC velocity cotangent -> (mass, momentum).

    The boundary stages are replayed forward per node (they are node-local)
    and then unwound in reverse, using the branch actually taken.
    """
    d = grid_mom.shape[1]
    n_b = b_mode.shape[0]
    n_nodes = grid_mass.shape[0]
    stages = np.empty((n_b + 1, 3))
    gcur = np.empty(3)
    vtv = np.empty(3)
    vtbar = np.empty(3)
    for idx in range(n_nodes):
        m = grid_mass[idx]
        if m <= 0.0:
            gbar_mass[idx] = 0.0
            for a in range(d):
                gbar_mom[idx, a] = 0.0
            continue
        if d == 2:
            node0 = idx // nn[1]
            node1 = idx - node0 * nn[1]
            node2 = 0
        else:
            node2 = idx % nn[2]
            rest = idx // nn[2]
            node1 = rest % nn[1]
            node0 = rest // nn[1]
        for a in range(d):
            stages[0, a] = grid_mom[idx, a] / m + dt * gravity[a]
        for b in range(n_b):
            if _node_in_region(node0, node1, node2, b, b_lo, b_hi, d):
                _apply_bc(stages[b], b, b_mode, b_normal, b_mu, vr, d, stages[b + 1])
            else:
                for a in range(d):
                    stages[b + 1, a] = stages[b, a]
        for a in range(d):
            gcur[a] = gbar_vel[idx, a]
        for b in range(n_b - 1, -1, -1):
            if not _node_in_region(node0, node1, node2, b, b_lo, b_hi, d):
                continue
            if b_mode[b] == MODE_STICKY_ALWAYS:
                for a in range(d):
                    gcur[a] = 0.0
                continue
            vn = 0.0
            for a in range(d):
                vn += (stages[b, a] - vr[b, a]) * b_normal[b, a]
            if vn >= 0.0:
                continue  # identity branch
            if b_mode[b] == MODE_NO_SLIP:
                for a in range(d):
                    gcur[a] = 0.0
                continue
            # Coulomb, constrained branch
            s2 = 0.0
            for a in range(d):
                vtv[a] = (stages[b, a] - vr[b, a]) - vn * b_normal[b, a]
                s2 += vtv[a] * vtv[a]
            s = np.sqrt(s2)
            c = -b_mu[b] * vn
            coef = s - c
            if coef > 0.0 and s > 0.0:
                k = coef / s
                gdotvt = 0.0
                for a in range(d):
                    gdotvt += gcur[a] * vtv[a]
                for a in range(d):
                    vtbar[a] = k * gcur[a] + gdotvt * (c / (s2 * s)) * vtv[a]
                cbar = -gdotvt / s
                vnbar = -b_mu[b] * cbar
                ndot = 0.0
                for a in range(d):
                    ndot += b_normal[b, a] * vtbar[a]
                for a in range(d):
                    gcur[a] = vtbar[a] + (vnbar - ndot) * b_normal[b, a]
            else:
                for a in range(d):
                    gcur[a] = 0.0
        vdot = 0.0
        for a in range(d):
            gbar_mom[idx, a] = gcur[a] / m
            vdot += gcur[a] * (stages[0, a] - dt * gravity[a])
        gbar_mass[idx] = -vdot / m
