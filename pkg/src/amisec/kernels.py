"""Hot numeric kernels.

Every kernel exists twice: a loop form compiled with numba (``*_jit``) and a
vectorized numpy form (``*_numpy``). The public name binds to one of them at
import time according to :mod:`amisec._accel`. Both forms take the same
arguments, including any pre-drawn random numbers, so they trace the same
iterates up to floating-point rounding.
"""
import numpy as np

from ._accel import njit, select

# ---------------------------------------------------------------- Gram matrices


@njit
def rbf_gram_jit(X, Y, sigma):
    n, m, d = X.shape[0], Y.shape[0], X.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = X[i, k] - Y[j, k]
                s += t * t
            out[i, j] = np.exp(-s / sigma)
    return out


def rbf_gram_numpy(X, Y, sigma):
    diff = X[:, None, :] - Y[None, :, :]
    return np.exp(-(diff * diff).sum(axis=-1) / sigma)


@njit
def poly_gram_jit(X, Y, degree):
    n, m, d = X.shape[0], Y.shape[0], X.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                s += X[i, k] * Y[j, k]
            out[i, j] = (s + 1.0) ** degree
    return out


def poly_gram_numpy(X, Y, degree):
    return (X @ Y.T + 1.0) ** degree


# ------------------------------------------------------- one-class SVM dual (SMO)

_TAU = 1e-12


@njit
def smo_solve_jit(K, C, alpha, tol, max_iter):
    """Pairwise coordinate descent on min 1/2 a'Ka, 0 <= a <= C, sum(a) = 1.

    ``alpha`` must be feasible on entry and is updated in place.
    Returns (grad, iterations, converged).
    """
    n = K.shape[0]
    G = K @ alpha
    it = 0
    converged = False
    while it < max_iter:
        # i: steepest feasible increase
        i = -1
        gmin = np.inf
        for t in range(n):
            if alpha[t] < C and G[t] < gmin:
                gmin = G[t]
                i = t
        # j: second-order choice among variables that can decrease
        j = -1
        gmax = -np.inf
        best = -np.inf
        for t in range(n):
            if alpha[t] > 0.0:
                if G[t] > gmax:
                    gmax = G[t]
                b = G[t] - gmin
                if b > 0.0:
                    a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                    if a <= 0.0:
                        a = _TAU
                    v = b * b / a
                    if v > best:
                        best = v
                        j = t
        if gmax - gmin < tol or j < 0:
            converged = True
            break
        a = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if a <= 0.0:
            a = _TAU
        delta = (G[j] - G[i]) / a
        room_i = C - alpha[i]
        room_j = alpha[j]
        if delta >= room_i and room_i <= room_j:
            delta = room_i
            alpha[i] = C
            alpha[j] -= delta
            if delta == room_j:
                alpha[j] = 0.0
        elif delta >= room_j:
            delta = room_j
            alpha[i] += delta
            alpha[j] = 0.0
        else:
            alpha[i] += delta
            alpha[j] -= delta
        for t in range(n):
            G[t] += delta * (K[t, i] - K[t, j])
        it += 1
    return G, it, converged


def smo_solve_numpy(K, C, alpha, tol, max_iter):
    G = K @ alpha
    diag = np.diag(K)
    it = 0
    converged = False
    while it < max_iter:
        up = alpha < C
        gi = np.where(up, G, np.inf)
        i = int(np.argmin(gi))
        gmin = gi[i]
        low = alpha > 0.0
        gmax = G[low].max() if low.any() else -np.inf
        b = G - gmin
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a <= 0.0, _TAU, a)
        cand = low & (b > 0.0)
        score = np.where(cand, b * b / a, -np.inf)
        j = int(np.argmax(score))
        if gmax - gmin < tol or not cand.any():
            converged = True
            break
        aij = a[j]
        delta = (G[j] - G[i]) / aij
        room_i = C - alpha[i]
        room_j = alpha[j]
        if delta >= room_i and room_i <= room_j:
            delta = room_i
            alpha[i] = C
            alpha[j] -= delta
            if delta == room_j:
                alpha[j] = 0.0
        elif delta >= room_j:
            delta = room_j
            alpha[i] += delta
            alpha[j] = 0.0
        else:
            alpha[i] += delta
            alpha[j] -= delta
        G += delta * (K[:, i] - K[:, j])
        it += 1
    return G, it, converged


# ------------------------------------- projected gradient on the capped simplex


@njit
def project_capped_simplex_jit(v, C):
    """Euclidean projection of v onto {x : 0 <= x <= C, sum(x) = 1}."""
    n = v.shape[0]
    bps = np.empty(2 * n)
    for k in range(n):
        bps[k] = v[k] - C
        bps[n + k] = v[k]
    bps.sort()
    # f(tau) = sum clip(v - tau, 0, C) is nonincreasing and piecewise linear
    f_prev = 0.0
    for k in range(n):
        t = v[k] - bps[0]
        f_prev += C if t > C else (0.0 if t < 0.0 else t)
    tau = bps[0]
    for m in range(1, 2 * n):
        f = 0.0
        for k in range(n):
            t = v[k] - bps[m]
            f += C if t > C else (0.0 if t < 0.0 else t)
        if f <= 1.0:
            span = f_prev - f
            if span > 0.0:
                tau = bps[m - 1] + (f_prev - 1.0) * (bps[m] - bps[m - 1]) / span
            else:
                tau = bps[m]
            break
        f_prev = f
    out = np.empty(n)
    for k in range(n):
        t = v[k] - tau
        out[k] = C if t > C else (0.0 if t < 0.0 else t)
    return out


def project_capped_simplex_numpy(v, C):
    bps = np.sort(np.concatenate([v - C, v]))
    f = np.clip(v[None, :] - bps[:, None], 0.0, C).sum(axis=1)
    m = int(np.argmax(f <= 1.0))
    if m == 0:
        tau = bps[0]
    else:
        span = f[m - 1] - f[m]
        tau = bps[m - 1] + (f[m - 1] - 1.0) * (bps[m] - bps[m - 1]) / span if span > 0 else bps[m]
    return np.clip(v - tau, 0.0, C)


@njit
def pgd_capped_simplex_jit(K, C, alpha, step, max_iter, stall):
    """Projected gradient descent for the one-class dual. Returns (alpha, iterations)."""
    n = K.shape[0]
    it = 0
    while it < max_iter:
        g = K @ alpha
        v = alpha - step * g
        new = project_capped_simplex_jit(v, C)
        moved = 0.0
        for k in range(n):
            dlt = abs(new[k] - alpha[k])
            if dlt > moved:
                moved = dlt
        alpha = new
        it += 1
        if moved <= stall:
            break
    return alpha, it


def pgd_capped_simplex_numpy(K, C, alpha, step, max_iter, stall):
    it = 0
    while it < max_iter:
        new = project_capped_simplex_numpy(alpha - step * (K @ alpha), C)
        moved = np.abs(new - alpha).max()
        alpha = new
        it += 1
        if moved <= stall:
            break
    return alpha, it


# ------------------------------------------------- RSS negative log-likelihood


@njit
def nll_batch_jit(P, ax, ay, psi, gamma, wts, dmin):
    """Objective for each row (x, y, z) of P. ``wts`` holds 1 / (2 sigma_l^2)."""
    m = P.shape[0]
    L = ax.shape[0]
    out = np.empty(m)
    for p in range(m):
        s = 0.0
        for l in range(L):
            dx = P[p, 0] - ax[l]
            dy = P[p, 1] - ay[l]
            d = np.sqrt(dx * dx + dy * dy)
            if d < dmin:
                d = dmin
            r = psi[l] - P[p, 2] + 10.0 * gamma * np.log10(d)
            s += wts[l] * r * r
        out[p] = s
    return out


def nll_batch_numpy(P, ax, ay, psi, gamma, wts, dmin):
    d = np.hypot(P[:, 0:1] - ax, P[:, 1:2] - ay)
    d = np.maximum(d, dmin)
    r = psi - P[:, 2:3] + 10.0 * gamma * np.log10(d)
    return (wts * r * r).sum(axis=1)


# ------------------------------------------------------------------------ PSO


def pso_run_numpy(objective, x, v, r1, r2, lo, hi, vmax, w, c1, c2, tol, patience):
    """Global-best PSO driver for any batch objective ``f(X) -> values``.

    ``r1``/``r2`` have shape (iters, swarm, dim). Returns (gbest, gval, iterations).
    """
    x = x.copy()
    v = v.copy()
    f = objective(x)
    pbest = x.copy()
    pval = f.copy()
    g = int(np.argmin(pval))
    gbest = pbest[g].copy()
    gval = pval[g]
    last = 0
    iters = r1.shape[0]
    it = 0
    while it < iters:
        v = w * v + c1 * r1[it] * (pbest - x) + c2 * r2[it] * (gbest - x)
        np.clip(v, -vmax, vmax, out=v)
        x = np.clip(x + v, lo, hi)
        f = objective(x)
        better = f < pval
        pbest[better] = x[better]
        pval[better] = f[better]
        g = int(np.argmin(pval))
        it += 1
        if pval[g] < gval:
            if gval - pval[g] > tol:
                last = it
            gval = pval[g]
            gbest = pbest[g].copy()
        if it - last >= patience:
            break
    return gbest, gval, it


@njit
def pso_nll_jit(x, v, r1, r2, lo, hi, vmax, w, c1, c2, tol, patience,
                ax, ay, psi, gamma, wts, dmin):
    x = x.copy()
    v = v.copy()
    m, dim = x.shape
    f = nll_batch_jit(x, ax, ay, psi, gamma, wts, dmin)
    pbest = x.copy()
    pval = f.copy()
    g = 0
    for p in range(1, m):
        if pval[p] < pval[g]:
            g = p
    gbest = pbest[g].copy()
    gval = pval[g]
    last = 0
    iters = r1.shape[0]
    it = 0
    while it < iters:
        for p in range(m):
            for k in range(dim):
                vk = (w * v[p, k] + c1 * r1[it, p, k] * (pbest[p, k] - x[p, k])
                      + c2 * r2[it, p, k] * (gbest[k] - x[p, k]))
                if vk > vmax[k]:
                    vk = vmax[k]
                elif vk < -vmax[k]:
                    vk = -vmax[k]
                v[p, k] = vk
                xk = x[p, k] + vk
                if xk > hi[k]:
                    xk = hi[k]
                elif xk < lo[k]:
                    xk = lo[k]
                x[p, k] = xk
        f = nll_batch_jit(x, ax, ay, psi, gamma, wts, dmin)
        for p in range(m):
            if f[p] < pval[p]:
                pval[p] = f[p]
                for k in range(dim):
                    pbest[p, k] = x[p, k]
        g = 0
        for p in range(1, m):
            if pval[p] < pval[g]:
                g = p
        it += 1
        if pval[g] < gval:
            if gval - pval[g] > tol:
                last = it
            gval = pval[g]
            gbest = pbest[g].copy()
        if it - last >= patience:
            break
    return gbest, gval, it


def pso_nll_numpy(x, v, r1, r2, lo, hi, vmax, w, c1, c2, tol, patience,
                  ax, ay, psi, gamma, wts, dmin):
    def objective(P):
        return nll_batch_numpy(P, ax, ay, psi, gamma, wts, dmin)

    return pso_run_numpy(objective, x, v, r1, r2, lo, hi, vmax, w, c1, c2, tol, patience)


rbf_gram = select(rbf_gram_jit, rbf_gram_numpy)
poly_gram = select(poly_gram_jit, poly_gram_numpy)
smo_solve = select(smo_solve_jit, smo_solve_numpy)
project_capped_simplex = select(project_capped_simplex_jit, project_capped_simplex_numpy)
pgd_capped_simplex = select(pgd_capped_simplex_jit, pgd_capped_simplex_numpy)
nll_batch = select(nll_batch_jit, nll_batch_numpy)
pso_nll = select(pso_nll_jit, pso_nll_numpy)
