"""Pure-numpy versions of the kernels in ``_nb``.

Same contracts, vectorized over jobs instead of looped. Used when numba is
disabled and as the parity reference in tests.
"""
import numpy as np

_NEWTON_ITERS = 200
_LINE_ITERS = 100
_BACKTRACK = 4


def linear_max(verts, coeffs):
    if verts.shape[0] == 0:
        return -1, 0.0
    vals = verts @ np.maximum(coeffs, 0.0)
    k = int(np.argmax(vals))
    if vals[k] <= 0.0:
        return -1, 0.0
    return k, float(vals[k])


def _rates(a, psi, lin, beta, s0, cap, mu):
    d = mu + beta - lin
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        x = (a / np.where(d > 0.0, d, 1.0)) ** (1.0 / psi) - 0.1 - s0
    x = np.where(d > 0.0, x, cap)
    return np.clip(x, 0.0, cap)


def waterfill(u, users, n_users, a, psi, lin, beta, s0, cap):
    """Exact split of per-user capacities ``u`` among jobs.

    Returns ``(x, mu, dmu)``: job rates, the per-user water level (marginal
    value of one more unit of user rate) and its derivative in ``u``.
    """
    x0 = _rates(a, psi, lin, beta, s0, cap, 0.0)
    total0 = np.bincount(users, weights=x0, minlength=n_users)
    g0 = np.where(cap > 0.0, a * (0.1 + s0) ** (-psi) + lin - beta, 0.0)
    top = np.zeros(n_users)
    np.maximum.at(top, users, np.maximum(g0, 0.0))

    has_jobs = np.bincount(users, minlength=n_users) > 0
    slack = (total0 <= u) | ~has_jobs
    empty = ~slack & (u <= 0.0)
    active = ~slack & ~empty

    lo = np.zeros(n_users)
    hi = np.where(active, top, 0.0)
    slope = np.zeros(n_users)
    mu = 0.5 * hi
    todo = active.copy()
    for _ in range(_NEWTON_ITERS):
        if not todo.any():
            break
        xj = _rates(a, psi, lin, beta, s0, cap, mu[users])
        inner = (xj > 0.0) & (xj < cap)
        with np.errstate(divide="ignore", invalid="ignore"):
            dxj = np.where(inner, -(xj + 0.1 + s0) / (psi * (mu[users] + beta - lin)), 0.0)
        r = np.bincount(users, weights=xj, minlength=n_users) - u
        dr = np.bincount(users, weights=dxj, minlength=n_users)
        above = todo & (r > 0.0)
        below = todo & ~(r > 0.0)
        lo = np.where(above, mu, lo)
        hi = np.where(below, mu, hi)
        slope = np.where(below, dr, slope)
        done = below & (r >= -1e-14 * u)
        done |= todo & (hi - lo <= 1e-16 * hi)
        todo &= ~done
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = np.where(dr < 0.0, mu - r / dr, -1.0)
        bad = ~((lo < nxt) & (nxt < hi))
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        mu = np.where(todo, nxt, mu)

    level = np.where(active, hi, np.where(empty, top, 0.0))
    x = np.where(slack[users], x0, _rates(a, psi, lin, beta, s0, cap, level[users]))
    x = np.where(empty[users], 0.0, x)
    with np.errstate(divide="ignore"):
        dmu = np.where(active & (slope < 0.0), 1.0 / np.where(slope < 0.0, slope, -1.0), 0.0)
    return x, level, dmu


def objective(x, a, psi, lin, beta, s0):
    """Slot objective ``sum_j f_j(s0 + x) - f_j(s0) + (lin - beta) x`` (f without its linear part)."""
    e = 1.0 - psi
    return float(np.sum(a * ((0.1 + s0 + x) ** e - (0.1 + s0) ** e) / e + (lin - beta) * x))


def face_newton(w, atoms, mu, dmu):
    """Newton direction for the weights on the current support, keeping ``sum(w)`` fixed.

    Returns the full-length direction, zero off the support.
    """
    live = np.flatnonzero(w > 0.0)
    k = len(live)
    d = np.zeros(len(w))
    if k < 2:
        return d
    A = atoms[live]
    g = A @ mu
    H = (A * dmu) @ A.T
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = H
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[:k] = -g
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    d[live] = sol[:k]
    return d


def slot_solve(verts, users, n_users, a, psi, lin, beta, s0, cap, tol, max_iter):
    """Numpy twin of ``_nb.slot_solve`` (takes ``users`` instead of CSR)."""
    m = verts.shape[0]
    atoms = np.vstack([np.zeros((1, n_users)), verts])
    w = np.zeros(m + 1)

    def fill(uu):
        return waterfill(uu, users, n_users, a, psi, lin, beta, s0, cap)

    u = np.zeros(n_users)
    x, mu, dmu = fill(u)
    k0, _ = linear_max(verts, mu)
    if k0 < 0:
        return x, u, 0.0, 0
    w[k0 + 1] = 1.0

    it = 0
    while it < max_iter:
        u = w @ atoms
        x, mu, dmu = fill(u)
        scores = atoms @ mu
        s = int(np.argmax(scores))
        gap = scores[s] - mu @ u
        if gap <= tol * scores[s] + 1e-300:
            break
        it += 1
        live = np.flatnonzero(w > 0.0)
        aw = int(live[np.argmin(scores[live])])
        d = atoms[s] - atoms[aw]
        gmax = w[aw]
        slope0 = scores[s] - scores[aw]
        if slope0 <= 0.0:
            break
        curv = dmu @ (d * d)
        _, mu_g, _ = fill(u + gmax * d)
        if mu_g @ d >= 0.0:
            gamma = gmax
        else:
            lo, hi, gamma, deriv = 0.0, gmax, 0.0, slope0
            for _ in range(_LINE_ITERS):
                nxt = gamma - deriv / curv if curv < 0.0 else -1.0
                if not (lo < nxt < hi):
                    nxt = 0.5 * (lo + hi)
                gamma = nxt
                _, mu_t, dmu_t = fill(u + gamma * d)
                deriv = mu_t @ d
                curv = dmu_t @ (d * d)
                if deriv > 0.0:
                    lo = gamma
                else:
                    hi = gamma
                if abs(deriv) <= 1e-13 * slope0 or hi - lo <= 1e-15 * gmax:
                    break
            if gamma <= 0.0:
                break
        if gamma >= gmax:
            w[s] += w[aw]
            w[aw] = 0.0
        else:
            w[s] += gamma
            w[aw] -= gamma

        # second-order step on the support, kept only if it helps
        u = w @ atoms
        x, mu, dmu = fill(u)
        base = objective(x, a, psi, lin, beta, s0)
        step = face_newton(w, atoms, mu, dmu)
        neg = step < 0.0
        tau = min(1.0, float(np.min(-w[neg] / step[neg]))) if neg.any() else 1.0
        for _ in range(_BACKTRACK):
            trial = np.maximum(w + tau * step, 0.0)
            xt, _, _ = fill(trial @ atoms)
            if objective(xt, a, psi, lin, beta, s0) > base:
                w = trial
                break
            tau *= 0.5

    u = w @ atoms
    x, mu, dmu = fill(u)
    gap = max(float(np.max(atoms @ mu) - mu @ u), 0.0)
    return x, u, gap, it
