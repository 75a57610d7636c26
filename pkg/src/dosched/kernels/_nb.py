"""Loop kernels compiled with numba.

Jobs are passed as flat float arrays grouped by user in CSR form: jobs of
user ``n`` are ``order[ptr[n]:ptr[n + 1]]``. A job's per-slot marginal value
is

    a * (0.1 + s0 + x) ** -psi + lin - beta

which covers plain DO (``lin = 0``), the LFDO modified reward (``a = V * v``,
``lin = Q``) and the Primal baseline (``beta = 0``).
"""
import numpy as np

from .._jit import njit

_NEWTON_ITERS = 200
_LINE_ITERS = 100
_BACKTRACK = 4


@njit
def linear_max(verts, coeffs):
    """Best clipped vertex for ``sum_n max(c_n, 0) * x_n``; -1 means the origin."""
    m, n_users = verts.shape
    best = -1
    best_val = 0.0
    for k in range(m):
        val = 0.0
        for n in range(n_users):
            c = coeffs[n]
            if c > 0.0:
                val += c * verts[k, n]
        if val > best_val:
            best_val = val
            best = k
    return best, best_val


@njit
def _rate_at_level(a, psi, lin, beta, s0, cap, mu):
    d = mu + beta - lin
    if d <= 0.0:
        return cap
    x = (a / d) ** (1.0 / psi) - 0.1 - s0
    if x <= 0.0:
        return 0.0
    if x >= cap:
        return cap
    return x


@njit
def _waterfill_user(lo_idx, hi_idx, order, a, psi, lin, beta, s0, cap, u, x_out):
    """Split capacity ``u`` among one user's jobs; returns (level, d level / d u)."""
    total0 = 0.0
    top = 0.0
    for p in range(lo_idx, hi_idx):
        j = order[p]
        total0 += _rate_at_level(a[j], psi[j], lin[j], beta[j], s0[j], cap[j], 0.0)
        if cap[j] > 0.0:
            g0 = a[j] * (0.1 + s0[j]) ** (-psi[j]) + lin[j] - beta[j]
            if g0 > top:
                top = g0
    if total0 <= u:
        for p in range(lo_idx, hi_idx):
            j = order[p]
            x_out[j] = _rate_at_level(a[j], psi[j], lin[j], beta[j], s0[j], cap[j], 0.0)
        return 0.0, 0.0
    if u <= 0.0:
        for p in range(lo_idx, hi_idx):
            x_out[order[p]] = 0.0
        return top, 0.0

    lo = 0.0
    hi = top
    mu = 0.5 * top
    slope = 0.0
    for _ in range(_NEWTON_ITERS):
        r = -u
        dr = 0.0
        for p in range(lo_idx, hi_idx):
            j = order[p]
            x = _rate_at_level(a[j], psi[j], lin[j], beta[j], s0[j], cap[j], mu)
            r += x
            if x > 0.0 and x < cap[j]:
                dr -= (x + 0.1 + s0[j]) / (psi[j] * (mu + beta[j] - lin[j]))
        if r > 0.0:
            lo = mu
        else:
            hi = mu
            slope = dr
            if r >= -1e-14 * u:
                break
        if hi - lo <= 1e-16 * hi:
            break
        nxt = mu - r / dr if dr < 0.0 else -1.0
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        mu = nxt
    for p in range(lo_idx, hi_idx):
        j = order[p]
        x_out[j] = _rate_at_level(a[j], psi[j], lin[j], beta[j], s0[j], cap[j], hi)
    dmu = 1.0 / slope if slope < 0.0 else 0.0
    return hi, dmu


@njit
def waterfill(u, order, ptr, a, psi, lin, beta, s0, cap, x_out, mu_out, dmu_out):
    n_users = ptr.shape[0] - 1
    for n in range(n_users):
        if ptr[n + 1] == ptr[n]:
            mu_out[n] = 0.0
            dmu_out[n] = 0.0
            continue
        mu, dmu = _waterfill_user(
            ptr[n], ptr[n + 1], order, a, psi, lin, beta, s0, cap, u[n], x_out
        )
        mu_out[n] = mu
        dmu_out[n] = dmu


@njit
def objective(x, a, psi, lin, beta, s0):
    total = 0.0
    for j in range(a.shape[0]):
        e = 1.0 - psi[j]
        total += a[j] * ((0.1 + s0[j] + x[j]) ** e - (0.1 + s0[j]) ** e) / e + (lin[j] - beta[j]) * x[j]
    return total


@njit
def _atom(verts, k, n):
    return verts[k - 1, n] if k > 0 else 0.0


@njit
def face_newton(w, verts, mu, dmu, step):
    """Newton direction on the support of ``w`` with ``sum(w)`` fixed; written into ``step``."""
    n_users = verts.shape[1]
    live = np.flatnonzero(w > 0.0)
    k = live.shape[0]
    step[:] = 0.0
    if k < 2:
        return
    kkt = np.zeros((k + 1, k + 1))
    rhs = np.zeros(k + 1)
    for p in range(k):
        g = 0.0
        for n in range(n_users):
            g += _atom(verts, live[p], n) * mu[n]
        rhs[p] = -g
        for q in range(k):
            h = 0.0
            for n in range(n_users):
                h += _atom(verts, live[p], n) * dmu[n] * _atom(verts, live[q], n)
            kkt[p, q] = h
        kkt[p, k] = 1.0
        kkt[k, p] = 1.0
    sol = np.linalg.lstsq(kkt, rhs)[0]
    for p in range(k):
        step[live[p]] = sol[p]


@njit
def _weights_to_rates(w, verts, u):
    m, n_users = verts.shape
    for n in range(n_users):
        acc = 0.0
        for k in range(m):
            acc += w[k + 1] * verts[k, n]
        u[n] = acc


@njit
def slot_solve(verts, order, ptr, a, psi, lin, beta, s0, cap, tol, max_iter):
    """Maximize sum_j phi_j(x_j) with per-user totals in the closed hull.

    Pairwise conditional gradient over the vertex weights; the split of each
    user's rate among its jobs is solved exactly by water-filling. Returns
    ``(x, u, gap, iterations)`` where ``gap`` is the final duality-gap
    certificate ``max_k <mu, v_k> - <mu, u>``.
    """
    m, n_users = verts.shape
    n_jobs = a.shape[0]
    x = np.zeros(n_jobs)
    mu = np.zeros(n_users)
    dmu = np.zeros(n_users)
    u = np.zeros(n_users)
    w = np.zeros(m + 1)  # slot 0 is the origin atom
    scores = np.zeros(m + 1)
    trial = np.zeros(n_users)
    d = np.zeros(n_users)
    step = np.zeros(m + 1)
    wt = np.zeros(m + 1)

    waterfill(u, order, ptr, a, psi, lin, beta, s0, cap, x, mu, dmu)
    k0, v0 = linear_max(verts, mu)
    if k0 < 0:
        return x, u, 0.0, 0
    w[k0 + 1] = 1.0

    it = 0
    while it < max_iter:
        _weights_to_rates(w, verts, u)
        waterfill(u, order, ptr, a, psi, lin, beta, s0, cap, x, mu, dmu)
        mu_u = 0.0
        for n in range(n_users):
            mu_u += mu[n] * u[n]
        s = 0
        scores[0] = 0.0
        for k in range(m):
            val = 0.0
            for n in range(n_users):
                val += mu[n] * verts[k, n]
            scores[k + 1] = val
            if val > scores[s]:
                s = k + 1
        gap = scores[s] - mu_u
        if gap <= tol * scores[s] + 1e-300:
            break
        it += 1
        aw = -1
        for k in range(m + 1):
            if w[k] > 0.0 and (aw < 0 or scores[k] < scores[aw]):
                aw = k
        for n in range(n_users):
            ps = verts[s - 1, n] if s > 0 else 0.0
            pa = verts[aw - 1, n] if aw > 0 else 0.0
            d[n] = ps - pa
        gmax = w[aw]
        slope0 = scores[s] - scores[aw]
        if slope0 <= 0.0:
            break
        curv0 = 0.0
        for n in range(n_users):
            curv0 += dmu[n] * d[n] * d[n]

        # Line search on the directional derivative, which decreases in gamma.
        for n in range(n_users):
            trial[n] = u[n] + gmax * d[n]
        waterfill(trial, order, ptr, a, psi, lin, beta, s0, cap, x, mu, dmu)
        dg = 0.0
        for n in range(n_users):
            dg += mu[n] * d[n]
        if dg >= 0.0:
            gamma = gmax
        else:
            lo = 0.0
            hi = gmax
            gamma = 0.0
            deriv = slope0
            curv = curv0
            for _ in range(_LINE_ITERS):
                if curv < 0.0:
                    nxt = gamma - deriv / curv
                else:
                    nxt = -1.0
                if not (lo < nxt < hi):
                    nxt = 0.5 * (lo + hi)
                gamma = nxt
                for n in range(n_users):
                    trial[n] = u[n] + gamma * d[n]
                waterfill(trial, order, ptr, a, psi, lin, beta, s0, cap, x, mu, dmu)
                deriv = 0.0
                curv = 0.0
                for n in range(n_users):
                    deriv += mu[n] * d[n]
                    curv += dmu[n] * d[n] * d[n]
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
        _weights_to_rates(w, verts, u)
        waterfill(u, order, ptr, a, psi, lin, beta, s0, cap, x, mu, dmu)
        base = objective(x, a, psi, lin, beta, s0)
        face_newton(w, verts, mu, dmu, step)
        tau = 1.0
        for k in range(m + 1):
            if step[k] < 0.0 and -w[k] / step[k] < tau:
                tau = -w[k] / step[k]
        for _ in range(_BACKTRACK):
            for k in range(m + 1):
                wt[k] = max(w[k] + tau * step[k], 0.0)
            _weights_to_rates(wt, verts, trial)
            waterfill(trial, order, ptr, a, psi, lin, beta, s0, cap, x, mu, dmu)
            if objective(x, a, psi, lin, beta, s0) > base:
                w[:] = wt
                break
            tau *= 0.5

    _weights_to_rates(w, verts, u)
    waterfill(u, order, ptr, a, psi, lin, beta, s0, cap, x, mu, dmu)
    best = 0.0
    mu_u = 0.0
    for n in range(n_users):
        mu_u += mu[n] * u[n]
    for k in range(m):
        val = 0.0
        for n in range(n_users):
            val += mu[n] * verts[k, n]
        if val > best:
            best = val
    gap = best - mu_u
    if gap < 0.0:
        gap = 0.0
    return x, u, gap, it
