"""Interior-point fallback for slots whose objective has kinks.

When a job can hit its cap while more rate for its user is still
available and still valuable, the user's marginal value of rate jumps down
at that point and the vertex-direction solver can stall there. This path
hands the slot to Clarabel as a small power-cone program instead:

    max  sum_j a_j ((0.1 + s0_j + x_j)^(1-psi_j)) / (1-psi_j) + (lin_j - beta_j) x_j
    s.t. 0 <= x <= cap,  sum_{j of n} x_j <= sum_k w_k v_kn,  w >= 0,  sum w <= 1
"""
import clarabel
import numpy as np
import scipy.sparse as sp


class ConicError(RuntimeError):
    def __init__(self, status, gap):
        super().__init__(f"conic slot solve failed: {status}")
        self.gap = gap


def kinked(verts, users, n_users, a, psi, lin, beta, s0, cap):
    """True when some job can hit its cap while it still has positive marginal value.

    Saturating such a job drops its user's marginal value of rate
    discontinuously, which is what stalls the vertex-direction solver.
    """
    edge = a * (0.1 + s0 + cap) ** (-psi) + lin - beta
    top = verts.max(axis=0)[users]
    return bool(np.any((edge > 0.0) & (cap > 0.0) & (cap <= top)))


def slot_solve(verts, users, n_users, a, psi, lin, beta, s0, cap):
    """Returns ``(x, u, gap)``, ``gap`` relative to the objective.

    ``x`` is made exactly feasible by a shrink-only repair. Jobs with no
    room left are pinned at zero and kept out of the program.
    """
    keep = cap > 0.0
    if not keep.all():
        x = np.zeros(len(a))
        u = np.zeros(n_users)
        gap = 0.0
        if keep.any():
            sub = [v[keep] for v in (users, a, psi, lin, beta, s0, cap)]
            x[keep], u, gap = slot_solve(verts, sub[0], n_users, *sub[1:])
        return x, u, gap
    J, m = len(a), verts.shape[0]
    e = 1.0 - psi
    nv = 2 * J + m  # [x, w, h]
    ix, iw, ih = np.arange(J), J + np.arange(m), J + m + np.arange(J)

    rows, cols, vals, b = [], [], [], []
    r = 0

    def add(rr, cc, vv):
        rows.extend(rr)
        cols.extend(cc)
        vals.extend(vv)

    # nonnegative cone block
    add(r + ix, ix, np.ones(J)); b.extend(cap); r += J  # x <= cap
    add(r + ix, ix, -np.ones(J)); b.extend(np.zeros(J)); r += J  # x >= 0
    add(r + np.arange(m), iw, -np.ones(m)); b.extend(np.zeros(m)); r += m  # w >= 0
    add(np.full(m, r), iw, np.ones(m)); b.append(1.0); r += 1  # sum w <= 1
    add(r + users, ix, np.ones(J))
    kk, nn = np.meshgrid(np.arange(m), np.arange(n_users), indexing="ij")
    add((r + nn).ravel(), (J + kk).ravel(), -verts.ravel())
    b.extend(np.zeros(n_users)); r += n_users
    n_lin = r
    # power cones on the normalized level: (1 + x / base, 1, h), base = 0.1 + s0
    base = 0.1 + s0
    for j in range(J):
        add([r], [j], [-1.0 / base[j]]); b.append(1.0)
        b.append(1.0)
        add([r + 2], [ih[j]], [-1.0]); b.append(0.0)
        r += 3

    A = sp.csc_matrix((vals, (rows, cols)), shape=(r, nv))
    q = np.zeros(nv)
    q[ix] = -(lin - beta)
    q[ih] = -a * base**e / e
    P = sp.csc_matrix((nv, nv))
    cones = [clarabel.NonnegativeConeT(n_lin)] + [clarabel.PowerConeT(float(ej)) for ej in e]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = 1e-9
    settings.tol_gap_rel = 1e-9
    settings.tol_feas = 1e-9
    sol = clarabel.DefaultSolver(P, q, A, np.asarray(b, dtype=np.float64), cones, settings).solve()
    gap = abs(sol.obj_val - sol.obj_val_dual) / (1.0 + abs(sol.obj_val))
    ok = sol.status == clarabel.SolverStatus.Solved
    # stalls this close to optimal happen from the objective's large constant part
    ok |= sol.status in (clarabel.SolverStatus.AlmostSolved, clarabel.SolverStatus.InsufficientProgress) and gap <= 1e-7
    if not ok:
        raise ConicError(sol.status, gap)

    z = np.asarray(sol.x)
    x = np.clip(z[ix], 0.0, cap)
    w = np.maximum(z[iw], 0.0)
    if w.sum() > 1.0:
        w /= w.sum()
    room = w @ verts
    use = np.bincount(users, weights=x, minlength=n_users)
    shrink = np.where(use > room, room / np.where(use > 0, use, 1.0), 1.0)
    x *= shrink[users]
    u = np.bincount(users, weights=x, minlength=n_users)
    return x, u, float(gap)
