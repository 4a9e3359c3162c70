"""Dense strictly convex QP solver (Goldfarb-Idnani dual active-set method).

Solves::

    minimise    0.5 x^T H x + g^T x
    subject to  A x <= b

for symmetric positive definite ``H``. Problem sizes in this package are a
few dozen variables, so the active-set factorisation is simply recomputed
on every change of the working set instead of being updated with Givens
rotations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular


@dataclass
class QpResult:
    x: np.ndarray
    multipliers: np.ndarray  # one per row of A, >= 0
    active: list
    iterations: int
    status: str  # "optimal", "infeasible" or "max_iter"

    @property
    def ok(self):
        return self.status == "optimal"


def solve_qp(H, g, A, b, tol=1e-10, max_iter=None):
    """Goldfarb-Idnani dual method for ``min 0.5 x'Hx + g'x  s.t.  A x <= b``."""
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    n = g.size
    m = b.size
    if A.shape != (m, n):
        raise ValueError(f"A has shape {A.shape}, expected {(m, n)}")
    # the method works with constraints in the form c_i' x >= d_i
    C = -A
    d = -b
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise ValueError("Hessian must be positive definite") from None
    Linv = solve_triangular(L, np.eye(n), lower=True)
    chol = cho_factor(H)
    x = -cho_solve(chol, g)
    active: list[int] = []
    u = np.zeros(0)
    max_iter = max_iter or 10 * (n + m) + 50
    norms = np.maximum(np.linalg.norm(C, axis=1), 1e-300)

    def factor(act):
        if not act:
            return Linv.T.copy(), np.zeros((0, 0))
        B = Linv @ C[act].T  # n x q
        Q, R = np.linalg.qr(B, mode="complete")
        return Linv.T @ Q, R[:len(act), :]

    J, R = factor(active)
    it = 0
    while True:
        slack = C @ x - d
        viol = slack / norms
        if active:
            viol[active] = np.inf
        p = int(np.argmin(viol)) if m else -1
        if m == 0 or viol[p] >= -tol:
            lam = np.zeros(m)
            lam[active] = u
            return QpResult(x, lam, list(active), it, "optimal")
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                lam = np.zeros(m)
                lam[active] = u
                return QpResult(x, lam, list(active), it, "max_iter")
            q = len(active)
            np_vec = C[p]
            dvec = J.T @ np_vec
            z = J[:, q:] @ dvec[q:]
            r = solve_triangular(R, dvec[:q], lower=False) if q else np.zeros(0)
            # partial step length (dual feasibility)
            t1 = np.inf
            k_drop = -1
            for j in range(q):
                if r[j] > tol and u_plus[j] / r[j] < t1:
                    t1 = u_plus[j] / r[j]
                    k_drop = j
            # full step length (primal feasibility of constraint p)
            zn = z @ np_vec
            if np.linalg.norm(z) > tol * max(1.0, np.linalg.norm(np_vec)) and zn > 0:
                t2 = -(np_vec @ x - d[p]) / zn
            else:
                t2 = np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                lam = np.zeros(m)
                lam[active] = u
                return QpResult(x, lam, list(active), it, "infeasible")
            if not np.isfinite(t2):
                # dual step only, then drop the blocking constraint
                u_plus[:q] -= t * r
                u_plus[q] += t
                u_plus = np.delete(u_plus, k_drop)
                active.pop(k_drop)
                J, R = factor(active)
                continue
            x = x + t * z
            u_plus[:q] -= t * r
            u_plus[q] += t
            if t == t2:
                active.append(p)
                u = u_plus
                J, R = factor(active)
                break
            u_plus = np.delete(u_plus, k_drop)
            active.pop(k_drop)
            J, R = factor(active)
