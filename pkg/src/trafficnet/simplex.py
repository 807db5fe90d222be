"""Bounded-variable primal simplex for small dense linear programs.

Solves ``max c.x  s.t.  G x <= h,  0 <= x <= u`` with ``h >= 0`` so that the
origin is a feasible starting vertex. Slack variables complete the basis;
nonbasic variables sit at either bound. Bland's rule (lowest index enters,
lowest index leaves) rules out cycling on degenerate vertices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LP_TOL = 1e-9


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    objective: float
    duals: np.ndarray  # one per row of G, nonnegative at optimum
    reduced_costs: np.ndarray  # c - G^T y for the structural variables
    iterations: int
    nonunique: bool  # a nonbasic variable with zero reduced cost could move

    def slackness_gap(self, G, h, u) -> float:
        """Largest complementary-slackness product; zero at an exact optimum."""
        G, h, u = np.asarray(G, float), np.asarray(h, float), np.asarray(u, float)
        row_slack = h - G @ self.x
        d = self.reduced_costs
        terms = [self.duals * row_slack,
                 np.maximum(d, 0.0) * np.where(np.isfinite(u), u - self.x, 0.0),
                 np.maximum(-d, 0.0) * self.x]
        return float(max((np.abs(t).max() for t in terms if t.size), default=0.0))

    def dual_objective(self, h, u) -> float:
        u = np.asarray(u, float)
        z = np.maximum(self.reduced_costs, 0.0)
        return float(self.duals @ np.asarray(h, float) + np.sum(np.where(z > 0, z * u, 0.0)))


def maximize(c, G, h, upper, tol: float = LP_TOL, max_iter: int = 10_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float)).reshape(-1, len(c))
    h = np.asarray(h, dtype=float)
    u = np.asarray(upper, dtype=float)
    m, n = G.shape
    if np.any(h < 0):
        raise ValueError("right-hand side must be nonnegative so the origin is feasible")
    if np.any(u < 0):
        raise ValueError("upper bounds must be nonnegative")

    # variables 0..n-1 structural, n..n+m-1 slacks
    M = np.hstack([G, np.eye(m)])
    cost = np.concatenate([c, np.zeros(m)])
    up = np.concatenate([u, np.full(m, np.inf)])
    basis = list(range(n, n + m))
    at_upper = np.zeros(n + m, dtype=bool)
    scale = max(1.0, float(np.abs(M).max()) if M.size else 1.0)

    it = 0
    while True:
        Bm = M[:, basis]
        nonbasic = [j for j in range(n + m) if j not in set(basis)]
        x = np.where(at_upper, up, 0.0)
        x[basis] = 0.0
        xb = np.linalg.solve(Bm, h - M @ x) if m else np.zeros(0)
        x[basis] = xb
        y = np.linalg.solve(Bm.T, cost[basis]) if m else np.zeros(0)
        red = cost - M.T @ y

        entering = None
        for j in nonbasic:  # Bland: lowest index with an improving direction
            if (not at_upper[j] and red[j] > tol and up[j] > 0) or (at_upper[j] and red[j] < -tol):
                entering = j
                break
        if entering is None:
            break
        it += 1
        if it > max_iter:
            raise RuntimeError("simplex iteration limit reached")

        j = entering
        sigma = -1.0 if at_upper[j] else 1.0
        w = np.linalg.solve(Bm, M[:, j]) if m else np.zeros(0)
        step, leave, leave_to_upper = up[j], None, False  # bound flip of the entering variable
        for pos in sorted(range(m), key=lambda p: basis[p]):
            rate = sigma * w[pos]
            i = basis[pos]
            if rate > tol * scale:
                t = max(xb[pos], 0.0) / rate
                to_upper = False
            elif rate < -tol * scale and np.isfinite(up[i]):
                t = max(up[i] - xb[pos], 0.0) / -rate
                to_upper = True
            else:
                continue
            if t < step - tol * max(1.0, abs(step) if np.isfinite(step) else 1.0):
                step, leave, leave_to_upper = t, pos, to_upper
        if not np.isfinite(step):
            raise RuntimeError("linear program is unbounded")
        if leave is None:
            at_upper[j] = not at_upper[j]
            continue
        i = basis[leave]
        at_upper[i] = leave_to_upper
        at_upper[j] = False
        basis[leave] = j

    bset = set(basis)
    movable = [j for j in range(n + m) if j not in bset and up[j] > tol and abs(red[j]) <= tol]
    xs = np.clip(x[:n], 0.0, u)
    return LPResult(
        x=xs,
        objective=float(c @ xs),
        duals=np.maximum(y, 0.0) if m else y,
        reduced_costs=red[:n],
        iterations=it,
        nonunique=bool(movable),
    )
