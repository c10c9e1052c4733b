"""The weak monotone rearrangement and the barycentric weak transport problem.

For discrete mu, nu the problem is

    minimize   sum_i p_i theta(x_i - t_i)
    over       t_1 <= ... <= t_n  with  t(mu) <=_c nu,

where t(mu) is the image measure of mu under atom_i -> t_i. With equal means,
t(mu) <=_c nu is equivalent to finitely many linear partial-sum constraints in
quantile space, so the quadratic cost is a convex QP with diagonal Hessian.
The optimal map does not depend on the (strictly convex) cost, which makes the
quadratic solution a certified warm start for all other costs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qp
from .errors import DomainError, PreconditionError, SizeError
from .measures import (
    ORDER_TOL,
    DiscreteMeasure,
    Interval,
    convex_order_leq,
    irreducible_components,
    mean,
    pushforward,
    support_scale,
)

KKT_TOL = 1e-8  # accepted stationarity/feasibility residual, times scale


@dataclass(frozen=True)
class CostSpec:
    """Convex cost theta applied to x - barycenter displacements.

    kind is one of 'quadratic' (x^2), 'quartic' (x^4) or 'power' (|x|^rho,
    rho >= 1). rho = 1 is allowed but not strictly convex, so uniqueness of
    the optimal map is not guaranteed there.
    """

    kind: str
    rho: float = 2.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "quartic", "power"):
            raise DomainError(f"unknown cost kind {self.kind!r}")
        if self.kind == "quadratic":
            object.__setattr__(self, "rho", 2.0)
        elif self.kind == "quartic":
            object.__setattr__(self, "rho", 4.0)
        elif self.rho < 1.0:
            raise DomainError(f"power cost needs rho >= 1, got {self.rho!r}")

    @classmethod
    def quadratic(cls) -> "CostSpec":
        return cls("quadratic")

    @classmethod
    def quartic(cls) -> "CostSpec":
        return cls("quartic")

    @classmethod
    def power(cls, rho: float) -> "CostSpec":
        return cls("power", float(rho))

    @property
    def strictly_convex(self) -> bool:
        return self.kind in ("quadratic", "quartic") or self.rho > 1.0

    @property
    def growth_exponent(self) -> float:
        return self.rho

    def value(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == "quadratic":
            return z * z
        if self.kind == "quartic":
            return z**4
        return np.abs(z) ** self.rho

    def deriv(self, z) -> np.ndarray:
        """One-sided derivative (the subgradient choice 0 at kinks for rho=1)."""
        z = np.asarray(z, dtype=float)
        if self.kind == "quadratic":
            return 2.0 * z
        if self.kind == "quartic":
            return 4.0 * z**3
        if self.rho == 1.0:
            return np.sign(z)
        return self.rho * np.sign(z) * np.abs(z) ** (self.rho - 1.0)

    def describe(self) -> dict:
        return {"kind": self.kind, "rho": self.rho}


@dataclass(frozen=True)
class MonotoneMap:
    """Increasing map stored by knots, linear in between, constant outside.

    Only strict increase of the knot abscissae is enforced at construction;
    monotonicity and 1-Lipschitz continuity of the values are checked by
    verify_admissible, since hand-built candidates are allowed to violate them.
    """

    knots_x: np.ndarray
    knots_t: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.knots_x, dtype=float).reshape(-1)
        t = np.asarray(self.knots_t, dtype=float).reshape(-1)
        if x.size == 0 or x.shape != t.shape:
            raise ValueError("knots need equal, positive length")
        order = np.argsort(x, kind="stable")
        x, t = x[order], t[order]
        if np.any(np.diff(x) <= 0):
            raise ValueError("knot positions must be strictly increasing")
        x.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "knots_x", x)
        object.__setattr__(self, "knots_t", t)

    @classmethod
    def from_pairs(cls, pairs) -> "MonotoneMap":
        arr = np.asarray(list(pairs), dtype=float)
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def identity(cls, points) -> "MonotoneMap":
        pts = np.asarray(points, dtype=float)
        return cls(pts, pts.copy())

    def __call__(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.interp(y, self.knots_x, self.knots_t)

    def is_monotone(self, tol: float) -> bool:
        return bool(np.all(np.diff(self.knots_t) >= -tol))

    def is_one_lipschitz(self, tol: float) -> bool:
        return bool(np.all(np.diff(self.knots_t) <= np.diff(self.knots_x) + tol))

    def push(self, m: DiscreteMeasure) -> DiscreteMeasure:
        return pushforward(m, self(m.atoms))


@dataclass(frozen=True)
class WeakSolution:
    """Solver output: optimal map, its pushforward, value and certificates."""

    map: MonotoneMap
    pushforward: DiscreteMeasure
    value: float
    irreducibles: list[Interval]
    kkt_residual: float
    cost: CostSpec

    def to_document(self) -> dict:
        return {
            "schema": 1,
            "kind": "weak_solution",
            "cost": self.cost.describe(),
            "map_knots": [[float(a), float(b)] for a, b in zip(self.map.knots_x, self.map.knots_t)],
            "pushforward": {
                "atoms": [float(a) for a in self.pushforward.atoms],
                "weights": [float(w) for w in self.pushforward.weights],
            },
            "value": float(self.value),
            "irreducible_intervals": [[iv.lo, iv.hi] for iv in self.irreducibles],
            "kkt_residual": float(self.kkt_residual),
        }


# ---------------------------------------------------------------------------
# Feasible polyhedron: monotone t with t(mu) <=_c nu (in quantile space)
# ---------------------------------------------------------------------------


def _quantile_integral(nu: DiscreteMeasure, s: np.ndarray) -> np.ndarray:
    """G(s) = int_0^s F_nu^{-1}(u) du, piecewise linear with kinks at nu's levels."""
    cum = np.concatenate(([0.0], nu.cumulative()))
    seg = np.concatenate(([0.0], np.cumsum(np.diff(cum) * nu.atoms)))
    j = np.searchsorted(cum, s, side="left")
    j = np.clip(j, 1, nu.n)
    return seg[j - 1] + (s - cum[j - 1]) * nu.atoms[j - 1]


def transport_polyhedron(mu: DiscreteMeasure, nu: DiscreteMeasure, lipschitz: bool = False):
    """Constraint matrices for {t : t monotone, t(mu) <=_c nu}.

    Convex order is imposed exactly at the merged cumulative-weight levels of
    mu and nu: both sides of the partial quantile-integral inequality are
    piecewise linear in the level with kinks only there. With lipschitz=True
    the rows t_{i+1} - t_i <= dx_i are added, which restricts the set to the
    values of admissible (increasing 1-Lipschitz) maps.
    """
    n = mu.n
    cmu = np.concatenate(([0.0], mu.cumulative()))
    levels = np.union1d(mu.cumulative(), nu.cumulative())
    levels = levels[(levels > 1e-15) & (levels < 1.0 - 1e-15)]

    rows = []
    rhs = []
    for i in range(n - 1):  # monotonicity
        r = np.zeros(n)
        r[i], r[i + 1] = -1.0, 1.0
        rows.append(r)
        rhs.append(0.0)
    if lipschitz:
        dx = np.diff(mu.atoms)
        for i in range(n - 1):  # t_{i+1} - t_i <= dx_i
            r = np.zeros(n)
            r[i], r[i + 1] = 1.0, -1.0
            rows.append(r)
            rhs.append(-float(dx[i]))
    if levels.size:
        # int_0^s q_t(u) du = sum_i overlap(block_i, [0, s]) * t_i
        overlap = np.minimum(cmu[1:], levels[:, None]) - np.minimum(cmu[:-1], levels[:, None])
        overlap = np.maximum(overlap, 0.0)
        G = _quantile_integral(nu, levels)
        rows.extend(list(overlap))
        rhs.extend(list(G))
    A_in = np.array(rows) if rows else np.empty((0, n))
    b_in = np.array(rhs) if rhs else np.empty(0)
    A_eq = mu.weights.reshape(1, -1)
    b_eq = np.array([mean(nu)])
    return A_eq, b_eq, A_in, b_in


def _block_average_start(mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
    """Average of nu's quantile function over each mu weight block: always feasible."""
    cmu = np.concatenate(([0.0], mu.cumulative()))
    G = _quantile_integral(nu, cmu)
    return np.diff(G) / mu.weights


def _feasible(t, A_eq, b_eq, A_in, b_in, tol) -> bool:
    ok_eq = np.abs(A_eq @ t - b_eq).max(initial=0.0) <= tol
    ok_in = (A_in @ t - b_in).min(initial=0.0) >= -tol if A_in.size else True
    return bool(ok_eq and ok_in)


def solve_weak_transport(
    mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostSpec | None = None
) -> WeakSolution:
    """Minimize sum_i p_i theta(x_i - t_i) over monotone t with t(mu) <=_c nu.

    The quadratic cost is solved by a dense active-set QP with KKT
    verification. Other strictly convex costs share the same optimizer, so
    they reuse the quadratic solution as a warm start and refine it by
    projected gradient steps, keeping the best iterate by value. For the
    non-strict |x| cost the canonical quadratic map is returned as an
    optimizer (optimality still holds; uniqueness does not), certified by
    the quadratic solve's residual.
    """
    cost = cost or CostSpec.quadratic()
    x, p = mu.atoms, mu.weights
    scale = support_scale(mu, nu)
    A_eq, b_eq, A_in, b_in = transport_polyhedron(mu, nu)

    if _feasible(x, A_eq, b_eq, A_in, b_in, 1e-12 * scale):
        # mu <=_c nu: the unconstrained optimum t = x is feasible, value theta(0)
        t = x.copy()
        residual = 0.0
    else:
        H = np.diag(2.0 * p)
        c = -2.0 * p * x
        res = qp.solve_qp(H, c, A_eq, b_eq, A_in, b_in, _block_average_start(mu, nu))
        t, residual = res.x, res.kkt_residual
        if cost.kind != "quadratic" and cost.strictly_convex:
            t, residual = _refine_non_quadratic(cost, x, p, t, A_eq, b_eq, A_in, b_in, scale)

    value = float(np.dot(p, cost.value(x - t)))
    push = pushforward(mu, t)
    irre = irreducible_components(push, nu, ORDER_TOL)
    return WeakSolution(
        map=MonotoneMap(x, t),
        pushforward=push,
        value=value,
        irreducibles=irre,
        kkt_residual=float(residual),
        cost=cost,
    )


def _refine_non_quadratic(cost, x, p, t0, A_eq, b_eq, A_in, b_in, scale, max_iter=200):
    """Projected gradient refinement from the quadratic warm start.

    Each projection is itself an active-set QP (identity Hessian). The warm
    start is already the common optimizer across strictly convex costs, so the
    loop usually certifies stationarity after one projection; the best iterate
    by value is always kept.
    """

    def f(t):
        return float(np.dot(p, cost.value(x - t)))

    def grad(t):
        return -p * cost.deriv(x - t)

    t_best, f_best = t0.copy(), f(t0)
    t = t0.copy()
    g0 = max(1.0, float(np.abs(grad(t0)).max()))
    step0 = 0.1 * scale / g0
    n = x.size
    for k in range(1, max_iter + 1):
        z = t - (step0 / k) * grad(t)
        proj = qp.solve_qp(np.eye(n), -z, A_eq, b_eq, A_in, b_in, t)
        moved = float(np.abs(proj.x - t).max())
        t = proj.x
        if f(t) < f_best - 1e-15 * max(1.0, abs(f_best)):
            t_best, f_best = t.copy(), f(t)
        if moved <= 1e-12 * scale:
            break
    active = _active_rows(t_best, A_in, b_in, 1e-9 * scale)
    residual = qp.stationarity_residual(grad(t_best), A_eq, A_in, active)
    feas = max(
        float(np.abs(A_eq @ t_best - b_eq).max(initial=0.0)),
        max(0.0, float(-(A_in @ t_best - b_in).min(initial=0.0))) if A_in.size else 0.0,
    )
    return t_best, max(residual, feas)


def _active_rows(t, A_in, b_in, tol):
    if not A_in.size:
        return []
    slack = A_in @ t - b_in
    return [int(i) for i in np.flatnonzero(slack <= tol)]


def weak_monotone_rearrangement(mu: DiscreteMeasure, nu: DiscreteMeasure) -> WeakSolution:
    """The canonical (quadratic-cost) solve; its map is THE weak monotone rearrangement."""
    return solve_weak_transport(mu, nu, CostSpec.quadratic())


def value(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostSpec | None = None) -> float:
    return solve_weak_transport(mu, nu, cost).value


# ---------------------------------------------------------------------------
# Verifiers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmissibilityReport:
    ok: bool
    monotone: bool
    one_lipschitz: bool
    pushforward_ordered: bool
    violations: tuple = ()


def verify_admissible(
    map_: MonotoneMap, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = 1e-7
) -> AdmissibilityReport:
    """Check the three admissibility properties of a map on the atoms of mu:
    increasing, 1-Lipschitz, and pushforward below nu in convex order."""
    s = support_scale(mu, nu)
    x = mu.atoms
    t = map_(x)
    viol = []
    dt = np.diff(t)
    dx = np.diff(x)
    monotone = bool(np.all(dt >= -tol * s))
    if not monotone:
        i = int(np.argmin(dt))
        viol.append(f"decreasing between atoms {x[i]} and {x[i + 1]}")
    lip = bool(np.all(dt <= dx + tol * s))
    if not lip:
        i = int(np.argmax(dt - dx))
        viol.append(f"expansion by {dt[i] - dx[i]:.3e} between atoms {x[i]} and {x[i + 1]}")
    ordered = convex_order_leq(pushforward(mu, t), nu, max(ORDER_TOL, tol))
    if not ordered:
        viol.append("pushforward is not below nu in convex order")
    ok = monotone and lip and ordered
    return AdmissibilityReport(ok, monotone, lip, ordered, tuple(viol))


@dataclass(frozen=True)
class SlopeReport:
    ok: bool
    admissible: bool
    violations: tuple = ()


def verify_slope1_characterization(
    sol: WeakSolution, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = 1e-7
) -> SlopeReport:
    """Geometric optimality test: admissibility plus slope 1 between every
    pair of consecutive atoms whose images both fall strictly inside one
    irreducible interval of (pushforward, nu)."""
    s = support_scale(mu, nu)
    adm = verify_admissible(sol.map, mu, nu, tol)
    x = mu.atoms
    t = sol.map(x)
    margin = tol * s
    viol = list(adm.violations)
    for iv in sol.irreducibles:
        inside = [i for i in range(x.size) if iv.contains(float(t[i]), margin)]
        for a, b in zip(inside, inside[1:]):
            if b != a + 1:
                continue
            if abs((t[b] - t[a]) - (x[b] - x[a])) > tol * s:
                viol.append(
                    f"slope {(t[b] - t[a]) / (x[b] - x[a]):.6f} != 1 inside ({iv.lo}, {iv.hi})"
                )
    ok = adm.ok and len(viol) == len(adm.violations)
    return SlopeReport(ok, adm.ok, tuple(viol))


def check_maximality(
    candidate: MonotoneMap, sol: WeakSolution, mu: DiscreteMeasure, nu: DiscreteMeasure
) -> bool:
    """candidate(mu) <=_c sol.pushforward; candidate must be admissible."""
    if not verify_admissible(candidate, mu, nu).ok:
        raise PreconditionError("maximality check requires an admissible candidate")
    return convex_order_leq(candidate.push(mu), sol.pushforward)


def map_decomposition(map_: MonotoneMap, tol: float = 1e-9):
    """Split the knot range into maximal unit-slope intervals and the rest.

    Returns (slope1_intervals, contractive_intervals) as lists of closed
    [lo, hi] pairs over the knot range.
    """
    x, t = map_.knots_x, map_.knots_t
    scale = max(1.0, float(x[-1] - x[0]))
    if x.size < 2:
        return [], []
    dx = np.diff(x)
    unit = np.abs(np.diff(t) - dx) <= tol * scale
    slope1, contractive = [], []
    i = 0
    while i < unit.size:
        j = i
        while j + 1 < unit.size and unit[j + 1] == unit[i]:
            j += 1
        seg = (float(x[i]), float(x[j + 1]))
        (slope1 if unit[i] else contractive).append(seg)
        i = j + 1
    return slope1, contractive


def smooth_strictify(map_: MonotoneMap, eps: float) -> MonotoneMap:
    """Strictly increasing perturbation within eps in sup norm.

    On the k-th maximal flat knot run (constant values, x-extent lambda_k) the
    constant rate min(eps / (lambda_k * 2^k), 1) is integrated from the left,
    so flat runs become strictly increasing while every non-flat segment, in
    particular each unit-slope segment, keeps its slope.
    """
    if not eps > 0.0:
        raise DomainError("eps must be positive")
    x, t = map_.knots_x, map_.knots_t
    if x.size < 2:
        return map_
    scale = max(1.0, float(x[-1] - x[0]), float(np.abs(t).max()))
    flat = np.abs(np.diff(t)) <= 1e-12 * scale
    add = np.zeros_like(t)
    k = 0
    acc = 0.0
    i = 0
    while i < flat.size:
        if not flat[i]:
            add[i + 1] = acc
            i += 1
            continue
        j = i
        while j + 1 < flat.size and flat[j + 1]:
            j += 1
        k += 1
        lam = float(x[j + 1] - x[i])
        rate = min(eps / (lam * 2.0**k), 1.0)
        for idx in range(i + 1, j + 2):
            add[idx] = acc + rate * float(x[idx] - x[i])
        acc = add[j + 1]
        i = j + 1
    add[0] = 0.0
    # positions after a processed run keep the accumulated increment
    out = t + add
    for idx in range(1, out.size):  # guard against rounding ties
        if out[idx] <= out[idx - 1] and not flat[idx - 1]:
            out[idx] = out[idx - 1] + (t[idx] - t[idx - 1])
    return MonotoneMap(x, out)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


def oracle_solve(
    mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostSpec | None = None, grid_step: float = 1e-3
):
    """Exhaustive grid search over map values for tiny instances (n <= 4).

    The mean constraint is eliminated exactly (the last coordinate solves it),
    and the remaining coordinates range over a grid of the stated step
    spanning the joint support hull inflated by its diameter. Constraint
    filtering is relaxed by one grid step so the rounding of the true optimum
    stays admissible; the returned value is within Lip(theta) * grid_step * n
    of the optimum. Independent of the QP path by construction.
    """
    cost = cost or CostSpec.quadratic()
    n = mu.n
    if n > 4:
        raise SizeError(f"oracle handles at most 4 source atoms, got {n}")
    x, p = mu.atoms, mu.weights
    A_eq, b_eq, A_in, b_in = transport_polyhedron(mu, nu)
    m_nu = float(b_eq[0])
    lo = min(float(mu.atoms[0]), float(nu.atoms[0]))
    hi = max(float(mu.atoms[-1]), float(nu.atoms[-1]))
    diam = max(hi - lo, grid_step)
    lo, hi = lo - diam, hi + diam
    slack = grid_step

    if n == 1:
        t = np.array([m_nu])
        return float(np.dot(p, cost.value(x - t))), t

    axis = np.arange(lo, hi + grid_step, grid_step)
    g = axis.size
    total = g ** (n - 1)
    order_rows = A_in[n - 1 :]  # monotonicity rows are rechecked directly
    order_rhs = b_in[n - 1 :]
    best_val, best_t = np.inf, None
    chunk = max(1, int(2e6) // max(1, g) if n == 3 else int(2e6))
    # enumerate the free coordinates in blocks to bound memory
    flat_starts = range(0, total, chunk * (g if n == 3 else 1))
    block = chunk * (g if n == 3 else 1)
    for start in flat_starts:
        stop = min(start + block, total)
        idx = np.arange(start, stop)
        cols = []
        rem = idx
        for d in range(n - 2, -1, -1):
            cols.append(rem // (g**d))
            rem = rem % (g**d)
        free = np.stack([axis[c] for c in cols], axis=1)
        t_last = (m_nu - free @ p[:-1]) / p[-1]
        T = np.column_stack([free, t_last])
        ok = np.all(np.diff(T, axis=1) >= -slack, axis=1)
        ok &= (T[:, -1] >= lo) & (T[:, -1] <= hi)
        if order_rows.size:
            ok &= np.all(T @ order_rows.T >= order_rhs - slack, axis=1)
        if not np.any(ok):
            continue
        Tok = T[ok]
        vals = cost.value(x[None, :] - Tok) @ p
        b = int(np.argmin(vals))
        if vals[b] < best_val:
            best_val, best_t = float(vals[b]), Tok[b].copy()
    if best_t is None:
        raise SizeError("oracle grid contains no feasible point; refine the step")
    return best_val, best_t


# ---------------------------------------------------------------------------
# Projection used to generate random admissible maps
# ---------------------------------------------------------------------------


def project_admissible(
    values, mu: DiscreteMeasure, nu: DiscreteMeasure
) -> MonotoneMap:
    """Euclidean projection of candidate map values onto the admissible set
    (monotone, 1-Lipschitz, pushforward <=_c nu), as a map on mu's atoms.

    The constant map at mean(nu) is always feasible and seeds the QP.
    """
    z = np.asarray(values, dtype=float).reshape(-1)
    if z.size != mu.n:
        raise PreconditionError("need one candidate value per atom of mu")
    A_eq, b_eq, A_in, b_in = transport_polyhedron(mu, nu, lipschitz=True)
    x0 = np.full(mu.n, mean(nu))
    res = qp.solve_qp(np.eye(mu.n), -z, A_eq, b_eq, A_in, b_in, x0)
    return MonotoneMap(mu.atoms, res.x)
