"""Finitely supported probability measures on the real line.

Provides the order-theoretic toolkit used everywhere else: CDF/quantile
evaluation, potential functions u(y) = int |x-y| dm, the convex order,
irreducible intervals, Wasserstein distances and barycentric coarsening.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, OrderError

# Base relative tolerance for order comparisons; multiplied by the joint
# support scale (max(1, diameter)) at every call site.
ORDER_TOL = 1e-9

# Atoms closer than MERGE_TOL * scale are collapsed at construction.
MERGE_TOL = 1e-12


def _as_1d(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim != 1:
        raise ValueError("expected a 1-D array of reals")
    if not np.all(np.isfinite(a)):
        raise ValueError("entries must be finite")
    return a


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability measure with finitely many atoms.

    Atoms are kept strictly increasing; duplicates (within 1e-12 of the
    support scale) are merged at construction, summing their weights and
    averaging positions by mass. Weights must be positive and sum to 1
    within 1e-9 (they are then renormalized exactly).
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = _as_1d(self.atoms)
        weights = _as_1d(self.weights)
        if atoms.shape != weights.shape:
            raise ValueError("atoms and weights must have equal length")
        if atoms.size == 0:
            raise ValueError("a measure needs at least one atom")
        if np.any(weights < -1e-15):
            raise ValueError("weights must be positive")
        keep = weights > 0.0
        if not np.any(keep):
            raise ValueError("all weights vanish")
        atoms, weights = atoms[keep], weights[keep]
        order = np.argsort(atoms, kind="stable")
        atoms, weights = atoms[order], weights[order]
        span = float(atoms[-1] - atoms[0])
        tol = MERGE_TOL * max(1.0, span)
        if atoms.size > 1 and np.any(np.diff(atoms) <= tol):
            atoms, weights = _merge_close(atoms, weights, tol)
        total = float(weights.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total!r}, not 1")
        weights = weights / total
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.atoms.size

    @property
    def diameter(self) -> float:
        return float(self.atoms[-1] - self.atoms[0])

    def cumulative(self) -> np.ndarray:
        """Cumulative weights; the last entry is exactly 1."""
        c = np.cumsum(self.weights)
        c[-1] = 1.0
        return c

    def cdf(self, y) -> np.ndarray:
        """F(y) = mass of (-inf, y]."""
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(self.atoms, y, side="right")
        cum = np.concatenate(([0.0], self.cumulative()))
        return cum[idx]

    def shift(self, h: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.atoms + float(h), self.weights)

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (
            self.n == other.n
            and bool(np.array_equal(self.atoms, other.atoms))
            and bool(np.array_equal(self.weights, other.weights))
        )


def _merge_close(atoms: np.ndarray, weights: np.ndarray, tol: float):
    """Group sorted atoms closer than tol; barycenter position, summed mass."""
    out_a, out_w = [], []
    ca, cw = atoms[0] * weights[0], weights[0]
    last = atoms[0]
    for a, w in zip(atoms[1:], weights[1:]):
        if a - last <= tol:
            ca += a * w
            cw += w
        else:
            out_a.append(ca / cw)
            out_w.append(cw)
            ca, cw = a * w, w
        last = a
    out_a.append(ca / cw)
    out_w.append(cw)
    return np.array(out_a), np.array(out_w)


def support_scale(*measures: DiscreteMeasure) -> float:
    """max(1, diameter of the joint support) — the unit for tolerances."""
    lo = min(float(m.atoms[0]) for m in measures)
    hi = max(float(m.atoms[-1]) for m in measures)
    return max(1.0, hi - lo)


def measures_close(a: DiscreteMeasure, b: DiscreteMeasure, tol: float = 1e-9) -> bool:
    """Equality of measures up to atom positions within tol*scale and weights within tol."""
    if a.n != b.n:
        return False
    s = support_scale(a, b)
    return bool(
        np.all(np.abs(a.atoms - b.atoms) <= tol * s)
        and np.all(np.abs(a.weights - b.weights) <= tol)
    )


def mean(m: DiscreteMeasure) -> float:
    """Barycenter sum w_i x_i."""
    return float(np.dot(m.weights, m.atoms))


def quantile(m: DiscreteMeasure, level: float) -> float:
    """Left-continuous inverse CDF: inf{x : F(x) >= level}, level in (0, 1]."""
    if not 0.0 < level <= 1.0:
        raise DomainError(f"quantile level must lie in (0, 1], got {level!r}")
    idx = int(np.searchsorted(m.cumulative(), level, side="left"))
    idx = min(idx, m.n - 1)
    return float(m.atoms[idx])


def quantiles_at(m: DiscreteMeasure, levels: np.ndarray) -> np.ndarray:
    """Vectorized left-continuous inverse CDF (no domain check)."""
    idx = np.searchsorted(m.cumulative(), levels, side="left")
    return m.atoms[np.minimum(idx, m.n - 1)]


def potential_at(m: DiscreteMeasure, y) -> np.ndarray:
    """u_m(y) = sum_i w_i |x_i - y|, exactly, via prefix sums."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w, x = m.weights, m.atoms
    W = np.concatenate(([0.0], np.cumsum(w)))
    S = np.concatenate(([0.0], np.cumsum(w * x)))
    k = np.searchsorted(x, y, side="right")
    # below-y part contributes y*W_k - S_k, above-y part S_n - S_k - y*(1-W_k)
    return y * (2.0 * W[k] - W[-1]) + S[-1] - 2.0 * S[k]


@dataclass(frozen=True)
class PiecewiseLinearFn:
    """Piecewise-linear function stored by (breakpoint, value) pairs.

    Linear with slope left_slope on (-inf, b_1] and right_slope on
    [b_m, inf). With convex=True the chain of slopes must be nondecreasing.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    left_slope: float = -1.0
    right_slope: float = 1.0
    convex: bool = field(default=False, compare=False)

    def __post_init__(self):
        bp = _as_1d(self.breakpoints)
        vals = _as_1d(self.values)
        if bp.shape != vals.shape or bp.size == 0:
            raise ValueError("breakpoints/values must be equal-length, nonempty")
        if bp.size > 1 and np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if self.convex:
            slopes = self.slope_chain(bp, vals, self.left_slope, self.right_slope)
            span = max(1.0, float(bp[-1] - bp[0]), float(np.abs(vals).max()))
            if np.any(np.diff(slopes) < -1e-9 * span):
                raise ValueError("slopes must be nondecreasing for a convex fn")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @staticmethod
    def slope_chain(bp, vals, left, right) -> np.ndarray:
        interior = np.diff(vals) / np.diff(bp) if bp.size > 1 else np.empty(0)
        return np.concatenate(([left], interior, [right]))

    def slopes(self) -> np.ndarray:
        return self.slope_chain(self.breakpoints, self.values, self.left_slope, self.right_slope)

    def __call__(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        bp, vals = self.breakpoints, self.values
        out = np.interp(y, bp, vals)
        left = y < bp[0]
        right = y > bp[-1]
        out[left] = vals[0] + self.left_slope * (y[left] - bp[0])
        out[right] = vals[-1] + self.right_slope * (y[right] - bp[-1])
        return out


def potential(m: DiscreteMeasure) -> PiecewiseLinearFn:
    """Potential function of m: convex, kinks at the atoms, slopes -1/+1 at infinity."""
    vals = potential_at(m, m.atoms)
    fn = PiecewiseLinearFn(m.atoms, vals, -1.0, 1.0, convex=True)
    mu = mean(m)
    if np.any(vals < np.abs(m.atoms - mu) - 1e-12 * support_scale(m)):
        raise AssertionError("potential dropped below |y - mean|")  # unreachable
    return fn


def convex_order_leq(a: DiscreteMeasure, b: DiscreteMeasure, tol: float = ORDER_TOL) -> bool:
    """True iff a <=_c b: equal means and u_a <= u_b everywhere.

    Checking u_a <= u_b at the atoms of b suffices: the difference of the two
    piecewise-linear potentials has local maxima only at downward kinks, which
    sit at b's atoms, and equal means pin the behaviour at infinity.
    """
    s = support_scale(a, b)
    if abs(mean(a) - mean(b)) > tol * s:
        return False
    gap = potential_at(a, b.atoms) - potential_at(b, b.atoms)
    return bool(np.all(gap <= tol * s))


@dataclass(frozen=True)
class Interval:
    """Open interval (lo, hi), lo < hi."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"degenerate interval ({self.lo}, {self.hi})")

    def contains(self, y: float, margin: float = 0.0) -> bool:
        """Strict interior membership, shrunk by margin on both sides."""
        return self.lo + margin < y < self.hi - margin

    @property
    def length(self) -> float:
        return self.hi - self.lo


def irreducible_components(
    a: DiscreteMeasure, b: DiscreteMeasure, tol: float = ORDER_TOL, strictness: float | None = None
) -> list[Interval]:
    """Maximal open intervals where u_a < u_b strictly, for a <=_c b.

    Endpoints are exact roots of the piecewise-linear difference u_b - u_a on
    the segments between merged atom grids. Raises OrderError when the
    convex-order precondition fails (checked at tol). The strict set is
    thresholded at strictness * scale, defaulting to tol; structural
    consumers that must match the float-exact set {u_a < u_b} pass 0.
    """
    if not convex_order_leq(a, b, tol):
        raise OrderError("irreducible components require a <=_c b")
    s = support_scale(a, b)
    thr = (tol if strictness is None else strictness) * s
    grid = np.union1d(a.atoms, b.atoms)
    diff = potential_at(b, grid) - potential_at(a, grid)
    above = diff > thr
    comps: list[Interval] = []
    i = 0
    while i < grid.size:
        if not above[i]:
            i += 1
            continue
        j = i
        while j + 1 < grid.size and above[j + 1]:
            j += 1
        lo = _snap_to_grid(_root_toward(grid, diff, i, -1), grid, thr)
        hi = _snap_to_grid(_root_toward(grid, diff, j, +1), grid, thr)
        if hi > lo:
            comps.append(Interval(lo, hi))
        i = j + 1
    return comps


def _snap_to_grid(root: float, grid: np.ndarray, tol: float) -> float:
    """Interpolated roots within tol of an atom are that atom: the potential
    difference kinks there, so the atom is the exact touch point."""
    k = int(np.argmin(np.abs(grid - root)))
    return float(grid[k]) if abs(float(grid[k]) - root) <= tol else root


def _root_toward(grid, diff, k, step):
    """Root of the linear piece of diff next to grid[k] in direction step."""
    k2 = k + step
    if k2 < 0 or k2 >= grid.size:
        return float(grid[k])  # difference positive up to the support edge
    d0, d1 = diff[k], diff[k2]
    if d1 >= d0:  # not descending toward zero; treat neighbour as the touch point
        return float(grid[k2])
    t = d0 / (d0 - d1)
    root = grid[k] + t * (grid[k2] - grid[k])
    lo, hi = sorted((float(grid[k]), float(grid[k2])))
    return float(min(max(root, lo), hi))


def wasserstein(a: DiscreteMeasure, b: DiscreteMeasure, rho: float = 1.0) -> float:
    """rho-Wasserstein distance, exact on the merged cumulative-weight grid."""
    if rho < 1.0:
        raise DomainError(f"wasserstein order must be >= 1, got {rho!r}")
    levels = np.union1d(a.cumulative(), b.cumulative())
    widths = np.diff(np.concatenate(([0.0], levels)))
    # left-continuous quantiles are constant on each level block; evaluate at
    # the block's upper level
    qa = quantiles_at(a, levels)
    qb = quantiles_at(b, levels)
    gaps = np.abs(qa - qb)
    if rho == 1.0:
        return float(np.dot(widths, gaps))
    return float(np.dot(widths, gaps**rho) ** (1.0 / rho))


def quantize(m: DiscreteMeasure, delta: float) -> DiscreteMeasure:
    """Barycentric coarsening into half-open bins [k*delta, (k+1)*delta).

    The result is below m in convex order, keeps the mean, and moves no atom
    by more than delta.
    """
    if not delta > 0.0:
        raise DomainError(f"bin width must be positive, got {delta!r}")
    idx = np.floor(m.atoms / delta).astype(np.int64)
    return _bin_barycenters(m, idx)


def _bin_barycenters(m: DiscreteMeasure, idx: np.ndarray) -> DiscreteMeasure:
    keys, inverse = np.unique(idx, return_inverse=True)
    w = np.zeros(keys.size)
    wx = np.zeros(keys.size)
    np.add.at(w, inverse, m.weights)
    np.add.at(wx, inverse, m.weights * m.atoms)
    return DiscreteMeasure(wx / w, w)


def pushforward(m: DiscreteMeasure, values) -> DiscreteMeasure:
    """Image measure of m under the map atom_i -> values_i (duplicates merged)."""
    values = _as_1d(values)
    if values.shape != m.atoms.shape:
        raise ValueError("need one image per atom")
    return DiscreteMeasure(values, m.weights)


# ---------------------------------------------------------------------------
# Piecewise-linear potential arithmetic (pointwise max, lower convex envelope)
# ---------------------------------------------------------------------------


def pl_max(f: PiecewiseLinearFn, g: PiecewiseLinearFn) -> PiecewiseLinearFn:
    """Pointwise maximum of two convex PL functions with slopes -1/+1 at infinity."""
    _require_potential_shape(f, g)
    grid = np.union1d(f.breakpoints, g.breakpoints)
    fv, gv = f(grid), g(grid)
    # insert crossing points interior to segments where the sign of f-g flips
    d = fv - gv
    cross = []
    for k in range(grid.size - 1):
        if d[k] * d[k + 1] < 0.0:
            t = d[k] / (d[k] - d[k + 1])
            cross.append(grid[k] + t * (grid[k + 1] - grid[k]))
    if cross:
        grid = np.union1d(grid, np.array(cross))
        fv, gv = f(grid), g(grid)
    vals = np.maximum(fv, gv)
    bp, vals = _drop_collinear(grid, vals, -1.0, 1.0)
    return PiecewiseLinearFn(bp, vals, -1.0, 1.0, convex=True)


def lower_convex_envelope(f: PiecewiseLinearFn, g: PiecewiseLinearFn) -> PiecewiseLinearFn:
    """Greatest convex function below both f and g (both convex, slopes -1/+1).

    Computed as the lower hull of the graph points of min(f, g) on the merged
    breakpoint grid, with sentinel points far enough out that both functions
    are in their linear tails.
    """
    _require_potential_shape(f, g)
    grid = np.union1d(f.breakpoints, g.breakpoints)
    pad = 1.0 + float(grid[-1] - grid[0])
    grid = np.concatenate(([grid[0] - pad], grid, [grid[-1] + pad]))
    vals = np.minimum(f(grid), g(grid))
    hull_x, hull_y = _lower_hull(grid, vals)
    # strip the sentinels; they only fix the +-1 tail slopes
    keep = slice(1, -1) if hull_x.size > 2 else slice(0, 0)
    bp, vv = hull_x[keep], hull_y[keep]
    if bp.size == 0:  # hull collapsed to the two tails meeting in one kink
        t = 0.5 * (hull_x[0] + hull_x[1])
        bp = np.array([t])
        vv = np.array([hull_y[0] - (t - hull_x[0])])
    bp, vv = _drop_collinear(bp, vv, -1.0, 1.0)
    return PiecewiseLinearFn(bp, vv, -1.0, 1.0, convex=True)


def _require_potential_shape(*fns: PiecewiseLinearFn):
    for fn in fns:
        if not (fn.left_slope == -1.0 and fn.right_slope == 1.0):
            raise ValueError("operation requires potential-shaped functions")


def _lower_hull(x: np.ndarray, y: np.ndarray):
    """Lower convex hull of points sorted by x (strict turns only)."""
    hx, hy = [], []
    for xi, yi in zip(x, y):
        while len(hx) >= 2:
            cross = (hx[-1] - hx[-2]) * (yi - hy[-2]) - (xi - hx[-2]) * (hy[-1] - hy[-2])
            if cross <= 0.0:  # middle point above or on the chord: drop it
                hx.pop()
                hy.pop()
            else:
                break
        hx.append(float(xi))
        hy.append(float(yi))
    return np.array(hx), np.array(hy)


def _drop_collinear(bp: np.ndarray, vals: np.ndarray, left: float, right: float):
    """Remove breakpoints whose left and right slopes agree (within 1e-13)."""
    if bp.size == 1:
        return bp, vals
    slopes = PiecewiseLinearFn.slope_chain(bp, vals, left, right)
    jump = np.diff(slopes)
    keep = jump > 1e-13
    if not np.any(keep):
        keep[np.argmax(jump)] = True
    return bp[keep], vals[keep]


def measure_from_potential(u: PiecewiseLinearFn) -> DiscreteMeasure:
    """Recover the measure whose potential is u (weights = slope jumps / 2).

    Slope jumps below 1e-11 are treated as collinearity noise and dropped;
    the constructor renormalizes the remainder.
    """
    _require_potential_shape(u)
    jumps = np.diff(u.slopes())
    keep = jumps > 1e-11
    return DiscreteMeasure(u.breakpoints[keep], jumps[keep] / 2.0)


# ---------------------------------------------------------------------------
# Measure CSV I/O: one "atom,weight" pair per line, header optional
# ---------------------------------------------------------------------------


def parse_measure_csv(text: str) -> DiscreteMeasure:
    atoms, weights = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'atom,weight', got {raw!r}")
        try:
            a, w = float(parts[0]), float(parts[1])
        except ValueError:
            if lineno == 1:  # header row
                continue
            raise ValueError(f"line {lineno}: non-numeric entry in {raw!r}") from None
        atoms.append(a)
        weights.append(w)
    if not atoms:
        raise ValueError("no data rows in measure CSV")
    return DiscreteMeasure(np.array(atoms), np.array(weights))


def read_measure_csv(path) -> DiscreteMeasure:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_measure_csv(fh.read())


def write_measure_csv(m: DiscreteMeasure, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("atom,weight\n")
        for a, w in zip(m.atoms, m.weights):
            fh.write(f"{a:.16e},{w:.16e}\n")
