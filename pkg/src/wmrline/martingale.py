"""Martingale couplings between convex-ordered discrete measures.

Construction is a pure feasibility problem (marginal and barycenter
equalities, nonnegative masses) solved by a dense phase-1 simplex with
Bland's rule, so the returned vertex is deterministic. The module also
provides composition with a transport map, decomposition over irreducible
intervals, barycenter maps, optimality certificates, and the two-point
competitor construction used to falsify suboptimal couplings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CompositionError,
    ConsistencyError,
    CouplingError,
    DomainError,
    OrderError,
    StructureError,
)
from .measures import (
    DiscreteMeasure,
    Interval,
    convex_order_leq,
    irreducible_components,
    mean,
    measures_close,
    potential_at,
    support_scale,
)
from .wmr import CostSpec, MonotoneMap, weak_monotone_rearrangement

MARGINAL_TOL = 1e-10
BARYCENTER_TOL = 1e-9


@dataclass(frozen=True)
class Coupling:
    """Sparse joint distribution over pairs of atoms of (source, target)."""

    source: DiscreteMeasure
    target: DiscreteMeasure
    rows: np.ndarray  # source atom indices
    cols: np.ndarray  # target atom indices
    mass: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        mass = np.asarray(self.mass, dtype=float).reshape(-1)
        if not (rows.size == cols.size == mass.size):
            raise CouplingError("rows, cols and mass must have equal length")
        if np.any(mass <= 0.0):
            raise CouplingError("all coupling masses must be positive")
        order = np.lexsort((cols, rows))
        rows, cols, mass = rows[order], cols[order], mass[order]
        for arr in (rows, cols, mass):
            arr.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "mass", mass)
        rs = np.zeros(self.source.n)
        cs = np.zeros(self.target.n)
        np.add.at(rs, rows, mass)
        np.add.at(cs, cols, mass)
        if np.abs(rs - self.source.weights).max() > MARGINAL_TOL:
            raise CouplingError("row sums do not match the source weights")
        if np.abs(cs - self.target.weights).max() > MARGINAL_TOL:
            raise CouplingError("column sums do not match the target weights")

    def conditional(self, i: int) -> DiscreteMeasure:
        """Normalized conditional distribution of the i-th source atom."""
        sel = self.rows == i
        if not np.any(sel):
            raise CouplingError(f"source atom {i} carries no mass")
        w = self.mass[sel]
        return DiscreteMeasure(self.target.atoms[self.cols[sel]], w / w.sum())

    def row_barycenters(self) -> np.ndarray:
        num = np.zeros(self.source.n)
        den = np.zeros(self.source.n)
        np.add.at(num, self.rows, self.mass * self.target.atoms[self.cols])
        np.add.at(den, self.rows, self.mass)
        return num / den

    def cost(self, cost: CostSpec) -> float:
        """Barycentric transport cost sum_i p_i theta(x_i - barycenter_i)."""
        bary = self.row_barycenters()
        return float(np.dot(self.source.weights, cost.value(self.source.atoms - bary)))


@dataclass(frozen=True)
class MartingaleCoupling(Coupling):
    """Coupling whose conditional barycenters equal their source atoms."""

    def __post_init__(self):
        super().__post_init__()
        s = support_scale(self.source, self.target)
        gap = np.abs(self.row_barycenters() - self.source.atoms)
        if gap.max() > BARYCENTER_TOL * s:
            raise CouplingError(
                f"martingale barycenter violated by {gap.max():.3e} (tol {BARYCENTER_TOL * s:.3e})"
            )


# ---------------------------------------------------------------------------
# Phase-1 simplex (dense, Bland's rule)
# ---------------------------------------------------------------------------


def _phase1_simplex(A: np.ndarray, b: np.ndarray, tol: float = 1e-11):
    """Find x >= 0 with A x = b (b >= 0) minimizing the artificial mass.

    Plain dense tableau with Bland's entering/leaving rule: deterministic and
    cycle-free. Returns (x, residual_objective).
    """
    m, n = A.shape
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -A.sum(axis=0)  # reduced costs with the artificial basis
    T[m, -1] = -b.sum()
    basis = list(range(n, n + m))

    max_pivots = 50 * (n + m + 1)
    for _ in range(max_pivots):
        enter = -1
        for j in range(n):  # artificials never re-enter
            if T[m, j] < -tol:
                enter = j
                break
        if enter < 0:
            break
        col = T[:m, enter]
        # pivots below the floor poison the tableau; fall back to the best
        # available element only when nothing safe exists
        for piv_floor in (1e-7 * max(1.0, float(col.max(initial=0.0))), tol):
            ratios = np.full(m, np.inf)
            pos = col > piv_floor
            ratios[pos] = T[:m, -1][pos] / col[pos]
            if np.isfinite(ratios).any():
                break
        best = np.inf
        leave = -1
        for r in range(m):
            if ratios[r] < best - 1e-15 or (
                ratios[r] <= best + 1e-15 and leave >= 0 and basis[r] < basis[leave]
            ):
                if np.isfinite(ratios[r]):
                    best = ratios[r]
                    leave = r
        if leave < 0:
            raise ConsistencyError("phase-1 simplex: unbounded pivot column")
        piv = T[leave, enter]
        T[leave] /= piv
        for r in range(m + 1):
            if r != leave and T[r, enter] != 0.0:
                T[r] -= T[r, enter] * T[leave]
        basis[leave] = enter
    x = np.zeros(n)
    for r, j in enumerate(basis):
        if j < n:
            x[j] = T[r, -1]
    return x, float(-T[m, -1])


def _comonotone_entries(a: DiscreteMeasure, b: DiscreteMeasure):
    """Entries of the quantile coupling on the merged level grid."""
    ca, cb = a.cumulative(), b.cumulative()
    levels = np.union1d(ca, cb)
    widths = np.diff(np.concatenate(([0.0], levels)))
    ia = np.minimum(np.searchsorted(ca, levels, side="left"), a.n - 1)
    ib = np.minimum(np.searchsorted(cb, levels, side="left"), b.n - 1)
    keep = widths > 1e-15
    return ia[keep], ib[keep], widths[keep]


def build_martingale_coupling(eta: DiscreteMeasure, nu: DiscreteMeasure) -> MartingaleCoupling:
    """Any feasible martingale coupling of eta <=_c nu (Strassen existence).

    Solves the linear feasibility problem with a phase-1 simplex under
    Bland's pivoting, so the output vertex is deterministic given the input
    order. Raises OrderError when eta <=_c nu fails.
    """
    if not convex_order_leq(eta, nu):
        raise OrderError("martingale coupling requires eta <=_c nu")
    n, m = eta.n, nu.n
    p, q = eta.weights, nu.weights
    lo = min(float(eta.atoms[0]), float(nu.atoms[0]))
    hi = max(float(eta.atoms[-1]), float(nu.atoms[-1]))
    if hi - lo <= 1e-9 * support_scale(eta, nu):
        # everything sits within order tolerance of one point: any coupling is
        # a martingale coupling there; return the comonotone one
        rows, cols, mass = _comonotone_entries(eta, nu)
        return MartingaleCoupling(eta, nu, rows, cols, mass)
    # martingale couplings are invariant under a common affine rescaling of
    # both marginals; solving in [-1, 1] coordinates conditions the tableau
    half = 0.5 * (hi - lo)
    x = (eta.atoms - 0.5 * (lo + hi)) / half
    y = (nu.atoms - 0.5 * (lo + hi)) / half

    N = n * m
    rows = []
    rhs = []
    for i in range(n):  # row sums
        r = np.zeros(N)
        r[i * m : (i + 1) * m] = 1.0
        rows.append(r)
        rhs.append(p[i])
    for j in range(m):  # column sums
        r = np.zeros(N)
        r[j::m] = 1.0
        rows.append(r)
        rhs.append(q[j])
    for i in range(n):  # recentred barycenters: sum_j mass_ij (y_j - x_i) = 0
        r = np.zeros(N)
        r[i * m : (i + 1) * m] = y - x[i]
        rows.append(r)
        rhs.append(0.0)
    A = np.array(rows)
    b = np.array(rhs)

    sol, resid = _phase1_simplex(A, b)
    # the support polish below restores machine-precision feasibility, so the
    # tableau only needs to land in its basin; the coupling constructor is
    # the hard gate on marginals and barycenters
    if resid > 1e-8:
        raise ConsistencyError(
            "simplex failed on a convex-ordered pair (should be impossible); "
            f"artificial mass {resid:.3e}; potentials at target atoms: "
            f"source {potential_at(eta, nu.atoms)!r} vs target {potential_at(nu, nu.atoms)!r}"
        )
    idx = np.flatnonzero(sol > 1e-12)
    # polish the vertex: tableau arithmetic drifts at ~1e-8 on larger
    # instances, while the support system pins the masses to machine accuracy
    refined = np.linalg.lstsq(A[:, idx], b, rcond=None)[0]
    if np.all(refined > 0.0) and np.abs(A[:, idx] @ refined - b).max() <= np.abs(
        A[:, idx] @ sol[idx] - b
    ).max():
        masses = refined
    else:
        masses = sol[idx]
    keep = masses > 1e-12
    return MartingaleCoupling(eta, nu, idx[keep] // m, idx[keep] % m, masses[keep])


def identity_coupling(m: DiscreteMeasure) -> MartingaleCoupling:
    idx = np.arange(m.n)
    return MartingaleCoupling(m, m, idx, idx, m.weights.copy())


def product_coupling(a: DiscreteMeasure, b: DiscreteMeasure) -> Coupling:
    rows = np.repeat(np.arange(a.n), b.n)
    cols = np.tile(np.arange(b.n), a.n)
    return Coupling(a, b, rows, cols, np.outer(a.weights, b.weights).ravel())


def compose_with_map(mu: DiscreteMeasure, map_: MonotoneMap, mg: Coupling) -> Coupling:
    """Concatenate the deterministic transport x -> map(x) with mg.

    mg.source must equal the pushforward of mu under the map; the composed
    coupling sends each atom x_i of mu to the conditional of its image, so
    mass(i, j) = p_i * mg(image row, j) / image weight.
    """
    images = map_(mu.atoms)
    s = support_scale(mu, mg.source)
    pos = np.searchsorted(mg.source.atoms, images)
    pos = np.clip(pos, 0, mg.source.n - 1)
    left = np.clip(pos - 1, 0, mg.source.n - 1)
    pos = np.where(
        np.abs(mg.source.atoms[left] - images) < np.abs(mg.source.atoms[pos] - images), left, pos
    )
    if np.abs(mg.source.atoms[pos] - images).max() > 1e-9 * s:
        raise CompositionError("mg.source does not match the pushforward of mu under the map")
    got = np.zeros(mg.source.n)
    np.add.at(got, pos, mu.weights)
    if np.abs(got - mg.source.weights).max() > 1e-9:
        raise CompositionError("pushforward weights do not match mg.source")

    rows_out, cols_out, mass_out = [], [], []
    for i in range(mu.n):
        r = pos[i]
        sel = mg.rows == r
        share = mu.weights[i] / mg.source.weights[r]
        rows_out.append(np.full(int(sel.sum()), i))
        cols_out.append(mg.cols[sel])
        mass_out.append(mg.mass[sel] * share)
    return Coupling(
        mu,
        mg.target,
        np.concatenate(rows_out),
        np.concatenate(cols_out),
        np.concatenate(mass_out),
    )


# ---------------------------------------------------------------------------
# Decomposition over irreducible intervals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MartingaleDecomposition:
    components: tuple  # (Interval, entry index array) pairs
    fixed: np.ndarray  # indices of diagonal entries on F
    ambiguous_sources: tuple  # source atoms sitting exactly on a component endpoint


def decompose_martingale(mg: MartingaleCoupling, tol: float = 1e-9) -> MartingaleDecomposition:
    """Assign each mass entry to the irreducible interval of its source atom.

    Entries with source in the complement F must be diagonal; component
    entries must target the closure of their interval. Any violation raises
    StructureError naming the offending entry, which signals a non-martingale
    or otherwise inconsistent input.

    The intervals are computed at zero strictness: the decomposition theorem
    constrains the coupling through the float-exact set
    {u_source < u_target} of the pair as given, and any positive threshold
    would split components at noise-level touch points and misflag legal
    mass movements.
    """
    comps = irreducible_components(mg.source, mg.target, strictness=0.0)
    s = support_scale(mg.source, mg.target)
    margin = tol * s
    src = mg.source.atoms[mg.rows]
    tgt = mg.target.atoms[mg.cols]

    comp_entries: list[list[int]] = [[] for _ in comps]
    fixed: list[int] = []
    ambiguous: set[float] = set()
    endpoints = [e for iv in comps for e in (iv.lo, iv.hi)]
    for k in range(mg.mass.size):
        x_pos, y_pos = float(src[k]), float(tgt[k])
        where = next((c for c, iv in enumerate(comps) if iv.contains(x_pos, margin)), None)
        if where is None:
            if any(abs(x_pos - e) <= margin for e in endpoints):
                ambiguous.add(x_pos)
            if abs(y_pos - x_pos) > margin:
                raise StructureError(
                    f"entry {k}: source {x_pos} lies in the fixed set F but moves to {y_pos}"
                )
            fixed.append(k)
        else:
            iv = comps[where]
            if not (iv.lo - margin <= y_pos <= iv.hi + margin):
                raise StructureError(
                    f"entry {k}: source {x_pos} in ({iv.lo}, {iv.hi}) targets {y_pos} "
                    "outside the interval closure"
                )
            comp_entries[where].append(k)
    return MartingaleDecomposition(
        components=tuple(
            (iv, np.array(entries, dtype=np.int64)) for iv, entries in zip(comps, comp_entries)
        ),
        fixed=np.array(fixed, dtype=np.int64),
        ambiguous_sources=tuple(sorted(ambiguous)),
    )


def barycenter_map(pi: Coupling) -> np.ndarray:
    """Knot list (source atom, conditional mean) per source atom.

    Monotonicity is not enforced; callers decide whether the knots form an
    increasing map.
    """
    return np.column_stack([pi.source.atoms, pi.row_barycenters()])


@dataclass(frozen=True)
class CertificateReport:
    ok: bool
    map_matches_rearrangement: bool
    second_stage_martingale: bool
    max_map_gap: float
    violations: tuple = ()


def optimality_certificate(
    pi: Coupling,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost: CostSpec | None = None,
    tol: float = 1e-7,
) -> CertificateReport:
    """A coupling is optimal iff its barycenter map is the weak monotone
    rearrangement and the induced second stage is a martingale coupling."""
    cost = cost or CostSpec.quadratic()
    if not (measures_close(pi.source, mu) and measures_close(pi.target, nu)):
        raise CouplingError("coupling marginals do not match (mu, nu)")
    s = support_scale(mu, nu)
    knots = barycenter_map(pi)
    sol = weak_monotone_rearrangement(mu, nu)
    gap = float(np.abs(knots[:, 1] - sol.map(mu.atoms)).max())
    map_ok = gap <= tol * s

    viol = []
    if not map_ok:
        viol.append(f"barycenter map deviates from the rearrangement by {gap:.3e}")
    second_ok = True
    try:
        bary = pi.row_barycenters()
        push = DiscreteMeasure(bary, mu.weights)
        # regroup entries by merged image atom
        pos = np.searchsorted(push.atoms, bary[pi.rows])
        pos = np.clip(pos, 0, push.n - 1)
        left = np.clip(pos - 1, 0, push.n - 1)
        pos = np.where(
            np.abs(push.atoms[left] - bary[pi.rows]) < np.abs(push.atoms[pos] - bary[pi.rows]),
            left,
            pos,
        )
        agg: dict[tuple[int, int], float] = {}
        for r, cidx, mass in zip(pos, pi.cols, pi.mass):
            agg[(int(r), int(cidx))] = agg.get((int(r), int(cidx)), 0.0) + float(mass)
        keys = np.array(sorted(agg))
        MartingaleCoupling(push, nu, keys[:, 0], keys[:, 1], np.array([agg[tuple(k)] for k in keys]))
    except (CouplingError, ValueError) as err:
        second_ok = False
        viol.append(f"second stage is not a martingale coupling: {err}")
    return CertificateReport(map_ok and second_ok, map_ok, second_ok, gap, tuple(viol))


# ---------------------------------------------------------------------------
# Overlap test and the two-point competitor construction
# ---------------------------------------------------------------------------


def supports_overlap(p: DiscreteMeasure, q: DiscreteMeasure) -> bool:
    """int(co supp p) meets co supp q, or vice versa."""

    def hit(open_lo, open_hi, lo, hi):
        if open_lo >= open_hi:
            return False  # degenerate hull has empty interior
        return max(open_lo, lo) < min(open_hi, hi) or (lo == hi and open_lo < lo < open_hi)

    p_lo, p_hi = float(p.atoms[0]), float(p.atoms[-1])
    q_lo, q_hi = float(q.atoms[0]), float(q.atoms[-1])
    return hit(p_lo, p_hi, q_lo, q_hi) or hit(q_lo, q_hi, p_lo, p_hi)


def _lower_slice(m: DiscreteMeasure, level: float):
    """Atoms/weights of m restricted below its level-quantile, boundary included
    with just enough mass that the slice totals exactly level."""
    if level <= 0.0:
        return np.empty(0), np.empty(0)
    cum = m.cumulative()
    k = int(np.searchsorted(cum, level, side="left"))
    k = min(k, m.n - 1)
    below = cum[k - 1] if k > 0 else 0.0
    atoms = list(m.atoms[:k])
    weights = list(m.weights[:k])
    boundary = level - below
    if boundary > 0.0:
        atoms.append(float(m.atoms[k]))
        weights.append(boundary)
    return np.array(atoms), np.array(weights)


def competitor_curve(p: DiscreteMeasure, q: DiscreteMeasure, alpha: float):
    """The pair (p_a, q_a) with p_a + q_a = p + q, (p_1, q_1) = (p, q).

    p_a carries the lower alpha-slice of p plus the lower (1-alpha)-slice of
    q; q_a is the complementary pair of upper slices. When the supports of p
    and q overlap, the two means move strictly in opposite directions as
    alpha varies near 1, which is what makes the pair a cost competitor.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha!r}")
    pa_lo, pw_lo = _lower_slice(p, alpha)
    qa_lo, qw_lo = _lower_slice(q, 1.0 - alpha)

    def upper(meas, lo_atoms, lo_weights):
        w = meas.weights.copy()
        for a, lw in zip(lo_atoms, lo_weights):
            i = int(np.searchsorted(meas.atoms, a))
            w[i] -= lw
        keep = w > 1e-15
        return meas.atoms[keep], w[keep]

    pu_a, pu_w = upper(p, pa_lo, pw_lo)
    qu_a, qu_w = upper(q, qa_lo, qw_lo)
    p_alpha = DiscreteMeasure(np.concatenate([pa_lo, qa_lo]), np.concatenate([pw_lo, qw_lo]))
    q_alpha = DiscreteMeasure(np.concatenate([pu_a, qu_a]), np.concatenate([pu_w, qu_w]))
    return p_alpha, q_alpha


@dataclass(frozen=True)
class TwoPointImprovement:
    i: int
    j: int
    alpha: float
    old_cost: float
    new_cost: float

    @property
    def improvement(self) -> float:
        return self.old_cost - self.new_cost


def find_two_point_improvement(
    mu: DiscreteMeasure,
    map_values,
    mg: Coupling,
    cost: CostSpec,
    alphas=None,
) -> TwoPointImprovement | None:
    """Falsification probe for maps breaking the unit-slope geometry.

    Scans source pairs x_i < x_j whose displacements are out of order
    (x_i - t_i < x_j - t_j) and whose conditional target distributions
    overlap, then searches the competitor curve for a strictly cheaper
    reallocation of the two conditionals. Returns the first strict
    improvement found, or None.
    """
    t = np.asarray(map_values, dtype=float)
    x = mu.atoms
    s = support_scale(mu, mg.target)
    if alphas is None:
        alphas = np.linspace(0.999, 0.5, 40)
    pos = np.searchsorted(mg.source.atoms, t)
    pos = np.clip(pos, 0, mg.source.n - 1)
    left = np.clip(pos - 1, 0, mg.source.n - 1)
    pos = np.where(np.abs(mg.source.atoms[left] - t) < np.abs(mg.source.atoms[pos] - t), left, pos)

    best = None
    for i in range(mu.n):
        for j in range(i + 1, mu.n):
            if (x[i] - t[i]) >= (x[j] - t[j]) - 1e-12 * s:
                continue
            p = mg.conditional(int(pos[i]))
            q = mg.conditional(int(pos[j]))
            if not supports_overlap(p, q):
                continue
            old = float(cost.value(np.array([x[i] - mean(p)]))[0]) + float(
                cost.value(np.array([x[j] - mean(q)]))[0]
            )
            for alpha in alphas:
                pa, qa = competitor_curve(p, q, float(alpha))
                new = float(cost.value(np.array([x[i] - mean(pa)]))[0]) + float(
                    cost.value(np.array([x[j] - mean(qa)]))[0]
                )
                if new < old - 1e-12 * max(1.0, abs(old)):
                    cand = TwoPointImprovement(i, j, float(alpha), old, new)
                    if best is None or cand.improvement > best.improvement:
                        best = cand
                    break
    return best


# ---------------------------------------------------------------------------
# CSV serialization: one `source_atom,target_atom,mass` triplet per line
# ---------------------------------------------------------------------------


def coupling_to_csv(pi: Coupling) -> str:
    lines = ["source_atom,target_atom,mass"]
    for r, c, m in zip(pi.rows, pi.cols, pi.mass):
        lines.append(f"{pi.source.atoms[r]:.16e},{pi.target.atoms[c]:.16e},{m:.16e}")
    return "\n".join(lines) + "\n"


def parse_coupling_csv(text: str, source: DiscreteMeasure, target: DiscreteMeasure) -> Coupling:
    rows, cols, mass = [], [], []
    s = support_scale(source, target)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 3 comma-separated fields")
        try:
            a, b, m = (float(v) for v in parts)
        except ValueError:
            if lineno == 1:
                continue
            raise ValueError(f"line {lineno}: non-numeric entry") from None
        i = int(np.argmin(np.abs(source.atoms - a)))
        j = int(np.argmin(np.abs(target.atoms - b)))
        if abs(source.atoms[i] - a) > 1e-9 * s or abs(target.atoms[j] - b) > 1e-9 * s:
            raise ValueError(f"line {lineno}: atom not found in the marginals")
        rows.append(i)
        cols.append(j)
        mass.append(m)
    return Coupling(source, target, np.array(rows), np.array(cols), np.array(mass))
