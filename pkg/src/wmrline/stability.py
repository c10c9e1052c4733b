"""Stability experiments and finite-support approximation utilities.

Perturbation ladders generate sequences (mu_k, nu_k) converging to a base
pair; the harness solves every rung and reports how the value, the optimal
pushforward and the transport map respond. Convergence is reported, never
asserted: no rates exist in general, so pass/fail tests should use ladders
with known closed forms (shifts of a Dirac source, say).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, DomainError, HypothesisError, OrderError
from .martingale import build_martingale_coupling
from .measures import (
    DiscreteMeasure,
    convex_order_leq,
    mean,
    quantize,
    support_scale,
    wasserstein,
)
from .wmr import CostSpec, solve_weak_transport

MAP_GAP_EPS = (1e-1, 1e-2, 1e-3)


# ---------------------------------------------------------------------------
# Transfer of a convex-order-dominated measure along a perturbation of nu
# ---------------------------------------------------------------------------


def quantile_coupling_entries(a: DiscreteMeasure, b: DiscreteMeasure):
    """Sparse entries (i, j, mass) of the comonotone coupling of (a, b).

    The quantile coupling is W_rho-optimal in one dimension for every
    rho >= 1, which is why it serves as the optimal coupling in transfers.
    """
    ca = a.cumulative()
    cb = b.cumulative()
    levels = np.union1d(ca, cb)
    widths = np.diff(np.concatenate(([0.0], levels)))
    ia = np.minimum(np.searchsorted(ca, levels, side="left"), a.n - 1)
    ib = np.minimum(np.searchsorted(cb, levels, side="left"), b.n - 1)
    keep = widths > 1e-15
    return ia[keep], ib[keep], widths[keep]


def eta_transfer(
    eta: DiscreteMeasure, nu: DiscreteMeasure, nu_k: DiscreteMeasure
) -> DiscreteMeasure:
    """Transport eta <=_c nu to an eta_k <=_c nu_k along the perturbation.

    eta_k is the image of eta under the conditional-mean map of the chain
    (eta -- martingale coupling -- nu -- quantile coupling -- nu_k), so the
    convex-order postcondition and the Jensen chain bound
    W_rho(eta, eta_k)^rho <= W_rho(nu, nu_k)^rho hold by construction; both
    are re-verified here, as is the finite-atom sharpening
    |x_i - R(x_i)| <= W_1(nu, nu_k) / min weight.
    """
    if not convex_order_leq(eta, nu):
        raise OrderError("eta_transfer requires eta <=_c nu")
    M = build_martingale_coupling(eta, nu)
    ia, ib, w = quantile_coupling_entries(nu, nu_k)
    cond_mean = np.zeros(nu.n)
    np.add.at(cond_mean, ia, w * nu_k.atoms[ib])
    cond_mean /= nu.weights

    R = np.zeros(eta.n)
    np.add.at(R, M.rows, M.mass * cond_mean[M.cols])
    R /= eta.weights
    eta_k = DiscreteMeasure(R, eta.weights)

    s = support_scale(eta, nu, nu_k)
    if not convex_order_leq(eta_k, nu_k, 1e-8):
        raise ConsistencyError("transferred measure is not below nu_k in convex order")
    w1 = wasserstein(nu, nu_k, 1.0)
    per_atom = np.abs(eta.atoms - R)
    if per_atom.max() > w1 / float(eta.weights.min()) + 1e-9 * s:
        raise ConsistencyError("per-atom transfer bound violated")
    for rho in (1.0, 2.0):
        if wasserstein(eta, eta_k, rho) > wasserstein(nu, nu_k, rho) + 1e-9 * s:
            raise ConsistencyError(f"W_{rho} chain bound violated")
    return eta_k


# ---------------------------------------------------------------------------
# Mean-preserving truncation and barycentric finite-support approximation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailTrim:
    """Sub-measure left after removing tail mass, plus its renormalization."""

    atoms: np.ndarray
    weights: np.ndarray  # entrywise <= the input weights; total mass >= 1 - eps
    renormalized: DiscreteMeasure

    @property
    def kept_mass(self) -> float:
        return float(self.weights.sum())


def _tail_moment(atoms, weights, amount, from_left: bool):
    """First moment of the outermost `amount` of mass."""
    a = atoms if from_left else atoms[::-1]
    w = weights if from_left else weights[::-1]
    taken = np.minimum(w, np.maximum(amount - np.concatenate(([0.0], np.cumsum(w)[:-1])), 0.0))
    return float(np.dot(taken, a)), taken if from_left else taken[::-1]


def truncate_mean_preserving(eta: DiscreteMeasure, eps: float) -> TailTrim:
    """Remove eps of mass from the two tails, keeping the barycenter exact.

    The split a + b = eps between the left and right tail solves the single
    linear balance equation moment(removed) = eps * mean(eta), which always
    has a solution in [0, eps]; the removed moment is piecewise linear and
    nonincreasing in a, so the root is found on its breakpoint grid.
    """
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps!r}")
    if eta.n == 1:
        return TailTrim(eta.atoms.copy(), eta.weights.copy(), eta)
    target = mean(eta) * eps

    def removed_moment(a):
        left, _ = _tail_moment(eta.atoms, eta.weights, a, True)
        right, _ = _tail_moment(eta.atoms, eta.weights, eps - a, False)
        return left + right

    cum = np.cumsum(eta.weights)
    grid = {0.0, eps}
    grid.update(float(c) for c in cum if 0.0 < c < eps)
    grid.update(float(eps - (1.0 - c)) for c in cum if 0.0 < eps - (1.0 - c) < eps)
    grid = sorted(grid)
    vals = [removed_moment(a) for a in grid]  # nonincreasing in a
    a_star = None
    for (a0, v0), (a1, v1) in zip(zip(grid, vals), zip(grid[1:], vals[1:])):
        lo, hi = min(v0, v1), max(v0, v1)
        if lo - 1e-12 <= target <= hi + 1e-12:
            a_star = a0 if v1 == v0 else a0 + (a1 - a0) * (target - v0) / (v1 - v0)
            a_star = min(max(a_star, a0), a1)
            break
    if a_star is None:
        raise ConsistencyError("no tail split balances the mean")  # unreachable
    _, taken_l = _tail_moment(eta.atoms, eta.weights, a_star, True)
    _, taken_r = _tail_moment(eta.atoms, eta.weights, eps - a_star, False)
    kept = eta.weights - taken_l - taken_r
    kept = np.maximum(kept, 0.0)
    pos = kept > 1e-15
    renorm = DiscreteMeasure(eta.atoms[pos], kept[pos] / kept.sum())
    return TailTrim(eta.atoms.copy(), kept, renorm)


def finite_support_approx(eta: DiscreteMeasure, k: int) -> DiscreteMeasure:
    """Barycentric binning into k equal cells over [min, max] (last cell closed).

    The result is below eta in convex order with W_1 distance at most
    diameter / k. Measures with at most k atoms are returned unchanged, which
    also makes the operation idempotent.
    """
    if k < 1:
        raise DomainError(f"cell count must be >= 1, got {k!r}")
    if eta.n <= k:
        return eta
    delta = eta.diameter / k
    idx = np.minimum(np.floor((eta.atoms - eta.atoms[0]) / delta).astype(np.int64), k - 1)
    keys, inverse = np.unique(idx, return_inverse=True)
    w = np.zeros(keys.size)
    wx = np.zeros(keys.size)
    np.add.at(w, inverse, eta.weights)
    np.add.at(wx, inverse, eta.weights * eta.atoms)
    return DiscreteMeasure(wx / w, w)


# ---------------------------------------------------------------------------
# Perturbation ladders and the experiment harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationLadder:
    """Deterministic family (mu_k, nu_k), k = 1..length, converging to (mu, nu).

    kinds: 'shift' moves nu by step/k; 'empirical' resamples both marginals
    with samples * 2^k draws (seeded per rung); 'quantize' bins both with
    width delta0 * 2^-k. rho is the Wasserstein order the mu-perturbations
    converge in, checked against the cost's growth exponent.
    """

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    kind: str
    length: int
    rho: float = 2.0
    seed: int = 0
    step: float = 1.0
    samples: int = 1
    delta0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("shift", "empirical", "quantize"):
            raise DomainError(f"unknown ladder kind {self.kind!r}")
        if self.length < 1:
            raise DomainError("ladder needs at least one rung")
        if self.rho < 1.0:
            raise DomainError("rho must be >= 1")

    def rung(self, k: int) -> tuple[DiscreteMeasure, DiscreteMeasure]:
        if not 1 <= k <= self.length:
            raise DomainError(f"rung {k} outside 1..{self.length}")
        if self.kind == "shift":
            return self.mu, self.nu.shift(self.step / k)
        if self.kind == "quantize":
            d = self.delta0 * 2.0**-k
            return quantize(self.mu, d), quantize(self.nu, d)
        rng = np.random.default_rng([int(self.seed), int(k)])
        n_k = int(self.samples) * 2**k
        return _empirical(self.mu, n_k, rng), _empirical(self.nu, n_k, rng)


def _empirical(m: DiscreteMeasure, n: int, rng) -> DiscreteMeasure:
    counts = rng.multinomial(n, m.weights)
    keep = counts > 0
    return DiscreteMeasure(m.atoms[keep], counts[keep] / n)


@dataclass(frozen=True)
class StabilityRung:
    k: int
    value: float
    value_gap: float
    optimizer_gap_w1: float
    map_gaps: dict = field(compare=False)  # eps -> mu-probability that maps differ by > eps


@dataclass(frozen=True)
class StabilityReport:
    base_value: float
    cost: CostSpec
    kind: str
    rho: float
    rungs: tuple

    def to_csv(self) -> str:
        heads = ",".join(f"map_gap@{e:g}" for e in MAP_GAP_EPS)
        lines = [f"k,value_gap,optimizer_gap_W1,{heads}"]
        for r in self.rungs:
            gaps = ",".join(f"{r.map_gaps[e]:.16e}" for e in MAP_GAP_EPS)
            lines.append(f"{r.k},{r.value_gap:.16e},{r.optimizer_gap_w1:.16e},{gaps}")
        return "\n".join(lines) + "\n"

    def to_document(self) -> dict:
        return {
            "schema": 1,
            "kind": "stability_report",
            "ladder": self.kind,
            "rho": self.rho,
            "cost": self.cost.describe(),
            # when the source marginal itself moves, maps are compared through
            # common quantile levels; this is a reporting convention
            "map_gap_semantics": "common-quantile identification on (0,1)",
            "base_value": self.base_value,
            "rungs": [
                {
                    "k": r.k,
                    "value": r.value,
                    "value_gap": r.value_gap,
                    "optimizer_gap_w1": r.optimizer_gap_w1,
                    "map_gaps": {f"{e:g}": r.map_gaps[e] for e in MAP_GAP_EPS},
                }
                for r in self.rungs
            ],
        }


def _map_gap(mu_a, t_a, mu_b, t_b, eps):
    """Lebesgue measure on (0,1) of levels where the two quantile-composed
    maps differ by more than eps. When the first marginals agree this is the
    mu-probability of {|T_a - T_b| > eps}; otherwise it is the common-quantile
    identification of the two maps (a reporting choice, flagged in docs)."""
    ca, cb = mu_a.cumulative(), mu_b.cumulative()
    levels = np.union1d(ca, cb)
    widths = np.diff(np.concatenate(([0.0], levels)))
    ia = np.minimum(np.searchsorted(ca, levels, side="left"), mu_a.n - 1)
    ib = np.minimum(np.searchsorted(cb, levels, side="left"), mu_b.n - 1)
    diff = np.abs(t_a[ia] - t_b[ib])
    return float(widths[diff > eps].sum())


def run_stability_experiment(ladder: PerturbationLadder, cost: CostSpec | None = None) -> StabilityReport:
    """Solve every rung and report value / optimizer / map gaps.

    The cost must satisfy the growth bound theta(x) <= c (1 + |x|^rho) for
    the ladder's rho; a quartic cost on a rho = 2 ladder is rejected before
    any solve.
    """
    cost = cost or CostSpec.quadratic()
    if cost.growth_exponent > ladder.rho + 1e-12:
        raise HypothesisError(
            f"cost grows like |x|^{cost.growth_exponent:g} but the ladder only "
            f"controls moments of order {ladder.rho:g}"
        )
    base = solve_weak_transport(ladder.mu, ladder.nu, cost)
    t_base = base.map(ladder.mu.atoms)
    rungs = []
    for k in range(1, ladder.length + 1):
        mu_k, nu_k = ladder.rung(k)
        sol = solve_weak_transport(mu_k, nu_k, cost)
        t_k = sol.map(mu_k.atoms)
        gaps = {
            eps: _map_gap(ladder.mu, t_base, mu_k, t_k, eps) for eps in MAP_GAP_EPS
        }
        rungs.append(
            StabilityRung(
                k=k,
                value=sol.value,
                value_gap=abs(sol.value - base.value),
                optimizer_gap_w1=wasserstein(base.pushforward, sol.pushforward, 1.0),
                map_gaps=gaps,
            )
        )
    return StabilityReport(
        base_value=base.value, cost=cost, kind=ladder.kind, rho=ladder.rho, rungs=tuple(rungs)
    )
