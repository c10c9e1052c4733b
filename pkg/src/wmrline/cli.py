"""Command-line front end.

One binary with subcommands for measure diagnostics, the weak transport
solver, the reverse problem, coupling composition, stability ladders, and a
Figure-style SVG of the transport map partitioned into martingale and
contractive regions. All numeric output uses fixed scientific notation with
17 significant digits so identical inputs give byte-identical files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field

import numpy as np

from . import martingale, reverse, stability
from .errors import WmrError
from .measures import (
    DiscreteMeasure,
    convex_order_leq,
    irreducible_components,
    mean,
    potential,
    potential_at,
    read_measure_csv,
    support_scale,
    wasserstein,
)
from .wmr import (
    CostSpec,
    map_decomposition,
    solve_weak_transport,
    verify_admissible,
    verify_slope1_characterization,
)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2


def fmt(x: float) -> str:
    """Fixed scientific notation, 17 significant digits."""
    return format(float(x), ".16e")


def render_json(obj, indent: int = 0) -> str:
    """Deterministic JSON with floats in fixed scientific notation."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for key in obj:  # insertion order is part of the schema
            items.append(f'{pad}  "{key}": {render_json(obj[key], indent + 1)}')
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}  {render_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    if obj is None:
        return "null"
    return '"' + str(obj).replace("\\", "\\\\").replace('"', '\\"') + '"'


@dataclass
class RunConfig:
    command: str
    mu_path: str | None = None
    nu_path: str | None = None
    cost: CostSpec = field(default_factory=CostSpec.quadratic)
    tol: float = 1e-7
    out: str | None = None
    fmt: str = "json"
    seed: int = 0
    verify: bool = False
    verify_theta: bool = False
    extra: dict = field(default_factory=dict)


def _emit(config: RunConfig, text: str) -> None:
    if config.out:
        with open(config.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _load(path: str) -> DiscreteMeasure:
    return read_measure_csv(path)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_potential(config: RunConfig) -> int:
    m = _load(config.mu_path)
    u = potential(m)
    if config.fmt == "csv":
        lines = ["y,u"]
        for y, v in zip(u.breakpoints, u.values):
            lines.append(f"{fmt(y)},{fmt(v)}")
        _emit(config, "\n".join(lines) + "\n")
    else:
        doc = {
            "schema": 1,
            "kind": "potential",
            "breakpoints": list(map(float, u.breakpoints)),
            "values": list(map(float, u.values)),
            "left_slope": u.left_slope,
            "right_slope": u.right_slope,
            "mean": mean(m),
        }
        _emit(config, render_json(doc) + "\n")
    return EXIT_OK


def cmd_check_order(config: RunConfig) -> int:
    a = _load(config.mu_path)
    b = _load(config.nu_path)
    verdict = convex_order_leq(a, b)
    witness = None
    if not verdict:
        s = support_scale(a, b)
        if abs(mean(a) - mean(b)) > 1e-9 * s:
            witness = {"kind": "mean_mismatch", "mean_a": mean(a), "mean_b": mean(b)}
        else:
            gap = potential_at(a, b.atoms) - potential_at(b, b.atoms)
            j = int(np.argmax(gap))
            witness = {
                "kind": "potential_violation",
                "atom": float(b.atoms[j]),
                "excess": float(gap[j]),
            }
    doc = {"schema": 1, "kind": "order_check", "result": verdict, "witness": witness}
    _emit(config, render_json(doc) + "\n")
    return EXIT_OK


def cmd_irreducible(config: RunConfig) -> int:
    a = _load(config.mu_path)
    b = _load(config.nu_path)
    comps = irreducible_components(a, b)
    if config.fmt == "csv":
        lines = ["lo,hi"] + [f"{fmt(iv.lo)},{fmt(iv.hi)}" for iv in comps]
        _emit(config, "\n".join(lines) + "\n")
    else:
        doc = {
            "schema": 1,
            "kind": "irreducible_intervals",
            "intervals": [[iv.lo, iv.hi] for iv in comps],
        }
        _emit(config, render_json(doc) + "\n")
    return EXIT_OK


def _solve_with_verification(config: RunConfig, mu, nu):
    sol = solve_weak_transport(mu, nu, config.cost)
    doc = sol.to_document()
    if config.verify:
        adm = verify_admissible(sol.map, mu, nu, config.tol)
        slope = verify_slope1_characterization(sol, mu, nu, config.tol)
        mg = martingale.build_martingale_coupling(sol.pushforward, nu)
        pi = martingale.compose_with_map(mu, sol.map, mg)
        cert = martingale.optimality_certificate(pi, mu, nu, config.cost, config.tol)
        doc["verification"] = {
            "admissible": adm.ok,
            "slope1_characterization": slope.ok,
            "optimality_certificate": cert.ok,
            "violations": list(adm.violations) + list(slope.violations) + list(cert.violations),
        }
    if config.verify_theta:
        others = [CostSpec.quartic(), CostSpec.power(3.0)]
        s = support_scale(mu, nu)
        gaps = {}
        for other in others:
            alt = solve_weak_transport(mu, nu, other)
            gaps[other.kind] = wasserstein(sol.pushforward, alt.pushforward, 1.0)
        doc["theta_independence_w1"] = gaps
        if max(gaps.values()) > 1e-6 * s:
            _emit(config, render_json(doc) + "\n")
            raise WmrError("pushforwards disagree across costs")
    return sol, doc


def cmd_wmr(config: RunConfig) -> int:
    mu = _load(config.mu_path)
    nu = _load(config.nu_path)
    _, doc = _solve_with_verification(config, mu, nu)
    _emit(config, render_json(doc) + "\n")
    return EXIT_OK


def cmd_value(config: RunConfig) -> int:
    mu = _load(config.mu_path)
    nu = _load(config.nu_path)
    sol, _ = _solve_with_verification(config, mu, nu)
    doc = {
        "schema": 1,
        "kind": "value",
        "cost": config.cost.describe(),
        "value": sol.value,
        "kkt_residual": sol.kkt_residual,
    }
    _emit(config, render_json(doc) + "\n")
    return EXIT_OK


def cmd_reverse(config: RunConfig) -> int:
    mu = _load(config.mu_path)
    nu = _load(config.nu_path)
    rsol = reverse.reverse_optimizer(mu, nu, config.cost)
    _emit(config, render_json(rsol.to_document()) + "\n")
    return EXIT_OK


def cmd_compose(config: RunConfig) -> int:
    mu = _load(config.mu_path)
    nu = _load(config.nu_path)
    sol = solve_weak_transport(mu, nu, config.cost)
    mg = martingale.build_martingale_coupling(sol.pushforward, nu)
    pi = martingale.compose_with_map(mu, sol.map, mg)
    if config.fmt == "csv":
        _emit(config, martingale.coupling_to_csv(pi))
    else:
        doc = {
            "schema": 1,
            "kind": "coupling",
            "entries": [
                [float(mu.atoms[r]), float(nu.atoms[c]), float(m)]
                for r, c, m in zip(pi.rows, pi.cols, pi.mass)
            ],
            "cost": config.cost.describe(),
            "barycentric_cost": pi.cost(config.cost),
        }
        if config.verify:
            cert = martingale.optimality_certificate(pi, mu, nu, config.cost, config.tol)
            doc["verification"] = {
                "optimality_certificate": cert.ok,
                "violations": list(cert.violations),
            }
        _emit(config, render_json(doc) + "\n")
    return EXIT_OK


def cmd_stability(config: RunConfig) -> int:
    mu = _load(config.mu_path)
    nu = _load(config.nu_path)
    ladder = stability.PerturbationLadder(
        mu,
        nu,
        config.extra["ladder"],
        length=config.extra["rungs"],
        rho=config.extra["rho"],
        seed=config.seed,
        step=config.extra["step"],
        samples=config.extra["samples"],
        delta0=config.extra["delta0"],
    )
    report = stability.run_stability_experiment(ladder, config.cost)
    if config.fmt == "csv":
        _emit(config, report.to_csv())
    else:
        _emit(config, render_json(report.to_document()) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Figure-style plot: transport map split into martingale/contractive regions
# ---------------------------------------------------------------------------


def plot_segments(sol, mu) -> list[dict]:
    """Split the graph of the map at preimages of irreducible-interval
    endpoints and classify each piece: martingale where the image lies inside
    an irreducible interval of (pushforward, nu), contractive elsewhere."""
    x = sol.map.knots_x
    t = sol.map.knots_t
    if x.size < 2:
        return []
    s = max(1.0, float(x[-1] - x[0]))
    cuts = set(map(float, x))
    for iv in sol.irreducibles:
        for e in (iv.lo, iv.hi):
            for i in range(x.size - 1):
                t0, t1 = t[i], t[i + 1]
                if (t0 < e < t1) or (t1 < e < t0):
                    xc = x[i] + (x[i + 1] - x[i]) * (e - t0) / (t1 - t0)
                    cuts.add(float(xc))
    grid = np.array(sorted(cuts))
    segs = []
    for a, b in zip(grid[:-1], grid[1:]):
        mid = 0.5 * (a + b)
        image = float(sol.map(mid)[0])
        cls = "contractive"
        for ci, iv in enumerate(sol.irreducibles):
            if iv.contains(image, 1e-12 * s):
                cls = f"martingale[{ci}]"
                break
        segs.append(
            {
                "x0": float(a),
                "t0": float(sol.map(a)[0]),
                "x1": float(b),
                "t1": float(sol.map(b)[0]),
                "class": cls,
            }
        )
    merged = [segs[0]]
    for seg in segs[1:]:
        if seg["class"] == merged[-1]["class"]:
            merged[-1] = {**merged[-1], "x1": seg["x1"], "t1": seg["t1"]}
        else:
            merged.append(seg)
    return merged


def segments_to_svg(segs, knots_x, knots_t) -> str:
    lo_x = min(knots_x)
    hi_x = max(knots_x)
    lo_y = min(min(knots_t), lo_x)
    hi_y = max(max(knots_t), hi_x)
    span_x = max(hi_x - lo_x, 1e-9)
    span_y = max(hi_y - lo_y, 1e-9)
    W, Hh, pad = 480.0, 480.0, 40.0

    def sx(v):
        return pad + (v - lo_x) / span_x * (W - 2 * pad)

    def sy(v):
        return Hh - pad - (v - lo_y) / span_y * (Hh - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{Hh:.0f}" '
        f'viewBox="0 0 {W:.0f} {Hh:.0f}">',
        "<style>.contractive{stroke:#2b6cb0;stroke-width:2.5;fill:none}"
        ".martingale{stroke:#7b2d8b;stroke-width:2.5;fill:none}"
        ".axis{stroke:#999;stroke-width:1}</style>",
        f'<line class="axis" x1="{pad:.2f}" y1="{Hh - pad:.2f}" x2="{W - pad:.2f}" y2="{Hh - pad:.2f}"/>',
        f'<line class="axis" x1="{pad:.2f}" y1="{pad:.2f}" x2="{pad:.2f}" y2="{Hh - pad:.2f}"/>',
    ]
    if not segs and len(knots_x) == 1:
        parts.append(
            f'<circle class="contractive" cx="{sx(knots_x[0]):.3f}" cy="{sy(knots_t[0]):.3f}" r="4"/>'
        )
    for seg in segs:
        cls = "martingale" if seg["class"].startswith("martingale") else "contractive"
        parts.append(
            f'<polyline class="{cls}" points="{sx(seg["x0"]):.3f},{sy(seg["t0"]):.3f} '
            f'{sx(seg["x1"]):.3f},{sy(seg["t1"]):.3f}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(config: RunConfig) -> int:
    mu = _load(config.mu_path)
    nu = _load(config.nu_path)
    sol = solve_weak_transport(mu, nu, config.cost)
    segs = plot_segments(sol, mu)
    csv_lines = ["x0,t0,x1,t1,class"]
    for seg in segs:
        csv_lines.append(
            f"{fmt(seg['x0'])},{fmt(seg['t0'])},{fmt(seg['x1'])},{fmt(seg['t1'])},{seg['class']}"
        )
    svg = segments_to_svg(segs, list(sol.map.knots_x), list(sol.map.knots_t))
    out = config.out or "transport_plot.svg"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(svg)
    with open(out + ".csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(csv_lines) + "\n")
    sys.stdout.write(f"wrote {out} and {out}.csv\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_cost_flags(p):
    p.add_argument("--cost", choices=("quadratic", "quartic", "power"), default="quadratic")
    p.add_argument("--rho", type=float, default=2.0, help="exponent for --cost power")
    p.add_argument("--tol", type=float, default=1e-7, help="verification tolerance (times scale)")
    p.add_argument("--out", default=None)
    p.add_argument("--format", dest="fmt", choices=("json", "csv", "svg"), default="json")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wmrline", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    for name, needs_two in (
        ("potential", False),
        ("check-order", True),
        ("irreducible", True),
        ("wmr", True),
        ("value", True),
        ("reverse", True),
        ("compose", True),
        ("plot", True),
        ("stability", True),
    ):
        p = sub.add_parser(name)
        p.add_argument("mu", help="measure CSV (atom,weight per line)")
        if needs_two:
            p.add_argument("nu", help="measure CSV (atom,weight per line)")
        _add_cost_flags(p)
        if name in ("wmr", "value", "compose"):
            p.add_argument("--verify", action="store_true")
            p.add_argument("--verify-theta", action="store_true", dest="verify_theta")
        if name == "stability":
            p.add_argument("--ladder", choices=("shift", "empirical", "quantize"), default="shift")
            p.add_argument("--rungs", type=int, default=8)
            p.add_argument("--ladder-rho", type=float, default=2.0, dest="ladder_rho")
            p.add_argument("--step", type=float, default=1.0)
            p.add_argument("--samples", type=int, default=1)
            p.add_argument("--delta0", type=float, default=1.0)
    return ap


HANDLERS = {
    "potential": cmd_potential,
    "check-order": cmd_check_order,
    "irreducible": cmd_irreducible,
    "wmr": cmd_wmr,
    "value": cmd_value,
    "reverse": cmd_reverse,
    "compose": cmd_compose,
    "plot": cmd_plot,
    "stability": cmd_stability,
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cost = CostSpec(args.cost, args.rho) if args.cost == "power" else CostSpec(args.cost)
        config = RunConfig(
            command=args.command,
            mu_path=args.mu,
            nu_path=getattr(args, "nu", None),
            cost=cost,
            tol=args.tol,
            out=args.out,
            fmt=args.fmt,
            seed=args.seed,
            verify=getattr(args, "verify", False),
            verify_theta=getattr(args, "verify_theta", False),
            extra={
                "ladder": getattr(args, "ladder", "shift"),
                "rungs": getattr(args, "rungs", 8),
                "rho": getattr(args, "ladder_rho", 2.0),
                "step": getattr(args, "step", 1.0),
                "samples": getattr(args, "samples", 1),
                "delta0": getattr(args, "delta0", 1.0),
            },
        )
        return HANDLERS[args.command](config)
    except (OSError, ValueError) as err:
        sys.stderr.write(f"input error: {err}\n")
        return EXIT_IO
    except WmrError as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_DOMAIN


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
