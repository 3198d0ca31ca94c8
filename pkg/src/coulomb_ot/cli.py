"""Command-line front end: ``coulomb-ot {solve,potentials,diagnose,verify,oracle}``.

Exit codes: 0 success, 1 error, 2 a verification check failed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as cio
from .cost import CostModel
from .diagnostics import DiagnosticsConfig, diagnose, support_gap
from .duality import ruschendorf_potentials, semiconcavity_probe
from .measures import DiscreteMeasure, nonconcentration_radius
from .reference import brute_force_assignment
from .solver import solve_entropic, solve_lp, verify_c_monotonicity

log = logging.getLogger("coulomb_ot")

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


def _threads():
    raw = os.environ.get("COULOMB_OT_THREADS")
    return max(1, int(raw)) if raw else 1


def _load_marginals(args):
    if args.mu:
        mu = cio.load_measure(args.mu)
    elif args.spec:
        mu = cio.parse_spec(args.spec)
    else:
        raise ValueError("give --mu or --spec")
    if args.self_:
        nu = mu
    elif args.nu:
        nu = cio.load_measure(args.nu)
    elif args.nu_spec:
        nu = cio.parse_spec(args.nu_spec)
    else:
        raise ValueError("give --nu, --nu-spec or --self")
    if mu.dim != nu.dim:
        raise ValueError("marginals live in different dimensions")
    return mu, nu


def _auto_delta(mu, nu, eps=0.5):
    return 0.9 * nonconcentration_radius(mu, nu, eps) / 2


def _solve(args, mu, nu, cost):
    method = args.method
    if method == "lp":
        return solve_lp(mu, nu, cost, symmetrize=args.symmetrize)
    if method.startswith("entropic"):
        _, _, rest = method.partition(":")
        opts = dict(kv.split("=", 1) for kv in rest.split(":") if kv)
        eta = float(opts.get("eta", 100.0))
        tol = float(opts.get("tol", 1e-9))
        return solve_entropic(mu, nu, cost, eta, tol)
    raise ValueError(f"unknown method {method!r}")


def _potential_cost(cost, mu, nu):
    return cost if cost.kind == "modified" else cost.as_modified(_auto_delta(mu, nu))


def _write(out: Path, name: str, text: str):
    (out / name).write_text(text, encoding="utf-8")


def _summary_lines(plan, report, cost):
    return [
        f"cost_model: {cost}",
        f"atoms: {plan.mu.size} x {plan.nu.size}",
        f"plan_entries: {len(plan)}",
        f"primal_cost: {report.primal_cost!r}",
        f"dual_gap: {report.dual_gap!r}",
        f"marginal_error: {report.marginal_error!r}",
        f"support_gap: {support_gap(plan)!r}",
    ]


def cmd_solve(args, out):
    mu, nu = _load_marginals(args)
    cost = CostModel.parse(args.cost, mu.dim)
    plan, report = _solve(args, mu, nu, cost)
    _write(out, "plan.csv", cio.plan_csv(plan))
    _write(out, "solve.json", cio.dumps(report.to_dict()))
    _write(out, "summary.txt", "\n".join(_summary_lines(plan, report, cost)) + "\n")
    return EXIT_OK, (mu, nu, cost, plan, report)


def cmd_potentials(args, out):
    _, (mu, nu, cost, plan, report) = cmd_solve(args, out)
    pcost = _potential_cost(cost, mu, nu)
    pots = ruschendorf_potentials(plan, pcost)
    _write(out, "potentials.json", cio.dumps(pots.to_dict()))
    return EXIT_OK, (mu, nu, cost, plan, report, pcost, pots)


def cmd_diagnose(args, out):
    _, (mu, nu, cost, plan, report, pcost, pots) = cmd_potentials(args, out)
    cfg = DiagnosticsConfig(radii=tuple(args.radii), theta=args.theta, seed=args.seed,
                            max_points=args.max_points, delta=pcost.delta)
    rep = diagnose(plan, pots, pcost, cfg, workers=_threads())
    _write(out, "diagnostics.json", rep.to_json())
    _write(out, "singular.csv", rep.singular_csv(mu))
    _write(out, "scales.csv", rep.scales_csv())
    lines = _summary_lines(plan, report, cost) + [
        f"r0: {rep.r0!r}",
        f"delta: {rep.delta!r}",
        f"gap_exceeds_delta: {rep.gap_exceeds_delta}",
        f"singular_atoms: {len(rep.singular_set)}",
    ]
    _write(out, "summary.txt", "\n".join(lines) + "\n")
    return EXIT_OK, None


def lemma_checks(mu: DiscreteMeasure, nu: DiscreteMeasure, eps: float = 0.5):
    """Named pass/fail checks of the structural statements on one instance."""
    results = []
    delta = _auto_delta(mu, nu, eps)
    c0 = CostModel.coulomb(mu.dim)
    cd = c0.as_modified(delta)
    plan, rep = solve_lp(mu, nu, c0)
    plan_d, _ = solve_lp(mu, nu, cd)
    results.append(("support_gap_exceeds_delta", support_gap(plan) > delta))
    results.append(("lp_dual_gap", abs(rep.dual_gap) <= 1e-6 * max(1.0, abs(rep.primal_cost))))
    results.append(("c_monotonicity", verify_c_monotonicity(plan, c0).ok))
    results.append(("cost_modification_invariance",
                    plan.support_set() == plan_d.support_set()
                    and abs(plan.cost_value - plan_d.cost_value) <= 1e-9))
    pots = ruschendorf_potentials(plan, cd)
    feas, eq = pots.slack(plan, cd)
    results.append(("duality_feasibility", feas <= 1e-8))
    results.append(("duality_support_equality", eq <= 1e-8))
    if mu.grid is not None:
        results.append(("semiconcavity", semiconcavity_probe(pots.psi, mu, pots.K).ok))
    return results


def cmd_verify(args, out):
    if args.suite != "lemmas":
        raise ValueError(f"unknown suite {args.suite!r}")
    if args.mu or args.spec:
        mu, nu = _load_marginals(args)
    else:
        mu = nu = cio.parse_spec("uniform:L=1:n=200")
    results = lemma_checks(mu, nu)
    lines = [f"{name}: {'PASS' if ok else 'FAIL'}" for name, ok in results]
    failed = [name for name, ok in results if not ok]
    lines.append(f"failed: {', '.join(failed) if failed else 'none'}")
    _write(out, "summary.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return (EXIT_FAILED if failed else EXIT_OK), None


def random_instance(rng, n, dim=1):
    from .measures import DiscreteMeasure

    pts = np.round(rng.uniform(0, 1, (2 * n, dim)), 6)
    while len(np.unique(pts, axis=0)) < 2 * n:
        pts = np.round(rng.uniform(0, 1, (2 * n, dim)), 6)
    w = np.full(n, 1.0 / n)
    return DiscreteMeasure(pts[:n], w, 1.0 / n), DiscreteMeasure(pts[n:], w, 1.0 / n)


def cmd_oracle(args, out):
    rng = np.random.default_rng(args.seed)
    cost = CostModel.parse(args.cost, args.dim)
    agree = 0
    rows = ["trial,lp_cost,brute_cost,agree"]
    for t in range(args.trials):
        mu, nu = random_instance(rng, args.n, args.dim)
        _, rep = solve_lp(mu, nu, cost)
        _, brute = brute_force_assignment(mu, nu, cost)
        ok = abs(rep.primal_cost - brute) <= 1e-12 * max(1.0, abs(brute))
        agree += ok
        rows.append(f"{t},{rep.primal_cost!r},{brute!r},{int(ok)}")
    _write(out, "oracle.csv", "\n".join(rows) + "\n")
    line = f"LP vs brute force agreement: {agree}/{args.trials}"
    _write(out, "summary.txt", line + "\n")
    print(line)
    return (EXIT_OK if agree == args.trials else EXIT_FAILED), None


def build_parser():
    p = argparse.ArgumentParser(prog="coulomb-ot", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def marginals(sp):
        sp.add_argument("--mu", help="source measure JSON")
        sp.add_argument("--spec", help="source recipe, e.g. uniform:L=1:n=200")
        sp.add_argument("--nu", help="target measure JSON")
        sp.add_argument("--nu-spec", help="target recipe")
        sp.add_argument("--self", dest="self_", action="store_true", help="use nu = mu")
        sp.add_argument("--cost", default="coulomb", help="coulomb | modified:delta=<d>")
        sp.add_argument("--method", default="lp", help="lp | entropic:eta=<eta>[:tol=<tol>]")
        sp.add_argument("--symmetrize", action="store_true", help="average plan with its transpose")

    def common(sp):
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=0)

    for name in ("solve", "potentials", "diagnose"):
        sp = sub.add_parser(name)
        marginals(sp)
        common(sp)
        if name == "diagnose":
            sp.add_argument("--radii", type=float, nargs="+", default=[0.02, 0.04, 0.08])
            sp.add_argument("--theta", type=float, default=5.0)
            sp.add_argument("--max-points", type=int, default=400)
    sp = sub.add_parser("verify")
    marginals(sp)
    common(sp)
    sp.add_argument("--suite", default="lemmas")
    sp = sub.add_parser("oracle")
    common(sp)
    sp.add_argument("--n", type=int, default=5)
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--dim", type=int, default=1)
    sp.add_argument("--cost", default="coulomb")
    return p


COMMANDS = {
    "solve": cmd_solve,
    "potentials": cmd_potentials,
    "diagnose": cmd_diagnose,
    "verify": cmd_verify,
    "oracle": cmd_oracle,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        code, _ = COMMANDS[args.command](args, out)
    except (OSError, ValueError, RuntimeError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
