"""Command-line entry point: instance generation, single-day simulation,
batch experiments and parameter tuning.

Every command writes a run manifest (resolved configuration, seeds, version)
beside its outputs so any result can be reproduced bit-exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .harness import (
    ExperimentPlan,
    Variant,
    run_experiment,
    tune,
    write_results,
    write_summary,
)
from .instances import (
    CLASSES,
    LEVELS,
    InstanceError,
    generate_instance,
    load_instance,
    save_instance,
)
from .mdp import CostConfig, KpiReport, SimulationError, Simulator
from .policies import AlnsConfig, PolicyError, make_policy
from .traveltime import ConfigError, TravelTimeModel, default_model

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _add_cost_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mu1", type=float, default=1.0,
                   help="travel cost per minute (default 1)")
    p.add_argument("--mu2", type=float, default=5.0,
                   help="lateness cost per minute (default 5)")
    p.add_argument("--rho", type=float, default=2.0,
                   help="per-delivery crowdshipper fee (default 2)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.05,
                   help="remaining-capacity weight (default 0.05)")
    p.add_argument("--eta", type=float, default=0.20,
                   help="strategic wait fraction (default 0.20)")
    p.add_argument("--gamma", type=float, default=45.0,
                   help="ready-time lookahead window, minutes (default 45)")
    p.add_argument("--no-strategic-wait", action="store_true",
                   help="shorthand for --eta 0")
    p.add_argument("--phi", type=float, default=9.0,
                   help="ALNS location-relatedness weight (default 9)")
    p.add_argument("--chi", type=float, default=3.0,
                   help="ALNS temporal-relatedness weight (default 3)")
    p.add_argument("--alns-n", type=int, default=4,
                   help="ALNS removals per iteration (default 4)")
    p.add_argument("--alns-iterations", type=int, default=None,
                   help="ALNS iteration limit (default: calibrated)")
    p.add_argument("--alns-gamma", type=float, default=None,
                   help="ALNS reshuffle window (default: calibrated)")
    p.add_argument("--avg-tt", action="store_true",
                   help="plan with the flat average travel time")
    p.add_argument("--budget-ms", type=float, default=2000.0,
                   help="per-epoch decide budget in ms (checked, default "
                        "2000)")
    p.add_argument("--travel-config", type=str, default=None,
                   help="JSON geography/speed-profile file (default: "
                        "built-in profile)")


def _cost_config(args) -> CostConfig:
    eta = 0.0 if args.no_strategic_wait else args.eta
    return CostConfig(travel_cost=args.mu1, late_cost=args.mu2,
                      crowd_fee=args.rho, capacity_weight=args.lam,
                      wait_fraction=eta, window=args.gamma)


def _alns_config(args) -> AlnsConfig:
    kwargs = dict(phi=args.phi, chi=args.chi, removal_count=args.alns_n)
    if args.alns_iterations is not None:
        kwargs["iteration_limit"] = args.alns_iterations
    if args.alns_gamma is not None:
        kwargs["window"] = args.alns_gamma
    return AlnsConfig(**kwargs)


def _model(args) -> TravelTimeModel:
    if args.travel_config:
        return TravelTimeModel.load_config(args.travel_config)
    return default_model()


def _write_manifest(out_dir: Path, command: str, args) -> None:
    payload = {
        "version": __version__,
        "command": command,
        "arguments": {k: v for k, v in sorted(vars(args).items())
                      if k != "func"},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _print_report(rep: KpiReport) -> None:
    print(f"class={rep.cls} level={rep.level} policy={rep.policy} "
          f"seed={rep.seed} requests={rep.n_requests}")
    print(f"  total cost       {rep.total_cost:12.2f}")
    print(f"  routing cost     {rep.routing_cost:12.2f}")
    print(f"  lateness charge  {rep.lateness_charge:12.2f}")
    print(f"  delayed requests {rep.delayed_requests:9d}")
    print(f"  total delay min  {rep.total_delay:12.2f}")
    print(f"  crowd served     {rep.crowd_served:9d}")
    print(f"  dedicated served {rep.dedicated_served:9d}")


def cmd_generate(args) -> int:
    inst = generate_instance(args.cls, args.level, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_instance(inst, out)
    _write_manifest(out.parent, "generate", args)
    print(f"wrote {out} ({inst.n_requests} requests, "
          f"{len(inst.fleet)} vehicles)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.instance:
        inst = load_instance(args.instance)
    else:
        inst = generate_instance(args.cls, args.level, args.seed)
    sim = Simulator(inst, config=_cost_config(args), model=_model(args))
    policy = make_policy(args.policy, alns=_alns_config(args),
                         avg_tt=args.avg_tt)
    report, events = sim.run(policy, seed=args.seed)
    _print_report(report)
    if report.max_decide_s * 1000.0 > args.budget_ms:
        print(f"warning: a decide call took {report.max_decide_s*1000:.0f} "
              f"ms (budget {args.budget_ms:.0f} ms)", file=sys.stderr)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "kpi.tsv").write_text(
            "\t".join(KpiReport.COLUMNS) + "\n" + report.to_row() + "\n")
        with open(out / "events.tsv", "w") as fh:
            fh.write("kind\tepoch\ttime\tvehicle\trequest\tx\ty\tminutes"
                     "\tcost\n")
            for e in events:
                fh.write(e.to_line() + "\n")
        _write_manifest(out, "simulate", args)
        print(f"wrote {out}/kpi.tsv, {out}/events.tsv")
    return EXIT_OK


def _variants(args) -> tuple[Variant, ...]:
    cost = _cost_config(args)
    alns = _alns_config(args)
    out = []
    for name in args.compare.split(","):
        name = name.strip()
        label = name
        avg = args.avg_tt
        if name not in ("drace", "myopic"):
            raise InstanceError(f"unknown policy {name!r} in --compare")
        out.append(Variant(label=label, policy=name, cost=cost, alns=alns,
                           avg_tt=avg))
    return tuple(out)


def cmd_experiment(args) -> int:
    plan = ExperimentPlan(cls=args.cls, level=args.level,
                          variants=_variants(args),
                          replications=args.reps, seed_base=args.seed,
                          jobs=args.jobs)
    out = Path(args.out) if args.out else None
    result = run_experiment(plan, out_dir=out)
    for v in plan.variants:
        st = result.kpi_stats(v.label, "total_cost")
        if st:
            print(f"{v.label}: mean total {st[0]:.1f}  median {st[1]:.1f}  "
                  f"min {st[3]:.1f}  max {st[4]:.1f}")
    for c in result.comparisons:
        print(f"{c.baseline} vs {c.variant}: median reduction "
              f"{100*c.median_pct:.1f}%  wins {c.wins}/{len(c.diffs)}  "
              f"CI95 diff [{c.ci95[0]:.1f}, {c.ci95[1]:.1f}]")
    if result.max_decide_s * 1000.0 > args.budget_ms:
        print(f"warning: a decide call took {result.max_decide_s*1000:.0f} "
              f"ms (budget {args.budget_ms:.0f} ms)", file=sys.stderr)
    if out:
        _write_manifest(out, "experiment", args)
        print(f"wrote {out}/results.tsv, {out}/summary.tsv")
    return EXIT_OK


def cmd_tune(args) -> int:
    cost = _cost_config(args)
    alns = _alns_config(args)
    variant = Variant(label=args.policy, policy=args.policy, cost=cost,
                      alns=alns, avg_tt=args.avg_tt)
    plan = ExperimentPlan(cls=args.cls, level=args.level,
                          variants=(variant,), replications=args.reps,
                          seed_base=args.seed, jobs=args.jobs)
    grid = [float(g) for g in args.grid.split(",") if g.strip() != ""]
    result = tune(args.param, grid, plan)
    for value in sorted(result.mean_costs):
        marker = " <- best" if value == result.best_value else ""
        print(f"{args.param}={value}: mean total "
              f"{result.mean_costs[value]:.1f}{marker}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["# crowddrp tuning v1", f"parameter\t{args.param}",
                 f"best\t{result.best_value!r}"]
        for value in sorted(result.mean_costs):
            lines.append(f"{value!r}\t{result.mean_costs[value]!r}")
        (out / "tuning.tsv").write_text("\n".join(lines) + "\n")
        _write_manifest(out, "tune", args)
        print(f"wrote {out}/tuning.tsv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="crowddrp",
        description="Dynamic pickup-and-delivery simulator with dedicated "
                    "vehicles and crowdshippers")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a daily instance file")
    g.add_argument("--class", dest="cls", choices=CLASSES, required=True)
    g.add_argument("--level", choices=LEVELS, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="instance file path")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", help="simulate one day under a policy")
    s.add_argument("--instance", help="instance file (overrides generation)")
    s.add_argument("--class", dest="cls", choices=CLASSES, default="nm")
    s.add_argument("--level", choices=LEVELS, default="low")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--policy", choices=("drace", "myopic"), default="drace")
    s.add_argument("--out", help="output directory")
    _add_cost_flags(s)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("experiment",
                       help="paired replications across policy variants")
    e.add_argument("--class", dest="cls", choices=CLASSES, required=True)
    e.add_argument("--level", choices=LEVELS, required=True)
    e.add_argument("--reps", type=int, default=20)
    e.add_argument("--seed", type=int, default=1000,
                   help="seed base; replication i uses seed+i")
    e.add_argument("--compare", default="myopic,drace",
                   help="comma list of policies; first is the baseline")
    e.add_argument("--jobs", type=int, default=1,
                   help="parallel worker processes")
    e.add_argument("--out", help="output directory")
    _add_cost_flags(e)
    e.set_defaults(func=cmd_experiment)

    t = sub.add_parser("tune", help="grid-search lambda or eta")
    t.add_argument("--param", choices=("lambda", "eta"), required=True)
    t.add_argument("--grid", required=True, help="comma list of values")
    t.add_argument("--class", dest="cls", choices=CLASSES, required=True)
    t.add_argument("--level", choices=LEVELS, required=True)
    t.add_argument("--reps", type=int, default=10)
    t.add_argument("--seed", type=int, default=1000)
    t.add_argument("--policy", choices=("drace", "myopic"), default="drace")
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--out", help="output directory")
    _add_cost_flags(t)
    t.set_defaults(func=cmd_tune)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (InstanceError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SimulationError, PolicyError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
