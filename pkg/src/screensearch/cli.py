"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import yaml

from .ambiguity import AmbiguityParams, write_report
from .config import ConfigError, RunConfig, load_config
from .eval_harness import POLICY_KINDS, PolicySpec, emit_report, run_benchmark
from .explorer import write_traces
from .gui_sim import (
    ScenarioError,
    builtin_scenarios,
    jitter_similarity_bound,
    load_pool,
    load_scenario,
    read_pool_header,
)
from .retrieval_index import ScreenIndex
from .runs import explore, latency_profile, prior_ablation, write_explore_outputs
from .screen_model import extract_signature, read_observations
from .state_graph import GraphFormatError, StateGraph

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _run_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (flags override --config)")
    g.add_argument("--config", help="YAML or JSON run config")
    g.add_argument("--scenario", help="built-in scenario name or YAML path")
    g.add_argument("--workers", type=int)
    g.add_argument("--episodes", type=int, help="episodes per worker")
    g.add_argument("--budget", type=int, help="actions per episode")
    g.add_argument("--seed", type=int)
    g.add_argument("--schedule", choices=("round_robin", "threads"))
    g.add_argument("--prior", dest="puct.prior_kind", choices=("uniform_prior@1", "heuristic@1"))
    g.add_argument("--c-puct", dest="puct.c_puct", type=float)
    g.add_argument("--lambda-state", dest="puct.lambda_state", type=float)
    g.add_argument("--lambda-edge", dest="puct.lambda_edge", type=float)
    g.add_argument("--lambda-amb", dest="puct.lambda_amb", type=float)
    g.add_argument("--kappa", dest="ambiguity.kappa", type=float)
    g.add_argument("--u0", dest="ambiguity.u0", type=float)
    g.add_argument("--tau", dest="dedup.tau", type=float)
    g.add_argument("--top-k", dest="dedup.top_k", type=int)


_RUN_KEYS = (
    "scenario", "workers", "episodes", "budget", "seed", "schedule",
    "puct.prior_kind", "puct.c_puct", "puct.lambda_state", "puct.lambda_edge", "puct.lambda_amb",
    "ambiguity.kappa", "ambiguity.u0", "dedup.tau", "dedup.top_k",
)


def _config(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in _RUN_KEYS}
    if getattr(args, "out", None):
        overrides["output"] = args.out
    return load_config(args.config, overrides)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, default=str))


# -- commands ------------------------------------------------------------------


def cmd_explore(args) -> int:
    cfg = _config(args)
    scenario = load_scenario(cfg.scenario)
    result = explore(cfg, scenario)
    summary = write_explore_outputs(result, cfg, cfg.output)
    s = result.summary
    print(f"{'scenario':<12}{'observations':>14}{'unique':>9}{'rate %':>9}{'cross-app':>11}{'len-3 traj':>12}")
    print(f"{scenario.name:<12}{s.total_observations:>14}{s.unique_states:>9}{s.discovery_rate:>9.2f}"
          f"{s.cross_app_states:>11}{s.trajectories:>12}")
    pool = summary["replay_pool"]
    if pool["shortfall"]:
        print(f"warning: replay pool short by {pool['shortfall']} (selected {pool['selected']})", file=sys.stderr)
    print(f"outputs written to {cfg.output}")
    return EXIT_OK


def _policy_specs(text: str | None) -> list[PolicySpec]:
    kinds = [k.strip() for k in (text or ",".join(POLICY_KINDS)).split(",") if k.strip()]
    try:
        return [PolicySpec(k, k) for k in kinds]
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc


def cmd_bench_run(args) -> int:
    cfg = _config(args)
    header = read_pool_header(args.pool)
    scenario = load_scenario(args.scenario or header.get("config", {}).get("scenario") or cfg.scenario)
    if header.get("scenario_hash") and header["scenario_hash"] != scenario.scenario_hash:
        raise ConfigError([f"pool was built for scenario hash {header['scenario_hash']}, got {scenario.scenario_hash}"])
    pool = load_pool(args.pool)
    if not pool:
        raise ConfigError([f"{args.pool}: replay pool is empty"])
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    result = run_benchmark(
        scenario, pool, _policy_specs(args.policies), cfg.budget, seeds, cfg.puct, cfg.dedup, cfg.ambiguity
    )
    result.config["run_config"] = cfg.echo()
    emit_report(result, cfg.output)
    write_traces(Path(cfg.output) / "traces.jsonl", [t for pr in result.policies for t in pr.traces])
    for pr in result.policies:
        s = pr.scalars()
        print(f"{s['label']:<26} M_V={s['M_V_final']:.3f} AUC={s['frontier_auc']:.3f} "
              f"du={s['delta_u_final']:.4f} duAUC={s['ambiguity_auc']:.4f} episodes={s['episodes']}")
    return EXIT_OK


def cmd_index_stats(args) -> int:
    index = ScreenIndex.load(args.index)
    _emit({"index": str(args.index), **index.stats(), "config": asdict(index.config)})
    return EXIT_OK


def cmd_index_query(args) -> int:
    index = ScreenIndex.load(args.index)
    for n, obs in enumerate(read_observations(args.from_file)):
        sig = extract_signature(obs, index.config.embed_dim)
        q = index.make_query(sig, args.group_prefix or "")
        if args.top_k:
            q = replace(q, top_k=args.top_k)
        hits = index.search(q)
        decision = index.dedup_decide(sig, q)
        _emit({
            "query": n,
            "canonical_id": sig.canonical_id,
            "results": [{"canonical_id": cid, "score": score} for cid, score in hits],
            "decision": asdict(decision),
        })
    return EXIT_OK


def cmd_ambiguity_report(args) -> int:
    graph = StateGraph.import_graph(args.graph)
    params = AmbiguityParams(
        kappa=args.kappa if args.kappa is not None else AmbiguityParams.kappa,
        u0=args.u0 if args.u0 is not None else AmbiguityParams.u0,
    )
    rows = write_report(graph, params, args.out, config_echo={"ambiguity": asdict(params), "graph": str(args.graph)})
    print(f"{rows} states written to {args.out}")
    return EXIT_OK


def cmd_sim_validate(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        for v in exc.violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_CONFIG
    bound = min(
        (jitter_similarity_bound(t, sc.width, sc.height, sc.jitter) for t in sc.templates.values()),
        default=1.0,
    )
    print(f"{sc.name}: ok ({len(sc.hidden_states)} states, {len(sc.templates)} templates, "
          f"{len(sc.transitions)} transitions, jitter bound {bound:.4f} >= tau {sc.tau})")
    return EXIT_OK


def cmd_sim_list(args) -> int:
    for name in builtin_scenarios():
        print(name)
    return EXIT_OK


def cmd_prior_ablation(args) -> int:
    cfg = _config(args)
    try:
        rows = prior_ablation(cfg)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    ratio = rows[0]["discovery_rate"] / rows[1]["discovery_rate"] if rows[1]["discovery_rate"] else float("inf")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "prior_ablation.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("# config: " + json.dumps(cfg.echo(), sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["prior", "observations", "unique_states", "discovery_rate", "ratio_heuristic_to_uniform"])
        for r in rows:
            writer.writerow([r["prior"], r["observations"], r["unique_states"], repr(r["discovery_rate"]), repr(ratio)])
    for r in rows:
        print(f"{r['prior']:<18} observations={r['observations']} unique={r['unique_states']} "
              f"rate={r['discovery_rate']:.2f}%")
    print(f"ratio heuristic/uniform = {ratio:.3f}")
    return EXIT_OK


def cmd_latency_profile(args) -> int:
    cfg = _config(args)
    try:
        sizes = [int(x) for x in args.sizes.split(",")]
    except ValueError as exc:
        raise ConfigError([f"--sizes: {exc}"]) from exc
    if args.steps < 0 or any(s < 0 for s in sizes):
        raise ConfigError(["--steps and --sizes must be non-negative"])
    prof = latency_profile(cfg, sizes, args.steps)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "latency.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("# config: " + json.dumps(cfg.echo(), sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["size", "graph_states", "step", "decision_seconds"])
        for r in prof["series"]:
            writer.writerow([r["size"], r["graph_states"], r["step"], repr(r["decision_seconds"])])
    with open(out / "latency_summary.json", "w", encoding="utf-8") as fh:
        json.dump({"config": cfg.echo(), "medians": prof["medians"], "ratio": prof["ratio"]}, fh, sort_keys=True, indent=2)
        fh.write("\n")
    for size, med in prof["medians"].items():
        print(f"size={size:<8} median decision = {'n/a' if med is None else f'{med * 1e3:.3f} ms'}")
    if prof["ratio"] is not None:
        print(f"median ratio {sizes[-1]}/{sizes[0]} = {prof['ratio']:.3f}")
    return EXIT_OK


def cmd_config_show(args) -> int:
    cfg = _config(args)
    print(yaml.safe_dump({"output": cfg.output, **cfg.echo()}, sort_keys=True), end="")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="screensearch", description="GUI state-space exploration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explore", help="run multi-worker exploration on a scenario")
    _run_flags(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_explore)

    bench = sub.add_parser("bench", help="replay-start policy evaluation").add_subparsers(dest="bench_cmd", required=True)
    p = bench.add_parser("run", help="run policies from a verified replay pool")
    _run_flags(p)
    p.add_argument("--pool", required=True, help="replay_pool.jsonl written by explore")
    p.add_argument("--policies", help=f"comma list from {','.join(POLICY_KINDS)}")
    p.add_argument("--seeds", help="comma list of root seeds")
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_bench_run)

    index = sub.add_parser("index", help="inspect an index snapshot").add_subparsers(dest="index_cmd", required=True)
    p = index.add_parser("stats")
    p.add_argument("--index", required=True)
    p.set_defaults(func=cmd_index_stats)
    p = index.add_parser("query", help="search with observations from a JSONL file")
    p.add_argument("--index", required=True)
    p.add_argument("--from-file", required=True, dest="from_file")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--group-prefix", dest="group_prefix")
    p.set_defaults(func=cmd_index_query)

    amb = sub.add_parser("ambiguity", help="ambiguity scores").add_subparsers(dest="amb_cmd", required=True)
    p = amb.add_parser("report", help="per-state CSV from a graph snapshot")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kappa", type=float)
    p.add_argument("--u0", type=float)
    p.set_defaults(func=cmd_ambiguity_report)

    sim = sub.add_parser("sim", help="scenario tools").add_subparsers(dest="sim_cmd", required=True)
    p = sim.add_parser("validate")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_sim_validate)
    p = sim.add_parser("list")
    p.set_defaults(func=cmd_sim_list)

    p = sub.add_parser("prior-ablation", help="uniform vs heuristic prior on matched seeds")
    _run_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_prior_ablation)

    p = sub.add_parser("latency-profile", help="per-decision time against graph size")
    _run_flags(p)
    p.add_argument("--sizes", default="1000,30000")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(func=cmd_latency_profile)

    p = sub.add_parser("config", help="print the resolved run config")
    _run_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_config_show)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, GraphFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IsADirectoryError, json.JSONDecodeError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # top-level boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
