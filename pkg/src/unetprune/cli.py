"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 usage/configuration error,
3 unreadable or malformed input file.

Every command is a pure function of its input files and flags (plus --seed),
so repeated invocations produce byte-identical outputs — except ``bench``,
which measures wall-clock time.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis, costs, criteria, transform, weights
from .builders import ArchConfig, BuildError, build
from .graph import (FormatError, GeneratorGraph, GraphError, TensorShape,
                    from_json, to_json)
from .weights import MAGIC, ContainerError, WeightStore

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_BAD_FILE = 3


def _parse_scales(text: str) -> tuple[int, int, int]:
    try:
        values = [int(p) for p in text.split(",")]
    except ValueError:
        values = []
    if len(values) != 3:
        raise BuildError(f"--scales must be three ints 'a,b,c', got '{text}'")
    return (values[0], values[1], values[2])


def _parse_ratio_list(text: str) -> list[float]:
    try:
        ratios = [float(p) for p in text.split(",") if p]
    except ValueError:
        raise criteria.PlanError(f"bad ratio list '{text}'") from None
    if not ratios:
        raise criteria.PlanError("no ratios given")
    return ratios


def _parse_layer_ratios(text: str) -> list[tuple[str, float]]:
    pairs: list[tuple[str, float]] = []
    for item in text.split(","):
        if not item:
            continue
        name, _, value = item.partition("=")
        if not value:
            raise criteria.PlanError(
                f"layer ratios look like LAYER=RATIO, got '{item}'")
        try:
            pairs.append((name, float(value)))
        except ValueError:
            raise criteria.PlanError(f"bad ratio in '{item}'") from None
    if not pairs:
        raise criteria.PlanError("no layer ratios given")
    return pairs


def _load_model(path: str) -> tuple[GeneratorGraph, WeightStore]:
    return weights.load(path)


def _load_graph_any(path: str) -> GeneratorGraph:
    """Accept either a topology JSON file or a weight container."""
    raw = Path(path).read_bytes()
    if raw[:4] == MAGIC:
        return weights.from_bytes(raw)[0]
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not a container and not UTF-8 JSON") from exc
    return from_json(text)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _preset_help() -> str:
    lines = []
    for name, (crit, ratios) in criteria.PRESETS.items():
        spec = " ".join(f"{layer}@{int(round(r * 100))}%"
                        for layer, r in ratios.items())
        lines.append(f"{name}: {spec} (default criterion {crit})")
    return "; ".join(lines)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_build(args: argparse.Namespace) -> int:
    if (args.nf is None) == (args.scales is None):
        raise BuildError("give exactly one of --nf N (pix2pix) or "
                         "--scales a,b,c (wav2lip)")
    base = args.nf if args.nf is not None else _parse_scales(args.scales)
    shapes = None
    if args.input_size:
        if args.arch != "pix2pix":
            raise BuildError("--input-size applies to pix2pix only; wav2lip "
                             "input sizes come from the layer table")
        parts = args.input_size.lower().split("x")
        if len(parts) != 2:
            raise BuildError(f"--input-size looks like HxW, got '{args.input_size}'")
        try:
            h, w = int(parts[0]), int(parts[1])
        except ValueError:
            raise BuildError(f"--input-size looks like HxW, got "
                             f"'{args.input_size}'") from None
        shapes = (TensorShape(args.in_channels, h, w),)
    cfg = ArchConfig(arch=args.arch, base_filters=base, input_shapes=shapes,
                     norm_kind=args.norm, out_channels=args.out_channels)
    table = None
    if args.table:
        table = json.loads(Path(args.table).read_text())
    graph = build(cfg, table=table)
    _emit(to_json(graph), args.out)
    return EXIT_OK


def cmd_cost(args: argparse.Namespace) -> int:
    graph = _load_graph_any(args.model)
    if args.weights:
        wg, store = _load_model(args.weights)
        if to_json(wg) != to_json(graph):
            raise ContainerError(f"{args.weights} was built for a different "
                                 f"graph than {args.model}")
        weights.validate_weights(graph, store)
    report = costs.full_report(graph)
    text = costs.render_csv(report) if args.csv else costs.render_text(report)
    _emit(text, args.out)
    if args.compare:
        base = costs.full_report(_load_graph_any(args.compare))
        summary = costs.diff_reports(base, report)
        sys.stdout.write(costs.render_summary(summary) + "\n")
    return EXIT_OK


def cmd_init_weights(args: argparse.Namespace) -> int:
    graph = _load_graph_any(args.graph)
    store = weights.init_random(graph, seed=args.seed)
    weights.save(args.out, graph, store)
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    graph, store = _load_model(args.model)
    scores = criteria.score(graph, store, args.criterion)
    if args.layer:
        scores = [s for s in scores if s.layer == args.layer]
        if not scores:
            raise criteria.PlanError(f"no conv layer named '{args.layer}'")
    lines = ["layer,index,score"]
    lines.extend(f"{s.layer},{s.index},{s.score:.9g}" for s in scores)
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    graph, store = _load_model(args.model)
    mode = args.mode
    if mode is None:
        if args.preset:
            mode = "preset"
        else:
            raise criteria.PlanError("give --mode, or --preset NAME")
    exclude = [s for s in (args.exclude or "").split(",") if s]
    if mode == "preset":
        if not args.preset:
            raise criteria.PlanError("--mode preset needs --preset NAME")
        plan = criteria.preset_plan(args.preset, graph, store,
                                    criterion=args.criterion)
    elif mode == "pairs":
        if args.depth is None:
            raise criteria.PlanError("--mode pairs needs --depth")
        plan = criteria.plan_layer_pairs(graph, args.depth)
    else:
        if mode == "uniform+":
            if graph.arch != "pix2pix":
                raise criteria.PlanError(
                    "uniform+ (keep first encoder / last prunable decoder "
                    "layer) is defined for the pix2pix arch")
            exclude = sorted(set(exclude) | {"C1", "U2"})
            mode = "uniform"
        if mode == "global-lamp":
            chosen = args.criterion or "lamp"
            mode = "global"
        else:
            chosen = args.criterion or "l2"
        scores = criteria.score(graph, store, chosen)
        if mode == "uniform":
            if args.ratio is None:
                raise criteria.PlanError("this mode needs --ratio")
            plan = criteria.plan_uniform(graph, scores, args.ratio,
                                         criterion=chosen, exclude=exclude)
        elif mode == "global":
            if args.ratio is None:
                raise criteria.PlanError("this mode needs --ratio")
            plan = criteria.plan_global(graph, scores, args.ratio,
                                        criterion=chosen, exclude=exclude)
        elif mode == "inner":
            if not args.layers:
                raise criteria.PlanError("--mode inner needs --layers")
            plan = criteria.plan_inner(graph, scores,
                                       _parse_layer_ratios(args.layers),
                                       criterion=chosen)
        else:
            raise criteria.PlanError(f"unknown plan mode '{mode}'")
    _emit(criteria.plan_to_json(plan), args.out)
    return EXIT_OK


def cmd_prune(args: argparse.Namespace) -> int:
    graph, store = _load_model(args.model)
    plan = criteria.plan_from_json(Path(args.plan).read_text())
    result = transform.apply_plan(graph, store, plan,
                                  policy=args.policy, seed=args.seed)
    weights.save(args.out, result.graph, result.store)
    sidecar = Path(args.out).with_suffix(Path(args.out).suffix + ".maps.json")
    sidecar.write_text(json.dumps(
        transform.channel_maps_to_json_dict(result.channel_maps), indent=2))
    summary = costs.diff_reports(costs.full_report(graph),
                                 costs.full_report(result.graph))
    sys.stdout.write(costs.render_summary(summary) + "\n")
    return EXIT_OK


def cmd_cut_layers(args: argparse.Namespace) -> int:
    graph, store = _load_model(args.model)
    new_graph, new_store = transform.remove_inner_layers(
        graph, store, args.depth, policy=args.policy, seed=args.seed)
    weights.save(args.out, new_graph, new_store)
    summary = costs.diff_reports(costs.full_report(graph),
                                 costs.full_report(new_graph))
    sys.stdout.write(costs.render_summary(summary) + "\n")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    graph, store = _load_model(args.model)
    rows = analysis.sensitivity_sweep(graph, store,
                                      ratios=_parse_ratio_list(args.ratios),
                                      criterion=args.criterion,
                                      n_probes=args.probes, seed=args.seed)
    _emit(analysis.sweep_to_csv(rows), args.out)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    graph, store = _load_model(args.model)
    plan = criteria.plan_from_json(Path(args.plan).read_text())
    report = analysis.verify_masked_equivalence(
        graph, store, plan, n_probes=args.probes, seed=args.seed,
        tolerance=args.tol)
    sys.stdout.write(report.summary() + "\n")
    if not report.passed and report.per_node_dev:
        worst = sorted(report.per_node_dev.items(), key=lambda kv: -kv[1])[:5]
        for nid, dev in worst:
            sys.stdout.write(f"  node {nid}: max |dev| {dev:.3g}\n")
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def cmd_bench(args: argparse.Namespace) -> int:
    graph, store = _load_model(args.model)
    result = analysis.bench(graph, store, n_warmup=args.warmup,
                            n_runs=args.runs, seed=args.seed)
    _emit(result.to_json(), args.out)
    if args.baseline:
        baseline = analysis.BenchResult.from_json(Path(args.baseline).read_text())
        sys.stdout.write(f"speedup vs baseline: "
                         f"{result.speedup_vs(baseline):.2f}x\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unetprune",
        description="Structured pruning for U-Net generator graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="emit a generator topology JSON")
    p.add_argument("--arch", required=True, choices=("pix2pix", "wav2lip"))
    p.add_argument("--nf", type=int, default=None,
                   help="base filter count (pix2pix)")
    p.add_argument("--scales", default=None, metavar="nVF,nAF,nDF",
                   help="base filter triple (wav2lip)")
    p.add_argument("--input-size", default=None, metavar="HxW",
                   help="pix2pix input size (default 256x256; must be "
                        "divisible by 256)")
    p.add_argument("--in-channels", type=int, default=3)
    p.add_argument("--out-channels", type=int, default=3)
    p.add_argument("--norm", default="batch",
                   choices=("batch", "instance", "none"))
    p.add_argument("--table", default=None,
                   help="custom wav2lip layer table JSON")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("cost", help="parameter/MAC report")
    p.add_argument("model", help="topology JSON or weight container")
    p.add_argument("--weights", default=None,
                   help="container to validate against the graph")
    p.add_argument("--csv", action="store_true")
    p.add_argument("--compare", default=None,
                   help="baseline to diff against (prints reduction factors)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("init-weights",
                       help="write a randomly initialized container")
    p.add_argument("graph")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("score", help="filter importance scores as CSV")
    p.add_argument("model")
    p.add_argument("--criterion", default="l2", choices=criteria.CRITERIA)
    p.add_argument("--layer", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser(
        "plan", help="construct a pruning plan JSON",
        epilog="presets: " + _preset_help())
    p.add_argument("model")
    p.add_argument("--mode", default=None,
                   choices=("uniform", "uniform+", "global", "global-lamp",
                            "inner", "preset", "pairs"))
    p.add_argument("--criterion", default=None, choices=criteria.CRITERIA)
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--layers", default=None, metavar="L=R,L=R")
    p.add_argument("--exclude", default=None, metavar="L,L")
    p.add_argument("--preset", default=None, choices=sorted(criteria.PRESETS))
    p.add_argument("--depth", type=int, default=None, choices=(1, 2, 3))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("prune", help="apply a plan to a weight container "
                                     "(writes a .maps.json audit sidecar)")
    p.add_argument("model")
    p.add_argument("plan")
    p.add_argument("--policy", default="skip",
                   choices=transform.LAYER_REMOVAL_POLICIES,
                   help="surviving-decoder policy for layer-pair plans")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("cut-layers",
                       help="remove innermost mirrored layer pairs")
    p.add_argument("model")
    p.add_argument("--depth", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--policy", default="skip",
                   choices=transform.LAYER_REMOVAL_POLICIES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cut_layers)

    p = sub.add_parser("sweep", help="per-layer sensitivity sweep CSV")
    p.add_argument("model")
    p.add_argument("--ratios", default="0.25,0.5,0.75")
    p.add_argument("--criterion", default="l2", choices=criteria.CRITERIA)
    p.add_argument("--probes", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="masked-equivalence check of a plan")
    p.add_argument("model")
    p.add_argument("plan")
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--tol", type=float, default=analysis.DEFAULT_TOLERANCE)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="forward-latency benchmark (JSON)")
    p.add_argument("model")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baseline", default=None,
                   help="earlier bench JSON; prints the speedup against it")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BuildError, criteria.PlanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    except GraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    except json.JSONDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE


def entry() -> None:
    sys.exit(main())
