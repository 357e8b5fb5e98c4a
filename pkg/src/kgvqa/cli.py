"""Command-line entry point: ingest, sample, build, evaluate, intervene, cave, stats.

Exit codes: 0 success, 1 usage error, 2 data error, 3 transport exhaustion.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Sequence

from . import __version__
from .answerers import (
    Answerer, HashAnswerer, OracleAnswerer, PoolAnswerer, RandomAnswerer, RolePickerAnswerer,
    VisionBiasedAnswerer, default_language_pool,
)
from .builder import BuildConfig, Dataset, OptionRole, build_dataset, validate_dataset
from .causal import CausalConfig, InterventionKind, causal_report
from .cave import CaveConfig, TemplateDecomposer, ToolSet, run_cave
from .diversity import question_stats
from .errors import AnchorIneligible, DataError, KGVQAError, TransportError
from .evaluation import evaluate
from .graph import KnowledgeGraph, load_graph
from .http import HttpAnswerer, EndpointConfig
from .paths import sample_query_paths
from .utils import derive_seed, dump_json, file_digest, write_jsonl

logger = logging.getLogger("kgvqa")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRANSPORT = 0, 1, 2, 3
STUB_ANSWERERS = ("oracle", "vision_biased", "random", "hash", "role:ROLE", "http:CONFIG")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argparse with usage errors mapped to exit code 1 (argparse itself uses 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# -- argument parsing --------------------------------------------------------

def _graph_args(p, required=True):
    p.add_argument("--graph", required=required, help="triples TSV (head, relation, tail)")
    p.add_argument("--labels", required=required, help="labels TSV (id, label)")
    p.add_argument("--meta", help="entity meta JSONL (entity, type_label, image_refs)")
    p.add_argument("--instance-of", dest="instance_of", help="relation id used as a type-label fallback")


def _common(p):
    p.add_argument("--parallelism", type=int, default=1, help="in-flight answerer calls (default sequential)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgvqa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kgvqa {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", help="load a graph and report its size")
    _graph_args(p)
    p.add_argument("--out", help="write the summary JSON here (default stdout)")
    _common(p)

    p = sub.add_parser("sample", help="sample query paths for anchors")
    _graph_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--hops", type=int, nargs="+", default=[1, 2], choices=[1, 2])
    p.add_argument("--anchor", action="append", help="anchor entity (repeatable; default all candidates)")
    p.add_argument("--max-per-anchor", type=int, dest="max_per_anchor")
    p.add_argument("--out", required=True, help="paths JSONL")
    _common(p)

    p = sub.add_parser("build", help="build a multiple-choice dataset")
    _graph_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--train", type=int, default=10_000)
    p.add_argument("--dev", type=int, default=1_000)
    p.add_argument("--test", type=int, default=1_000)
    p.add_argument("--two-hop-fraction", type=float, dest="two_hop_fraction")
    p.add_argument("--max-per-anchor", type=int, dest="max_per_anchor")
    p.add_argument("--template-variant", type=int, default=0, choices=[0, 1], dest="template_variant")
    p.add_argument("--lang-bias", default="stub", dest="lang_bias",
                   help="'stub' (label pool) or http:CONFIG for a question-only endpoint")
    p.add_argument("--out", required=True, help="dataset JSONL; provenance goes to <out>.meta.json")
    _common(p)

    for name, help_ in (("evaluate", "accuracy and option-role distribution"),
                        ("intervene", "causal intervention report"),
                        ("cave", "run the agent loop as the answerer")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--dataset", required=True)
        p.add_argument("--answerer", required=True, help="one of " + ", ".join(STUB_ANSWERERS))
        p.add_argument("--seed", type=int, required=True)
        _graph_args(p, required=False)
        if name == "intervene":
            p.add_argument("--count", type=int, default=100)
            p.add_argument("--kinds", nargs="+", choices=[k.value for k in InterventionKind],
                           default=[k.value for k in InterventionKind])
            p.add_argument("--split", default=None, help="restrict pairs to one split (default all)")
            p.add_argument("--relax-question-match", action="store_true", dest="relax_question_match")
            p.add_argument("--ci", action="store_true", help="add normal-approximation 95%% intervals")
        else:
            p.add_argument("--split", default="test")
        if name == "cave":
            p.add_argument("--k", type=int, default=3)
            p.add_argument("--rounds", type=int, default=3)
            p.add_argument("--traces", help="agent traces JSONL")
        p.add_argument("--out", required=True, help="report JSON; a CSV summary goes next to it")
        _common(p)

    p = sub.add_parser("stats", help="lexical diversity and question-prefix statistics")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset")
    src.add_argument("--questions", help="plain text, one question per line")
    p.add_argument("--split", default=None)
    p.add_argument("--prefix-depth", type=int, default=2, dest="prefix_depth")
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--threshold", type=float, default=0.72)
    p.add_argument("--sample-size", type=int, default=42, dest="sample_size")
    p.add_argument("--out", help="write JSON here (default stdout)")
    _common(p)
    return parser


# -- helpers -----------------------------------------------------------------

def _inputs(**paths) -> dict:
    return {k: {"path": str(v), "sha256": file_digest(v)} for k, v in paths.items() if v}


def _provenance(args, inputs: dict) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose", "func")}
    return {"tool": "kgvqa", "version": __version__, "seed": getattr(args, "seed", None),
            "command": args.command, "config": config, "inputs": inputs}


def _load_graph(graph, labels, meta, instance_of=None) -> KnowledgeGraph:
    try:
        return load_graph(graph, labels, meta, instance_of_relation=instance_of)
    except OSError as exc:
        raise DataError(f"cannot read graph input: {exc}") from None


def _graph_from_args(args) -> tuple[KnowledgeGraph, dict]:
    return (_load_graph(args.graph, args.labels, args.meta, args.instance_of),
            _inputs(graph=args.graph, labels=args.labels, meta=args.meta))


def _sidecar(dataset_path) -> Path:
    return Path(f"{dataset_path}.meta.json")


def _graph_for_dataset(args) -> tuple[KnowledgeGraph | None, dict]:
    """Graph named on the command line, else the one recorded in the dataset sidecar."""
    if args.graph or args.labels:
        if not (args.graph and args.labels):
            raise UsageError("--graph and --labels go together")
        return _graph_from_args(args)
    side = _sidecar(args.dataset)
    if not side.exists():
        return None, {}
    try:
        info = json.loads(side.read_text(encoding="utf-8"))["graph"]
    except (ValueError, KeyError) as exc:
        raise DataError(f"bad dataset sidecar {side}: {exc!r}") from None
    files = {k: info.get(k) for k in ("graph", "labels", "meta")}
    return (_load_graph(files["graph"], files["labels"], files["meta"], info.get("instance_of")),
            _inputs(**files))


def _load_dataset(path) -> Dataset:
    try:
        return Dataset.from_jsonl(path)
    except OSError as exc:
        raise DataError(f"cannot read dataset: {exc}") from None
    except ValueError as exc:
        raise DataError(f"bad dataset {path}: {exc}") from None


def make_answerer(choice: str, seed: int, graph: KnowledgeGraph | None) -> Answerer:
    """Resolve an answerer name (``oracle``, ``vision_biased``, ``random``, ``hash``,
    ``role:ROLE``, ``http:CONFIG``)."""
    if choice == "oracle":
        if graph is None:
            raise UsageError("the oracle answerer needs a graph (--graph/--labels or a dataset sidecar)")
        return OracleAnswerer(graph)
    if choice == "vision_biased":
        if graph is None:
            raise UsageError("the vision_biased answerer needs a graph (--graph/--labels or a dataset sidecar)")
        return VisionBiasedAnswerer(graph)
    if choice == "random":
        return RandomAnswerer(derive_seed(seed, "answerer"))
    if choice == "hash":
        return HashAnswerer()
    if choice.startswith("role:"):
        try:
            return RolePickerAnswerer(OptionRole(choice[5:]))
        except ValueError:
            raise UsageError(f"unknown role {choice[5:]!r}; expected one of {[r.value for r in OptionRole]}") from None
    if choice.startswith("http:"):
        return HttpAnswerer(EndpointConfig.from_file(choice[5:]))
    raise UsageError(f"unknown answerer {choice!r}; expected one of {', '.join(STUB_ANSWERERS)}")


def _check_transport(errors: Sequence[str | None]) -> None:
    """Exit code 3 when every answer failed for transport reasons."""
    if errors and all(e and e.startswith("TransportError") for e in errors):
        raise TransportError(errors[-1])


def _write_report(out, report: dict, csv_text: str | None = None) -> None:
    dump_json(out, report)
    if csv_text is not None:
        Path(out).with_suffix(".csv").write_text(csv_text, encoding="utf-8", newline="")


def _emit(out, obj) -> None:
    if out:
        dump_json(out, obj)
    else:
        sys.stdout.write(json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


# -- subcommands -------------------------------------------------------------

def cmd_ingest(args) -> int:
    graph, inputs = _graph_from_args(args)
    c = graph.counts()
    c["anchor_candidates"] = len(graph.anchor_candidates())
    _emit(args.out, {"counts": c, "provenance": _provenance(args, inputs)})
    return EXIT_OK


def cmd_sample(args) -> int:
    graph, _ = _graph_from_args(args)
    anchors = args.anchor or graph.anchor_candidates()
    rows = []
    for a in anchors:
        for n in sorted(set(args.hops)):
            try:
                paths = sample_query_paths(graph, a, n, derive_seed(args.seed, "paths", a, n), args.max_per_anchor)
            except AnchorIneligible as exc:
                logger.warning("%s", exc)
                break
            rows.extend(p.to_dict() for p in paths)
    write_jsonl(args.out, rows)
    logger.info("wrote %d paths for %d anchors", len(rows), len(anchors))
    return EXIT_OK


def cmd_build(args) -> int:
    graph, inputs = _graph_from_args(args)
    if args.lang_bias == "stub":
        lb: Answerer = PoolAnswerer(default_language_pool(graph))
    elif args.lang_bias.startswith("http:"):
        lb = HttpAnswerer(EndpointConfig.from_file(args.lang_bias[5:]), mode="question-only")
    else:
        raise UsageError(f"--lang-bias: expected 'stub' or http:CONFIG, got {args.lang_bias!r}")
    config = BuildConfig(args.train, args.dev, args.test, args.two_hop_fraction,
                         args.max_per_anchor, args.template_variant)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        dataset = build_dataset(graph, config, args.seed, lb)
    bad = validate_dataset(dataset, graph)
    if bad:
        first = next(iter(bad.items()))
        raise DataError(f"{len(bad)} invalid instance(s), e.g. {first[0]}: {first[1]}")
    dataset.to_jsonl(args.out)
    counts: dict[str, int] = {}
    for inst in dataset:
        counts[inst.split] = counts.get(inst.split, 0) + 1
    dump_json(_sidecar(args.out), {
        "n_instances": counts,
        "exhausted": dataset.exhausted,
        "notes": dataset.notes,
        "graph": {"graph": args.graph, "labels": args.labels, "meta": args.meta, "instance_of": args.instance_of},
        "provenance": _provenance(args, inputs),
    })
    for note in dataset.notes:
        logger.warning("%s", note)
    return EXIT_OK


def _prepare(args):
    dataset = _load_dataset(args.dataset)
    graph, inputs = _graph_for_dataset(args)
    inputs = {"dataset": {"path": str(args.dataset), "sha256": file_digest(args.dataset)}, **inputs}
    answerer = make_answerer(args.answerer, args.seed, graph)
    return dataset, graph, inputs, answerer


def cmd_evaluate(args) -> int:
    dataset, _, inputs, answerer = _prepare(args)
    try:
        report = evaluate(answerer, dataset, args.split, args.parallelism)
    except KeyError as exc:
        raise UsageError(f"--split: {exc.args[0]}") from None
    report.provenance = _provenance(args, inputs)
    _write_report(args.out, report.to_dict(), report.to_csv())
    _check_transport([r["error"] for r in report.records])
    return EXIT_OK


def cmd_intervene(args) -> int:
    dataset, graph, inputs, answerer = _prepare(args)
    counts = {k.value: (args.count if k.value in args.kinds else 0) for k in InterventionKind}
    config = CausalConfig(args.seed, counts, args.split, args.relax_question_match, args.ci, args.parallelism)
    report = causal_report(answerer, dataset, config, graph=graph)
    report.provenance = _provenance(args, inputs)
    _write_report(args.out, report.to_dict(), report.to_csv())
    _check_transport([rec.error for k in report.per_kind.values() for p in k.pairs for rec in (p.pre, p.post)])
    return EXIT_OK


def cmd_cave(args) -> int:
    dataset, graph, inputs, answerer = _prepare(args)
    if graph is None:
        raise UsageError("cave needs a graph (--graph/--labels or a dataset sidecar)")
    tools = ToolSet.from_graph(graph)
    decomposer = TemplateDecomposer.from_graph(graph)
    config = CaveConfig(args.rounds, args.k)
    instances = dataset.by_split(args.split)
    if not instances:
        raise UsageError(f"--split: no instances in split {args.split!r}")
    traces, correct, invalid = [], 0, 0
    for inst in instances:
        try:
            record, trace = run_cave(inst, tools, answerer, config, decomposer=decomposer, graph=graph)
        except TransportError:
            raise
        except KGVQAError as exc:  # one broken instance must not abort the run
            logger.warning("agent failed on %s: %s", inst.id, exc)
            invalid += 1
            traces.append({"instance_id": inst.id, "error": f"{type(exc).__name__}: {exc}"})
            continue
        correct += record.choice_index == inst.answer_index
        invalid += record.choice_index is None
        traces.append(trace.to_dict())
    n = len(instances)
    report = {
        "answerer": f"cave({getattr(answerer, 'name', type(answerer).__name__)})",
        "split": args.split,
        "accuracy_overall": correct / n,
        "invalid_rate": invalid / n,
        "n_instances": n,
        "cave_config": config.to_dict(),
        "provenance": _provenance(args, inputs),
    }
    csv_text = "answerer,split,n,accuracy,invalid_rate\n" + \
        f"{report['answerer']},{args.split},{n},{report['accuracy_overall']:.6f},{report['invalid_rate']:.6f}\n"
    _write_report(args.out, report, csv_text)
    if args.traces:
        write_jsonl(args.traces, traces)
    return EXIT_OK


def cmd_stats(args) -> int:
    if args.dataset:
        dataset = _load_dataset(args.dataset)
        questions = [i.question for i in dataset.by_split(args.split)]
        inputs = _inputs(dataset=args.dataset)
    else:
        try:
            text = Path(args.questions).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read questions: {exc}") from None
        questions = [line.strip() for line in text.splitlines() if line.strip()]
        inputs = _inputs(questions=args.questions)
    try:
        stats = question_stats(questions, args.window, args.threshold, args.sample_size, args.prefix_depth)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    stats["provenance"] = _provenance(args, inputs)
    _emit(args.out, stats)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "sample": cmd_sample,
    "build": cmd_build,
    "evaluate": cmd_evaluate,
    "intervene": cmd_intervene,
    "cave": cmd_cave,
    "stats": cmd_stats,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help / --version exit 0, usage errors exit 1
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.print_usage(sys.stderr)
        sys.stderr.write(f"kgvqa {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except TransportError as exc:
        sys.stderr.write(f"kgvqa {args.command}: transport error: {exc}\n")
        return EXIT_TRANSPORT
    except (DataError, KGVQAError) as exc:
        sys.stderr.write(f"kgvqa {args.command}: data error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
