"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected in ``RESULTS`` and echoed in the terminal summary.
"""

from __future__ import annotations

import functools
import json
import random
import subprocess
import sys
import textwrap
import time
import warnings
from collections import Counter
from pathlib import Path

from kgvqa.answerers import (
    OracleAnswerer, PoolAnswerer, RandomAnswerer, RolePickerAnswerer, VisionBiasedAnswerer, default_language_pool,
)
from kgvqa.builder import BuildConfig, OptionRole, build_dataset, validate_instance
from kgvqa.causal import CausalConfig, InterventionKind, build_intervention_pairs, causal_report
from kgvqa.cave import TemplateDecomposer, ToolSet, replay_trace, run_cave, stability_check
from kgvqa.cli import main
from kgvqa.diversity import hdd, mattr, mtld
from kgvqa.evaluation import evaluate
from kgvqa.paths import sample_query_paths
from kgvqa.synthetic import random_kg, write_graph_files, write_scale_graph
from kgvqa.utils import normalize_text

from conftest import TOY_DIR
from oracles import as_tuple, brute_force_paths, hdd_ref, mattr_ref, mtld_ref, random_token_sequences

RESULTS: dict[int, str] = {}
_T0 = time.perf_counter()


def criterion(n: int, title: str):
    """Record PASS/FAIL for criterion ``n``; the test body returns a detail string."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                RESULTS[n] = f"FAIL criterion {n:>2} ({title}): {type(exc).__name__}: {str(exc)[:200]}"
                print(RESULTS[n])
                raise
            RESULTS[n] = f"PASS criterion {n:>2} ({title}): {detail}"
            print(RESULTS[n])
        return run
    return wrap


def _role_ok(inst) -> bool:
    return (len({normalize_text(o.text) for o in inst.options}) == 4
            and Counter(o.role for o in inst.options) == Counter(OptionRole))


@criterion(1, "sampler equals brute force")
def test_c01_sampler_oracle_equivalence():
    t = time.perf_counter()
    graphs = {
        "plain": random_kg(11, n_anchors=60, n_values=6),
        "parallel": random_kg(12, n_anchors=60, n_values=6, p_parallel=0.4),
        "non_functional": random_kg(13, n_anchors=60, n_values=6, p_non_functional=0.4),
        "mixed": random_kg(14, n_anchors=40, n_values=3, p_parallel=0.3, p_non_functional=0.3),
    }
    compared = 0
    for name, g in graphs.items():
        assert len(g.entities) <= 200, name
        raw = set(g.iter_triples())
        for a in g.anchor_candidates():
            for n in (1, 2):
                got = {as_tuple(p) for p in sample_query_paths(g, a, n, 0, None)}
                assert got == brute_force_paths(raw, a, n), (name, a, n)
                compared += len(got)
    # the special graphs must actually contain what they are meant to exercise
    par = graphs["parallel"]
    edges = Counter((h, t) for h, _, t in par.iter_triples())
    assert max(edges.values()) > 1
    nf = graphs["non_functional"]
    assert any(len(nf.objects_of(h, r)) > 1 for h, r, _ in nf.iter_triples() if r.startswith("R_"))
    elapsed = time.perf_counter() - t
    assert compared > 0 and elapsed < 5.0, elapsed
    return f"{len(graphs)} graphs, {compared} paths identical, {elapsed:.2f}s"


@criterion(2, "builder validity")
def test_c02_builder_validity(toy_graph, synth_graph, synth_dataset):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        toy = build_dataset(toy_graph, BuildConfig(4, 1, 1), 7, PoolAnswerer(default_language_pool(toy_graph)))
    assert len(toy) == 6 and len(synth_dataset) == 1000
    for graph, ds in ((toy_graph, toy), (synth_graph, synth_dataset)):
        for inst in ds:
            assert validate_instance(inst, graph) == [], inst.id
            assert _role_ok(inst), inst.id
    return "6/6 toy and 1000/1000 synthetic instances valid, 4 distinct options, one per role"


@criterion(3, "oracle extremes")
def test_c03_oracle_extremes(toy_graph, synth_graph, synth_dataset):
    toy = build_dataset(toy_graph, BuildConfig(4, 1, 1), 7, PoolAnswerer(default_language_pool(toy_graph)))
    assert evaluate(OracleAnswerer(toy_graph), toy, "all").accuracy_overall == 1.0
    assert evaluate(OracleAnswerer(synth_graph), synth_dataset, "all").accuracy_overall == 1.0
    rep = causal_report(OracleAnswerer(synth_graph), synth_dataset, CausalConfig.uniform(0), graph=synth_graph)
    got = {k: r.mean_delta for k, r in rep.per_kind.items()}
    assert got == {"TCE_Q": 1.0, "DCE_T": 0.0, "TCE_I": 1.0, "DCE_C": 0.0}, got
    counts = {k: r.pair_count for k, r in rep.per_kind.items()}
    assert min(counts.values()) >= 50, counts
    return f"accuracy 1.000 (toy, synthetic); effects {got}; pairs {counts}"


@criterion(4, "bias-stub calibration")
def test_c04_bias_stub_calibration(synth_graph, synth_dataset):
    vb = VisionBiasedAnswerer(synth_graph)
    rep = evaluate(vb, synth_dataset, "all")
    assert rep.role_distribution["VisionBias"] == 1.0 and rep.accuracy_overall == 0.0
    cfg = CausalConfig(seed=0, counts={"TCE_Q": 100, "DCE_C": 100})
    effects = causal_report(vb, synth_dataset, cfg, graph=synth_graph).per_kind
    assert effects["TCE_Q"].mean_delta == 0.0 and effects["DCE_C"].mean_delta == 0.0
    gt = evaluate(RolePickerAnswerer(OptionRole.GroundTruth), synth_dataset, "all").accuracy_overall
    assert gt == 1.0
    return "vision_biased: VisionBias 1.00, accuracy 0.00, TCE_Q 0.00, DCE_C 0.00; role_picker(GroundTruth) 1.00"


@criterion(5, "random baseline")
def test_c05_random_baseline(synth_dataset):
    a = evaluate(RandomAnswerer(0), synth_dataset, "all")
    b = evaluate(RandomAnswerer(0), synth_dataset, "all")
    assert a.n_instances["all"] == 1000
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert 0.215 <= a.accuracy_overall <= 0.285, a.accuracy_overall
    return f"seed 0 accuracy {a.accuracy_overall:.3f} over 1000, replay identical"


def _independent_check(kind: InterventionKind, pre, post) -> list[str]:
    gt = lambda i: i.options[i.answer_index].text.strip().casefold()  # noqa: E731
    bad = []
    if kind in (InterventionKind.DCE_T, InterventionKind.DCE_C):
        if pre.path.ground_truth != post.path.ground_truth or gt(pre) != gt(post):
            bad.append("DCE changed ground truth")
        if pre.entity != post.entity:
            bad.append("DCE changed entity")
    else:
        if gt(pre) == gt(post) or pre.path.ground_truth == post.path.ground_truth:
            bad.append("TCE kept ground truth")
    if kind == InterventionKind.TCE_Q:
        if (pre.image_ref, pre.entity) != (post.image_ref, post.entity) or pre.question == post.question:
            bad.append("TCE_Q must change only the question")
    elif kind == InterventionKind.DCE_T:
        if pre.question == post.question or (pre.image_ref, pre.path, pre.options) != (post.image_ref, post.path, post.options):
            bad.append("DCE_T must change only the wording")
    elif kind == InterventionKind.TCE_I:
        if pre.question != post.question or pre.entity == post.entity or pre.image_ref == post.image_ref:
            bad.append("TCE_I must keep the question and swap the entity")
    elif kind == InterventionKind.DCE_C:
        if pre.image_ref == post.image_ref or (pre.question, pre.path, pre.options) != (post.question, post.path, post.options):
            bad.append("DCE_C must change only the image")
    return bad


@criterion(6, "intervention protocol fidelity")
def test_c06_intervention_protocol(synth_graph, synth_dataset):
    sizes = {}
    for kind in InterventionKind:
        sample = build_intervention_pairs(synth_dataset, kind, 0, graph=synth_graph)
        assert sample.eligible >= 100, (kind, sample.eligible)
        assert len(sample) == 100, (kind, len(sample))
        assert len({(p.pre.id, p.post.id) for p in sample}) == 100
        for pair in sample:
            problems = _independent_check(kind, pair.pre, pair.post)
            assert not problems, (kind, pair.pre.id, problems)
        sizes[kind.value] = len(sample)
    return f"pairs {sizes}, all pass independent re-check"


@criterion(7, "lexical diversity oracles")
def test_c07_metric_oracles():
    rng = random.Random(2024)
    seqs = random_token_sequences(rng, 50, 43, 500)
    assert len(seqs) == 50 and all(43 <= len(s) <= 500 for s in seqs)
    worst = 0.0
    for s in seqs:
        for got, ref in ((mattr(s), mattr_ref(s, 50)), (mtld(s), mtld_ref(s, 0.72)), (hdd(s), hdd_ref(s, 42))):
            worst = max(worst, abs(got - ref))
    assert worst <= 1e-9, worst
    assert mattr(list("aab"), 2) == 0.75
    assert mattr(list("aaaa"), 2) == 0.5
    assert mattr([f"w{i}" for i in range(30)], 7) == 1.0
    assert mtld([f"w{i}" for i in range(30)]) == 30.0
    assert mtld(["a"] * 20) == mtld_ref(["a"] * 20)
    assert hdd(["x"] * 42, 42) == 1 / 42
    assert hdd([f"w{i}" for i in range(42)], 42) == 1.0
    return f"50 sequences, max abs error {worst:.1e}; hand examples exact"


@criterion(8, "CAVE loop")
def test_c08_cave():
    graph = random_kg(8, n_anchors=400)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ds = build_dataset(graph, BuildConfig(400, 200, 100), 8, PoolAnswerer(default_language_pool(graph)))
    dev = ds.by_split("dev")
    assert len(dev) == 200
    tools = ToolSet.from_graph(graph)
    decomposer = TemplateDecomposer.from_graph(graph)
    oracle = OracleAnswerer(graph)
    correct = 0
    for inst in dev:
        rec, trace = run_cave(inst, tools, oracle, decomposer=decomposer, graph=graph)
        correct += rec.choice_index == inst.answer_index
        assert replay_trace(trace.to_dict(), inst, tools, oracle, decomposer=decomposer, graph=graph), inst.id
        verdict = stability_check(decomposer, inst, graph)
        assert verdict.stable, (inst.id, verdict.reason)
    acc = correct / len(dev)
    assert acc >= 0.95, acc
    return f"accuracy {acc:.3f} on 200 dev, all traces replay, all variants Stable"


def _pipeline(workdir: Path, graph_args: list[str], sizes: tuple[int, int, int]) -> dict[str, bytes]:
    ds = workdir / "data.jsonl"
    steps = [
        ["build", *graph_args, "--train", str(sizes[0]), "--dev", str(sizes[1]), "--test", str(sizes[2]),
         "--seed", "7", "--lang-bias", "stub", "--out", str(ds)],
        ["intervene", "--dataset", str(ds), "--answerer", "oracle", "--seed", "7", "--out", str(workdir / "int.json")],
        ["intervene", "--dataset", str(ds), "--answerer", "random", "--seed", "7", "--out", str(workdir / "int_r.json")],
        ["evaluate", "--dataset", str(ds), "--answerer", "random", "--seed", "7", "--out", str(workdir / "ev.json")],
        ["evaluate", "--dataset", str(ds), "--answerer", "vision_biased", "--seed", "7", "--out", str(workdir / "ev_vb.json")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    out = {p.name: p.read_bytes() for p in sorted(workdir.iterdir())}
    for p in workdir.iterdir():
        p.unlink()
    return out


@criterion(9, "end-to-end determinism")
def test_c09_end_to_end_determinism(tmp_path):
    toy_args = ["--graph", str(TOY_DIR / "triples.tsv"), "--labels", str(TOY_DIR / "labels.tsv"),
                "--meta", str(TOY_DIR / "meta.jsonl")]
    tp, lp, mp = write_graph_files(random_kg(0, n_anchors=300), tmp_path / "kg")
    synth_args = ["--graph", str(tp), "--labels", str(lp), "--meta", str(mp)]
    n_files = 0
    for args, sizes in ((toy_args, (4, 1, 1)), (synth_args, (800, 100, 100))):
        work = tmp_path / "run"
        work.mkdir(exist_ok=True)
        first = _pipeline(work, args, sizes)
        second = _pipeline(work, args, sizes)
        assert first.keys() == second.keys()
        for name in first:
            assert first[name] == second[name], name
        n_files += len(first)
    elapsed = time.perf_counter() - _T0
    assert elapsed < 120, elapsed
    return f"{n_files} artifacts byte-identical across reruns; criteria 1-9 took {elapsed:.1f}s"


_SCALE_SCRIPT = textwrap.dedent("""
    import json, resource, sys, time
    from kgvqa.graph import load_graph
    from kgvqa.paths import sample_query_paths
    t = time.perf_counter()
    g = load_graph(sys.argv[1], sys.argv[2], sys.argv[3])
    loaded = time.perf_counter() - t
    anchors = g.anchor_candidates()
    paths = 0
    for i, a in enumerate(anchors):
        for n in (1, 2):
            paths += len(sample_query_paths(g, a, n, i, 10))
    print(json.dumps({"triples": g.n_triples, "anchors": len(anchors), "paths": paths, "load_s": loaded,
                      "total_s": time.perf_counter() - t,
                      "peak_mb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024}))
""")


@criterion(10, "scale smoke test")
def test_c10_scale(tmp_path):
    files = write_scale_graph(tmp_path, n_triples=1_000_000, n_anchors=1_000)
    proc = subprocess.run([sys.executable, "-c", _SCALE_SCRIPT, *map(str, files)],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr[-2000:]
    stats = json.loads(proc.stdout)
    assert stats["triples"] > 990_000 and stats["anchors"] == 1000
    assert stats["total_s"] < 60, stats
    assert stats["peak_mb"] < 2048, stats
    return (f"{stats['triples']} triples, {stats['anchors']} anchors, {stats['paths']} paths; "
            f"load {stats['load_s']:.1f}s, total {stats['total_s']:.1f}s, peak {stats['peak_mb']:.0f} MB")
