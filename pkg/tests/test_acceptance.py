"""Acceptance criteria, one test each; every test prints a PASS/FAIL line with its measured values."""

import io
import json
import time
from fractions import Fraction

import numpy as np
import pytest
from shapely.geometry import box as shapely_box

from conftest import random_frame, random_sequence
from latentgraph.batching import tensorize
from latentgraph.benchmarks import editing_ablation, horizon_ablation
from latentgraph.cli import main as cli_main
from latentgraph.decoder import GnnConfig, ModelConfig, Task, TcnConfig, forward, forward_frames, init_params, \
    tcn_forward
from latentgraph.editing import EditConfig, edit_graph
from latentgraph.graph import FrameGraph, NodeRef
from latentgraph.io import load_video_graph, read_frame_graphs, save_video_graph, write_frame_graphs
from latentgraph.metrics import average_precision, macro_f1, map_over_criteria
from latentgraph.nn import Tape, Tensor, gradient_check
from latentgraph.synth import NUM_SPATIAL_RELATIONS, WorldConfig, generate_splits
from latentgraph.temporal import assemble_video_graph, build_temporal_edges, cosine_sim, giou, make_schedule
from latentgraph.training import LabeledSample, TrainConfig, evaluate, load_model, save_model, train


@pytest.fixture
def verdict(capsys):
    """``verdict(n, ok, detail)`` prints the criterion line, then fails the test when ``ok`` is false."""

    def report(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nCRITERION {n:2d}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return report


def _frame(rng, t, n):
    return random_frame(rng, t, n, dim=8, num_classes=6, num_rel=4)


def test_01_count_law(verdict):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        n, m = (int(x) for x in rng.integers(0, 13, size=2))
        w = int(rng.integers(1, 9))
        es = build_temporal_edges(_frame(rng, 0, n), _frame(rng, w, m), 0, w)
        expected = 4 * (n + m) if n and m else 0
        bad += len(es) != expected
    dt = time.perf_counter() - t0
    verdict(1, bad == 0 and dt < 5, f"{bad} mismatches over 1000 pairs in {dt:.2f}s")


def _giou_oracle(a, b) -> float:
    pa, pb = shapely_box(*a), shapely_box(*b)
    union = pa.union(pb).area
    hull = shapely_box(min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])).area
    return pa.intersection(pb).area / union - (hull - union) / hull


def _cosine_oracle(a, b) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (sum(x * x for x in a) ** 0.5 * sum(y * y for y in b) ** 0.5)


def test_02_kernels(verdict):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst_g = worst_c = 0.0
    for _ in range(10_000):
        xy = rng.uniform(0, 0.8, size=(2, 2))
        wh = rng.uniform(0.01, 0.3, size=(2, 2))
        a, b = (tuple(np.concatenate([xy[k], xy[k] + wh[k]]).tolist()) for k in range(2))
        worst_g = max(worst_g, abs(giou(a, b) - _giou_oracle(a, b)))
        u, v = rng.normal(size=(2, 16)).tolist()
        worst_c = max(worst_c, abs(cosine_sim(u, v) - _cosine_oracle(u, v)))
    examples = [((0, 0, .2, .2), (.1, .1, .3, .3), Fraction(-5, 63)), ((0, 0, .1, .1), (.2, .2, .3, .3),
                Fraction(-7, 9)), ((.1, .2, .4, .6), (.1, .2, .4, .6), Fraction(1))]
    worst_ex = max(abs(giou(a, b) - float(e)) for a, b, e in examples)
    dt = time.perf_counter() - t0
    ok = worst_g < 1e-6 and worst_c < 1e-6 and worst_ex < 1e-9 and dt < 5
    verdict(2, ok, f"max |dGIoU| {worst_g:.1e}, max |dcos| {worst_c:.1e}, examples {worst_ex:.1e}, {dt:.2f}s")


def test_03_schedules(verdict):
    got = {
        "exponential": make_schedule("exponential", 3, 10).horizons,
        "dense": make_schedule("dense", 3, 10).horizons,
        "adjacent": make_schedule("adjacent", 3, 10).horizons,
    }
    ok = got == {"exponential": (1, 2, 4, 8), "dense": tuple(range(1, 10)), "adjacent": (1,)}
    verdict(3, ok, f"T=10: {got}")


def _multiset(rows) -> list:
    return sorted(tuple(np.asarray(r, dtype=np.float64).ravel().tolist()) for r in rows)


def test_04_assembly(verdict):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    errors = 0
    for _ in range(100):
        T = int(rng.integers(1, 9))
        frames = random_sequence(rng, T, max_nodes=6, dim=8, num_classes=6, num_rel=4)
        g = assemble_video_graph(frames, make_schedule("exponential", 3, T), 6, 4, dim=8)
        for k, te in enumerate(g.temporal_edges):
            a, b = frames[te.src.frame_index], frames[te.dst.frame_index]
            i, j = te.src.node_index, te.dst.node_index
            errors += not np.array_equal(te.feature, a.features[i] + b.features[j])
            ba, bb = a.boxes[i], b.boxes[j]
            enclosure = [min(ba[0], bb[0]), min(ba[1], bb[1]), max(ba[2], bb[2]), max(ba[3], bb[3])]
            errors += g.temporal_boxes[k].tolist() != enclosure
        for f_in, f_out in zip(frames, g.frames):
            nodes_in = [np.concatenate([f_in.features[i], f_in.boxes[i], [f_in.class_ids[i]]])
                        for i in range(f_in.num_nodes)]
            nodes_out = [np.concatenate([f_out.features[i], f_out.boxes[i], [f_out.class_ids[i]]])
                         for i in range(f_out.num_nodes)]
            errors += _multiset(nodes_in) != _multiset(nodes_out)
            edges_in = [np.concatenate([f_in.edge_index[k], f_in.edge_features[k], [f_in.edge_relations[k]]])
                        for k in range(f_in.num_edges)]
            edges_out = [np.concatenate([f_out.edge_index[k], f_out.edge_features[k], [f_out.edge_relations[k]]])
                         for k in range(f_out.num_edges)]
            errors += _multiset(edges_in) != _multiset(edges_out)
    dt = time.perf_counter() - t0
    verdict(4, errors == 0 and dt < 10, f"{errors} mismatches over 100 graphs in {dt:.2f}s")


def _edit_oracle(g, editable):
    """Kept (frame, node) pairs recomputed with loops, plus the count of temporal edges that must disappear."""
    deg = {}
    for s, d in g.temporal.connectivity:
        deg[s] = deg.get(s, 0) + 1
        deg[d] = deg.get(d, 0) + 1
    kept = set()
    for t, f in enumerate(g.frames):
        best = {}
        for i in range(f.num_nodes):
            c = int(f.class_ids[i])
            if c not in editable:
                kept.add((t, i))
                continue
            d = deg.get(NodeRef(t, i), 0)
            s = (1 - (1 / d if d else 1)) * f.confidences[i]
            if c not in best or s > best[c][0]:
                best[c] = (s, i)
        kept |= {(t, i) for _, i in best.values()}
    removed_t = sum(1 for s, d in g.temporal.connectivity
                    if (s.frame_index, s.node_index) not in kept or (d.frame_index, d.node_index) not in kept)
    removed_s = sum(1 for t, f in enumerate(g.frames) for s, d in f.edge_index
                    if (t, s) not in kept or (t, d) not in kept)
    return kept, removed_t, removed_s


def test_05_editing(verdict):
    rng = np.random.default_rng(5)
    editable = frozenset({0, 1, 2})
    config = EditConfig(editable)
    t0 = time.perf_counter()
    errors = 0
    for _ in range(100):
        T = int(rng.integers(1, 8))
        frames = random_sequence(rng, T, max_nodes=8, dim=4, num_classes=4, num_rel=3)
        g = assemble_video_graph(frames, make_schedule("exponential", 3, T), 4, 3, dim=4)
        e = edit_graph(g, config)
        for f in e.frames:
            cls = [c for c in f.class_ids.tolist() if c in editable]
            errors += len(cls) != len(set(cls))
        errors += edit_graph(e, config) != e
        kept, removed_t, removed_s = _edit_oracle(g, editable)
        errors += e.num_nodes != len(kept)
        errors += g.num_temporal_edges - e.num_temporal_edges != removed_t
        errors += g.num_spatial_edges - e.num_spatial_edges != removed_s
    dt = time.perf_counter() - t0
    verdict(5, errors == 0 and dt < 10, f"{errors} violations over 100 graphs in {dt:.2f}s")


def _toy_graph(rng):
    """Six nodes over three frames (3, 1, 2), dim 4."""
    frames = [random_frame(rng, t, n, dim=4, num_classes=3, num_rel=2) for t, n in enumerate((3, 1, 2))]
    return assemble_video_graph(frames, [1, 2], 3, 2, dim=4)


def test_06_gradient_fidelity(verdict):
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    g = _toy_graph(rng)
    tcn = TcnConfig(enabled=True, input_dim=3, channels=4, num_blocks=2)
    config = ModelConfig(4, g.meta.num_relations, 3, Task.VIDEO_SEGMENTATION, GnnConfig(2, 8, 4, 0.0), tcn)
    store = init_params(config, rng, np.float64)
    for k in store:  # move biases off zero so every path carries gradient
        store[k].value = store[k].value + rng.normal(scale=0.1, size=store[k].shape)
    batch = tensorize(g, rng.normal(size=(3, 3)))
    targets = np.array([2, 0, 1])

    def model(tape):
        return tape.softmax_cross_entropy(forward_frames(tape, store, config, batch), targets)

    report = gradient_check(model, store, tol=1e-4, step=1e-5)
    dt = time.perf_counter() - t0
    verdict(6, report.passed and dt < 30 and g.num_nodes == 6,
            f"max relative error {report.max_rel_error:.2e} over {report.checked} entries in {dt:.2f}s")


def _permuted(f: FrameGraph, perm) -> FrameGraph:
    inv = np.argsort(perm)
    return FrameGraph(f.frame_index, f.features[perm], f.boxes[perm], f.class_ids[perm], f.confidences[perm],
                      inv[f.edge_index], f.edge_features, f.edge_boxes, f.edge_relations)


def test_07_equivariance_and_causality(verdict):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(10):
        T = 6
        frames = random_sequence(rng, T, max_nodes=6, dim=8, num_classes=6, num_rel=4)
        shuffled = [_permuted(f, rng.permutation(f.num_nodes)) for f in frames]
        sched = make_schedule("exponential", 3, T)
        g1 = assemble_video_graph(frames, sched, 6, 4, dim=8)
        g2 = assemble_video_graph(shuffled, sched, 6, 4, dim=8)
        config = ModelConfig(8, g1.meta.num_relations, 4, Task.VIDEO_SEGMENTATION, GnnConfig(3, 16, 4, 0.0))
        store = init_params(config, rng)
        worst = max(worst, float(np.abs(forward(g1, store, config) - forward(g2, store, config)).max()))

    tcn = TcnConfig(enabled=True, input_dim=5, channels=8, num_blocks=4)
    config = ModelConfig(8, 1, 4, Task.VIDEO_SEGMENTATION, GnnConfig(1, 16, 4, 0.0), tcn)
    store = init_params(config, rng)
    g = assemble_video_graph([FrameGraph.empty(t, 8) for t in range(50)], [1], 6, 4, dim=8)
    batch = tensorize(g, np.zeros((50, 5)))
    x = rng.normal(size=(50, 5)).astype(np.float32)
    base = tcn_forward(Tape(), store, tcn, batch, Tensor(x)).value
    causal = True
    for t in range(49):
        x2 = x.copy()
        x2[t + 1:] = rng.normal(size=x2[t + 1:].shape)
        causal &= np.array_equal(tcn_forward(Tape(), store, tcn, batch, Tensor(x2)).value[:t + 1], base[:t + 1])
    dt = time.perf_counter() - t0
    verdict(7, worst <= 1e-5 and causal and dt < 10,
            f"max |dlogit| under node permutation {worst:.1e}, TCN bitwise causal: {causal}, {dt:.2f}s")


OVERFIT_WORLD = WorldConfig(task="clip", T=10)


def _overfit_run():
    seqs = generate_splits(OVERFIT_WORLD, 10, 0, 0, seed=0)["train"]
    samples = [LabeledSample(f"clip{i}", assemble_video_graph(s.frames, make_schedule("exponential", 3, 10),
                                                              OVERFIT_WORLD.num_classes, NUM_SPATIAL_RELATIONS,
                                                              OVERFIT_WORLD.dim), clip_labels=s.labels)
               for i, s in enumerate(seqs)]
    mc = ModelConfig(OVERFIT_WORLD.dim, samples[0].graph.meta.num_relations, OVERFIT_WORLD.num_outputs,
                     Task.CLIP_MULTILABEL, GnnConfig(num_layers=2, hidden=32, rel_dim=8, dropout=0.0))
    tc = TrainConfig(epochs=500, lr=3e-4, batch_size=10, edit=EditConfig(enabled=False))
    state = train(samples, mc, tc, seed=0)
    acc = evaluate(samples, state.store, mc, tc.edit).frame_accuracy
    return acc, state


def test_08_overfit(verdict):
    t0 = time.perf_counter()
    acc, a = _overfit_run()
    _, b = _overfit_run()
    dt = time.perf_counter() - t0
    same = a.history == b.history and a.store.values_equal(b.store)
    verdict(8, acc >= 0.99 and same and dt < 300,
            f"training frame accuracy {acc:.4f} after 500 epochs, identical re-run: {same}, {dt:.0f}s for both runs")


@pytest.mark.slow
def test_09_horizon_ablation(verdict):
    t0 = time.perf_counter()
    rep = horizon_ablation(seeds=(0, 1, 2))
    dt = time.perf_counter() - t0
    exp, adj, dense = (100 * rep.mean(a) for a in ("exponential", "adjacent", "dense"))
    ok = exp - adj >= 2.0 and exp >= dense - 1.0 and dt < 1800
    verdict(9, ok, f"mean test F1 x100: W={{1,2,4,8}} {exp:.2f}, W={{1}} {adj:.2f}, dense {dense:.2f}; "
                   f"per seed {json.dumps(rep.summary())}; {dt / 60:.1f} min")


@pytest.mark.slow
def test_10_editing_ablation(verdict):
    t0 = time.perf_counter()
    rep = editing_ablation(seeds=(0, 1, 2))
    dt = time.perf_counter() - t0
    on, off = 100 * rep.mean("edit"), 100 * rep.mean("no_edit")
    verdict(10, on - off >= 1.0 and dt < 1800,
            f"mean test mAP x100: edit {on:.2f}, no edit {off:.2f}, gain {on - off:.2f}; "
            f"per seed {json.dumps(rep.summary())}; {dt / 60:.1f} min")


def _sweep_ap(scores, labels) -> float:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos, tp, ap = sum(labels), 0, 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i]:
            tp += 1
            ap += tp / rank / n_pos
    return ap


def test_11_metrics(verdict):
    t0 = time.perf_counter()
    ap = average_precision([0.9, 0.8, 0.7], [1, 0, 1])
    f1 = macro_f1([0, 0, 0, 0], [0, 0, 1, 1])
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 60))
        scores = rng.normal(size=(n, 3))
        labels = (rng.random((n, 3)) < 0.4).astype(int)
        labels[0] = 1
        rep = map_over_criteria(scores, labels)
        for j in range(3):
            worst = max(worst, abs(rep.per_criterion[j] - _sweep_ap(scores[:, j].tolist(), labels[:, j].tolist())))
    dt = time.perf_counter() - t0
    # 5/6 is not representable; the running sum (1 + 2/3) / 2 lands within one ulp of the nearest double
    ok = abs(ap - 5 / 6) <= 1e-15 and f1 == float(Fraction(1, 3)) and worst < 1e-9 and dt < 5
    verdict(11, ok, f"AP {ap!r} vs 5/6, macro-F1 {f1!r} vs 1/3, max column error {worst:.1e}, {dt:.2f}s")


def test_12_round_trips(verdict, tmp_path):
    rng = np.random.default_rng(12)
    t_start = time.perf_counter()
    frames = random_sequence(rng, 6, max_nodes=6, dim=8, num_classes=6, num_rel=4)
    buf = io.StringIO()
    write_frame_graphs(frames, buf)
    frames_ok = read_frame_graphs(io.StringIO(buf.getvalue())) == frames

    g = assemble_video_graph(frames, make_schedule("exponential", 3, 6), 6, 4, dim=8)
    save_video_graph(g, tmp_path / "g.json")
    g2 = load_video_graph(tmp_path / "g.json")
    save_video_graph(g2, tmp_path / "g2.json")
    graph_ok = g2 == g and (tmp_path / "g.json").read_bytes() == (tmp_path / "g2.json").read_bytes()

    mc = ModelConfig(8, g.meta.num_relations, 3, Task.VIDEO_SEGMENTATION, GnnConfig(2, 8, 4, 0.0))
    store = init_params(mc, rng)
    save_model(tmp_path / "m.json", store, mc)
    store2, mc2, _ = load_model(tmp_path / "m.json")
    ckpt_ok = mc2 == mc and store2.values_equal(store) and np.array_equal(forward(g, store2, mc2),
                                                                          forward(g, store, mc))

    d = tmp_path / "cli"
    steps = [
        ["synth", "--out", d / "ds", "--n-train", "12", "--n-val", "4", "--n-test", "6", "--dup-rate", "0.3"],
        ["build", d / "ds/manifest.json", "--out", d / "vg", "--horizon-mode", "exponential", "--l", "3"],
        ["edit", d / "vg/manifest.json", "--out", d / "ed", "--p-edit", "0.5"],
        ["train", d / "ed/manifest.json", "--out", d / "run", "--epochs", "2", "--gnn-layers", "2",
         "--hidden", "16", "--batch-size", "4"],
        ["predict", d / "run", d / "ed/manifest.json", "--out", d / "pred.json"],
        ["eval", d / "pred.json", "--labels", d / "ed/manifest.json", "--out", d / "report.json"],
    ]
    codes, train_seconds = [], 0.0
    for argv in steps:
        t0 = time.perf_counter()
        codes.append(cli_main([str(a) for a in argv]))
        if argv[0] == "train":
            train_seconds = time.perf_counter() - t0
    report = json.loads((d / "report.json").read_text()) if (d / "report.json").exists() else {}
    pipeline_ok = codes == [0] * len(steps) and "metric" in report
    dt = time.perf_counter() - t_start - train_seconds
    ok = frames_ok and graph_ok and ckpt_ok and pipeline_ok and dt < 120
    verdict(12, ok, f"frame stream {frames_ok}, video graph {graph_ok}, checkpoint {ckpt_ok}, CLI exit codes "
                    f"{codes} with test mAP {report.get('metric', float('nan')):.3f}, {dt:.1f}s excluding training")
