"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 6 and 7 train nine small models (about 10-15 minutes on one core).
The lines are also collected into the pytest terminal summary.
"""
import dataclasses
import itertools
import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from structpose.cli import main as cli_main
from structpose.config import load_preset
from structpose.inference import (
    PairwiseParams,
    decode_unary,
    default_limbs,
    estimate_pairwise_params,
    objective_at,
    pcp_strict,
    pdj_curve,
    pose_scale,
)
from structpose.model import (
    ModelConfig,
    PoseNet,
    dataset_labels,
    evaluate,
    load_checkpoint,
    masked_loss,
    read_checkpoint,
    save_checkpoint,
    train,
)
from structpose.structured import (
    JointTree,
    TransformKernelStack,
    apply_kernel_stack,
    apply_kernel_stack_backward,
    concat_branches,
    concat_branches_backward,
    default_tree,
    get_tree,
    pass_messages,
    pass_messages_backward,
    per_joint_features,
    per_joint_features_backward,
    predict_score_maps,
    predict_score_maps_backward,
)
from structpose.synth import PoseSample, generate_dataset, hflip, read_dataset, write_dataset
from structpose.tensor import (
    ConvParams,
    Param,
    channel_dropout_backward,
    channel_dropout_forward,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    grad_check,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    split_channels,
)

SEEDS = (0, 1, 2)
VARIANT_ORDER = ("baseline", "single-direction", "bi-direction")
N_TRAIN, N_TEST = 2000, 500


def report(n, ok, what, detail=""):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {what}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------------------
# 1. receptive field


def test_criterion_1_receptive_field(capsys):
    t0 = time.perf_counter()
    code = cli_main(["rf-report", "--config", "paper-table1"])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out.splitlines()
    rf = {parts[0]: int(parts[-1]) for parts in (line.split() for line in out[1:])}
    ok = code == 0 and rf.get("fcn7") == 188 and rf.get("msp3") == 332 and elapsed < 1.0
    assert report(1, ok, "rf-report fcn7 / msp3", f"{rf.get('fcn7')} / {rf.get('msp3')}, {elapsed:.3f} s")


# ---------------------------------------------------------------------------
# 2. gradients


def _projected(forward, backward, x, params=(), seed=0):
    """Finite-difference check of <proj, forward(x)> for one layer."""
    rng = np.random.default_rng(seed)
    holder = {}

    def run():
        out, cache = forward(x)
        if "proj" not in holder:
            holder["proj"] = rng.standard_normal(out.shape)
        holder["dx"] = backward(holder["proj"], cache)
        return float((out * holder["proj"]).sum())

    return grad_check(run, list(params), inputs=[x], input_grads=lambda: [holder["dx"]], n_samples=40, seed=seed)


def _conv(rng, o, i, k, stride=1, pad=0, method="direct"):
    return ConvParams(Param(rng.standard_normal((o, i, k, k))), Param(rng.standard_normal(o)), stride, pad, method)


def _layer_reports():
    rng = np.random.default_rng(20)
    x = rng.standard_normal((2, 3, 6, 6))
    xr = np.where(np.abs(x) < 1e-3, 0.5, x)  # away from the relu kink
    reps = {}
    for label, args in {"conv3": (3, 1, 1), "conv3/s2": (3, 2, 1), "conv1": (1, 1, 0)}.items():
        p = _conv(rng, 4, 3, args[0], args[1], args[2])
        reps[label] = _projected(lambda a, p=p: conv2d_forward(a, p), conv2d_backward, x, p.params)
    p = _conv(rng, 3, 3, 5, 1, 2, "fft")
    reps["conv5/fft"] = _projected(lambda a: conv2d_forward(a, p), conv2d_backward, x, p.params)
    reps["relu"] = _projected(relu_forward, relu_backward, xr)
    reps["maxpool"] = _projected(maxpool2_forward, maxpool2_backward, x)
    reps["dropout"] = _projected(
        lambda a: channel_dropout_forward(a, 0.4, np.random.default_rng(1)), channel_dropout_backward, x
    )
    reps["concat"] = _projected(
        lambda a: (concat_channels([a[:, :1], a[:, 1:]]), None), lambda d, _: np.concatenate(split_channels(d, [1, 2]), 1), x
    )

    stack = TransformKernelStack((0, 1), [_conv(rng, 3, 3, 3, 1, 1), _conv(rng, 3, 3, 3, 1, 1)])
    reps["kernel stack"] = _projected(lambda a: apply_kernel_stack(a, stack), apply_kernel_stack_backward, xr, stack.params)

    tree = JointTree.from_edges(["a", "b", "c"], [("a", "b"), ("b", "c")])
    for direction in ("upward", "downward"):
        stacks = {e: TransformKernelStack(e, [_conv(rng, 3, 3, 3, 1, 1), _conv(rng, 3, 3, 3, 1, 1)])
                  for e in tree.directed_edges(direction)}
        params = [q for s in stacks.values() for q in s.params]

        def fwd(a, stacks=stacks, direction=direction):
            out, cache = pass_messages(list(a), tree, direction, stacks)
            return np.stack(out), cache

        reps[f"messages/{direction}"] = _projected(
            fwd, lambda d, c: np.stack(pass_messages_backward(list(d), c)), rng.standard_normal((3, 2, 3, 5, 5)), params
        )

    banks = [_conv(rng, 2, 3, 1) for _ in range(2)]
    reps["joint banks"] = _projected(
        lambda a: (np.stack(per_joint_features(a, banks)[0]), per_joint_features(a, banks)[1]),
        lambda d, c: per_joint_features_backward(list(d), c), x, [q for b in banks for q in b.params],
    )

    def branch_backward(d, _):
        ups, downs = concat_branches_backward(list(d), 1)
        return np.stack([np.concatenate([u, v], axis=1) for u, v in zip(ups, downs)])

    reps["branch concat"] = _projected(
        lambda a: (np.stack(concat_branches(list(a[:, :, :1]), list(a[:, :, 1:]))), None),
        branch_backward,
        rng.standard_normal((3, 2, 3, 6, 6)),
    )

    preds, bg = [_conv(rng, 2, 3, 1) for _ in range(2)], _conv(rng, 1, 3, 1)
    shared = rng.standard_normal((2, 3, 4, 4))
    feats = [rng.standard_normal((2, 3, 4, 4)) for _ in range(2)]

    def score_fwd(a):
        return predict_score_maps(feats, preds, a, bg)

    reps["score head"] = _projected(
        score_fwd, lambda d, c: predict_score_maps_backward(d, c)[1], shared, [q for b in preds + [bg] for q in b.params]
    )

    scores = rng.standard_normal((2, 5, 3, 3))
    labels = rng.integers(0, 5, (2, 3, 3))
    mask = rng.random((2, 3, 3)) < 0.6
    mask[0, 0, 0] = True
    holder = {}

    def loss_run():
        loss, g = masked_loss(scores, labels, mask)
        holder["g"] = g
        return loss

    reps["masked loss"] = grad_check(loss_run, [], inputs=[scores], input_grads=lambda: [holder["g"]], n_samples=40)
    return reps


def test_criterion_2_gradients():
    t0 = time.perf_counter()
    # 2 joints, 8x8 input, two stacked kernels, float64, no dropout
    cfg = ModelConfig(
        input_size=8, backbone="conv3-3,pool,conv3-4", downsample=2, channels=2, tree="chain2", kernel=3,
        depth=2, dropout=0.0, variant="bi-direction", pred_init_scale=1.0,
    )
    model = PoseNet(cfg, 3, dtype=np.float64)
    rng = np.random.default_rng(21)
    for s in list(model.stacks_up.values()) + list(model.stacks_down.values()):
        for kp in s.kernels:  # a generic point, not the zero-initialised one
            kp.weight.data[:] = rng.uniform(-0.3, 0.3, kp.weight.data.shape)
            kp.bias.data[:] = rng.uniform(-0.1, 0.1, kp.bias.data.shape)
    x = rng.random((2, 1, 8, 8))
    labels = rng.integers(0, cfg.n_classes, (2, 4, 4))
    mask = rng.random((2, 4, 4)) < 0.7
    mask[0, 0, 0] = True
    model.input_grad = True
    holder = {}

    def run():
        loss, g = masked_loss(model.forward(x), labels, mask)
        holder["dx"] = model.backward(g)
        return loss

    n_coords = sum(p.data.size for p in model.params())
    full = grad_check(run, model.params(), inputs=[x], input_grads=lambda: [holder["dx"]], n_samples=10**6)
    layers = _layer_reports()
    elapsed = time.perf_counter() - t0
    worst_layer = max(layers, key=lambda k: layers[k].max_rel_error)
    ok = (
        full.max_rel_error < 1e-6
        and all(r.max_rel_error < 1e-6 for r in layers.values())
        and elapsed < 120
    )
    assert report(
        2, ok, "finite-difference gradients",
        f"full model {n_coords} params + input: {full.max_rel_error:.2e}; worst layer {worst_layer} "
        f"{layers[worst_layer].max_rel_error:.2e}; {elapsed:.1f} s",
    )


# ---------------------------------------------------------------------------
# 3. zero-kernel neutrality


def test_criterion_3_zero_kernel_neutrality():
    x = np.random.default_rng(30).random((3, 1, 64, 64)).astype(np.float32)
    base = PoseNet(ModelConfig(variant="baseline"), 7)
    ref = base.forward(x)
    src = dict(base.named_params())
    ok = True
    for variant in ("single-direction", "bi-direction"):
        m = PoseNet(ModelConfig(variant=variant), 1234)
        for name, p in m.named_params():
            if name.startswith("msg_"):
                p.data[:] = 0
            else:
                p.data = src[name].data.copy()
        ok &= np.array_equal(m.forward(x), ref)
        # default initialisation with the same seed is neutral as well
        ok &= np.array_equal(PoseNet(ModelConfig(variant=variant), 7).forward(x), ref)
    assert report(3, bool(ok), "zero transform kernels give bit-identical score maps")


# ---------------------------------------------------------------------------
# 4. shift exactness


def _shift_oracle(m, dx, dy):
    h, w = m.shape
    out = np.zeros_like(m)
    for y in range(h):
        for x in range(w):
            if 0 <= y - dy < h and 0 <= x - dx < w:
                out[y, x] = m[y - dy, x - dx]
    return out


def test_criterion_4_shift_exactness():
    rng = np.random.default_rng(40)
    k, c = 7, 3
    ok, count = True, 0
    for dx, dy in itertools.product(range(-3, 4), repeat=2):
        w = np.zeros((1, 1, k, k))
        w[0, 0, c - dy, c - dx] = 1.0
        stack = TransformKernelStack((0, 1), [ConvParams(Param(w), Param(np.zeros(1)), 1, c)])
        maps = rng.standard_normal((2, 1, 16, 16)) * 10 ** rng.uniform(-3, 3)
        out, _ = apply_kernel_stack(maps, stack)
        interior = (slice(3, 13), slice(3, 13))
        for b in range(2):
            ok &= np.array_equal(out[b, 0][interior], _shift_oracle(maps[b, 0], dx, dy)[interior])
            count += 1
    assert report(4, bool(ok), "delta kernels translate 16x16 maps exactly", f"{count} maps, |dx|,|dy| <= 3")


# ---------------------------------------------------------------------------
# 5. decoder equivalence


def _random_tree(rng, K):
    names = [f"j{i}" for i in range(K)]
    edges = [(names[int(rng.integers(0, i))], names[i]) for i in range(1, K)]
    return JointTree.from_edges(names, edges)


def _brute_force(unary, params, tree):
    """Exhaustive max over all joint placements; returns (objective, cells)."""
    K, h, w = unary.shape
    L = h * w
    ys, xs = np.divmod(np.arange(L), w)
    flat = unary.reshape(K, L).astype(np.float64)
    total = np.zeros((L,) * K)
    for k in range(K):
        shape = [1] * K
        shape[k] = L
        total = total + flat[k].reshape(shape)
    wx, wy = params.weights
    for e, (p, c) in enumerate(tree.edges):
        dx = xs[None, :] - xs[:, None] - params.offsets[e, 0]
        dy = ys[None, :] - ys[:, None] - params.offsets[e, 1]
        cost = wx * dx**2 + wy * dy**2  # indexed [parent, child]
        shape = [1] * K
        shape[p], shape[c] = L, L
        if p > c:
            cost = cost.T
        total = total - cost.reshape(shape)
    idx = np.unravel_index(int(total.argmax()), total.shape)
    cells = np.array([[xs[i], ys[i]] for i in idx])
    return float(total.max()), cells


def _random_instance(rng, K, h, w):
    tree = _random_tree(rng, K)
    unary = rng.standard_normal((K, h, w))
    offsets = rng.uniform(-2, 2, (K - 1, 2))
    weights = (0.01, 0.01) if rng.random() < 0.3 else tuple(rng.uniform(0.05, 1.0, 2))
    return tree, unary, PairwiseParams(offsets.reshape(-1, 2), weights)


def test_criterion_5_decoder_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(50)
    brute_ok, n_brute = True, 0
    while n_brute < 120:
        K = int(rng.integers(1, 5))
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        if (h * w) ** K > 2**22:
            h, w = min(h, 6), min(w, 6)
        tree, unary, params = _random_instance(rng, K, h, w)
        best, cells = _brute_force(unary, params, tree)
        est = decode_unary(unary, params, tree, "tree_dp")
        brute_ok &= np.array_equal(est.cells, cells) and est.objective == objective_at(unary, params, tree, cells)
        brute_ok &= abs(est.objective - best) <= 1e-9 * max(1.0, abs(best))
        n_brute += 1

    gdt_ok, worst, n_gdt = True, 0.0, 0
    tree14 = default_tree()
    while n_gdt < 200:
        tree = tree14 if n_gdt % 4 == 0 else _random_tree(rng, int(rng.integers(2, 7)))
        unary = rng.standard_normal((tree.K, 16, 16))
        weights = (0.01, 0.01) if n_gdt % 2 else tuple(rng.uniform(0.01, 2.0, 2))
        params = PairwiseParams(rng.uniform(-4, 4, (tree.K - 1, 2)), weights)
        a = decode_unary(unary, params, tree, "tree_dp")
        b = decode_unary(unary, params, tree, "gdt")
        worst = max(worst, abs(a.objective - b.objective))
        gdt_ok &= np.array_equal(a.cells, b.cells) and abs(a.objective - b.objective) <= 1e-6
        n_gdt += 1
    elapsed = time.perf_counter() - t0
    ok = bool(brute_ok and gdt_ok and elapsed < 120)
    assert report(
        5, ok, "tree_dp == brute force, gdt == tree_dp",
        f"{n_brute} brute-force and {n_gdt} gdt instances, max gdt objective gap {worst:.1e}, {elapsed:.1f} s",
    )


# ---------------------------------------------------------------------------
# 6 and 7. trained models


@pytest.fixture(scope="module")
def ablation():
    """Train every variant for each seed on the bundled small config."""
    cfg = load_preset("small")
    spec = cfg.data.skeleton
    t0 = time.perf_counter()
    runs = {}
    for seed in SEEDS:
        train_ds = generate_dataset(spec, N_TRAIN, 1000 + seed)
        test_ds = generate_dataset(spec, N_TEST, 5000 + seed)
        pw = estimate_pairwise_params(train_ds.joints, train_ds.tree, cfg.model.downsample, cfg.infer.weights)
        for variant in VARIANT_ORDER:
            model = PoseNet(dataclasses.replace(cfg.model, variant=variant), seed)
            train(model, train_ds, dataclasses.replace(cfg.train, seed=seed))
            _, res = evaluate(model, test_ds, pw, cfg.infer.mode)
            runs[seed, variant] = (model, res.mean, pw)
    return runs, time.perf_counter() - t0


def test_criterion_6_ablation_ordering(ablation):
    runs, elapsed = ablation
    pcp = {key: v[1] for key, v in runs.items()}
    ordered = [pcp[s, "baseline"] < pcp[s, "single-direction"] < pcp[s, "bi-direction"] for s in SEEDS]
    means = {v: float(np.mean([pcp[s, v] for s in SEEDS])) for v in VARIANT_ORDER}
    gap = means["bi-direction"] - means["baseline"]
    ok = sum(ordered) >= 2 and gap >= 5 and elapsed <= 45 * 60
    per_seed = "; ".join(
        f"seed {s}: " + " / ".join(f"{pcp[s, v]:.1f}" for v in VARIANT_ORDER) for s in SEEDS
    )
    assert report(
        6, ok, "baseline < single < bi on most seeds, bi >= baseline + 5",
        f"{per_seed}; mean gap {gap:.1f}; ordered {sum(ordered)}/3; {elapsed / 60:.1f} min",
    )


def test_criterion_7_tree_decoding_on_multi_figure(ablation):
    runs, _ = ablation
    spec = dataclasses.replace(load_preset("small").data.skeleton, multi_figure_prob=1.0)
    gains = []
    for seed in SEEDS:
        model, _, pw = runs[seed, "bi-direction"]
        assert pw.weights == (0.01, 0.01)
        test_ds = generate_dataset(spec, N_TEST, 7000 + seed)
        _, arg = evaluate(model, test_ds, pw, "argmax")
        _, dp = evaluate(model, test_ds, pw, "tree_dp")
        gains.append((arg.mean, dp.mean))
    ok = all(dp >= arg + 2 for arg, dp in gains)
    detail = "; ".join(f"seed {s}: argmax {a:.1f} -> tree_dp {d:.1f}" for s, (a, d) in zip(SEEDS, gains))
    assert report(7, ok, "tree_dp >= argmax + 2 on two-figure images, every seed", detail)


# ---------------------------------------------------------------------------
# 8. objective sanity


def test_criterion_8_objective_sanity():
    cfg = load_preset("small")
    C = cfg.model.n_classes
    labels = np.random.default_rng(80).integers(0, C, (4, 16, 16))
    mask = np.ones(labels.shape, bool)
    uniform_loss, _ = masked_loss(np.zeros((4, C, 16, 16)), labels, mask)
    model = PoseNet(cfg.model, 0)
    ds = generate_dataset(cfg.data.skeleton, 10, 123)
    ds_labels = dataset_labels(ds, cfg.model)
    init_loss, _ = masked_loss(model.forward(ds.float_images()), ds_labels, np.ones(ds_labels.shape, bool))
    # overfit: one batch of all 10 samples per epoch, so history[0] is the loss at initialisation
    tcfg = dataclasses.replace(cfg.train, epochs=200, batch_size=10, lr_backbone=0.05, lr_new=0.05, seed=0)
    hist = [h[1] for h in train(model, ds, tcfg).history]
    ratio = hist[-1] / hist[0]
    ok = (
        abs(uniform_loss - math.log(C)) <= 0.01 * math.log(C)
        and abs(hist[0] - math.log(C)) <= 0.01 * math.log(C)
        and abs(init_loss - math.log(C)) <= 0.01 * math.log(C)
        and ratio < 0.10
    )
    assert report(
        8, ok, "initial loss ~ ln(K*M+1); overfit 10 samples in 200 epochs",
        f"ln({C}) = {math.log(C):.4f}, initial {hist[0]:.4f}, final {hist[-1]:.4f} ({100 * ratio:.2f}% of initial)",
    )


# ---------------------------------------------------------------------------
# 9. metrics


def _pcp_scalar(est, gt, limbs):
    groups = {}
    for name, a, b in limbs:
        for n in range(len(gt)):
            length = math.dist(gt[n, a], gt[n, b])
            if length == 0:
                continue
            good = math.dist(est[n, a], gt[n, a]) <= length / 2 and math.dist(est[n, b], gt[n, b]) <= length / 2
            hit, tot = groups.get(name, (0, 0))
            groups[name] = (hit + good, tot + 1)
    per = {g: 100.0 * h / t for g, (h, t) in groups.items()}
    return per, sum(per.values()) / len(per)


def _pdj_scalar(est, gt, thresholds):
    N, K, _ = gt.shape
    out = np.zeros((len(thresholds), K))
    for n in range(N):
        xs, ys = gt[n, :, 0], gt[n, :, 1]
        scale = math.hypot(xs.max() - xs.min(), ys.max() - ys.min())
        for k in range(K):
            err = math.dist(est[n, k], gt[n, k])
            for t, thr in enumerate(thresholds):
                out[t, k] += err <= thr * scale
    return out / N


def test_criterion_9_metrics():
    rng = np.random.default_rng(90)
    tree = default_tree()
    limbs = default_limbs(tree)
    ds = generate_dataset(load_preset("small").data.skeleton, 1000, 91)
    gt = ds.joints
    est = gt + rng.normal(0, 1, gt.shape) * rng.choice([0.5, 3.0, 8.0], size=(len(gt), 1, 1))
    res = pcp_strict(est, gt, limbs)
    per, mean = _pcp_scalar(est, gt, limbs)
    checks = len(gt) * len(limbs)
    ok = all(abs(res.groups[g] - per[g]) < 1e-9 for g in per) and abs(res.mean - mean) < 1e-9

    thresholds = np.linspace(0, 0.5, 11)
    curve = pdj_curve(est, gt, thresholds)
    ok &= np.allclose(curve, _pdj_scalar(est, gt, thresholds), rtol=0, atol=1e-12)
    ok &= bool(np.all(np.diff(curve, axis=0) >= 0))
    ok &= np.allclose(pose_scale(gt), [math.hypot(*(g.max(0) - g.min(0))) for g in gt])
    assert checks >= 10**4
    assert report(9, bool(ok), "pcp_strict and pdj_curve match scalar oracles; PDJ monotone", f"{checks} limb checks")


# ---------------------------------------------------------------------------
# 10. round trips


def test_criterion_10_round_trips(tmp_path):
    cfg = load_preset("small")
    model = PoseNet(cfg.model, 100)
    rng = np.random.default_rng(100)
    for p in model.params():
        p.data[:] = rng.standard_normal(p.data.shape).astype(p.data.dtype)
    save_checkpoint(model, tmp_path / "a.ckpt")
    other = load_checkpoint(PoseNet(cfg.model, 101), tmp_path / "a.ckpt")
    ok = all(np.array_equal(p.data, q.data) and p.data.dtype == q.data.dtype
             for p, q in zip(model.params(), other.params()))
    save_checkpoint(other, tmp_path / "b.ckpt")
    ok &= (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    ok &= set(read_checkpoint(tmp_path / "a.ckpt")) == {n for n, _ in model.named_params()}

    ds = generate_dataset(dataclasses.replace(cfg.data.skeleton, multi_figure_prob=0.5), 50, 102)
    ds.mixtures[:] = rng.integers(0, 3, ds.mixtures.shape)
    ds.visible[rng.random(ds.visible.shape) < 0.1] = False
    write_dataset(ds, tmp_path / "ds")
    back = read_dataset(tmp_path / "ds", ds.tree)
    ok &= all(np.array_equal(getattr(ds, f), getattr(back, f)) and getattr(ds, f).dtype == getattr(back, f).dtype
              for f in ("images", "joints", "visible", "mixtures"))

    tree = get_tree("default14")
    flips = 0
    for i in range(len(ds)):
        s = PoseSample(ds.images[i], ds.joints[i], ds.visible[i], ds.mixtures[i])
        twice = hflip(hflip(s, tree), tree)
        ok &= all(np.array_equal(getattr(s, f), getattr(twice, f)) for f in ("image", "joints", "visible", "mixtures"))
        flips += 1
    assert report(10, bool(ok), "checkpoint, dataset and hflip round trips are exact", f"{flips} hflip pairs")


# ---------------------------------------------------------------------------
# end-to-end smoke on the bundled small config


def test_cli_train_eval_smoke(tmp_path):
    run = lambda *a: cli_main([str(x) for x in a])  # noqa: E731
    small = ["--config", "small", "--set", "train.epochs=1"]
    assert run("gen-data", "--config", "small", "--out", tmp_path / "tr", "--count", 64, "--seed", 1) == 0
    assert run("gen-data", "--config", "small", "--out", tmp_path / "te", "--count", 16, "--seed", 5001) == 0
    assert run("train", *small, "--data", tmp_path / "tr", "--out", tmp_path / "run") == 0
    assert run("eval", "--checkpoint", tmp_path / "run" / "model.ckpt", "--data", tmp_path / "te", "--out", tmp_path / "ev") == 0
    for rel in ("run/model.ckpt", "run/model.json", "run/loss.csv", "ev/pcp.csv", "ev/pdj.csv", "ev/estimates.csv"):
        assert (tmp_path / rel).stat().st_size > 0
