"""Acceptance gate: nine criteria, one printed pass/fail line each.

The heavyweight fixtures (the 300-clip benchmark and the 5-seed ablation
sweep) are module-scoped so the later criteria reuse earlier work.  Criterion
9 re-executes the artifact producers of criteria 1-6 and compares bytes.
"""

import time

import numpy as np
import pytest

from avtk import ama, autodiff as ad, checks, grouping, metrics, model, \
    synthdata, uncertainty
from avtk.ama import AlignmentScores, ContrastiveConfig
from avtk.autodiff import Tensor
from avtk.rng import make_rng

RESULTS = {}


def announce(capsys, num, ok, detail):
    line = f"CRITERION {num}: {'PASS' if ok else 'FAIL'} - {detail}"
    with capsys.disabled():
        print(line, flush=True)
    assert ok, line


# -- shared heavyweight fixtures -----------------------------------------------


@pytest.fixture(scope="module")
def benchmark():
    """300-clip dataset, mix 0.4/0.3/0.3, cue strength 0.15, 64x64, T=4, seed 7."""
    samples, manifest = synthdata.generate_dataset(7, 300, mix=(0.4, 0.3, 0.3))
    train = [samples[i] for i in manifest["splits"]["train"]]
    val = [samples[i] for i in manifest["splits"]["val"]]
    val_types = [manifest["types"][i] for i in manifest["splits"]["val"]]
    return {"samples": samples, "manifest": manifest, "train": train,
            "val": val, "val_types": val_types}


@pytest.fixture(scope="module")
def ablation_runs(benchmark):
    """Five seeds x four switch settings; keeps the trained full models."""
    arms = [("baseline", "no-sgsm,no-cst,no-ue"), ("sgsm", "no-cst,no-ue"),
            ("sgsm_cst", "no-ue"), ("full", "none")]
    jf = {name: [] for name, _ in arms}
    full_models = {}
    for seed in range(5):
        for name, flags in arms:
            cfg = model.ModelConfig(steps=300, eval_every=300, seed=seed)
            params, hist = model.train(
                benchmark["train"], cfg, ablate=model.normalize_ablation(flags),
                val_samples=benchmark["val"])
            jf[name].append(hist.val_rows[-1][1])
            if name == "full":
                full_models[seed] = (params, cfg)
    return {"jf": jf, "full_models": full_models}


# -- artifact producers (run once for criteria 1-6, twice for criterion 9) ----


def artifact_dpc_oracle():
    from test_grouping import brute_force_reference
    rng = make_rng(7)
    lines = []
    for case in range(200):
        n = int(rng.integers(2, 65))
        dim = int(rng.integers(1, 9))
        k = int(rng.integers(1, n))
        p = int(rng.integers(1, n + 1))
        f = np.round(rng.standard_normal((n, dim)) * 2.0, 1)
        rho = grouping.local_density(f, k)
        ga = grouping.assign_clusters(f, rho, p)
        labels, peaks = brute_force_reference(f, rho, p)
        assert np.array_equal(ga.labels, labels) and np.array_equal(ga.peaks, peaks), \
            f"oracle mismatch on instance {case}"
        lines.append(f"{case}:{','.join(map(str, ga.labels))}")
    return "\n".join(lines)


def artifact_dirichlet():
    flat = uncertainty.pixel_uncertainty(
        Tensor(np.ones((1, 2, 1, 1), dtype=np.float64))).data
    assert abs(float(flat[0, 0, 0, 0]) - 1.0 / 12.0) < 1e-9
    rng = make_rng(12)
    n = 1_000_000
    lines = [f"uniform2:{float(flat[0, 0, 0, 0]):.12f}"]
    for case in range(50):
        c = int(rng.integers(2, 6))
        alpha = rng.uniform(0.2, 8.0, size=c)
        delta = uncertainty.pixel_uncertainty(
            Tensor(alpha.reshape(1, c, 1, 1).astype(np.float64))).data.reshape(c)
        draws = rng.dirichlet(alpha, size=n)
        centered = draws - draws.mean(axis=0)
        s2 = (centered ** 2).mean(axis=0)
        m4 = (centered ** 4).mean(axis=0)
        se = np.sqrt(np.maximum(m4 - s2 ** 2, 0.0) / n)
        assert (np.abs(delta - s2) < 3.0 * se + 1e-12).all(), \
            f"MC variance mismatch on vector {case}"
        lines.append(f"{case}:" + ",".join(f"{d:.12f}" for d in delta))
    return "\n".join(lines)


def artifact_gradients():
    results = checks.run_suite(seed=0, full_model_coords=8)
    for name, (err, tol) in results.items():
        assert err < tol, f"{name}: {err:.3e} over tolerance {tol:.0e}"
    return "\n".join(f"{k}:{v[0]:.14e}" for k, v in sorted(results.items()))


def artifact_equation_examples():
    lines = []
    # symmetric contrastive case: one positive, one negative, equal scores
    cfg = ContrastiveConfig(tau=0.1)
    s = AlignmentScores(a=Tensor(np.array([0.2, 0.2], dtype=np.float64)),
                        i=np.array([0.9, 0.1]),
                        pos_indices=np.array([0]), neg_indices=np.array([1]))
    loss = float(ama.contrastive_loss(s, cfg).data)
    assert abs(loss - np.log(2.0)) < 1e-9, f"symmetric contrastive {loss}"
    lines.append(f"ln2:{loss:.14f}")

    # group-merge weights ignore a constant shift of the relevance scores
    rng = make_rng(5)
    from test_ama import make_assignment
    f_hat = Tensor(rng.standard_normal((8, 3)))
    ga = make_assignment([0, 1, 0, 1, 0, 1, 0, 1], 2)
    sc = rng.standard_normal(8)
    a = ama.merge_groups(f_hat, Tensor(sc), ga).data
    b = ama.merge_groups(f_hat, Tensor(sc + 50.0), ga).data
    assert np.abs(a - b).max() < 1e-6, "merge shift invariance"
    lines.append("merge_shift:" + f"{np.abs(a - b).max():.2e}")

    # compact-update attention rows ignore a constant shift of S
    g = Tensor(rng.standard_normal((3, 5)).astype(np.float64))
    f_v = Tensor(rng.standard_normal((9, 5)).astype(np.float64))
    sc = rng.standard_normal(9)
    a = ama.update_compact(g, f_v, Tensor(sc), depth=2).data
    b = ama.update_compact(g, f_v, Tensor(sc + 50.0), depth=2).data
    assert np.abs(a - b).max() < 1e-6, "update shift invariance"
    lines.append("update_shift:" + f"{np.abs(a - b).max():.2e}")

    # class-constant uncertainty never changes the arg-max class
    m = rng.standard_normal((2, 4, 5, 5))
    delta = np.broadcast_to(rng.uniform(0.0, 1.0, size=(2, 1, 5, 5)),
                            (2, 4, 5, 5)).copy()
    base = np.argmax(ad.softmax(Tensor(m), axis=1).data, axis=1)
    weighted = np.argmax(uncertainty.weighted_prediction(Tensor(m), Tensor(delta)).data,
                         axis=1)
    assert np.array_equal(base, weighted), "argmax invariance"
    lines.append("argmax:identical")
    return "\n".join(lines)


def artifact_metric_oracle():
    from test_metrics import oracle_counts
    gt = np.ones((4, 4), dtype=int)
    pred = np.zeros((4, 4), dtype=int)
    pred[:, :2] = 1
    f_half = metrics.fbeta(pred, gt)
    assert f_half == 0.8125, f"half mask F {f_half}"
    lines = [f"half:{f_half:.10f}"]
    rng = make_rng(21)
    for case in range(100):
        shape = (int(rng.integers(2, 9)), int(rng.integers(2, 9)))
        c = int(rng.integers(2, 5))
        pred = rng.integers(0, c, size=shape)
        gt = rng.integers(0, c, size=shape)
        per_class, tp, fp, fn = oracle_counts(pred, gt, c)
        got_pc, got_mean = metrics.jaccard(pred, gt, c)
        want_mean = np.mean(list(per_class.values())) if per_class else 1.0
        assert abs(got_mean - want_mean) < 1e-9
        got_f = metrics.fbeta(pred, gt)
        if tp == 0:
            want_f = 1.0 if (tp + fp == 0 and tp + fn == 0) else 0.0
        else:
            pr, rc = tp / (tp + fp), tp / (tp + fn)
            want_f = 1.3 * pr * rc / (0.3 * pr + rc)
        assert abs(got_f - want_f) < 1e-9
        lines.append(f"{case}:{got_mean:.12f},{got_f:.12f}")
    return "\n".join(lines)


def artifact_training(benchmark):
    cfg = model.ModelConfig(seed=7, steps=3000, eval_every=100)
    t0 = time.time()
    params, hist = model.train(benchmark["train"], cfg,
                               val_samples=benchmark["val"], early_stop_jf=0.70)
    elapsed = time.time() - t0
    best = max(r[1] for r in hist.val_rows)
    assert best >= 0.70, f"val J&F {best:.4f} below 0.70"
    assert elapsed < 1800, f"training took {elapsed:.0f}s"
    rows = "\n".join(f"{s},{jf:.6f}" for s, jf, _, _ in hist.val_rows)
    import hashlib
    digest = hashlib.sha256()
    for _, p in sorted(params.items()):
        digest.update(np.asarray(p.data, dtype=np.float64).tobytes())
    blob = digest.hexdigest()
    return hist.loss_csv() + rows + f"\nparams:{blob}", best, elapsed


# -- criteria ------------------------------------------------------------------


def test_criterion_1_dpc_oracle(capsys):
    t0 = time.time()
    try:
        RESULTS["c1"] = artifact_dpc_oracle()
    except AssertionError as e:
        announce(capsys, 1, False, str(e))
    dt = time.time() - t0
    announce(capsys, 1, dt < 10.0,
             f"200 grouping instances match the brute-force oracle ({dt:.1f}s)")


def test_criterion_2_dirichlet_closed_form(capsys):
    t0 = time.time()
    try:
        RESULTS["c2"] = artifact_dirichlet()
    except AssertionError as e:
        announce(capsys, 2, False, str(e))
    dt = time.time() - t0
    announce(capsys, 2, dt < 60.0,
             f"uniform variance 1/12 and 50 Monte-Carlo vectors within band ({dt:.1f}s)")


def test_criterion_3_gradient_suite(capsys):
    t0 = time.time()
    try:
        RESULTS["c3"] = artifact_gradients()
    except AssertionError as e:
        announce(capsys, 3, False, str(e))
    dt = time.time() - t0
    announce(capsys, 3, dt < 300.0,
             f"all finite-difference checks within tolerance ({dt:.1f}s)")


def test_criterion_4_equation_examples(capsys):
    try:
        RESULTS["c4"] = artifact_equation_examples()
    except AssertionError as e:
        announce(capsys, 4, False, str(e))
    announce(capsys, 4, True,
             "ln2 contrastive, merge/update shift invariance, argmax invariance")


def test_criterion_5_metric_oracle(capsys):
    try:
        RESULTS["c5"] = artifact_metric_oracle()
    except AssertionError as e:
        announce(capsys, 5, False, str(e))
    announce(capsys, 5, True,
             "half-mask F = 0.8125 and 100 count-oracle pairs within 1e-9")


def test_criterion_6_end_to_end_training(capsys, benchmark):
    try:
        RESULTS["c6"], best, elapsed = artifact_training(benchmark)
    except AssertionError as e:
        announce(capsys, 6, False, str(e))
    announce(capsys, 6, True,
             f"val J&F {best:.4f} >= 0.70 in {elapsed:.0f}s")


def test_criterion_7_ablation_direction(capsys, ablation_runs):
    means = {k: float(np.mean(v)) for k, v in ablation_runs["jf"].items()}
    order = [means["baseline"], means["sgsm"], means["sgsm_cst"], means["full"]]
    monotone = all(a <= b + 1e-12 for a, b in zip(order, order[1:]))
    gap = means["full"] - means["baseline"]
    detail = ("mean val J&F baseline {baseline:.4f} <= sgsm {sgsm:.4f} <= "
              "sgsm_cst {sgsm_cst:.4f} <= full {full:.4f}, gap {gap:.4f}").format(
        gap=gap, **means)
    announce(capsys, 7, monotone and gap >= 0.03, detail)


def _transition_uncertainty(params, cfg, clips):
    """Mean normalized uncertainty on transition-adjacent frames vs steady clips."""
    trans_vals, steady_vals = [], []
    for clip in clips:
        res = model.forward(model.detach_params(params), cfg, clip)
        delta = np.asarray(res.delta_norm.data)
        sched = np.asarray(clip.spec.schedule, dtype=int)
        change = np.abs(np.diff(sched, axis=1)).sum(axis=0) > 0  # (T-1,)
        if change.any():
            frames = sorted(set(np.flatnonzero(change)) |
                            set(np.flatnonzero(change) + 1))
            trans_vals.append(delta[frames].mean())
        elif not np.any(np.diff(sched, axis=1)):
            steady_vals.append(delta.mean())
    return float(np.mean(trans_vals)), float(np.mean(steady_vals))


def test_criterion_8_case2_uncertainty(capsys, benchmark, ablation_runs):
    case2 = [c for c, t in zip(benchmark["val"], benchmark["val_types"])
             if t == "case2"]
    steady = [c for c, t in zip(benchmark["val"], benchmark["val_types"])
              if t == "easy"]
    wins = 0
    pairs = []
    for seed, (params, cfg) in ablation_runs["full_models"].items():
        t_mean, _ = _transition_uncertainty(params, cfg, case2)
        s_means = [np.asarray(model.forward(model.detach_params(params), cfg,
                                            c).delta_norm.data).mean()
                   for c in steady]
        s_mean = float(np.mean(s_means))
        pairs.append(f"seed{seed}:{t_mean:.4f}/{s_mean:.4f}")
        if t_mean > s_mean:
            wins += 1
    announce(capsys, 8, wins >= 4,
             f"transition frames show higher uncertainty in {wins}/5 seeds "
             f"({' '.join(pairs)})")


def test_criterion_9_determinism(capsys, benchmark):
    reruns = {
        "c1": artifact_dpc_oracle(),
        "c2": artifact_dirichlet(),
        "c3": artifact_gradients(),
        "c4": artifact_equation_examples(),
        "c5": artifact_metric_oracle(),
        "c6": artifact_training(benchmark)[0],
    }
    bad = [k for k in reruns if reruns[k] != RESULTS.get(k)]
    announce(capsys, 9, not bad,
             "criteria 1-6 artifacts bitwise identical across two runs"
             + (f" (mismatch: {bad})" if bad else ""))
