"""Release gate. Each test exercises one numbered criterion end to end at
its stated tolerance and prints a single verdict line; the slow criteria
share two full-scale training runs (shifted task and no-shift control)
through module fixtures."""

import time
from dataclasses import replace

import numpy as np
import pytest

from dannlab.config import build_config, parse_flat_text
from dannlab.data import (
    FeatureMatrix,
    NormalizationStats,
    SyntheticShiftSpec,
    apply_normalization,
    fit_normalization,
    generate_shift_task,
)
from dannlab.experiments import (
    improvement_p_value,
    network_spec,
    prepare_data,
    run_approach_trials,
    run_visualize,
    train_domain_probe,
)
from dannlab.grl import ReversalGate
from dannlab.metrics import ccc, pearson, rmse
from dannlab.model import DannModel, NetworkSpec, RegressionNet
from dannlab.nn import Adam, Parameter, crossentropy_loss, mse_loss
from dannlab.runner import run_experiment
from dannlab.train import (
    LambdaSchedule,
    TrainConfig,
    lambda_at,
    sample_unlabeled,
    train_baseline,
    train_dann,
    trial_metric_values,
)
from dannlab.seeding import SUBSAMPLE, stream_rng
from helpers import TINY_CONFIG_TEXT, read_files, run_gradient_check

BASE_SEED = 17


def _verdict(number, ok, detail):
    print(f"criterion {number:02d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {number:02d}: {detail}"


def _arms(shift_spec):
    """Source-only and adversarial arms, 20 trials each, on one task."""
    source, target, pool = generate_shift_task(shift_spec)
    prepared = prepare_data(source, target, pool, seed=BASE_SEED)
    config = TrainConfig(seed=BASE_SEED)
    net = network_spec("deep", prepared.source_train.features.dim, 1, 64, config)
    start = time.monotonic()
    src_reports, _ = run_approach_trials("src", prepared, net, config)
    dann_reports, _ = run_approach_trials("dann", prepared, net, config, track_domain=True)
    elapsed = time.monotonic() - start
    return {
        "prepared": prepared,
        "config": config,
        "net": net,
        "src": src_reports,
        "dann": dann_reports,
        "elapsed": elapsed,
    }


@pytest.fixture(scope="module")
def canonical():
    return _arms(SyntheticShiftSpec(seed=BASE_SEED))


@pytest.fixture(scope="module")
def noshift():
    return _arms(SyntheticShiftSpec(rotation_angle=0.0, translation=0.0, seed=BASE_SEED))


def test_criterion_01_analytic_gradients_match_finite_differences():
    start = time.monotonic()
    worst = run_gradient_check()
    elapsed = time.monotonic() - start
    _verdict(1, worst <= 1.0 and elapsed < 60.0,
             f"worst tolerance ratio {worst:.3f} over 100 random networks in {elapsed:.1f}s")


def _reversal_step_grads(coefficient, with_task=True, with_domain=True):
    spec = NetworkSpec(input_dim=6, shared_layers=2, hidden_width=8,
                       input_dropout=0.0, hidden_dropout=0.0)
    model = DannModel(spec, seed=3)
    model.gate.set_coefficient(coefficient)
    rng = np.random.default_rng(0)
    xb = rng.normal(size=(8, 6))
    yb = np.clip(rng.normal(size=8), -3.0, 3.0)
    tb = rng.normal(size=(8, 6)) + 0.5
    if with_task:
        pred = model.forward_task(xb, train=True)
        _, grad = mse_loss(pred.ravel(), yb)
        model.backward_task(grad.reshape(-1, 1))
    if with_domain:
        union = np.concatenate([xb, tb])
        onehot = np.zeros((union.shape[0], 2))
        onehot[: len(xb), 0] = 1.0
        onehot[len(xb):, 1] = 1.0
        logits = model.forward_domain(union, train=True)
        _, domain_grad = crossentropy_loss(logits, onehot)
        model.backward_domain(domain_grad)
    return {p.name: p.grad.copy() for p in model.params()}


def test_criterion_02_reversal_gate_contract():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 4))
    identity = all(np.array_equal(ReversalGate(c).forward(x), x) for c in (0.0, 0.5, 1.0, 7.25))
    upstream = rng.normal(size=(5, 4))
    backward_err = max(
        np.abs(ReversalGate(c).backward(upstream) + c * upstream).max() for c in (0.0, 0.7, 1.0)
    )
    task_only = _reversal_step_grads(1.0, with_domain=False)
    reversed_domain = _reversal_step_grads(1.0, with_task=False)
    composite_err = 0.0
    for coefficient in (0.3, 1.0):
        combined = _reversal_step_grads(coefficient)
        for name, grad in combined.items():
            if name.startswith("shared"):
                expected = task_only[name] + coefficient * reversed_domain[name]
                composite_err = max(composite_err, np.abs(grad - expected).max())
    _verdict(2, identity and backward_err <= 1e-15 and composite_err <= 1e-10,
             f"forward identity {identity}, backward error {backward_err:.2e}, "
             f"composite decomposition error {composite_err:.2e}")


def test_criterion_03_metrics_match_independent_oracles():
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 60))
        a = rng.normal(size=n) * rng.uniform(0.1, 10.0)
        b = a * rng.uniform(-1.5, 1.5) + rng.normal(size=n)
        worst = max(worst, abs(rmse(a, b) - float(np.sqrt(((a - b) ** 2).mean()))))
        am, bm = a - a.mean(), b - b.mean()
        denom = np.sqrt((am * am).sum() * (bm * bm).sum())
        if denom > 0:
            worst = max(worst, abs(pearson(a, b) - float((am * bm).sum() / denom)))
        cov = (am * bm).mean()
        concordance = 2 * cov / (a.var() + b.var() + (a.mean() - b.mean()) ** 2)
        worst = max(worst, abs(ccc(a, b) - float(concordance)))
    properties = True
    for seed in range(50):
        x = np.random.default_rng(seed).normal(size=40) * (1 + seed % 5)
        y = np.random.default_rng(seed + 500).normal(size=40)
        properties &= abs(ccc(x, x) - 1.0) <= 1e-12
        properties &= abs(ccc(x, y) - ccc(y, x)) <= 1e-12
        properties &= abs(ccc(x, y)) <= abs(pearson(x, y)) + 1e-12
        for c in (0.5, 1.0, 2.0, 10.0):
            v = x.var()
            law = 2 * v / (2 * v + c * c)
            properties &= abs(ccc(x, x + c) - law) <= 1e-6 * law
    _verdict(3, worst <= 1e-12 and properties,
             f"worst oracle deviation {worst:.2e} over 1000 pairs, property sweep {properties}")


def test_criterion_04_optimizer_matches_the_closed_form():
    p = Parameter("w", np.array([1.0]))
    opt = Adam([p])
    p.grad[...] = 0.5
    opt.step()
    expected = 1.0 - 5e-4 * 0.5 / (np.sqrt(0.25) + 1e-8)
    step_err = abs(p.value[0] - expected)

    q = Parameter("w", np.array([0.0, 0.0]))
    opt = Adam([q], clip_norm=10.0)
    q.grad[...] = [30.0, 40.0]
    opt.step()
    g = np.array([6.0, 8.0])
    clip_err = np.abs(q.value - (-5e-4 * g / (np.abs(g) + 1e-8))).max()

    r = Parameter("w", np.array([[8.0, 0.0], [0.0, 3.0]]), row_norm_capped=True)
    Adam([r], max_norm=4.0).step()
    projected = np.allclose(r.value[0], [4.0, 0.0], rtol=0, atol=1e-12) \
        and np.array_equal(r.value[1], [0.0, 3.0])
    _verdict(4, step_err < 1e-12 and clip_err <= 1e-15 and projected,
             f"first-step error {step_err:.2e}, clipped-step error {clip_err:.2e}, "
             f"over-norm row projected {projected}")


def test_criterion_05_normalization_trims_outliers_and_clips_extremes():
    col = np.arange(1.0, 101.0)
    col[99] = 1e6
    rng = np.random.default_rng(7)
    x = np.column_stack([col, rng.normal(loc=3.0, scale=5.0, size=100)])
    stats = fit_normalization(FeatureMatrix([str(i) for i in range(100)], x))
    worst = 0.0
    for j in range(2):
        lo, hi = np.quantile(x[:, j], 0.05), np.quantile(x[:, j], 0.95)
        kept = x[:, j][(x[:, j] >= lo) & (x[:, j] <= hi)]
        worst = max(worst, abs(stats.mean[j] - kept.mean()), abs(stats.std[j] - kept.std()))
    outlier_gone = stats.mean[0] < 100.0 and stats.std[0] < 100.0

    unit = NormalizationStats(np.array([0.0]), np.array([1.0]))
    out = apply_normalization(
        FeatureMatrix(["a", "b", "c"], np.array([[10.5], [9.9], [-11.0]])), unit)
    clip_rule = list(out.values.ravel()) == [0.0, 9.9, 0.0]
    wild = rng.normal(scale=50.0, size=(300, 4))
    wild[::17] *= 1e4
    features = FeatureMatrix([str(i) for i in range(300)], wild)
    bounded = np.abs(apply_normalization(features, fit_normalization(features)).values).max() <= 10.0
    _verdict(5, worst <= 1e-12 and outlier_gone and clip_rule and bounded,
             f"trimmed-statistics deviation {worst:.2e}, outlier damped {outlier_gone}, "
             f"z-clipping rule {clip_rule}, all values within 10 {bounded}")


def test_criterion_06_lambda_ramps_from_zero_to_one():
    schedule = LambdaSchedule(warmup_epochs=10, total_epochs=100)
    values = [lambda_at(schedule, e) for e in range(1, 101)]
    warm = all(v == 0.0 for v in values[:10])
    landmarks = values[54] == 0.5 and values[99] == 1.0
    monotone = all(b >= a for a, b in zip(values, values[1:]))
    _verdict(6, warm and landmarks and monotone,
             f"zero through warmup {warm}, epoch-55 value {values[54]}, "
             f"epoch-100 value {values[99]}, nondecreasing {monotone}")


def test_criterion_07_adversarial_training_beats_the_source_baseline(canonical):
    assert all(r.ok for r in canonical["src"] + canonical["dann"])
    src_ccc = trial_metric_values(canonical["src"], "target_test", "ccc")
    dann_ccc = trial_metric_values(canonical["dann"], "target_test", "ccc")
    # the shift must actually hurt, or the comparison is vacuous
    src_dev = trial_metric_values(canonical["src"], "source_dev", "ccc")
    assert src_ccc.mean() < src_dev.mean()
    p = improvement_p_value(canonical["dann"], canonical["src"], "ccc")
    gain = (dann_ccc.mean() - src_ccc.mean()) / src_ccc.mean()
    ok = dann_ccc.mean() > src_ccc.mean() and p < 0.05 and gain >= 0.10 \
        and canonical["elapsed"] < 900.0
    _verdict(7, ok,
             f"target ccc {dann_ccc.mean():.4f} vs {src_ccc.mean():.4f} over 20 trials, "
             f"gain {100 * gain:.1f}%, p {p:.3g}, both arms in {canonical['elapsed']:.0f}s")


def test_criterion_08_domain_head_ends_near_chance_yet_information_survives(canonical):
    accs = canonical["dann"][0].domain_acc_per_epoch
    assert len(accs) == canonical["config"].epochs
    final = accs[-1]
    # discriminability is high early, before the reversal has strength
    assert max(accs) > final
    prepared = canonical["prepared"]
    baseline = RegressionNet(canonical["net"], BASE_SEED)
    train_baseline(baseline, prepared.source_train, prepared.source_dev, canonical["config"])
    probe_x = np.concatenate([prepared.source_train.features.values, prepared.target_pool.values])
    probe_labels = np.array([0] * len(prepared.source_train) + [1] * len(prepared.target_pool))
    eval_x, eval_labels = prepared.domain_eval
    probe = train_domain_probe(baseline, probe_x, probe_labels, eval_x, eval_labels,
                               canonical["config"], seed=BASE_SEED)
    ok = 0.4 <= final <= 0.65 and probe > final
    _verdict(8, ok,
             f"final held-out domain accuracy {final:.4f} within [0.40, 0.65], "
             f"probe on the frozen source-only stack reads {probe:.4f}")


def test_criterion_09_projections_separate_for_the_baseline_only(canonical):
    layers = run_visualize(canonical["prepared"], canonical["config"], 2, 64)
    final = layers[-1]
    ok = final["dann_separability"] <= 0.6 and final["src_separability"] >= 0.7
    _verdict(9, ok,
             f"final-layer separability {final['dann_separability']:.3f} adversarial (<= 0.6) "
             f"vs {final['src_separability']:.3f} source-only (>= 0.7)")


def test_criterion_10_no_shift_control_shows_no_degradation(noshift):
    src_ccc = trial_metric_values(noshift["src"], "target_test", "ccc")
    dann_ccc = trial_metric_values(noshift["dann"], "target_test", "ccc")
    p = improvement_p_value(noshift["dann"], noshift["src"], "ccc")
    indistinguishable = min(p, 1.0 - p) >= 0.05
    _verdict(10, indistinguishable,
             f"identical domains: target ccc {dann_ccc.mean():.5f} adversarial "
             f"vs {src_ccc.mean():.5f} source-only, p {p:.3f}")


def test_criterion_11_reruns_reproduce_every_output_bitwise(tmp_path):
    nested = parse_flat_text(TINY_CONFIG_TEXT)
    differing = []
    for kind in ("gen-data", "sweep", "compare", "visualize"):
        manifests = []
        outputs = []
        for attempt in ("first", "second"):
            out_dir = tmp_path / kind / attempt
            manifest = run_experiment(build_config(nested, kind=kind, out_dir=str(out_dir)))
            manifest.pop("out_dir")
            manifests.append(manifest)
            outputs.append(read_files(out_dir, manifest["outputs"]))
        if manifests[0] != manifests[1] or outputs[0] != outputs[1]:
            differing.append(kind)
    _verdict(11, not differing,
             "every experiment kind rerun byte-identical" if not differing
             else f"outputs differ for {differing}")


def test_criterion_12_zero_coefficient_walks_the_baseline_trajectory():
    spec = SyntheticShiftSpec(n_source=600, n_target=600, seed=BASE_SEED)
    source, target, pool = generate_shift_task(spec)
    prepared = prepare_data(source, target, pool, seed=BASE_SEED)
    net = network_spec("deep", prepared.source_train.features.dim, 1, 32,
                       TrainConfig(seed=BASE_SEED))
    probe = np.random.default_rng(0).normal(size=(32, prepared.source_train.features.dim))
    checked = 0
    identical = True
    for epochs in (2, 5, 9):
        config = TrainConfig(epochs=epochs, batch_size=32, lambda_warmup_epochs=0,
                             lambda_final=0.0, trials=1, seed=BASE_SEED)
        dann = DannModel(net, BASE_SEED)
        unlabeled = sample_unlabeled(prepared.target_pool, len(prepared.source_train),
                                     stream_rng(BASE_SEED, SUBSAMPLE))
        train_dann(dann, prepared.source_train, unlabeled, config)
        baseline = RegressionNet(net, BASE_SEED)
        train_baseline(baseline, prepared.source_train, prepared.source_dev, config)
        backbone = {p.name: p.value for p in dann.task_params()}
        for p in baseline.params():
            identical &= np.array_equal(p.value, backbone[p.name])
            checked += 1
        dann_state = dict(dann.backbone.state())
        for name, value in baseline.state():
            identical &= np.array_equal(value, dann_state[name])
            checked += 1
        identical &= np.array_equal(baseline.predict(probe), dann.predict_task(probe))
    _verdict(12, identical,
             f"task stack identical bit for bit at three horizons ({checked} tensors compared)")
