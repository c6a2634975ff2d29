"""Experiment harness: prepares normalized source/target splits, runs the
three protocol pieces (shared-depth sweep, three-approach comparison,
layer-projection visualization), and writes plot-ready CSV plus a
human-readable summary.

Comparison protocol: every approach is scored on the same held-out target
test split over repeated seeded trials. Significance flags compare the
adversarial model against the source-only baseline per structure with a
one-tailed test at p < 0.05; RMSE's direction is inverted since lower is
better there.

All outputs are pure functions of (config, seed): no timestamps, stable
float repr, fixed row order. Reruns must be byte-identical.
"""

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    FeatureMatrix,
    LabeledDataset,
    SyntheticShiftSpec,
    apply_normalization,
    fit_normalization,
    generate_shift_task,
    load_csv,
    save_csv,
    split,
)
from .errors import ConfigError, DataError, InputError
from .metrics import domain_accuracy, one_tailed_ttest
from .model import DannModel, NetworkSpec, RegressionNet
from .nn import Adam, BatchNorm, Dense, Dropout, Relu, Stack, crossentropy_loss, softmax
from .seeding import PROBE, SUBSAMPLE, stream_rng
from .train import (
    TrainConfig,
    run_trials,
    sample_unlabeled,
    train_baseline,
    train_dann,
    trial_metric_values,
    write_aggregate_json,
    write_trials_csv,
)

APPROACHES = ("target", "src", "dann")
STRUCTURES = ("deep", "shallow")
METRIC_NAMES = ("rmse", "pr", "ccc")
SIGNIFICANCE_LEVEL = 0.05
PROJECTION_SAMPLE_CAP = 500


@dataclass
class PreparedData:
    """Normalized, split experiment data. Source and target stats are
    fitted independently; the target's come from the unlabeled pool so the
    labeled target split stays untouched until evaluation."""

    source_train: LabeledDataset
    source_dev: LabeledDataset
    source_test: LabeledDataset
    target_train: LabeledDataset
    target_dev: LabeledDataset
    target_test: LabeledDataset
    target_pool: FeatureMatrix
    domain_eval: tuple  # (features, labels), balanced, held-out


def prepare_data(source: LabeledDataset, target: LabeledDataset, pool: FeatureMatrix,
                 seed: int, fractions=(0.7, 0.15, 0.15)) -> PreparedData:
    src_stats = fit_normalization(source.features)
    tgt_stats = fit_normalization(pool)
    source = LabeledDataset(apply_normalization(source.features, src_stats), source.scores, source.attribute)
    target = LabeledDataset(apply_normalization(target.features, tgt_stats), target.scores, target.attribute)
    pool = apply_normalization(pool, tgt_stats)
    s_train, s_dev, s_test = split(source, fractions, seed, salt=0)
    t_train, t_dev, t_test = split(target, fractions, seed, salt=1)
    k = min(len(s_test), len(t_test))
    eval_x = np.concatenate([s_test.features.values[:k], t_test.features.values[:k]])
    eval_labels = np.concatenate([np.zeros(k, dtype=int), np.ones(k, dtype=int)])
    return PreparedData(s_train, s_dev, s_test, t_train, t_dev, t_test, pool, (eval_x, eval_labels))


def network_spec(structure: str, input_dim: int, shared_layers: int, hidden_width: int,
                 config: TrainConfig) -> NetworkSpec:
    if structure == "shallow":
        shared_layers = 1
    return NetworkSpec(
        input_dim=input_dim,
        shared_layers=shared_layers,
        variant=structure,
        hidden_width=hidden_width,
        input_dropout=config.dropout_input,
        hidden_dropout=config.dropout_hidden,
    )


def run_approach_trials(approach: str, prepared: PreparedData, spec: NetworkSpec,
                        config: TrainConfig, track_domain=False):
    """Seeded trials of one approach, all scored on target_test (plus the
    split the approach selects on)."""
    if approach not in APPROACHES:
        raise InputError(f"approach must be one of {APPROACHES}, got {approach!r}")
    test_pair = (prepared.target_test.features.values, prepared.target_test.scores)

    def one_trial(trial_seed):
        cfg = replace(config, seed=trial_seed)
        if approach == "target":
            model = RegressionNet(spec, trial_seed)
            _, report = train_baseline(model, prepared.target_train, prepared.target_dev, cfg,
                                       eval_splits={"target_test": test_pair})
        elif approach == "src":
            model = RegressionNet(spec, trial_seed)
            _, report = train_baseline(model, prepared.source_train, prepared.source_dev, cfg,
                                       eval_splits={
                                           "target_test": test_pair,
                                           "source_dev": (prepared.source_dev.features.values,
                                                          prepared.source_dev.scores),
                                       })
        else:
            model = DannModel(spec, trial_seed)
            unlabeled = sample_unlabeled(prepared.target_pool, len(prepared.source_train),
                                         stream_rng(trial_seed, SUBSAMPLE))
            _, report = train_dann(model, prepared.source_train, unlabeled, cfg,
                                   domain_eval=prepared.domain_eval if track_domain else None,
                                   eval_splits={
                                       "target_test": test_pair,
                                       "source_dev": (prepared.source_dev.features.values,
                                                      prepared.source_dev.scores),
                                   })
        return report

    return run_trials(config, one_trial)


@dataclass
class TableRow:
    approach: str
    structure: str
    metrics: dict = field(default_factory=dict)      # metric -> (mean, std)
    significant: dict = field(default_factory=dict)  # metric -> bool (dann rows)
    p_values: dict = field(default_factory=dict)


@dataclass
class ComparisonTable:
    attribute: str
    rows: list = field(default_factory=list)

    def row(self, approach, structure):
        for r in self.rows:
            if r.approach == approach and r.structure == structure:
                return r
        raise InputError(f"no row for ({approach}, {structure})")


def _row_from_reports(approach, structure, reports, split_name="target_test"):
    row = TableRow(approach=approach, structure=structure)
    for metric in METRIC_NAMES:
        vals = trial_metric_values(reports, split_name, metric)
        row.metrics[metric] = (float(vals.mean()), float(vals.std())) if vals.size else (math.nan, math.nan)
    return row


def improvement_p_value(dann_reports, src_reports, metric, split_name="target_test"):
    """One-tailed p for the adversarial model beating the source baseline.
    Higher is better for pr/ccc; lower is better for rmse, so the samples
    swap sides there."""
    dann_vals = trial_metric_values(dann_reports, split_name, metric)
    src_vals = trial_metric_values(src_reports, split_name, metric)
    if metric == "rmse":
        return one_tailed_ttest(src_vals, dann_vals)
    return one_tailed_ttest(dann_vals, src_vals)


def run_compare(prepared: PreparedData, config: TrainConfig, shared_layers: int,
                hidden_width: int, attribute: str) -> tuple:
    """Three approaches times two structures, each over config.trials
    seeded trials; returns (table, reports_by_row, aggregates_by_row)."""
    if config.trials < 2:
        raise ConfigError(f"the comparison's significance test needs at least 2 trials "
                          f"per arm, got {config.trials}")
    table = ComparisonTable(attribute=attribute)
    all_reports = {}
    all_aggregates = {}
    for structure in STRUCTURES:
        spec = network_spec(structure, prepared.source_train.features.dim, shared_layers,
                            hidden_width, config)
        for approach in APPROACHES:
            reports, aggregate = run_approach_trials(approach, prepared, spec, config)
            all_reports[(approach, structure)] = reports
            all_aggregates[(approach, structure)] = aggregate
            table.rows.append(_row_from_reports(approach, structure, reports))
        dann_row = table.row("dann", structure)
        for metric in METRIC_NAMES:
            p = improvement_p_value(all_reports[("dann", structure)], all_reports[("src", structure)], metric)
            dann_row.p_values[metric] = float(p)
            dann_row.significant[metric] = bool(p < SIGNIFICANCE_LEVEL)
    return table, all_reports, all_aggregates


def run_sweep(prepared: PreparedData, config: TrainConfig, layer_counts, hidden_width: int,
              attribute: str):
    """Adversarial model at each shared-stack depth; selection is by mean
    source-dev concordance, mirroring structure selection on the labeled
    domain's development split."""
    if not layer_counts or any(k not in (1, 2, 3, 4) for k in layer_counts):
        raise ConfigError(f"sweep layer counts must be within 1..4, got {layer_counts}")
    rows = []
    reports_by_layers = {}
    aggregates_by_layers = {}
    for k in layer_counts:
        spec = network_spec("deep", prepared.source_train.features.dim, k, hidden_width, config)
        reports, aggregate = run_approach_trials("dann", prepared, spec, config)
        reports_by_layers[k] = reports
        aggregates_by_layers[k] = aggregate
        row = {"shared_layers": k}
        for split_name in ("source_dev", "target_test"):
            for metric in METRIC_NAMES:
                vals = trial_metric_values(reports, split_name, metric)
                row[f"{split_name}_{metric}_mean"] = float(vals.mean()) if vals.size else math.nan
                row[f"{split_name}_{metric}_std"] = float(vals.std()) if vals.size else math.nan
        rows.append(row)
    best = max(rows, key=lambda r: r["source_dev_ccc_mean"])["shared_layers"]
    return {
        "attribute": attribute,
        "rows": rows,
        "best_shared_layers": best,
        "reports": reports_by_layers,
        "aggregates": aggregates_by_layers,
    }


def pca_2d(points: np.ndarray):
    """Top-2 principal directions of the pooled points. Deterministic sign:
    each direction's largest-magnitude loading is made positive."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 2 or points.shape[1] < 2:
        raise InputError("need at least 2 rows and 2 columns for a 2-d projection")
    center = points.mean(axis=0)
    centered = points - center
    cov = centered.T @ centered / points.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    components = eigvecs[:, np.argsort(eigvals)[::-1][:2]].T
    for i in range(2):
        j = np.argmax(np.abs(components[i]))
        if components[i, j] < 0:
            components[i] = -components[i]
    return center, components


def dump_representations(model, source_x, target_x, layer_index: int):
    """Project both domains' activations at one shared layer onto the top-2
    principal directions of the pooled activations. Returns (points, labels)
    with labels 0 for source rows, 1 for target rows."""
    acts_src = model.shared_activations(np.asarray(source_x, dtype=np.float64))
    acts_tgt = model.shared_activations(np.asarray(target_x, dtype=np.float64))
    if not 0 <= layer_index < len(acts_src):
        raise InputError(f"layer index {layer_index} outside 0..{len(acts_src) - 1}")
    pooled = np.concatenate([acts_src[layer_index], acts_tgt[layer_index]])
    center, components = pca_2d(pooled)
    points = (pooled - center) @ components.T
    labels = np.concatenate([np.zeros(len(acts_src[layer_index]), dtype=int),
                             np.ones(len(acts_tgt[layer_index]), dtype=int)])
    return points, labels


def nearest_centroid_separability(points: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy of a 2-class nearest-centroid rule on the projected points;
    0.5 means the domains are indistinguishable to this probe."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.shape[0] != labels.shape[0] or points.shape[0] == 0:
        raise InputError("points and labels must align and be non-empty")
    centroids = np.stack([points[labels == c].mean(axis=0) for c in (0, 1)])
    dists = np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2)
    assigned = np.argmin(dists, axis=1)
    return float(np.mean(assigned == labels))


def domain_confusion_probe(model: DannModel, eval_x, eval_labels) -> float:
    """Held-out accuracy of the trained domain head. The eval set must be
    balanced so 0.5 is chance."""
    eval_labels = np.asarray(eval_labels)
    if int((eval_labels == 0).sum()) != int((eval_labels == 1).sum()):
        raise InputError("domain eval set must be balanced")
    return domain_accuracy(model.predict_domain(np.asarray(eval_x, dtype=np.float64)), eval_labels)


def train_domain_probe(model, train_x, train_labels, eval_x, eval_labels,
                       config: TrainConfig, seed: int) -> float:
    """How much domain information survives in a frozen representation:
    train a fresh 2-layer classifier on the final shared-layer activations
    and score it on held-out rows. Mirrors the adversarial head's shape so
    the comparison with its accuracy is like for like."""
    train_labels = np.asarray(train_labels, dtype=int)
    reps = model.shared_activations(np.asarray(train_x, dtype=np.float64))[-1]
    reps_eval = model.shared_activations(np.asarray(eval_x, dtype=np.float64))[-1]
    width = reps.shape[1]
    rng_init = stream_rng(seed, PROBE, 0)
    head = Stack([
        Dense(width, width, rng_init, "probe1"),
        BatchNorm(width, name="probe1.bn"),
        Relu(),
        Dropout(config.dropout_hidden),
        Dense(width, 2, rng_init, "probe_out"),
    ])
    opt = Adam(head.params(), config.learning_rate, max_norm=config.max_norm, clip_norm=config.clip_norm)
    rng_shuffle = stream_rng(seed, PROBE, 1)
    rng_drop = stream_rng(seed, PROBE, 2)
    onehot_all = np.eye(2)[train_labels]
    n = reps.shape[0]
    for _ in range(config.epochs):
        order = rng_shuffle.permutation(n)
        for b in range(0, n, config.batch_size):
            idx = order[b:b + config.batch_size]
            if idx.size < 2:
                break
            logits = head.forward(reps[idx], train=True, rng=rng_drop)
            _, grad = crossentropy_loss(logits, onehot_all[idx])
            head.backward(grad)
            opt.step()
            opt.zero_grads()
    return domain_accuracy(softmax(head.forward(reps_eval)), np.asarray(eval_labels))


def projection_samples(prepared: PreparedData, cap: int = PROJECTION_SAMPLE_CAP):
    k = min(len(prepared.source_test), len(prepared.target_test), cap)
    return prepared.source_test.features.values[:k], prepared.target_test.features.values[:k]


def run_visualize(prepared: PreparedData, config: TrainConfig, shared_layers: int,
                  hidden_width: int):
    """One adversarial trial and one source-only trial on the base seed;
    per shared layer, the 2-d projections of both models plus the
    nearest-centroid separability of each."""
    spec = network_spec("deep", prepared.source_train.features.dim, shared_layers, hidden_width, config)
    dann = DannModel(spec, config.seed)
    unlabeled = sample_unlabeled(prepared.target_pool, len(prepared.source_train),
                                 stream_rng(config.seed, SUBSAMPLE))
    train_dann(dann, prepared.source_train, unlabeled, config)
    src = RegressionNet(spec, config.seed)
    train_baseline(src, prepared.source_train, prepared.source_dev, config)
    src_x, tgt_x = projection_samples(prepared)
    layers = []
    for k in range(spec.shared_layers):
        d_points, d_labels = dump_representations(dann, src_x, tgt_x, k)
        s_points, s_labels = dump_representations(src, src_x, tgt_x, k)
        layers.append({
            "layer": k + 1,
            "dann": (d_points, d_labels),
            "src": (s_points, s_labels),
            "dann_separability": nearest_centroid_separability(d_points, d_labels),
            "src_separability": nearest_centroid_separability(s_points, s_labels),
        })
    return layers


# ---------------------------------------------------------------- writers

def write_projection_csv(path, points, labels):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,domain\n")
        for (x, y), label in zip(points, labels):
            fh.write(f"{float(x)!r},{float(y)!r},{'source' if label == 0 else 'target'}\n")


def _fmt(mean, std):
    return f"{mean:.4f} +- {std:.4f}"


def write_compare_csv(path, table: ComparisonTable):
    cols = ["attribute", "approach", "structure"]
    for metric in METRIC_NAMES:
        cols += [f"{metric}_mean", f"{metric}_std", f"{metric}_significant", f"{metric}_p"]
    lines = [",".join(cols)]
    for row in table.rows:
        cells = [table.attribute, row.approach, row.structure]
        for metric in METRIC_NAMES:
            mean, std = row.metrics[metric]
            cells += [repr(mean), repr(std)]
            if metric in row.significant:
                cells += [str(int(row.significant[metric])), repr(row.p_values[metric])]
            else:
                cells += ["", ""]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_compare_summary(path, table: ComparisonTable):
    lines = [
        f"attribute: {table.attribute}",
        "",
        f"{'approach':<10}{'structure':<11}{'rmse':<22}{'pr':<22}{'ccc':<22}",
    ]
    for row in table.rows:
        cells = [f"{row.approach:<10}", f"{row.structure:<11}"]
        for metric in METRIC_NAMES:
            text = _fmt(*row.metrics[metric])
            if row.significant.get(metric):
                text += " *"
            cells.append(f"{text:<22}")
        lines.append("".join(cells))
    lines += ["", "* adversarial model beats the source-only baseline, one-tailed p < 0.05"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(line.rstrip() for line in lines) + "\n")


def write_sweep_csv(path, sweep):
    rows = sweep["rows"]
    cols = ["attribute", "shared_layers"] + [k for k in rows[0] if k != "shared_layers"]
    lines = [",".join(cols)]
    for row in rows:
        cells = [sweep["attribute"], str(row["shared_layers"])]
        cells += [repr(row[k]) for k in cols[2:]]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_sweep_summary(path, sweep):
    lines = [f"attribute: {sweep['attribute']}", ""]
    header = f"{'shared_layers':<15}{'dev ccc':<22}{'target ccc':<22}"
    lines.append(header)
    for row in sweep["rows"]:
        lines.append(
            f"{row['shared_layers']:<15}"
            f"{_fmt(row['source_dev_ccc_mean'], row['source_dev_ccc_std']):<22}"
            f"{_fmt(row['target_test_ccc_mean'], row['target_test_ccc_std']):<22}"
        )
    lines += ["", f"selected shared layers (max mean dev ccc): {sweep['best_shared_layers']}"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(line.rstrip() for line in lines) + "\n")


def write_visualize_summary(path, layers):
    lines = [f"{'layer':<7}{'dann separability':<20}{'src separability':<20}"]
    for entry in layers:
        lines.append(
            f"{entry['layer']:<7}{entry['dann_separability']:<20.4f}{entry['src_separability']:<20.4f}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(line.rstrip() for line in lines) + "\n")
