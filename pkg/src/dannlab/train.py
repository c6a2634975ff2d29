"""Training loops: adversarial training with balanced source/target
batches and a ramped reversal coefficient, the plain single-domain
baseline loop, and seeded multi-trial orchestration with aggregation.

Batch protocol for the adversarial loop: one epoch is one pass over the
source rows; each batch takes batch_size/2 source rows and batch_size/2
target rows (the target stream is tiled to the source length when needed,
so the 1:1 ratio survives the final short batch). The task loss sees only
the source half; the domain loss sees the union. Short leftover batches
run unless the source half drops below 2 rows, which batch normalization
cannot take.

Both loops draw their shuffle and dropout randomness from named streams of
the trial seed, and the adversarial model forwards its two paths with
separate dropout streams. With the reversal coefficient pinned at zero
this makes the shared/task parameter trajectory bitwise-identical to the
baseline loop on the same seed, which the equivalence tests rely on.
"""

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import FeatureMatrix, LabeledDataset
from .errors import ConfigError, InputError, NumericError
from .metrics import MetricTriple, domain_accuracy, evaluate
from .nn import Adam, crossentropy_loss, mse_loss
from .seeding import (
    DROPOUT_DOMAIN,
    DROPOUT_TASK,
    SHUFFLE_SOURCE,
    SHUFFLE_TARGET,
    SUBSAMPLE,
    stream_rng,
)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 5e-4
    dropout_input: float = 0.2
    dropout_hidden: float = 0.5
    max_norm: float = 4.0
    clip_norm: float = 10.0
    lambda_warmup_epochs: int = 10
    lambda_final: float = 1.0
    trials: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError("batch_size must be even and >= 2")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.lambda_warmup_epochs < 0 or (self.epochs > 0 and self.lambda_warmup_epochs >= self.epochs):
            raise ConfigError("lambda_warmup_epochs must lie in [0, epochs)")
        if self.lambda_final < 0:
            raise ConfigError("lambda_final must be >= 0")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        for rate in (self.dropout_input, self.dropout_hidden):
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"dropout rates must lie in [0, 1), got {rate}")
        if self.max_norm is not None and self.max_norm <= 0:
            raise ConfigError("max_norm must be positive or None")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive or None")


def config_hash(config) -> str:
    blob = json.dumps(asdict(config), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class LambdaSchedule:
    warmup_epochs: int
    total_epochs: int
    final_value: float = 1.0

    def __post_init__(self):
        if self.total_epochs > 0 and not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError("warmup_epochs must lie in [0, total_epochs)")


def lambda_at(schedule: LambdaSchedule, epoch: int) -> float:
    """Piecewise-linear ramp: zero through the warmup epochs, then linear
    up to final_value at the last epoch. Epochs are 1-based."""
    if not 1 <= epoch <= schedule.total_epochs:
        raise InputError(f"epoch {epoch} outside 1..{schedule.total_epochs}")
    if epoch <= schedule.warmup_epochs:
        return 0.0
    span = schedule.total_epochs - schedule.warmup_epochs
    return schedule.final_value * (epoch - schedule.warmup_epochs) / span


@dataclass
class TrialReport:
    trial_seed: int
    splits: dict = field(default_factory=dict)        # split name -> MetricTriple
    domain_acc_per_epoch: list = field(default_factory=list)
    dev_history: list = field(default_factory=list)   # per-epoch dev MetricTriple (baseline only)
    final_lambda: float = 0.0
    wall_time: float = 0.0                            # in-memory only, never written to files
    failure: str | None = None

    @property
    def ok(self):
        return self.failure is None


def sample_unlabeled(pool: FeatureMatrix, n_source: int, rng) -> FeatureMatrix:
    """Uniform draw of n_source rows; without replacement unless the pool
    is too small."""
    if len(pool) == 0:
        raise InputError("unlabeled pool is empty")
    if n_source < 1:
        raise InputError("n_source must be positive")
    replace = len(pool) < n_source
    index = rng.choice(len(pool), size=n_source, replace=replace)
    return pool.take(index)


def _evaluate_splits(predict, eval_splits):
    out = {}
    for name, (x, y) in (eval_splits or {}).items():
        out[name] = evaluate(predict(x), y)
    return out


def train_dann(model, source: LabeledDataset, target_pool: FeatureMatrix, config: TrainConfig,
               domain_eval=None, eval_splits=None):
    """Adversarial loop. domain_eval is an optional (features, labels) pair
    of held-out rows, half per domain; when given, the domain head's
    accuracy on it is recorded every epoch. eval_splits maps split names to
    (features, scores) pairs scored once at the end."""
    if len(source) == 0 or len(target_pool) == 0:
        raise InputError("source and target pool must be non-empty")
    start = time.perf_counter()
    schedule = LambdaSchedule(config.lambda_warmup_epochs, config.epochs, config.lambda_final)
    opt_task = Adam(model.task_params(), config.learning_rate,
                    max_norm=config.max_norm, clip_norm=config.clip_norm)
    opt_domain = Adam(model.domain_params(), config.learning_rate,
                      max_norm=config.max_norm, clip_norm=config.clip_norm)
    seed = config.seed
    rng_src = stream_rng(seed, SHUFFLE_SOURCE)
    rng_tgt = stream_rng(seed, SHUFFLE_TARGET)
    rng_drop_task = stream_rng(seed, DROPOUT_TASK)
    rng_drop_domain = stream_rng(seed, DROPOUT_DOMAIN)
    report = TrialReport(trial_seed=seed)
    xs, ys = source.features.values, source.scores
    xt = target_pool.values
    half = config.batch_size // 2
    n = len(source)
    coefficient = 0.0
    for epoch in range(1, config.epochs + 1):
        coefficient = lambda_at(schedule, epoch)
        model.gate.set_coefficient(coefficient)
        src_order = rng_src.permutation(n)
        tgt_order = np.resize(rng_tgt.permutation(len(target_pool)), n)
        for b in range(0, n, half):
            src_idx = src_order[b:b + half]
            if src_idx.size < 2:
                break
            xb, yb = xs[src_idx], ys[src_idx]
            tb = xt[tgt_order[b:b + half]]
            try:
                pred = model.forward_task(xb, train=True, rng=rng_drop_task)
                task_loss, task_grad = mse_loss(pred.ravel(), yb)
                if not np.isfinite(task_loss):
                    raise NumericError(f"task loss {task_loss}")
                model.backward_task(task_grad.reshape(-1, 1))
                union = np.concatenate([xb, tb])
                onehot = np.zeros((union.shape[0], 2))
                onehot[:src_idx.size, 0] = 1.0
                onehot[src_idx.size:, 1] = 1.0
                logits = model.forward_domain(union, train=True, rng=rng_drop_domain)
                domain_loss, domain_grad = crossentropy_loss(logits, onehot)
                if not np.isfinite(domain_loss):
                    raise NumericError(f"domain loss {domain_loss}")
                model.backward_domain(domain_grad)
                opt_task.step()
                opt_domain.step()
            except NumericError as exc:
                report.failure = f"epoch {epoch}: {exc}"
                report.wall_time = time.perf_counter() - start
                return model, report
            finally:
                opt_task.zero_grads()
                opt_domain.zero_grads()
        if domain_eval is not None:
            eval_x, eval_labels = domain_eval
            probs = model.predict_domain(np.asarray(eval_x, dtype=np.float64))
            report.domain_acc_per_epoch.append(domain_accuracy(probs, eval_labels))
    report.final_lambda = coefficient
    report.splits = _evaluate_splits(model.predict_task, eval_splits)
    report.wall_time = time.perf_counter() - start
    return model, report


def train_baseline(model, train: LabeledDataset, dev: LabeledDataset, config: TrainConfig,
                   eval_splits=None):
    """Single-domain loop: same batching, optimizer, and dropout stream as
    the task path of the adversarial loop, with no domain branch. Dev
    metrics are recorded every epoch for structure selection."""
    if len(train) == 0:
        raise InputError("training set must be non-empty")
    start = time.perf_counter()
    opt = Adam(model.params(), config.learning_rate,
               max_norm=config.max_norm, clip_norm=config.clip_norm)
    seed = config.seed
    rng_shuffle = stream_rng(seed, SHUFFLE_SOURCE)
    rng_drop = stream_rng(seed, DROPOUT_TASK)
    report = TrialReport(trial_seed=seed)
    xs, ys = train.features.values, train.scores
    n = len(train)
    # batch_size // 2 rows per step: the adversarial loop gives its task
    # branch half of every batch, and the single-domain loop must walk the
    # same trajectory so that a lambda == 0 run and a baseline coincide
    half = config.batch_size // 2
    for epoch in range(1, config.epochs + 1):
        order = rng_shuffle.permutation(n)
        for b in range(0, n, half):
            idx = order[b:b + half]
            if idx.size < 2:
                break
            try:
                pred = model.forward_task(xs[idx], train=True, rng=rng_drop)
                loss, grad = mse_loss(pred.ravel(), ys[idx])
                if not np.isfinite(loss):
                    raise NumericError(f"loss {loss}")
                model.backward_task(grad.reshape(-1, 1))
                opt.step()
            except NumericError as exc:
                report.failure = f"epoch {epoch}: {exc}"
                report.wall_time = time.perf_counter() - start
                return model, report
            finally:
                opt.zero_grads()
        if dev is not None and len(dev):
            report.dev_history.append(evaluate(model.predict(dev.features.values), dev.scores))
    report.splits = _evaluate_splits(model.predict, eval_splits)
    report.wall_time = time.perf_counter() - start
    return model, report


def run_trials(config: TrainConfig, experiment):
    """Run experiment(trial_seed) -> TrialReport for seeds seed+0 .. and
    aggregate per-split metric means/stds over the successful trials.
    Failures are kept in the report list and flagged in the aggregate."""
    reports = []
    for t in range(config.trials):
        reports.append(experiment(config.seed + t))
    good = [r for r in reports if r.ok]
    aggregate = {
        "trials": len(reports),
        "succeeded": len(good),
        "failed_seeds": [r.trial_seed for r in reports if not r.ok],
        "config_hash": config_hash(config),
        "splits": {},
    }
    for name in sorted({k for r in good for k in r.splits}):
        block = {}
        for metric in ("rmse", "pr", "ccc"):
            vals = np.array([getattr(r.splits[name], metric) for r in good if name in r.splits])
            block[metric] = {"mean": float(vals.mean()), "std": float(vals.std())} if vals.size else None
        aggregate["splits"][name] = block
    return reports, aggregate


def trial_metric_values(reports, split, metric):
    return np.array([getattr(r.splits[split], metric) for r in reports if r.ok and split in r.splits])


def write_trials_csv(path, reports):
    """One row per trial; split metrics flattened into columns. Wall time
    is deliberately not written so reruns are byte-identical."""
    names = sorted({k for r in reports for k in r.splits})
    cols = ["trial_seed", "final_lambda", "final_domain_acc", "status"]
    for name in names:
        cols += [f"{name}_rmse", f"{name}_pr", f"{name}_ccc"]
    lines = [",".join(cols)]
    for r in reports:
        row = [
            str(r.trial_seed),
            repr(float(r.final_lambda)),
            repr(float(r.domain_acc_per_epoch[-1])) if r.domain_acc_per_epoch else "",
            "ok" if r.ok else f"failed:{r.failure}".replace(",", ";"),
        ]
        for name in names:
            triple = r.splits.get(name)
            row += [repr(float(getattr(triple, m))) for m in ("rmse", "pr", "ccc")] if triple else ["", "", ""]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_aggregate_json(path, aggregate):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
        fh.write("\n")
