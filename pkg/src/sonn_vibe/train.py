"""SGD training with MSE loss, early stopping, and k-fold cross-validation.

Targets are +1 for the true class and -1 elsewhere, matching the tanh
output range. Training stops at the first epoch whose post-epoch train
classification error drops to the configured threshold, otherwise at the
epoch cap. Every reported number is a pure function of (data, network
config, train config, seed); worker parallelism never changes results.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics, model as model_mod, nn
from .signal import Dataset, Frame


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.2
    max_epochs: int = 50
    early_stop_train_error: float = 0.03
    folds: int = 10
    runs_per_fold: int = 5
    batch_size: int = 16
    seed: int | np.random.SeedSequence = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.early_stop_train_error < 1.0:
            raise ValueError("early_stop_train_error must lie in [0, 1)")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.max_epochs < 0 or self.runs_per_fold < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, runs_per_fold, batch_size out of range")


def target_vector(target_class: int, n_classes: int = 4) -> np.ndarray:
    """+1 at the true class, -1 elsewhere."""
    if not 0 <= target_class < n_classes:
        raise ValueError(f"target class {target_class} out of range")
    t = -np.ones(n_classes)
    t[target_class] = 1.0
    return t


def mse_loss(scores: np.ndarray, target_class: int) -> tuple[float, np.ndarray]:
    """Mean squared error against the +/-1 target and its score gradient."""
    scores = np.asarray(scores, dtype=np.float64)
    t = target_vector(target_class, scores.shape[-1])
    diff = scores - t
    loss = float(np.mean(diff ** 2))
    return loss, 2.0 * diff / diff.size


def _mse_batch(scores: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean MSE and the score gradient of that mean."""
    targets = -np.ones_like(scores)
    targets[np.arange(scores.shape[0]), labels] = 1.0
    diff = scores - targets
    loss = float(np.mean(diff ** 2))
    return loss, 2.0 * diff / diff.size


def sgd_step(m: model_mod.Model, grads: model_mod.ModelGradients,
             learning_rate: float) -> model_mod.Model:
    """Plain gradient descent: w <- w - lr * grad, applied in place."""
    for layer, bundle in zip(m.conv_layers, grads.conv):
        layer.weights -= learning_rate * bundle.weight_grad
        layer.biases -= learning_rate * bundle.bias_grad
    for layer, bundle in zip(m.dense_layers, grads.dense):
        layer.weights -= learning_rate * bundle.weight_grad
        layer.biases -= learning_rate * bundle.bias_grad
    return m


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, Dataset):
        return data.arrays()
    if isinstance(data, tuple) and len(data) == 2:
        x, y = data
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64)
    frames = list(data)
    if not frames or not all(isinstance(f, Frame) for f in frames):
        raise ValueError("train set must be a non-empty collection of labeled frames")
    x = np.stack([f.samples for f in frames])
    y = np.array([f.label for f in frames], dtype=np.int64)
    return x, y


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_error: float


@dataclass
class TrainResult:
    model: model_mod.Model
    epochs: int
    history: list[EpochStats]

    @property
    def final_train_error(self) -> float:
        return self.history[-1].train_error if self.history else float("nan")


def _train_error(m: model_mod.Model, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(model_mod.predict_batch(m, x) != y))


def train_one(m: model_mod.Model, train_set, cfg: TrainConfig) -> TrainResult:
    """Mini-batch SGD with per-epoch shuffling and train-error early stop."""
    x, y = _as_arrays(train_set)
    if x.shape[0] == 0:
        raise ValueError("train set is empty")
    rng = np.random.default_rng(cfg.seed)
    history: list[EpochStats] = []
    epochs_ran = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(x.shape[0])
        batch_losses = []
        for start in range(0, x.shape[0], cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            scores, cache = model_mod.forward_batch(m, x[sel], want_cache=True)
            loss, dscores = _mse_batch(scores, y[sel])
            grads = model_mod.backward_batch(m, cache, dscores / sel.size)
            sgd_step(m, grads, cfg.learning_rate)
            batch_losses.append(loss)
        err = _train_error(m, x, y)
        history.append(EpochStats(epoch, float(np.mean(batch_losses)), err))
        epochs_ran = epoch
        if err <= cfg.early_stop_train_error:
            break
    return TrainResult(model=m, epochs=epochs_ran, history=history)


def evaluate(m: model_mod.Model, data) -> metrics.EvalReport:
    """Confusion matrix and per-class metrics on labeled frames."""
    x, y = _as_arrays(data)
    preds = model_mod.predict_batch(m, x)
    return metrics.per_class(metrics.confusion(preds, y, m.config.n_classes))


def stratified_folds(labels: np.ndarray, n_folds: int,
                     seed: int | np.random.SeedSequence) -> list[np.ndarray]:
    """Class-balanced test index sets: disjoint, covering, within 1 per class."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < n_folds:
            raise ValueError(f"class {cls} has {idx.size} frames, fewer than folds")
        rng.shuffle(idx)
        for i, part in enumerate(np.array_split(idx, n_folds)):
            folds[i].extend(part.tolist())
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


@dataclass
class FoldResult:
    fold: int
    run_reports: list[metrics.EvalReport]
    mean: metrics.MetricSummary
    epochs: list[int]
    final_train_errors: list[float]


@dataclass
class CrossValResult:
    folds: list[FoldResult]
    pooled: metrics.EvalReport

    def mean_accuracy(self) -> float:
        return float(np.mean([f.mean.accuracy for f in self.folds]))

    def mean_macro_f1(self) -> float:
        return float(np.mean([f.mean.macro_f1() for f in self.folds]))


def _run_training(net_cfg: model_mod.NetworkConfig, cfg: TrainConfig,
                  x: np.ndarray, y: np.ndarray,
                  train_idx: np.ndarray, test_idx: np.ndarray,
                  run_seed: np.random.SeedSequence):
    init_seed, shuffle_seed = run_seed.spawn(2)
    m = model_mod.build_model(net_cfg, init_seed)
    result = train_one(m, (x[train_idx], y[train_idx]), replace(cfg, seed=shuffle_seed))
    report = evaluate(result.model, (x[test_idx], y[test_idx]))
    return report, result.epochs, result.final_train_error


_WORKER: dict = {}


def _worker_init(net_cfg, cfg, x, y, folds):
    _WORKER.update(net_cfg=net_cfg, cfg=cfg, x=x, y=y, folds=folds)


def _worker_task(args):
    fold_i, run_j, run_seed = args
    w = _WORKER
    test_idx = w["folds"][fold_i]
    train_idx = np.setdiff1d(np.arange(w["x"].shape[0]), test_idx)
    return _run_training(w["net_cfg"], w["cfg"], w["x"], w["y"],
                         train_idx, test_idx, run_seed)


def cross_validate(dataset, net_cfg: model_mod.NetworkConfig, cfg: TrainConfig,
                   jobs: int = 1, progress=None) -> CrossValResult:
    """Stratified k-fold cross-validation with runs_per_fold trainings per fold.

    Per-(fold, run) seeds derive from cfg.seed up front, so results are
    identical for any jobs count and across repeated invocations. The
    pooled report sums every run's confusion matrix.
    """
    x, y = _as_arrays(dataset)
    root = np.random.SeedSequence(cfg.seed) \
        if not isinstance(cfg.seed, np.random.SeedSequence) else cfg.seed
    children = root.spawn(1 + cfg.folds * cfg.runs_per_fold)
    fold_sets = stratified_folds(y, cfg.folds, children[0])
    tasks = [
        (fi, rj, children[1 + fi * cfg.runs_per_fold + rj])
        for fi in range(cfg.folds) for rj in range(cfg.runs_per_fold)
    ]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init,
                                 initargs=(net_cfg, cfg, x, y, fold_sets)) as pool:
            outcomes = list(pool.map(_worker_task, tasks, chunksize=1))
    else:
        _worker_init(net_cfg, cfg, x, y, fold_sets)
        outcomes = []
        for t in tasks:
            outcomes.append(_worker_task(t))
            if progress is not None:
                progress(t[0], t[1], outcomes[-1])

    fold_results = []
    for fi in range(cfg.folds):
        chunk = outcomes[fi * cfg.runs_per_fold:(fi + 1) * cfg.runs_per_fold]
        reports = [c[0] for c in chunk]
        fold_results.append(FoldResult(
            fold=fi,
            run_reports=reports,
            mean=metrics.mean_of_reports(reports),
            epochs=[c[1] for c in chunk],
            final_train_errors=[c[2] for c in chunk],
        ))
    pooled_cm = np.sum([r.confusion for f in fold_results for r in f.run_reports], axis=0)
    return CrossValResult(folds=fold_results, pooled=metrics.per_class(pooled_cm))


def holdout_split(labels: np.ndarray, folds: int,
                  seed: int | np.random.SeedSequence,
                  fold_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """(train_idx, test_idx) for one stratified fold; reproducible from the seed."""
    sets = stratified_folds(labels, folds, seed)
    test_idx = sets[fold_index]
    train_idx = np.setdiff1d(np.arange(len(labels)), test_idx)
    return train_idx, test_idx


def history_csv(history: list[EpochStats]) -> str:
    lines = ["epoch,train_loss,train_error"]
    for h in history:
        lines.append(f"{h.epoch},{h.train_loss:.8f},{h.train_error:.6f}")
    return "\n".join(lines) + "\n"
