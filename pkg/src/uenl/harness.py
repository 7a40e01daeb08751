"""Experiment harness: dataset assembly, the training loop, evaluation
reports, ablation sweeps, and JSON checkpoints.

Runs are deterministic end to end: the same config (seed included) produces
byte-identical checkpoints and report files.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import (
    CsvIdSpec,
    CsvOodSpec,
    ExperimentConfig,
    GaussianClustersSpec,
    GaussianNoiseOodSpec,
    IdxIdSpec,
    IdxOodSpec,
    ShiftedGaussianOodSpec,
    UniformOodSpec,
    apply_overrides,
)
from .data import (
    Dataset,
    Normalization,
    basis_means,
    batch_iter,
    gen_gaussian_clusters,
    gen_gaussian_noise_ood,
    gen_shifted_gaussian_ood,
    gen_uniform_ood,
    load_csv,
    load_idx,
    standardize,
)
from .losses import (
    ce_with_temperature,
    kl_regularizer,
    logitnorm_ce,
    normalize_logits,
    plain_ce,
    uenl_total,
)
from .metrics import MetricReport, auroc, error_rate, histogram, write_histogram_csv, write_metrics_csv
from .model import (
    TRAIN,
    ModelParams,
    eval_logits,
    forward,
    init_params,
    param_leaves,
    predict_classes,
    uncertainty_forward,
)
from .optim import OptState, lr_at_epoch, sgd_step
from .rng import RngStream, derive_seed
from .scoring import ScoreSet, energy_score, msp_score, odin_score, uncertainty_score, write_scores_csv
from .tensor import Tensor, add, backward, leaf, scale

__all__ = [
    "CHECKPOINT_VERSION",
    "DataBundle",
    "Checkpoint",
    "EvaluationReport",
    "build_raw_datasets",
    "build_datasets",
    "train",
    "evaluate",
    "sweep",
    "write_sweep_csv",
    "scores_csv_to_histograms",
]

CHECKPOINT_VERSION = 1


@dataclass
class DataBundle:
    """Standardized splits ready for training and scoring."""

    id_train: Dataset
    id_test: Dataset
    ood: dict[str, Dataset]
    stats: Normalization
    clip_range: tuple[float, float]


def _build_id_raw(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    spec = config.data.id
    k = config.backbone.num_classes
    if isinstance(spec, GaussianClustersSpec):
        if spec.num_classes != k:
            raise ValueError(
                f"data.id.num_classes ({spec.num_classes}) != backbone.num_classes ({k})"
            )
        if spec.dim != config.backbone.input_dim:
            raise ValueError(
                f"data.id.dim ({spec.dim}) != backbone.input_dim ({config.backbone.input_dim})"
            )
        means = basis_means(spec.num_classes, spec.dim, spec.mean_scale)
        train = gen_gaussian_clusters(means, spec.n_train_per_class, spec.sigma, spec.seed, "id_train")
        test = gen_gaussian_clusters(means, spec.n_test_per_class, spec.sigma, spec.seed, "id_test")
    elif isinstance(spec, CsvIdSpec):
        train = load_csv(spec.train, has_labels=spec.has_labels, name="id_train")
        test = load_csv(spec.test, has_labels=spec.has_labels, name="id_test")
    elif isinstance(spec, IdxIdSpec):
        train = load_idx(spec.train_images, spec.train_labels, name="id_train")
        test = load_idx(spec.test_images, spec.test_labels, name="id_test")
    else:
        raise TypeError(f"unsupported ID data spec {type(spec).__name__}")

    for split in (train, test):
        if split.labels is None:
            raise ValueError(f"ID split {split.name!r} has no labels")
        if split.labels.max() > k:
            raise ValueError(
                f"ID split {split.name!r} has label {split.labels.max()} but the model has {k} classes"
            )
        if split.dim != config.backbone.input_dim:
            raise ValueError(
                f"ID split {split.name!r} is {split.dim}-dimensional, model expects {config.backbone.input_dim}"
            )
    return train, test


def _build_ood_raw(config: ExperimentConfig, raw_stats: Normalization) -> dict[str, Dataset]:
    dim = config.backbone.input_dim
    sets: dict[str, Dataset] = {}
    for spec in config.data.ood:
        if isinstance(spec, UniformOodSpec):
            ds = gen_uniform_ood(spec.n, dim, spec.low, spec.high, spec.seed, spec.name)
        elif isinstance(spec, ShiftedGaussianOodSpec):
            ds = gen_shifted_gaussian_ood(spec.n, dim, spec.offset, spec.sigma, spec.seed, spec.name)
        elif isinstance(spec, GaussianNoiseOodSpec):
            ds = gen_gaussian_noise_ood(spec.n, raw_stats, spec.seed, spec.name)
        elif isinstance(spec, CsvOodSpec):
            ds = load_csv(spec.path, has_labels=False, name=spec.name)
        elif isinstance(spec, IdxOodSpec):
            ds = load_idx(spec.images, name=spec.name)
        else:
            raise TypeError(f"unsupported OOD data spec {type(spec).__name__}")
        if ds.dim != dim:
            raise ValueError(f"OOD set {spec.name!r} is {ds.dim}-dimensional, model expects {dim}")
        sets[spec.name] = ds
    return sets


def build_raw_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset, dict[str, Dataset]]:
    """ID train/test and OOD sets in raw feature space (not standardized)."""
    if config.data is None:
        raise ValueError("config has no data section")
    train, test = _build_id_raw(config)
    raw_stats = Normalization(
        train.features.mean(axis=0), np.maximum(train.features.std(axis=0), 1e-8)
    )
    return train, test, _build_ood_raw(config, raw_stats)


def build_datasets(config: ExperimentConfig) -> DataBundle:
    """Raw datasets standardized with statistics fitted on the ID train split."""
    train_raw, test_raw, ood_raw = build_raw_datasets(config)
    train, stats = standardize(train_raw)
    test, _ = standardize(test_raw, stats)
    ood = {name: standardize(ds, stats)[0] for name, ds in ood_raw.items()}
    return DataBundle(train, test, ood, stats, train.feature_range())


@dataclass
class Checkpoint:
    """A trained model: config, weights, batchnorm state, and training traces."""

    config: ExperimentConfig
    weights: dict[str, Tensor]
    bn_state: dict[str, Tensor]
    final_epoch: int
    train_loss: list[float] = field(default_factory=list)
    test_error: list[float] = field(default_factory=list)
    version: int = CHECKPOINT_VERSION

    def params(self) -> ModelParams:
        return ModelParams(
            self.config.backbone_config(),
            self.config.head_config(),
            dict(self.weights),
            dict(self.bn_state),
        )

    def to_json(self) -> str:
        def pack(tensors: dict[str, Tensor]) -> dict:
            return {
                name: {"shape": list(t.shape), "data": t.array.ravel().tolist()}
                for name, t in tensors.items()
            }

        doc = {
            "version": self.version,
            "config": self.config.to_dict(),
            "weights": pack(self.weights),
            "bn_state": pack(self.bn_state),
            "final_epoch": self.final_epoch,
            "train_loss": self.train_loss,
            "test_error": self.test_error,
        }
        # sort_keys + fixed separators + repr-based floats: identical runs
        # serialize to identical bytes, and every float round-trips exactly.
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        version = doc.get("version")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})")

        def unpack(packed: dict) -> dict[str, Tensor]:
            return {
                name: Tensor(np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]))
                for name, entry in packed.items()
            }

        return cls(
            config=ExperimentConfig.from_dict(doc["config"]),
            weights=unpack(doc["weights"]),
            bn_state=unpack(doc["bn_state"]),
            final_epoch=int(doc["final_epoch"]),
            train_loss=[float(v) for v in doc["train_loss"]],
            test_error=[float(v) for v in doc["test_error"]],
            version=int(version),
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _batch_loss(params, config, xb, yb, dropout_rng, resample_rng, leaves):
    """Loss graph for one minibatch plus the batchnorm updates it implies."""
    fo = forward(params, xb, TRAIN, dropout_rng, leaves=leaves)
    updates = dict(fo.bn_updates)
    if config.method == "ce":
        return plain_ce(fo.logits, yb), updates
    if config.method == "logitnorm":
        return logitnorm_ce(fo.logits, yb, config.temperature), updates
    if config.pinned_uhat is not None:
        # Fixed temperature ablation: the resampler is bypassed entirely, and
        # with kl weight 0 the head never runs, so the loss graph matches the
        # fixed-temperature baseline node for node.
        pinned = leaf(np.full((len(xb), 1), config.pinned_uhat))
        total = ce_with_temperature(normalize_logits(fo.logits), pinned, yb)
        if config.kl_weight > 0.0:
            head = uncertainty_forward(params, fo.embedding, TRAIN, leaves=fo.leaves)
            updates.update(head.bn_updates)
            total = add(total, scale(kl_regularizer(head.u, config.kl_form), config.kl_weight))
        return total, updates
    head = uncertainty_forward(params, fo.embedding, TRAIN, leaves=fo.leaves)
    updates.update(head.bn_updates)
    breakdown = uenl_total(
        fo.logits,
        head.u,
        yb,
        config.kl_weight,
        resample_rng,
        n_dims=config.delta,
        uhat_scale=config.uhat_scale,
        kl_form=config.kl_form,
    )
    return breakdown.total, updates


def train(config: ExperimentConfig, bundle: DataBundle | None = None, progress=None) -> Checkpoint:
    """Train a model per the config; returns the final checkpoint.

    ``progress``, if given, is called as progress(epoch, mean_loss, test_error)
    after each epoch.
    """
    if bundle is None:
        bundle = build_datasets(config)
    root = RngStream(config.seed)
    params = init_params(config.backbone_config(), config.head_config(), root)
    dropout_rng = root.substream("dropout")
    resample_rng = root.substream("resample")
    opt_state = OptState.zeros_like(params.weights)

    overlap = set(params.weights) & set(params.bn_state)
    if overlap:
        raise AssertionError(f"batchnorm state leaked into trainable weights: {sorted(overlap)}")

    # Optional per-epoch model selection on a held-out Gaussian-noise
    # validation set; the eval OOD sets are never consulted.
    val_features = None
    if config.select_best_validation:
        val_seed = derive_seed(config.seed, "validation-noise")
        raw = gen_gaussian_noise_ood(500, bundle.stats, val_seed, name="validation_noise")
        val_set, _ = standardize(raw, bundle.stats)
        val_features = val_set.features
        val_id = bundle.id_train.features[: min(1000, len(bundle.id_train))]
        val_method = "uncertainty" if config.method == "uenl" else "msp"
        best_auroc = -1.0
        best_state: tuple[dict, dict, int] | None = None

    loss_trace: list[float] = []
    error_trace: list[float] = []
    for epoch in range(config.epochs):
        lr = lr_at_epoch(epoch, config)
        batch_losses: list[float] = []
        for b, batch in enumerate(batch_iter(bundle.id_train, config.batch_size, config.seed, epoch)):
            leaves = param_leaves(params)
            try:
                total, updates = _batch_loss(
                    params, config, batch.features, batch.labels, dropout_rng, resample_rng, leaves
                )
                grads = backward(total)
            except FloatingPointError as exc:
                raise RuntimeError(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from exc
            batch_losses.append(total.item())

            # Weights outside this batch's graph (e.g. the head under a pinned
            # temperature) see a zero gradient and still decay.
            grad_map = {}
            for name in params.weights:
                g = grads.get(leaves[name])
                grad_map[name] = g.array if g is not None else np.zeros(params.weights[name].shape)
            try:
                params.weights, opt_state = sgd_step(
                    params.weights, grad_map, opt_state, lr, config.momentum, config.weight_decay
                )
            except FloatingPointError as exc:
                raise RuntimeError(f"{exc} at epoch {epoch}, batch {b}") from exc
            bad = set(updates) - set(params.bn_state)
            if bad:
                raise AssertionError(f"unknown batchnorm state keys: {sorted(bad)}")
            params.bn_state = {**params.bn_state, **updates}

        loss_trace.append(float(np.mean(batch_losses)))
        predicted = predict_classes(params, bundle.id_test.features)
        error_trace.append(error_rate(predicted, bundle.id_test.labels))
        if progress is not None:
            progress(epoch, loss_trace[-1], error_trace[-1])
        if val_features is not None:
            s_id = _scores_for(params, val_id, val_method, config.scoring, bundle.clip_range)
            s_ood = _scores_for(params, val_features, val_method, config.scoring, bundle.clip_range)
            a = auroc(s_id, s_ood)
            if a > best_auroc:
                best_auroc = a
                best_state = (dict(params.weights), dict(params.bn_state), epoch)

    final_epoch = config.epochs - 1
    if val_features is not None and best_state is not None:
        weights, bn_state, final_epoch = best_state
        params = ModelParams(params.backbone, params.head, weights, bn_state)

    return Checkpoint(config, params.weights, params.bn_state, final_epoch, loss_trace, error_trace)


def _scores_for(params, features, method, spec, clip_range, chunk: int = 512) -> np.ndarray:
    parts = []
    for i in range(0, len(features), chunk):
        x = features[i : i + chunk]
        if method == "msp":
            parts.append(msp_score(eval_logits(params, x)))
        elif method == "energy":
            parts.append(energy_score(eval_logits(params, x), spec.energy_temperature))
        elif method == "odin":
            parts.append(odin_score(params, x, spec.odin_temperature, spec.odin_epsilon, clip_range))
        elif method == "uncertainty":
            parts.append(uncertainty_score(params, x))
        else:
            raise ValueError(f"unknown scoring method {method!r}")
    return np.concatenate([np.atleast_1d(p) for p in parts])


@dataclass
class EvaluationReport:
    """Detection metrics, classification error, raw scores, and histograms
    for one trained model."""

    metric_rows: list[tuple[str, str, MetricReport]]
    id_error_rate: float
    n_id_test: int
    score_sets: list[ScoreSet]
    histograms: list[tuple[str, str, float, float, int]]

    def mean_metrics(self, method: str) -> dict[str, float]:
        reports = [r for m, _, r in self.metric_rows if m == method]
        if not reports:
            raise KeyError(f"no metric rows for method {method!r}")
        return {
            "fpr95": float(np.mean([r.fpr95 for r in reports])),
            "auroc": float(np.mean([r.auroc for r in reports])),
            "aupr": float(np.mean([r.aupr for r in reports])),
        }

    def write(self, out_dir) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "metrics": out_dir / "metrics.csv",
            "accuracy": out_dir / "accuracy.csv",
            "scores": out_dir / "scores.csv",
            "histograms": out_dir / "histograms.csv",
        }
        write_metrics_csv(self.metric_rows, paths["metrics"])
        with open(paths["accuracy"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write("dataset,n,error_rate,accuracy\n")
            fh.write(f"id_test,{self.n_id_test},{self.id_error_rate!r},{1.0 - self.id_error_rate!r}\n")
        write_scores_csv(self.score_sets, paths["scores"])
        write_histogram_csv(self.histograms, paths["histograms"])
        return paths


def evaluate(
    checkpoint: Checkpoint,
    bundle: DataBundle | None = None,
    methods: tuple[str, ...] | None = None,
    histogram_bins: int | None = None,
) -> EvaluationReport:
    """Score the ID test set and every OOD set with each method and compute
    detection metrics per (method, OOD set) pair."""
    config = checkpoint.config
    if bundle is None:
        bundle = build_datasets(config)
    if not bundle.ood:
        raise ValueError("no OOD sets to evaluate against")
    methods = tuple(methods) if methods is not None else config.scoring.methods
    bins = int(histogram_bins) if histogram_bins is not None else config.scoring.histogram_bins
    params = checkpoint.params()
    spec = config.scoring

    predicted = predict_classes(params, bundle.id_test.features)
    id_err = error_rate(predicted, bundle.id_test.labels)

    metric_rows = []
    score_sets = []
    hist_rows = []
    for method in methods:
        id_scores = _scores_for(params, bundle.id_test.features, method, spec, bundle.clip_range)
        ood_scores = {
            name: _scores_for(params, ds.features, method, spec, bundle.clip_range)
            for name, ds in bundle.ood.items()
        }
        score_sets.append(ScoreSet(method, id_scores, ood_scores, id_name="id_test"))
        for name in bundle.ood:
            metric_rows.append((method, name, MetricReport.from_scores(id_scores, ood_scores[name])))
        all_scores = np.concatenate([id_scores, *ood_scores.values()])
        span = (float(all_scores.min()), float(all_scores.max()))
        if span[0] == span[1]:
            span = (span[0] - 0.5, span[1] + 0.5)
        for left, right, count in histogram(id_scores, bins, span):
            hist_rows.append(("id_test", method, left, right, count))
        for name, scores in ood_scores.items():
            for left, right, count in histogram(scores, bins, span):
                hist_rows.append((name, method, left, right, count))

    return EvaluationReport(metric_rows, id_err, len(bundle.id_test), score_sets, hist_rows)


def sweep(base: ExperimentConfig, grid: dict[str, list], progress=None) -> list[dict]:
    """Train and evaluate one run per grid cell (full cross product).

    Grid keys are config JSON keys, dotted paths allowed ("lambda", "delta",
    "data.id.sigma", ...). Each cell gets a seed derived from the base seed
    and its cell index, so cells are independent but the whole sweep is
    reproducible. An empty grid is the cross product of nothing: one row,
    the base config itself (base seed included). Returns one flat metrics
    row per cell.
    """
    keys = list(grid)
    for key, values in grid.items():
        if not values:
            raise ValueError(f"sweep grid key {key!r} has no values")
    rows = []
    for idx, combo in enumerate(itertools.product(*grid.values())):
        overrides = [f"{k}={json.dumps(v)}" for k, v in zip(keys, combo)]
        cell_dict = apply_overrides(base.to_dict(), overrides)
        if keys:
            cell_dict["seed"] = derive_seed(base.seed, f"cell{idx}")
        cell_config = ExperimentConfig.from_dict(cell_dict)
        if progress is not None:
            progress(idx, dict(zip(keys, combo)))
        checkpoint = train(cell_config)
        report = evaluate(checkpoint)
        row: dict = {key: value for key, value in zip(keys, combo)}
        row["seed"] = cell_config.seed
        row["error_rate"] = report.id_error_rate
        for method in cell_config.scoring.methods:
            means = report.mean_metrics(method)
            row[f"{method}_fpr95"] = means["fpr95"]
            row[f"{method}_auroc"] = means["auroc"]
            row[f"{method}_aupr"] = means["aupr"]
        rows.append(row)
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    """One CSV row per sweep cell; floats via repr for exact round trips."""
    if not rows:
        raise ValueError("no sweep rows to write")
    header = list(rows[0])
    lines = [",".join(header)]
    for row in rows:
        if list(row) != header:
            raise ValueError("sweep rows have inconsistent columns")
        cells = []
        for key in header:
            v = row[key]
            cells.append(repr(float(v)) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def scores_csv_to_histograms(scores_path, n_bins: int) -> list[tuple[str, str, float, float, int]]:
    """Re-bin a per-sample scores CSV (dataset, sample_index, method, score)
    into histogram rows; each method gets one shared bin range across datasets."""
    path = Path(scores_path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines or lines[0].split(",") != ["dataset", "sample_index", "method", "score"]:
        raise ValueError(f"{path}: expected header dataset,sample_index,method,score")
    grouped: dict[str, dict[str, list[float]]] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 4:
            raise ValueError(f"{path}: line {line_no}: expected 4 columns, got {len(cells)}")
        dataset, _, method, score = cells
        try:
            value = float(score)
        except ValueError:
            raise ValueError(f"{path}: line {line_no}: score {score!r} is not numeric") from None
        grouped.setdefault(method, {}).setdefault(dataset, []).append(value)

    rows = []
    for method, by_dataset in grouped.items():
        merged = np.concatenate([np.asarray(v) for v in by_dataset.values()])
        span = (float(merged.min()), float(merged.max()))
        if span[0] == span[1]:
            span = (span[0] - 0.5, span[1] + 0.5)
        for dataset, values in by_dataset.items():
            for left, right, count in histogram(values, n_bins, span):
                rows.append((dataset, method, left, right, count))
    return rows
