"""Training loops, metrics, and the three diagnostic protocols
(noise-sweep crossover, gradient-dynamics tracking, corruption probe).

Training is full batch: the graphs here are small enough that exactness
beats speed, and it removes a stochasticity source.  All randomness flows
from a single base seed; per-cell sub-seeds are derived by stable hashing
of the cell coordinates.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import ContractError, MagsimError
from .graph import Mag, corrupt_modality, inject_noise, measure_alignment, \
    measure_neighborhood_noise
from .models import IndependentAgg, JointGcn, MlpModel
from .supra import SupraConfig, SupraModel
from .theory import tau

VERSION = "0.1.0"

MODEL_KINDS = ("text-mlp", "visual-mlp", "ef-mlp", "gcn-joint", "sage-concat",
               "indep-agg", "supra")


class NumericError(MagsimError):
    """Training produced a non-finite loss."""


def derive_seed(base: int, *parts) -> int:
    """Stable sub-seed from a base seed and arbitrary cell coordinates."""
    h = hashlib.sha256(("|".join([str(base)] + [str(p) for p in parts])).encode())
    return int.from_bytes(h.digest()[:8], "little")


@dataclass
class TrainConfig:
    kind: str = "ef-mlp"
    lr: float = 1e-3
    max_epochs: int = 200
    patience: int = 40
    seed: int = 0
    hidden: int = 64
    num_layers: int = 2
    alpha: float = 0.5
    dropout: float = 0.3
    smoothing: float = 0.1
    weight_decay: float = 1e-4
    lambda_aux: float = 0.0
    supra_variant: str = "full"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ContractError(f"unknown model kind {self.kind!r}")
        if self.patience < 1:
            raise ContractError(f"patience must be >= 1, got {self.patience}")
        if self.lr < 0:
            raise ContractError(f"lr must be >= 0, got {self.lr}")


@dataclass
class TrainReport:
    config: dict
    epochs: list                 # per-epoch dicts, 1-based epoch numbers
    best_epoch: int
    test_acc: float
    test_f1: float
    param_count: int
    wall_clock_seconds: float

    def to_json(self, include_timing: bool = True) -> str:
        d = asdict(self)
        if not include_timing:
            del d["wall_clock_seconds"]
        return json.dumps(d, sort_keys=True)


def build_model(cfg: TrainConfig, mag: Mag, rng):
    names = mag.modality_names()
    kind = cfg.kind
    if kind == "text-mlp":
        return MlpModel(rng, mag, names[:1], cfg.hidden, cfg.dropout)
    if kind == "visual-mlp":
        if len(names) < 2:
            raise ContractError("visual-mlp needs a second modality")
        return MlpModel(rng, mag, names[1:2], cfg.hidden, cfg.dropout)
    if kind == "ef-mlp":
        return MlpModel(rng, mag, names, cfg.hidden, cfg.dropout)
    if kind == "gcn-joint":
        return JointGcn(rng, mag, cfg.hidden, cfg.num_layers, cfg.alpha, cfg.dropout)
    if kind == "sage-concat":
        return JointGcn(rng, mag, cfg.hidden, cfg.num_layers, cfg.alpha,
                        cfg.dropout, variant="ego-concat")
    if kind == "indep-agg":
        return IndependentAgg(rng, mag, cfg.hidden, cfg.num_layers, cfg.alpha,
                              cfg.dropout)
    if kind == "supra":
        scfg = SupraConfig(proj_dim=cfg.hidden, num_layers=cfg.num_layers,
                           alpha=cfg.alpha, lambda_aux=cfg.lambda_aux,
                           dropout=cfg.dropout, smoothing=cfg.smoothing,
                           variant=cfg.supra_variant)
        return SupraModel(rng, mag, scfg)
    raise ContractError(f"unknown model kind {kind!r}")


def predict(model, mag: Mag, norm_adj, rows) -> np.ndarray:
    out = model.forward(mag, norm_adj, None, training=False, rng=None)
    return np.argmax(out["logits"].data[rows], axis=1)


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise ContractError("empty input")
    return float(np.mean(preds == labels))


def macro_f1(preds, labels, num_classes: int) -> float:
    """Unweighted mean of per-class F1.

    A class with neither actual nor predicted instances is skipped; a class
    that is present but never correctly covered contributes 0.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise ContractError("empty input")
    scores = []
    for c in range(num_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        if tp + fp + fn == 0:
            continue
        scores.append(2.0 * tp / (2.0 * tp + fp + fn))
    return float(np.mean(scores)) if scores else 0.0


def train(mag: Mag, cfg: TrainConfig, return_model: bool = False):
    """Full-batch training with early stopping on validation accuracy.

    Test metrics come from the parameters at the best validation epoch,
    not the last one.
    """
    t0 = time.perf_counter()
    rng_init = np.random.default_rng(derive_seed(cfg.seed, "init"))
    rng_drop = np.random.default_rng(derive_seed(cfg.seed, "dropout"))
    model = build_model(cfg, mag, rng_init)
    norm_adj = mag.adjacency.row_normalize()
    state = T.AdamState()

    train_idx = mag.splits["train"]
    y_train = mag.labels[train_idx]
    best_val, best_epoch, best_state = -1.0, 0, model.state_copy()
    epochs = []

    for epoch in range(1, cfg.max_epochs + 1):
        tape = T.Tape()
        out = model.forward(mag, norm_adj, tape, training=True, rng=rng_drop)
        if isinstance(model, SupraModel):
            losses = model.loss(out, mag.labels, train_idx)
            total, task = losses["total"], losses["task"]
            aux_val = sum(a.data[0, 0] for a in losses["aux"].values())
        else:
            task = T.cross_entropy_smoothed(
                T.row_select(out["logits"], train_idx), y_train, cfg.smoothing)
            total, aux_val = task, 0.0
        loss_val = float(total.data[0, 0])
        if not np.isfinite(loss_val):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        tape.backward(total)
        grads = model.grads()
        branch_norms = {b: model.grad_norm(ns) for b, ns in model.branches().items()}
        T.adam_step(model.params, grads, state, cfg.lr, cfg.weight_decay)

        val_acc = accuracy(predict(model, mag, norm_adj, mag.splits["val"]),
                           mag.labels[mag.splits["val"]])
        epochs.append({"epoch": epoch, "loss_total": loss_val,
                       "loss_task": float(task.data[0, 0]),
                       "loss_aux": float(aux_val), "val_acc": val_acc,
                       "grad_norms": branch_norms})
        if val_acc > best_val:
            best_val, best_epoch = val_acc, epoch
            best_state = model.state_copy()
        elif epoch - best_epoch >= cfg.patience:
            break

    model.load_state(best_state)
    test_idx = mag.splits["test"]
    preds = predict(model, mag, norm_adj, test_idx)
    report = TrainReport(
        config=asdict(cfg), epochs=epochs, best_epoch=best_epoch,
        test_acc=accuracy(preds, mag.labels[test_idx]),
        test_f1=macro_f1(preds, mag.labels[test_idx], mag.num_classes),
        param_count=model.param_count(),
        wall_clock_seconds=time.perf_counter() - t0)
    return (report, model) if return_model else report


# ---------------------------------------------------------------------------
# Diagnostic protocols
# ---------------------------------------------------------------------------

def _cfg_for(kind: str, base: TrainConfig, seed: int) -> TrainConfig:
    cfg = TrainConfig(**{**asdict(base), "kind": kind, "seed": seed})
    if kind == "supra" and base.kind != "supra":
        cfg.supra_variant = "base"
    return cfg


def sweep_cell(args):
    """One noise-sweep cell; top level so process pools can pickle it."""
    mag, scale, kind, seed, base_cfg = args
    noisy = inject_noise(mag, scale, derive_seed(base_cfg.seed, "noise", repr(scale), seed))
    cfg = _cfg_for(kind, base_cfg, derive_seed(base_cfg.seed, "train", repr(scale), kind, seed))
    report = train(noisy, cfg)
    return {"scale": scale, "kind": kind, "seed": seed,
            "acc": report.test_acc, "f1": report.test_f1}


def sweep_noise(mag: Mag, scales, kinds, seeds, base_cfg: TrainConfig,
                pool_map=map):
    """Cartesian noise-injection sweep; also measures the alignment and
    neighborhood-noise level of the base graph and reports tau for
    annotation."""
    if len(list(scales)) < 1 or len(list(kinds)) < 1:
        raise ContractError("need at least one scale and one model kind")
    cells = [(mag, scale, kind, seed, base_cfg)
             for scale in scales for kind in kinds for seed in seeds]
    rows = list(pool_map(sweep_cell, cells))

    annotation = {"modalities": {}}
    if mag.signals is not None:
        for name in mag.features:
            beta_hat = measure_alignment(mag, name)
            sigma_n = measure_neighborhood_noise(mag, name, beta_hat)
            annotation["modalities"][name] = {
                "beta_hat": beta_hat, "sigma_n_sq_hat": sigma_n,
                "tau": tau(base_cfg.alpha, beta_hat, sigma_n)}
    return rows, annotation


def track_gradients(mag: Mag, variants, num_epochs: int, base_seed: int,
                    base_cfg: TrainConfig | None = None):
    """Per-epoch per-branch gradient L2 norms for a set of named model
    configurations, trained for a fixed number of epochs."""
    if len(mag.modalities) < 2:
        raise ContractError("gradient tracking needs at least two modalities")
    base = base_cfg or TrainConfig()
    rows = []
    for name, overrides in variants:
        cfg = TrainConfig(**{**asdict(base), **overrides,
                             "max_epochs": num_epochs, "patience": num_epochs,
                             "seed": derive_seed(base_seed, "track", name)})
        report = train(mag, cfg)
        for row in report.epochs:
            for branch, norm in row["grad_norms"].items():
                rows.append({"epoch": row["epoch"], "variant": name,
                             "branch": branch, "grad_l2": norm})
    return rows


def corruption_probe(mag: Mag, kinds, dominant: str, seeds,
                     base_cfg: TrainConfig):
    """Train on clean data, evaluate macro-F1 on the clean test split (F)
    and on a test split whose dominant modality is replaced by matched
    noise (D); H is their harmonic mean.

    All kinds under the same probe seed share one derived training seed,
    so variants are compared from identical initializations and the D
    differences are not dominated by init variance."""
    if dominant not in mag.features:
        raise ContractError(f"unknown modality {dominant!r}")
    norm_adj = mag.adjacency.row_normalize()
    test_idx = mag.splits["test"]
    y_test = mag.labels[test_idx]
    rows = []
    for kind_name, overrides in kinds:
        for seed in seeds:
            cfg = TrainConfig(**{**asdict(base_cfg), **overrides,
                                 "seed": derive_seed(base_cfg.seed, "probe", seed)})
            report, model = train(mag, cfg, return_model=True)
            corrupted = corrupt_modality(mag, dominant,
                                         derive_seed(base_cfg.seed, "corrupt", seed))
            f_score = macro_f1(predict(model, mag, norm_adj, test_idx),
                               y_test, mag.num_classes)
            d_score = macro_f1(predict(model, corrupted, norm_adj, test_idx),
                               y_test, mag.num_classes)
            h = 0.0 if f_score + d_score == 0 else 2 * f_score * d_score / (f_score + d_score)
            rows.append({"kind": kind_name, "seed": seed,
                         "F": f_score, "D": d_score, "H": h})
    return rows


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

CSV_SCHEMAS = {
    "sweep": ["scale", "kind", "seed", "acc", "f1"],
    "grads": ["epoch", "variant", "branch", "grad_l2"],
    "probe": ["kind", "seed", "F", "D", "H"],
}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str, schema: str, rows):
    cols = CSV_SCHEMAS[schema]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")


def write_manifest(path: str, config: dict, seed: int, extra: dict | None = None):
    doc = {"config": config, "seed": seed, "version": VERSION}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
