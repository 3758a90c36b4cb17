"""Run configuration, the training loop, and evaluation.

A run writes into its output directory:

* ``config.resolved``: every setting after defaulting, as key=value lines;
* ``metrics.jsonl``: one deterministic record per epoch (wall-clock times
  go to ``timing.jsonl`` so two identical runs produce byte-identical
  metrics logs);
* ``final.ckpt`` / ``best.ckpt``: parameters, batch-norm buffers, the
  normalisation statistics, and the resolved config embedded as bytes.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import data as data_mod
from .attention import ALL_OPERATORS, DecisionRecord, normalize_operator_set
from .backbone import ATTENTION_MODES, Model, NetworkConfig, build_network, depth_to_blocks
from .checkpoint import read_checkpoint, write_checkpoint
from .errors import CheckpointError, NumericalFailure
from .optim import SGD, MultiStepSchedule
from .rng import RngState
from .tensor import backward, no_grad, softmax_cross_entropy

DATASETS = ("cifar10", "cifar100", "synthetic")
DATA_DIR_ENV = "SEM_DATA_DIR"

# Reference protocol: 164 epochs with lr drops at 81 and 122. Shorter runs
# scale the milestones proportionally so they stay inside the run.
_REFERENCE_EPOCHS = 164
_REFERENCE_MILESTONES = (81, 122)

# RNG stream ids under the run seed (stream 0 feeds synthetic data).
_STREAM_PARAMS = 1
_STREAM_SUBSET = 3


@dataclass
class RunConfig:
    dataset: str = "synthetic"
    data_dir: str | None = None
    depth: int = 20
    attention: str = "sem"
    operator_set: tuple[str, ...] = ALL_OPERATORS
    reduction: int = 16
    switch_activation: str = "sigmoid"
    unit_decision: bool = False
    attention_seed: int | None = None
    epochs: int = 164
    batch_size: int = 128
    eval_batch_size: int = 256
    lr: float = 0.1
    lr_decay: float = 0.1
    milestones: tuple[int, ...] | None = None
    momentum: float = 0.9
    weight_decay: float = 1e-4
    augment: bool = True
    crop_pad: int = 4
    flip_prob: float = 0.5
    seed: int = 1
    out_dir: str = "runs/latest"
    num_classes: int | None = None
    synthetic_train: int = 512
    synthetic_test: int = 256
    synthetic_classes: int = 10
    train_subset: int | None = None
    max_steps: int | None = None

    # -- resolution -------------------------------------------------------

    def resolved(self) -> "RunConfig":
        """Fill every derived field and validate the result."""
        cfg = replace(self)
        if cfg.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {cfg.dataset!r}; valid: {DATASETS}")
        if cfg.attention not in ATTENTION_MODES:
            raise ValueError(f"unknown attention {cfg.attention!r}; valid: {ATTENTION_MODES}")
        depth_to_blocks(cfg.depth)
        cfg.operator_set = normalize_operator_set(cfg.operator_set)
        if cfg.num_classes is None:
            cfg.num_classes = {"cifar10": 10, "cifar100": 100,
                               "synthetic": cfg.synthetic_classes}[cfg.dataset]
        if cfg.data_dir is None:
            cfg.data_dir = os.environ.get(DATA_DIR_ENV)
        if cfg.attention_seed is None:
            cfg.attention_seed = cfg.seed
        if cfg.milestones is None:
            scaled = [round(cfg.epochs * m / _REFERENCE_EPOCHS)
                      for m in _REFERENCE_MILESTONES]
            cfg.milestones = tuple(dict.fromkeys(
                m for m in scaled if 1 <= m < cfg.epochs))
        if any(m >= cfg.epochs for m in cfg.milestones) and cfg.epochs > 0:
            raise ValueError(f"milestones {cfg.milestones} must lie below epochs={cfg.epochs}")
        if cfg.epochs < 0 or cfg.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= cfg.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")
        return cfg

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            depth=self.depth,
            num_classes=self.num_classes,
            attention=self.attention,
            operator_set=self.operator_set,
            reduction=self.reduction,
            switch_activation=self.switch_activation,
            unit_decision=self.unit_decision,
            attention_seed=self.attention_seed,
        )

    # -- key=value serialisation ------------------------------------------

    def to_kv_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_sources(cls, config_path: str | None = None,
                     overrides: dict[str, str] | None = None) -> "RunConfig":
        """Defaults, then key=value file entries, then explicit overrides."""
        values: dict[str, str] = {}
        if config_path:
            values.update(parse_kv_file(config_path))
        if overrides:
            values.update(overrides)
        cfg = cls()
        known = {f.name: f for f in fields(cls)}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, _parse_value(key, raw))
        return cfg


def parse_kv_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


_TUPLE_INT_KEYS = {"milestones"}
_TUPLE_STR_KEYS = {"operator_set"}
_OPTIONAL_INT_KEYS = {"attention_seed", "num_classes", "train_subset", "max_steps"}
_BOOL_KEYS = {"unit_decision", "augment"}
_INT_KEYS = {"depth", "reduction", "epochs", "batch_size", "eval_batch_size",
             "seed", "synthetic_train", "synthetic_test", "synthetic_classes",
             "crop_pad"}
_FLOAT_KEYS = {"lr", "lr_decay", "momentum", "weight_decay", "flip_prob"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _BOOL_KEYS:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _OPTIONAL_INT_KEYS:
        return None if raw.lower() in ("", "none") else int(raw)
    if key in _TUPLE_INT_KEYS:
        if raw.lower() in ("", "none"):
            return None
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if key in _TUPLE_STR_KEYS:
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if key == "data_dir":
        return None if raw.lower() in ("", "none") else raw
    return raw


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    train_top1: float
    test_top1: float
    lr: float
    seconds: float
    decisions: list = field(default_factory=list)

    def deterministic_dict(self) -> dict:
        # Wall-clock seconds are excluded so identical runs log identically.
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_top1": self.train_top1,
            "test_top1": self.test_top1,
            "lr": self.lr,
            "decisions": self.decisions,
        }


def _decision_summary(records: list[DecisionRecord]) -> list:
    out = []
    for rec in records:
        stats = rec.stats()
        if not stats:
            continue
        out.append({
            "layer": rec.layer_index,
            "stage": rec.stage,
            "channels": rec.channels,
            "w": {op: [round(m, 8), round(s, 8)] for op, (m, s) in stats.items()},
        })
    return out


@dataclass
class TrainResult:
    config: RunConfig
    metrics: list[MetricsRecord]
    final_checkpoint: str
    best_checkpoint: str | None
    metrics_path: str
    model: Model
    channel_mean: np.ndarray
    channel_std: np.ndarray
    steps: int

    @property
    def final_record(self) -> MetricsRecord | None:
        return self.metrics[-1] if self.metrics else None

    @property
    def best_top1(self) -> float | None:
        return max((m.test_top1 for m in self.metrics), default=None)


# ---------------------------------------------------------------------------
# Data assembly
# ---------------------------------------------------------------------------

def load_datasets(cfg: RunConfig) -> tuple[list, list]:
    """Train/test records for the configured dataset, subset applied."""
    if cfg.dataset == "synthetic":
        total = cfg.synthetic_train + cfg.synthetic_test
        records = data_mod.synthetic_dataset(total, cfg.synthetic_classes, seed=cfg.seed)
        train = records[: cfg.synthetic_train]
        test = records[cfg.synthetic_train :]
    else:
        if not cfg.data_dir:
            raise ValueError(
                f"dataset {cfg.dataset} needs data_dir or ${DATA_DIR_ENV}")
        variant = 10 if cfg.dataset == "cifar10" else 100
        train, test = data_mod.load_cifar(cfg.data_dir, variant)
    if cfg.train_subset is not None and cfg.train_subset < len(train):
        order = RngState(cfg.seed, _STREAM_SUBSET).generator().permutation(len(train))
        train = [train[i] for i in order[: cfg.train_subset]]
    return train, test


# ---------------------------------------------------------------------------
# Evaluation and training
# ---------------------------------------------------------------------------

def evaluate(model: Model, records: list, batch_size: int,
             channel_mean, channel_std) -> float:
    """Top-1 accuracy (percent) with running-statistics normalisation."""
    correct = 0
    with no_grad():
        for images, labels in data_mod.batch_iterator(
                records, batch_size, shuffle_seed=0, epoch=0, shuffle=False,
                channel_mean=channel_mean, channel_std=channel_std):
            logits = model(images, training=False)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
    return 100.0 * correct / len(records)


def train_run(cfg: RunConfig, *, log=None) -> TrainResult:
    """Run the full training protocol and write the run directory."""
    cfg = cfg.resolved()
    os.makedirs(cfg.out_dir, exist_ok=True)
    config_path = os.path.join(cfg.out_dir, "config.resolved")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_kv_text())

    train_records, test_records = load_datasets(cfg)
    channel_mean, channel_std = data_mod.compute_channel_stats(train_records)
    model = build_network(cfg.network_config(), RngState(cfg.seed, _STREAM_PARAMS))
    optimizer = SGD(model.parameters(), lr=cfg.lr,
                    momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    schedule = MultiStepSchedule(cfg.lr, cfg.milestones, cfg.lr_decay)
    augment_cfg = data_mod.AugmentConfig(
        crop_pad=cfg.crop_pad, flip_prob=cfg.flip_prob, enabled=cfg.augment)

    metrics_path = os.path.join(cfg.out_dir, "metrics.jsonl")
    timing_path = os.path.join(cfg.out_dir, "timing.jsonl")
    final_path = os.path.join(cfg.out_dir, "final.ckpt")
    best_path = os.path.join(cfg.out_dir, "best.ckpt")

    metrics: list[MetricsRecord] = []
    best_top1 = -1.0
    wrote_best = False
    steps = 0
    stop = False
    n_batches = (len(train_records) + cfg.batch_size - 1) // cfg.batch_size

    with open(metrics_path, "w", encoding="utf-8") as mfh, \
         open(timing_path, "w", encoding="utf-8") as tfh:
        for epoch in range(cfg.epochs):
            t0 = time.time()
            lr = schedule.lr_at(epoch)
            optimizer.lr = lr
            loss_sum = 0.0
            seen = 0
            correct = 0
            decisions: list[DecisionRecord] = []
            for b, (images, labels) in enumerate(data_mod.batch_iterator(
                    train_records, cfg.batch_size, cfg.seed, epoch,
                    augment_cfg=augment_cfg,
                    channel_mean=channel_mean, channel_std=channel_std)):
                capture = decisions if b == n_batches - 1 else None
                if capture is not None:
                    capture.clear()
                logits = model(images, training=True, capture_decisions=capture)
                loss = softmax_cross_entropy(logits, labels)
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    layer = model.locate_nonfinite(images, training=True)
                    raise NumericalFailure(
                        f"non-finite loss at epoch {epoch} step {steps}; "
                        f"first offending layer: {layer or 'loss'}")
                backward(loss)
                optimizer.step()
                optimizer.zero_grad()
                loss_sum += loss_val * len(labels)
                correct += int((logits.data.argmax(axis=1) == labels).sum())
                seen += len(labels)
                steps += 1
                if cfg.max_steps is not None and steps >= cfg.max_steps:
                    stop = True
                    break
            test_top1 = evaluate(model, test_records, cfg.eval_batch_size,
                                 channel_mean, channel_std)
            record = MetricsRecord(
                epoch=epoch,
                train_loss=loss_sum / max(seen, 1),
                train_top1=100.0 * correct / max(seen, 1),
                test_top1=test_top1,
                lr=lr,
                seconds=time.time() - t0,
                decisions=_decision_summary(decisions))
            metrics.append(record)
            mfh.write(json.dumps(record.deterministic_dict(), sort_keys=True) + "\n")
            tfh.write(json.dumps({"epoch": epoch, "seconds": record.seconds}) + "\n")
            if log:
                log(f"epoch {epoch}: loss {record.train_loss:.4f} "
                    f"train {record.train_top1:.2f}% test {record.test_top1:.2f}% lr {lr:g}")
            if test_top1 > best_top1:
                best_top1 = test_top1
                _save_checkpoint(best_path, model, cfg, channel_mean, channel_std)
                wrote_best = True
            if stop:
                break

    _save_checkpoint(final_path, model, cfg, channel_mean, channel_std)
    return TrainResult(
        config=cfg, metrics=metrics,
        final_checkpoint=final_path,
        best_checkpoint=best_path if wrote_best else None,
        metrics_path=metrics_path, model=model,
        channel_mean=channel_mean, channel_std=channel_std, steps=steps)


# ---------------------------------------------------------------------------
# Checkpoint glue
# ---------------------------------------------------------------------------

def _save_checkpoint(path: str, model: Model, cfg: RunConfig,
                     channel_mean, channel_std) -> None:
    arrays = dict(model.state_arrays())
    arrays["norm.channel_mean"] = np.asarray(channel_mean, dtype=np.float64)
    arrays["norm.channel_std"] = np.asarray(channel_std, dtype=np.float64)
    blob = json.dumps(_config_dict(cfg), sort_keys=True).encode("utf-8")
    arrays["meta.config_json"] = np.frombuffer(blob, dtype=np.uint8)
    write_checkpoint(path, arrays)


def _config_dict(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def load_run_checkpoint(path: str) -> tuple[Model, RunConfig, np.ndarray, np.ndarray]:
    """Rebuild the model (and normalisation stats) stored by a run."""
    arrays = read_checkpoint(path)
    try:
        blob = bytes(arrays.pop("meta.config_json").tobytes())
        meta = json.loads(blob.decode("utf-8"))
        channel_mean = arrays.pop("norm.channel_mean")
        channel_std = arrays.pop("norm.channel_std")
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing metadata record {exc}") from exc
    kwargs = {}
    for f in fields(RunConfig):
        if f.name in meta:
            v = meta[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    cfg = RunConfig(**kwargs).resolved()
    model = build_network(cfg.network_config(), RngState(cfg.seed, _STREAM_PARAMS))
    model.load_state_arrays(arrays)
    return model, cfg, channel_mean, channel_std
