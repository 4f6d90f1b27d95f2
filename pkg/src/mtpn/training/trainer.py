"""Phased multi-task training on in-memory samples."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import engine as E
from ..errors import ConfigError, DivergenceError
from ..losses import (
    DetTermWeights,
    LossBreakdown,
    LossWeights,
    assign_targets,
    detection_loss,
    segmentation_loss,
    stack_targets,
    total_loss,
)
from ..network.config import ModelConfig
from ..network.model import PARAM_GROUPS, Model, build_model
from .optim import OPTIMIZERS, make_optimizer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Phase:
    epochs: int
    frozen: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "frozen", frozenset(self.frozen))
        if self.epochs < 1:
            raise ConfigError(f"phase epochs must be >= 1, got {self.epochs}", "epochs")
        unknown = self.frozen - set(PARAM_GROUPS)
        if unknown:
            raise ConfigError(f"unknown parameter groups {sorted(unknown)}; expected {PARAM_GROUPS}", "frozen")
        if self.frozen >= set(PARAM_GROUPS):
            raise ConfigError("a phase must leave at least one parameter group trainable", "frozen")


@dataclass
class TrainSchedule:
    phases: list = field(default_factory=lambda: [Phase(60), Phase(140, frozenset({"seg_heads"}))])
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 2
    seed: int = 0
    loss: LossWeights = LossWeights()
    term_weights: DetTermWeights = DetTermWeights(obj_pos_weight=50.0)
    fg_weight: float = 1.0

    def __post_init__(self):
        self.phases = [p if isinstance(p, Phase) else Phase(*p) for p in self.phases]
        if not self.phases:
            raise ConfigError("schedule needs at least one phase", "phases")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", "optimizer")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be a finite nonnegative number", "learning_rate")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", "batch_size")


@dataclass
class EpochRecord:
    epoch: int
    phase: int
    l_total: float
    l_det: float
    l_seg: float
    learning_rate: float
    probe: dict | None = None


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        return cls([EpochRecord(**json.loads(line)) for line in text.splitlines() if line.strip()])


def apply_phase(model: Model, phase: Phase) -> None:
    """Restrict ``model.trainable_mask`` to parameters outside the frozen groups."""
    if not isinstance(phase, Phase):
        phase = Phase(1, frozenset(phase))
    buffers = model.buffers
    model.trainable_mask = {n for n in model.parameters if n not in buffers and model.group_of(n) not in phase.frozen}


def _batch(samples):
    images = np.concatenate([s.image for s in samples])
    drivable = np.stack([s.drivable_mask for s in samples])
    lane = np.stack([s.lane_mask for s in samples])
    return images, drivable, lane


def evaluate_losses(model: Model, samples, schedule: TrainSchedule) -> LossBreakdown:
    """Loss breakdown on ``samples`` without recording gradients."""
    images, drivable, lane = _batch(samples)
    with E.no_record():
        raw = model.forward(images)
    targets = stack_targets([assign_targets(s.boxes, model.config, s.resolution) for s in samples])
    det = detection_loss(raw.det, targets, model.config, schedule.term_weights)
    seg = segmentation_loss(raw.drivable, raw.lane, drivable, lane, schedule.fg_weight)
    return total_loss(det.l_det, seg.l_seg, schedule.loss, det.components)


def loss_gradients(model: Model, samples, schedule: TrainSchedule, train_seg: bool = True):
    """Loss breakdown and ``{name: gradient}`` for every trainable parameter.

    With ``train_seg`` false the segmentation loss is evaluated but sends no
    gradient, so only the detection task is optimised. Parameters the loss
    does not reach are omitted, so optimisers skip them entirely.
    """
    cfg = model.config
    images, drivable, lane = _batch(samples)
    targets = stack_targets([assign_targets(s.boxes, cfg, s.resolution) for s in samples])
    with E.recording() as tape:
        raw = model.forward(images)
    det = detection_loss(raw.det, targets, cfg, schedule.term_weights)
    seg = segmentation_loss(raw.drivable, raw.lane, drivable, lane, schedule.fg_weight)
    if not (math.isfinite(det.l_det) and math.isfinite(seg.l_seg)):
        raise DivergenceError("non-finite training loss", epoch=-1)
    br = total_loss(det.l_det, seg.l_seg, schedule.loss, det.components)

    a, b = schedule.loss.alpha, schedule.loss.beta
    seeds = [(m, a * g) for m, g in zip(raw.det, det.grads)]
    if train_seg:
        seeds += [(raw.drivable, b * seg.grads[0]), (raw.lane, b * seg.grads[1])]
    names = sorted(model.trainable_mask)
    grads = tape.gradient(seeds, [model.parameters[n] for n in names])
    return br, {n: g for n, g in zip(names, grads) if g is not None}


def train_step(model: Model, samples, schedule: TrainSchedule, optimizer, train_seg: bool = True) -> LossBreakdown:
    """One forward/backward/update over ``samples`` (a batch)."""
    br, grads = loss_gradients(model, samples, schedule, train_seg)
    optimizer.step(model.parameters, grads)
    return br


def train(config: ModelConfig, schedule: TrainSchedule, dataset, model: Model | None = None,
          probe=None, on_epoch=None):
    """Run every phase in order; returns ``(model, TrainLog)``.

    ``probe`` is an optional held-out sample whose losses are recorded after
    every epoch.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    res = {tuple(s.resolution) for s in dataset}
    if len(res) != 1:
        raise ValueError(f"dataset mixes resolutions {sorted(res)}")
    if model is None:
        model = build_model(config, schedule.seed)
    optimizer = make_optimizer(schedule.optimizer, schedule.learning_rate)
    rng = np.random.default_rng(schedule.seed)
    log_ = TrainLog()
    epoch = 0
    for pi, phase in enumerate(schedule.phases):
        apply_phase(model, phase)
        train_seg = "seg_heads" not in phase.frozen
        for _ in range(phase.epochs):
            epoch += 1
            order = rng.permutation(len(dataset))
            dets, segs, weights = [], [], []
            for start in range(0, len(order), schedule.batch_size):
                batch = [dataset[k] for k in order[start:start + schedule.batch_size]]
                try:
                    br = train_step(model, batch, schedule, optimizer, train_seg)
                except DivergenceError:
                    raise DivergenceError("non-finite training loss", epoch=epoch) from None
                dets.append(br.l_det)
                segs.append(br.l_seg)
                weights.append(len(batch))
            l_det = float(np.average(dets, weights=weights))
            l_seg = float(np.average(segs, weights=weights))
            rec = total_loss(l_det, l_seg, schedule.loss)
            probe_rec = None
            if probe is not None:
                pb = evaluate_losses(model, [probe], schedule)
                probe_rec = {"l_total": pb.l_total, "l_det": pb.l_det, "l_seg": pb.l_seg}
            r = EpochRecord(epoch, pi, rec.l_total, l_det, l_seg, schedule.learning_rate, probe_rec)
            log_.records.append(r)
            log.info("epoch %d phase %d l_total=%.5f l_det=%.5f l_seg=%.5f", epoch, pi, r.l_total, l_det, l_seg)
            if on_epoch is not None:
                on_epoch(r)
    return model, log_
