"""Run configuration file (JSON) with four sections: model, loss, train, bench.

Every key is optional; absent keys take the defaults below and unknown keys
are rejected.

.. code-block:: json

    {
      "model": {"backbone": "mobilenetv2", "num_classes": 10, "fusion_width": null,
                "fusion_repeats": 2, "aspect_ratios": [0.5, 1.0, 2.0],
                "anchor_base_scale": 4.0, "seg_width": null, "skip_width": null},
      "loss":  {"alpha": 1.0, "beta": 1.0, "objectness": 1.0, "classification": 1.0,
                "box": 1.0, "obj_pos_weight": 50.0, "fg_weight": 1.0},
      "train": {"phases": [{"epochs": 60, "frozen": []},
                           {"epochs": 140, "frozen": ["seg_heads"]}],
                "optimizer": "adam", "lr": 0.001, "batch": 2, "seed": 0},
      "bench": {"resolutions": ["256x384", "256x512", "384x640", "768x1280"],
                "warmup": 20, "iters": 100, "threads": 1}
    }

``null`` widths resolve to the per-backbone defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .losses import DetTermWeights, LossWeights
from .network.config import ModelConfig, parse_resolution
from .runtime.bench import DEFAULT_RESOLUTIONS
from .training.trainer import Phase, TrainSchedule

MODEL_KEYS = {"backbone", "num_classes", "fusion_width", "fusion_repeats", "aspect_ratios",
              "anchor_base_scale", "seg_width", "skip_width"}
LOSS_DEFAULTS = {"alpha": 1.0, "beta": 1.0, "objectness": 1.0, "classification": 1.0, "box": 1.0,
                 "obj_pos_weight": 50.0, "fg_weight": 1.0}
TRAIN_DEFAULTS = {"phases": [{"epochs": 60, "frozen": []}, {"epochs": 140, "frozen": ["seg_heads"]}],
                  "optimizer": "adam", "lr": 1e-3, "batch": 2, "seed": 0}
BENCH_DEFAULTS = {"resolutions": [f"{h}x{w}" for h, w in DEFAULT_RESOLUTIONS], "warmup": 20, "iters": 100,
                  "threads": 1}
SECTIONS = ("model", "loss", "train", "bench")


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    loss: dict = field(default_factory=lambda: dict(LOSS_DEFAULTS))
    train: dict = field(default_factory=lambda: json.loads(json.dumps(TRAIN_DEFAULTS)))
    bench: dict = field(default_factory=lambda: dict(BENCH_DEFAULTS))

    def model_config(self, input_res=(384, 640)) -> ModelConfig:
        return ModelConfig.from_dict({**self.model, "input_res": tuple(input_res)})

    def schedule(self) -> TrainSchedule:
        t, l = self.train, self.loss
        phases = []
        for i, p in enumerate(t["phases"]):
            _reject_unknown(p, {"epochs", "frozen"}, f"train.phases[{i}]")
            phases.append(Phase(int(p["epochs"]), frozenset(p.get("frozen", []))))
        try:
            weights = LossWeights(l["alpha"], l["beta"])
        except ValueError as exc:
            raise ConfigError(str(exc), "loss") from None
        return TrainSchedule(
            phases=phases, optimizer=t["optimizer"], learning_rate=float(t["lr"]), batch_size=int(t["batch"]),
            seed=int(t["seed"]), loss=weights,
            term_weights=DetTermWeights(l["objectness"], l["classification"], l["box"], l["obj_pos_weight"]),
            fg_weight=float(l["fg_weight"]),
        )

    def bench_resolutions(self):
        return [parse_resolution(r) if isinstance(r, str) else tuple(r) for r in self.bench["resolutions"]]


def _reject_unknown(d, known, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object", where)
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}", f"{where}.{sorted(unknown)[0]}")


def parse_run_config(d: dict) -> RunConfig:
    _reject_unknown(d, SECTIONS, "run config")
    model = d.get("model", {})
    _reject_unknown(model, MODEL_KEYS, "model")
    loss = d.get("loss", {})
    _reject_unknown(loss, LOSS_DEFAULTS, "loss")
    train = d.get("train", {})
    _reject_unknown(train, TRAIN_DEFAULTS, "train")
    bench = d.get("bench", {})
    _reject_unknown(bench, BENCH_DEFAULTS, "bench")
    rc = RunConfig(
        model={k: v for k, v in model.items() if v is not None},
        loss={**LOSS_DEFAULTS, **loss},
        train={**json.loads(json.dumps(TRAIN_DEFAULTS)), **train},
        bench={**BENCH_DEFAULTS, **bench},
    )
    rc.model_config()
    rc.schedule()
    rc.bench_resolutions()
    return rc


def load_run_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_run_config(d)
