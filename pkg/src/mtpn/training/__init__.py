"""Toy-scale phased training and the synthetic scene generator."""

from .optim import Adam, SGDMomentum, make_optimizer
from .synth import Sample, synth_dataset, synth_sample
from .trainer import (
    EpochRecord,
    Phase,
    TrainLog,
    TrainSchedule,
    apply_phase,
    evaluate_losses,
    loss_gradients,
    train,
    train_step,
)

__all__ = [
    "Adam", "EpochRecord", "Phase", "SGDMomentum", "Sample", "TrainLog", "TrainSchedule", "apply_phase",
    "evaluate_losses", "loss_gradients", "make_optimizer", "synth_dataset", "synth_sample", "train", "train_step",
]
