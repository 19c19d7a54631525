"""End-to-end data preparation and training for one experiment configuration.

gen -> split (+ low-data subsample) -> behavior clone -> synthesize -> cache -> train
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .bilevel import TrainLog, train
from .config import ExperimentConfig
from .data import DatasetSplit, collect_offline, split_by_category, subsample
from .model import ParameterSet, behavior_clone
from .reweight import EmbeddingCache, build_embedding_cache
from .seeding import derive_seed
from .synth import synthesize


@dataclass
class Prepared:
    world: object
    split: DatasetSplit
    pretrained: ParameterSet
    synthetic: list
    cache: EmbeddingCache
    regime: str


def generate(cfg: ExperimentConfig):
    world = cfg.env.build()
    offline = collect_offline(world, cfg.data.n_trajectories, cfg.data.noise_range, derive_seed(cfg.seed, "collect"))
    return world, offline


def make_split(cfg: ExperimentConfig, offline, regime: str | None = None) -> DatasetSplit:
    """Category split; the low-data regime keeps a fraction of the train set only."""
    regime = regime or cfg.data.regime
    split = split_by_category(offline, cfg.data.train_task_frac, cfg.data.val_split, derive_seed(cfg.seed, "split"))
    if regime == "low":
        small = subsample(split.train, cfg.data.low_data_fraction, derive_seed(cfg.seed, "subsample"))
        split = replace(split, train=tuple(small))
    return split


def pretrain(cfg: ExperimentConfig, world, split: DatasetSplit, regime: str) -> ParameterSet:
    """Behavior-cloned prior on every trajectory the learner may see (train and val)."""
    m = cfg.model
    return behavior_clone(list(split.train) + list(split.val), world, m.bc_epochs, m.bc_lr,
                          derive_seed(cfg.seed, "bc", regime), m.d, m.n_layers, m.bc_optimizer)


def make_synthetic(cfg: ExperimentConfig, world, split: DatasetSplit, pretrained: ParameterSet, regime: str):
    synth_cfg = cfg.synth.build(derive_seed(cfg.seed, "synth", regime))
    synthetic = synthesize(split.train, pretrained, world, synth_cfg, cfg.synth.synth_per_real)
    cache = build_embedding_cache(pretrained, list(split.train) + synthetic)
    return synthetic, cache


def prepare(cfg: ExperimentConfig, regime: str | None = None, world=None, offline=None) -> Prepared:
    regime = regime or cfg.data.regime
    if world is None or offline is None:
        world, offline = generate(cfg)
    split = make_split(cfg, offline, regime)
    pretrained = pretrain(cfg, world, split, regime)
    synthetic, cache = make_synthetic(cfg, world, split, pretrained, regime)
    return Prepared(world, split, pretrained, synthetic, cache, regime)


def run_training(cfg: ExperimentConfig, prep: Prepared, method: str | None = None,
                 algo: str | None = None) -> TrainLog:
    """Train one method; every method shares the training seed of its (regime, algo) cell."""
    loss_cfg = cfg.loss if algo is None else replace(cfg.loss, algo=algo)
    bcfg = replace(cfg.bilevel, mode=method or cfg.bilevel.mode,
                   rng_seed=derive_seed(cfg.seed, "train", prep.regime, loss_cfg.algo))
    return train(prep.split, prep.synthetic, bcfg, loss_cfg, prep.pretrained, prep.cache)
