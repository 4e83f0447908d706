"""Glue between configuration files and the training / analysis modules."""

from __future__ import annotations

import math

import numpy as np

from .baseline import RandomMaskSpec, random_mask
from .config import ExperimentConfig
from .data import Dataset, SyntheticSpec, gen_synthetic, load_csv, load_mnist, split
from .network import GatedNetwork, init_network, mlp_specs
from .rng import Rng
from .training import TrainConfig, TrainReport, evaluate, finalize, fit, train_pinned


def load_task(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Build (train, test) for the configured task and fill in csv layer sizes."""
    task = cfg.task
    kind = task["kind"]
    if kind == "synthetic":
        spec = SyntheticSpec(task["scenario"], int(task["n"]), float(task["noise_std"]), int(task["data_seed"]))
        train, test = split(gen_synthetic(spec), float(task["test_fraction"]), int(task["split_seed"]))
    elif kind == "mnist":
        train, test = load_mnist(cfg.resolve(task["dir"]))
    else:
        schema = dict(task["schema"])
        positive = task.get("positive_label")
        full = load_csv(cfg.resolve(task["path"]), schema, positive)
        if "test_path" in task:
            train = full
            test = load_csv(cfg.resolve(task["test_path"]), schema, positive, reference=full)
        else:
            train, test = split(full, float(task["test_fraction"]), int(task["split_seed"]))
        if cfg.layer_sizes[0] == 0:
            n_out = 1 if cfg.train.loss_kind == "sigmoid_bce" else len(full.class_names)
            cfg.layer_sizes[0], cfg.layer_sizes[-1] = train.p, n_out
    if train.p != cfg.layer_sizes[0]:
        raise ValueError(f"task has {train.p} features, network expects {cfg.layer_sizes[0]}")
    return train, test


def build_network(cfg: ExperimentConfig, seed: int) -> GatedNetwork:
    return init_network(
        mlp_specs(cfg.layer_sizes),
        init_retain_prob=cfg.init_retain_prob,
        rng=Rng(seed).stream("init"),
        tau=cfg.train.tau_start,
    )


def with_seed(train: TrainConfig, seed: int, **changes) -> TrainConfig:
    d = train.to_dict()
    d.update(seed=seed, **changes)
    return TrainConfig(**d)


def run_gumbel(cfg: ExperimentConfig, train: Dataset, test: Dataset, seed: int,
               d_target: float | None = None):
    tcfg = with_seed(cfg.train, seed, **({} if d_target is None else {"d_target": d_target}))
    net, report = fit(build_network(cfg, seed), train, test, tcfg)
    return net, report


def run_random(cfg: ExperimentConfig, train: Dataset, test: Dataset, seed: int, density: float):
    net0 = build_network(cfg, seed)
    mask = random_mask(net0.n_gates, RandomMaskSpec(density, seed))
    tcfg = with_seed(cfg.train, seed)
    net, report = train_pinned(net0, mask, train, test, tcfg)
    # pin the logits so finalisation reproduces the random mask exactly
    for layer, m in zip(net.layers, net.split(mask)):
        layer.phi = np.where(m > 0, 10.0, -10.0)
    return net, report


def sweep(cfg: ExperimentConfig, train: Dataset, test: Dataset, densities, seeds) -> list[dict]:
    """One gumbel run and one random-mask run per (density, seed)."""
    rows = []
    for density in densities:
        for seed in seeds:
            net, rep = run_gumbel(cfg, train, test, seed, d_target=density)
            rows.append(_row(density, "gumbel", seed, rep))
            net, rep = run_random(cfg, train, test, seed, density)
            rows.append(_row(density, "random", seed, rep))
    return rows


def _row(density, method, seed, report: TrainReport) -> dict:
    return {
        "density": float(density),
        "method": method,
        "seed": int(seed),
        "accuracy": report.test_accuracy,
        "retained_count": report.retained_count,
    }


def finite_or_none(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


__all__ = [
    "load_task", "build_network", "run_gumbel", "run_random", "sweep", "finalize", "evaluate",
]
