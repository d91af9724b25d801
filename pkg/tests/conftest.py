"""Shared fixtures. The expensive full toy-scale training run is session-
scoped so the disentanglement, ablation, and determinism checks reuse it."""

import time

import numpy as np
import pytest

from d2ae import analytics, data
from d2ae.model import D2AEModel, ModelConfig
from d2ae.objective import TrainConfig, train

TOY_SEED = 7
TOY_N_ID = 16
TOY_PER_ID = 50
TOY_SIZE = 32


def run_toy_training(tcfg: TrainConfig) -> tuple[D2AEModel, data.Dataset, float]:
    """One full toy-scale training; returns (model, dataset, minutes)."""
    ds = data.generate(TOY_SEED, TOY_N_ID, TOY_PER_ID, TOY_SIZE)
    model = D2AEModel(ModelConfig(n_id=TOY_N_ID), seed=tcfg.seed)
    x, y, _ = ds.subset("train")
    t0 = time.time()
    train(model, (x, y), tcfg)
    return model, ds, (time.time() - t0) / 60.0


def frozen_fp_identity_accuracy(model, ds) -> float:
    """Fresh identity classifier on frozen f_P: fit on train, score on test."""
    x_tr, y_tr, _ = ds.subset("train")
    x_te, y_te, _ = ds.subset("test")
    _, fp_tr = analytics.extract_features(model, x_tr)
    _, fp_te = analytics.extract_features(model, x_te)
    probe = analytics.train_identity_probe(fp_tr, y_tr, TOY_N_ID)
    return analytics.identity_probe_accuracy(probe, fp_te, y_te)


def frozen_ft_identity_accuracy(model, ds) -> float:
    x_tr, y_tr, _ = ds.subset("train")
    x_te, y_te, _ = ds.subset("test")
    ft_tr, _ = analytics.extract_features(model, x_tr)
    ft_te, _ = analytics.extract_features(model, x_te)
    probe = analytics.train_identity_probe(ft_tr, y_tr, TOY_N_ID)
    return analytics.identity_probe_accuracy(probe, ft_te, y_te)


@pytest.fixture(scope="session")
def toy_run():
    """Full-configuration training used as the reference model."""
    model, ds, minutes = run_toy_training(TrainConfig(seed=TOY_SEED))
    return {"model": model, "dataset": ds, "minutes": minutes}
