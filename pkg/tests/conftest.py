import numpy as np
import pytest
from hypothesis import settings

import spikekit as sk

settings.register_profile("suite", deadline=None, max_examples=30)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def blob_data():
    xtr, ytr = sk.make_blobs(2000, dim=16, seed=1)
    xte, yte = sk.make_blobs(500, dim=16, seed=2)
    return (xtr, ytr), (xte, yte)


@pytest.fixture(scope="session")
def blob_model(blob_data):
    train, test = blob_data
    cfg = sk.TrainConfig(widths=[16, 32, 10], epochs=8, learning_rate=0.2, seed=0)
    model, info = sk.train_mlp(cfg, train, test)
    return model, info


@pytest.fixture(scope="session")
def converted(blob_model, blob_data):
    """Calibrated and weight-normalized blob MLP plus its calibration set."""
    model, _ = blob_model
    (xtr, _), _ = blob_data
    xcal = xtr[:500]
    stats = sk.collect_lambdas(model, xcal, p_max=1.0)
    normalized = sk.normalize_weights(model, stats)
    return {"model": model, "normalized": normalized, "stats": stats, "xcal": xcal}
