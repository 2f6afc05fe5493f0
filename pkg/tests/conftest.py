import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from gradcheck_util import run_gradient_check  # noqa: E402
from helpers import default_training_samples  # noqa: E402

from edei.model import DESK_MODEL  # noqa: E402
from edei.training import DESK_TRAIN, build_model, train_stage  # noqa: E402


@pytest.fixture(scope="session")
def training_samples():
    """Four synthesized 64x64 samples with distinct motion."""
    return default_training_samples()


@pytest.fixture(scope="session")
def overfit_run(training_samples):
    """Desk-preset stage-1 run (500 steps on 4 samples), shared by the
    training, sweep and acceptance tests."""
    start = time.time()
    torch.manual_seed(DESK_TRAIN.seed)
    model = build_model(DESK_MODEL)
    model, metrics = train_stage(model, training_samples, DESK_TRAIN, stage=1)
    state = {k: v.clone() for k, v in model.state_dict().items()}
    return {
        "model": model,
        "metrics": metrics,
        "state": state,
        "elapsed_s": time.time() - start,
    }


@pytest.fixture(scope="session")
def stage2_run(training_samples, overfit_run):
    """Stage-2 fusion training on top of the stage-1 state."""
    start = time.time()
    torch.manual_seed(DESK_TRAIN.seed)
    model = build_model(DESK_MODEL)
    model, metrics = train_stage(
        model, training_samples, DESK_TRAIN, stage=2, stage1_state=overfit_run["state"]
    )
    return {"model": model, "metrics": metrics, "elapsed_s": time.time() - start}


@pytest.fixture(scope="session")
def gradcheck_result():
    return run_gradient_check()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
