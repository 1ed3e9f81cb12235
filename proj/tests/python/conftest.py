import pytest

import ecgcl


def tiny():
    return {
        "seed": 4,
        "encoder": {"base_channels": 4, "blocks_per_stage": 1, "kernel_size": 3},
        "pick_epochs": 1,
        "tasks": [
            {"name": "beats", "mode": "seg", "leads": 1,
             "source": {"synth": {"fs": 100, "records": 10, "snr_db": 25}},
             "optim": {"epochs": 2, "warmup_epochs": 1, "batch_size": 8},
             "retrain_epochs": 1},
            {"name": "wide", "mode": "cls", "leads": 2, "classes": 1,
             "source": {"synth": {"fs": 100, "records": 10, "classes": ["wide_qrs"]}},
             "optim": {"epochs": 2, "warmup_epochs": 1, "batch_size": 8},
             "retrain_epochs": 1},
        ],
    }


@pytest.fixture
def tiny_config():
    return tiny()


@pytest.fixture(scope="session")
def trained():
    return ecgcl.train_sequence(tiny())
