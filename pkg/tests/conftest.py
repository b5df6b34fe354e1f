import copy
import json
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from tripeer import training
from tripeer.synthdata import bench_v1_datasets

FIXTURE_PATH = os.path.join(os.path.dirname(__file__), "fixtures", "bench_v1.json")


def load_frozen_fixture():
    with open(FIXTURE_PATH, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def bench_config():
    cfg = training.TrainConfig()
    cfg.validate()
    return cfg


@pytest.fixture(scope="session")
def bench_data(bench_config):
    return bench_v1_datasets(bench_config.seed)


@pytest.fixture(scope="session")
def pretrained_state(bench_data, bench_config):
    source, _ = bench_data
    return training.pretrain_source(source, bench_config)


def clone_state(state: training.RunState) -> training.RunState:
    return training.RunState(
        ensemble=copy.deepcopy(state.ensemble),
        adam=copy.deepcopy(state.adam),
        label_map=state.label_map,
    )


@pytest.fixture(scope="session")
def adapted_state(bench_data, bench_config, pretrained_state):
    _, target = bench_data
    state = clone_state(pretrained_state)
    return training.adapt(target, state, bench_config)
