import dataclasses

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kpdistill.features import WorldFeatures
from kpdistill.pipeline import (DEFAULT_BI_TRAIN, add_kd_labels, build_datasets, train_assistant,
                                train_student)
from kpdistill.synthworld import generate_world

from _helpers import ACCEPTANCE_LINES

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


class Chain:
    """Lazily trained assistants and students on the default world, memoised per seed."""

    def __init__(self):
        self.world = generate_world()
        self.features = WorldFeatures(self.world)
        self.data = build_datasets(self.world)
        self._assistants = {}
        self._kd_data = {}
        self._students = {}

    def assistant(self, seed=0):
        if seed not in self._assistants:
            self._assistants[seed] = train_assistant(self.features, self.data, seed=seed)
        return self._assistants[seed]

    def kd_data(self, seed=0):
        if seed not in self._kd_data:
            params, hist = self.assistant(seed)
            self._kd_data[seed] = add_kd_labels(self.data, params, hist, self.features)
        return self._kd_data[seed]

    def student(self, sources=("LLM", "CTR", "KD"), seed=0, task_map=None):
        key = (tuple(sources), seed, tuple(sorted((task_map or {}).items())))
        if key not in self._students:
            cfg = DEFAULT_BI_TRAIN
            if task_map:
                cfg = dataclasses.replace(cfg, task_map={**cfg.task_map, **task_map})
            self._students[key] = train_student(self.features, self.kd_data(seed), sources,
                                                cfg=cfg, seed=seed)[0]
        return self._students[key]


@pytest.fixture(scope="session")
def chain():
    return Chain()


@pytest.fixture(scope="session")
def world(chain):
    return chain.world


@pytest.fixture(scope="session")
def features(chain):
    return chain.features


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
