import os

import pytest
import torch

from taco.config import RunConfig
from taco.datagen import DatagenConfig, generate_dataset

torch.set_num_threads(max(1, os.cpu_count() or 1))

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, text): acceptance criterion check")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when not in ("setup", "call"):
        return
    num, text = mark.args
    failed = call.excinfo is not None
    key = (num, text)
    prev = _criteria.get(key, True)
    if call.when == "call" or failed:
        _criteria[key] = prev and not failed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    by_num = {}
    for (num, text), ok in _criteria.items():
        ok_all, texts = by_num.get(num, (True, []))
        by_num[num] = (ok_all and ok, texts + [text])
    for num in sorted(by_num):
        ok, texts = by_num[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {num}: {'; '.join(texts)}")


def tiny_config(**overrides) -> RunConfig:
    """A narrow backbone and short schedule for fast tests."""
    cfg = RunConfig()
    cfg.model.widths = (8, 16, 32, 64)
    cfg.model.proj_dim = 32
    cfg.model.pred_dim = 16
    cfg.pipeline.epochs = 1
    cfg.pipeline.batch_size = 8
    cfg.pipeline.linear_steps = 20
    cfg.pipeline.finetune_epochs = 1
    for dotted, value in overrides.items():
        cfg.set(dotted.replace("__", "."), value)
    return cfg.validate()


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    return generate_dataset(DatagenConfig(count=40), out, seed=7)


@pytest.fixture
def tiny_cfg():
    return tiny_config()
