"""Shared fixtures and the acceptance summary printed at the end of a run."""

import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from charbench.data import ingest, split, synth_generate
from charbench.train import TrainConfig, pretrain_source, transfer

SCENARIO_SEED = 42
TARGET_SEED = 4242  # a different glyph family drawn from the same generator


@dataclass
class Scenario:
    root: Path
    source_dir: Path
    target_dir: Path
    weights: Path
    pretrain_history: list
    pretrain_seconds: float
    transferred: object
    transfer_seconds: float
    random_init: object
    random_seconds: float


@pytest.fixture(scope="session")
def scenario(tmp_path_factory) -> Scenario:
    """The standard desk-scale transfer experiment, run once per session.

    mini-alexnet is pretrained on a 20-class synthetic source, then a fresh
    head is trained on a 10-class target with the extractor frozen. The same
    head training on a seeded random extractor serves as the baseline.
    """
    root = tmp_path_factory.mktemp("scenario")
    source_dir, target_dir = root / "source", root / "target"
    synth_generate(source_dir, 20, 200, seed=SCENARIO_SEED)
    synth_generate(target_dir, 10, 200, seed=TARGET_SEED)
    source = split(ingest(source_dir), 0.85, SCENARIO_SEED)
    target = split(ingest(target_dir), 0.85, SCENARIO_SEED)

    pre_cfg = TrainConfig(seed=SCENARIO_SEED, freeze_policy="full_finetune")
    t0 = time.monotonic()
    weights, history = pretrain_source("alexnet", source, pre_cfg, root / "alexnet.cbpw")
    t1 = time.monotonic()
    cfg = TrainConfig(seed=SCENARIO_SEED)
    transferred = transfer("alexnet", weights, target, cfg)
    t2 = time.monotonic()
    random_init = transfer("alexnet", None, target, cfg)
    t3 = time.monotonic()
    return Scenario(root, source_dir, target_dir, weights, history, t1 - t0, transferred, t2 - t1,
                    random_init, t3 - t2)


# ---------------------------------------------------------------------------
# acceptance summary

_criteria: dict = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    number, title = marker
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "seen": False})
    if report.when == "call" or report.failed:
        entry["seen"] = True
        entry["ok"] = entry["ok"] and not report.failed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result().acceptance = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        if not entry["seen"]:
            status = "SKIP"
        else:
            status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {number}: {status}  {entry['title']}")
