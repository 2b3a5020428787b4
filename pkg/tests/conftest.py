import time
import warnings

import pytest

from sclc import pipeline


@pytest.fixture(scope="session")
def desk_run():
    """Default-config pretraining and fine-tuning, shared across modules.

    Returns ``(config, dataset, pretrain_result, finetune_result, seconds)``;
    seconds covers pretraining only.
    """
    cfg = pipeline.RunConfig()
    dataset = pipeline.load_dataset(cfg)
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pre = pipeline.pretrain(cfg, None, dataset)
    seconds = time.perf_counter() - start
    ft = pipeline.finetune(cfg, pre.model, None, dataset)
    return cfg, dataset, pre, ft, seconds


ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (ok, detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
