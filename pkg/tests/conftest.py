import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from vgsn import tensor as T
from vgsn.corpus import codepoint_filename, load_paired_corpus
from vgsn.fixtures import FEW_SHOT, TRANSFER_HELD_OUT, TRANSFER_TRAIN

DATA = Path(__file__).parent / "data"

settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")


@pytest.fixture
def f64():
    with T.precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def copy_subset(dest: Path, codepoints) -> tuple[Path, Path]:
    dirs = []
    for font in ("font_a", "font_b"):
        d = dest / font
        d.mkdir(parents=True, exist_ok=True)
        for cp in codepoints:
            shutil.copy(DATA / font / codepoint_filename(cp), d)
        dirs.append(d)
    return dirs[0], dirs[1]


@pytest.fixture(scope="session")
def few_shot_dirs(tmp_path_factory):
    """Directories holding the 5-pair, 32x32 training fixture."""
    return copy_subset(tmp_path_factory.mktemp("fewshot"), FEW_SHOT)


@pytest.fixture(scope="session")
def few_shot_corpus(few_shot_dirs):
    return load_paired_corpus(*few_shot_dirs)


@pytest.fixture(scope="session")
def transfer_dirs(tmp_path_factory):
    return copy_subset(tmp_path_factory.mktemp("transfer"), TRANSFER_TRAIN)


@pytest.fixture(scope="session")
def held_out_pair():
    from vgsn.corpus import read_pgm

    name = codepoint_filename(TRANSFER_HELD_OUT)
    return read_pgm(DATA / "font_a" / name), read_pgm(DATA / "font_b" / name)


# ---------------------------------------------------------------- acceptance report

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Mutable record whose ``detail`` is shown in the acceptance summary."""
    rec = {"detail": ""}
    request.node._criterion = rec
    return rec


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    detail = getattr(item, "_criterion", {}).get("detail", "")
    prev = _ACCEPTANCE.get(number)
    passed = rep.passed and (prev is None or prev[1])
    _ACCEPTANCE[number] = (title, passed, detail or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
