import json

import numpy as np
import pytest

from lungsound.synth import synth_generate
from lungsound.wavio import write_wav


def sine(freq: float, n: int, rate: int = 8000, amp: float = 0.5) -> np.ndarray:
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / rate)


def write_manifest(directory, recordings) -> str:
    path = directory / "manifest.json"
    path.write_text(json.dumps({"recordings": recordings}))
    return path


@pytest.fixture
def tone_wav(tmp_path):
    path = tmp_path / "tone.wav"
    write_wav(path, sine(1000.0, 73600))
    return path


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Recording-level synthetic corpus, 10 per class (40 recordings)."""
    out = tmp_path_factory.mktemp("corpus")
    manifest = synth_generate(out, n_per_class=10, seed=3)
    return out / "manifest.json", manifest


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
ACCEPTANCE_TITLES = {
    1: "metric reproduction",
    2: "total score arithmetic",
    3: "metric properties",
    4: "dsp oracles",
    5: "gradient verification",
    6: "weighted-loss contract",
    7: "schedule/stopping contracts",
    8: "overfit sanity",
    9: "end-to-end synthetic benchmark",
    10: "round-trip and determinism",
}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(
            f"{'PASS' if ok else 'FAIL'}  {num:>2}. {ACCEPTANCE_TITLES[num]}: {detail}")
