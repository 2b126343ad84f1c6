import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from topoguard.compressor import compress, decompress  # noqa: E402
from topoguard.synthetic import gaussian_mix  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_pair():
    """A 32x32 field, its decompressed version at 1e-3 and the blob."""
    f = gaussian_mix((32, 32), k=6, seed=7)
    blob = compress(f, rel_eb=1e-3)
    return f, decompress(blob), blob


@pytest.fixture(scope="session")
def cube_pair():
    f = gaussian_mix((12, 12, 12), k=5, seed=3)
    blob = compress(f, rel_eb=1e-3)
    return f, decompress(blob), blob


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(n: int, ok: bool, detail: str = "") -> bool:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        request.config.acceptance_lines[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
