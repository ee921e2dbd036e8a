from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sipkit.glm import Dataset  # noqa: E402


def make_dataset(n=120, K=3, seed=0, coef=None, intercept=0.0) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, K))
    coef = np.linspace(1.0, -0.5, K) if coef is None else np.asarray(coef, dtype=float)
    p = 1.0 / (1.0 + np.exp(-(intercept + X @ coef)))
    z = (rng.random(n) < p).astype(int)
    return Dataset(z, X)


@pytest.fixture
def small_data() -> Dataset:
    return make_dataset()


def write_cohort(path: Path, n=40, K=3, seed=0, with_id=True) -> Path:
    data = make_dataset(n=n, K=K, seed=seed)
    cols = (["pid"] if with_id else []) + ["z"] + [f"x{k + 1}" for k in range(K)]
    lines = [",".join(cols)]
    for i in range(n):
        cells = ([str(311000 + i)] if with_id else []) + [str(int(data.treatment[i]))]
        cells += [f"{v:.6f}" for v in data.covariates[i]]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
