import numpy as np
import pytest

from cshap.dataset import SplitPolicy, split_policy
from cshap.signal import Decomposition
from cshap.synth import SynthSpec, generate_corpus

# acceptance lines collected by test_acceptance.record()
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_decomposition(rng: np.random.Generator, n: int) -> Decomposition:
    peaks = np.zeros(n)
    idx = rng.choice(n, size=max(1, n // 10), replace=False)
    peaks[idx] = rng.normal(0, 0.3, size=len(idx))
    return Decomposition(
        levels=np.repeat(rng.normal(0.6, 0.1, size=2), [n // 2, n - n // 2]),
        peaks=peaks,
        scale=float(rng.uniform(0.005, 0.02)),
        lf=rng.normal(0, 0.5, size=n),
        hf=rng.normal(0, 0.5, size=n),
        peak_indices=idx,
    )


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(SynthSpec(overlap=0.5), scenarios=1, cycles_per_scenario=4, seed=3)


@pytest.fixture(scope="session")
def small_split(small_corpus):
    return split_policy(small_corpus, SplitPolicy(phases_per_scenario=2))
