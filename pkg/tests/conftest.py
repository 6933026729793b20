import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mracsim import load_config, run_scenario, scenario_gains
from mracsim.sim import render_csv

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=60,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

REPO = Path(__file__).resolve().parent.parent
BENCHMARK_CONFIG = REPO / "configs" / "mimo2x2.cfg"


@pytest.fixture(scope="session")
def benchmark_config():
    return load_config(BENCHMARK_CONFIG)


@pytest.fixture(scope="session")
def benchmark_gains(benchmark_config):
    gains = scenario_gains(benchmark_config)
    assert gains is not None
    return gains


@pytest.fixture(scope="session")
def benchmark_run(benchmark_config):
    """The reproduction scenario, run once per session on the fast engine.

    Returns (trace, metrics, csv_text, elapsed_seconds); elapsed excludes JIT
    compilation (a warm-up run happens first).
    """
    warm = benchmark_config.with_overrides(t_end=5e-4, dt=1e-4, decimate=1)
    run_scenario(warm)
    start = time.perf_counter()
    trace, metrics = run_scenario(benchmark_config)
    elapsed = time.perf_counter() - start
    return trace, metrics, render_csv(trace), elapsed


@pytest.fixture(scope="session")
def flipped_sign_run(benchmark_config):
    """Same scenario but with the determinant estimate started at the true
    value (+0.125), so no dead-zone sign switch may occur."""
    config = benchmark_config.with_overrides(nd0=+0.125)
    return run_scenario(config)
