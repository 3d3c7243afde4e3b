import numpy as np
import pytest

from capfirm.model import QUANTILE_LEVELS, BessParams, DayForecast, InstanceConfig

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def toy_config(T=4, Pc=100.0, price=0.2, dt=0.25, beta=5.0, tol_frac=0.01, ramp=None, y_max=None,
               s_max=100.0, eta=1.0, x_prev=None):
    """Small instance used throughout the hand-checked examples."""
    bess = BessParams(0.0, s_max, s_max, s_max, eta, eta, 0.0, 0.0)
    ramp = np.full(T, Pc) if ramp is None else ramp
    y_max = np.full(T, Pc) if y_max is None else y_max
    return InstanceConfig(T, dt, Pc, np.full(T, price) if np.isscalar(price) else price, beta, tol_frac,
                          ramp, np.zeros(T), np.full(T, Pc), np.zeros(T), y_max, bess, x_prev)


def toy_forecast(median, spreads=None, observation=None):
    """Quantile fan around ``median``; ``spreads[k]`` is median - q_k for the lower levels."""
    median = np.asarray(median, float)
    T = median.size
    spreads = np.zeros(4) if spreads is None else np.asarray(spreads, float)
    rows = []
    for k, lv in enumerate(QUANTILE_LEVELS):
        if lv < 0.5:
            rows.append(np.maximum(median - spreads[k] * (median > 0), 0))
        elif lv == 0.5:
            rows.append(median)
        else:
            rows.append(median + spreads[8 - k] * (median > 0))
    obs = median if observation is None else np.asarray(observation, float)
    return DayForecast(np.array(rows), median, np.tile(median, (T, 1)), obs)


@pytest.fixture
def toy():
    return toy_config()


def random_instance(rng, T, gamma_max=3, Pc=100.0):
    """Random small instance (config, uncertainty set) for oracle comparisons."""
    from capfirm.model import UncertaintySetSpec

    price = rng.uniform(0.05, 0.3, T)
    cfg = toy_config(T=T, Pc=Pc, price=price, dt=24.0 / T, ramp=np.full(T, rng.uniform(0.2, 1.0) * Pc),
                     s_max=rng.uniform(0.2, 1.0) * Pc, eta=rng.uniform(0.85, 1.0))
    shape = np.sin(np.pi * (np.arange(T) + 0.5) / T) ** 1.5
    median = shape * rng.uniform(0.3, 0.9) * Pc
    median[rng.random(T) < 0.15] = 0.0
    dev = median * rng.uniform(0.1, 0.6, T)
    gamma = int(rng.integers(0, gamma_max + 1))
    return cfg, UncertaintySetSpec(median, dev, gamma)
