"""Finite-N convergence of the measured error energies toward state evolution."""
import numpy as np
import pytest

from epsel import (
    PriorSpec,
    build_measurement,
    instrumented_run,
    limiting_spectrum,
    sample_noise,
    sample_signal,
    se_recursion,
)

SIZES = (512, 2048, 4096)
BATCHES, PER_BATCH, T = 10, 3, 5


def q_energies(prior, N, batch, k):
    ss = np.random.SeedSequence([batch, k, N]).spawn(3)
    model = build_measurement("row_orthogonal", N // 2, N, 0.01, ss[0])
    x = sample_signal(prior, N, ss[1])
    w = sample_noise(N // 2, 0.01, ss[2])
    return np.real(np.diag(instrumented_run(model, prior, x, w, T).qq))


@pytest.mark.slow
def test_q_energy_deviation_decreases_with_n():
    # deviation of a batch = max over t of |batch mean of N^-1 ||q_t||^2 - mse_ba[t]|
    prior = PriorSpec(0.1)
    target = se_recursion(prior, limiting_spectrum("row_orthogonal", 0.5), 0.01, T).mse_ba
    devs = np.empty((BATCHES, len(SIZES)))
    for b in range(BATCHES):
        for j, N in enumerate(SIZES):
            mean = np.mean([q_energies(prior, N, b, k) for k in range(PER_BATCH)], axis=0)
            devs[b, j] = np.max(np.abs(mean - target))
    decreasing = int(np.sum((devs[:, 0] > devs[:, 1]) & (devs[:, 1] > devs[:, 2])))
    print(f"\nper-batch deviations (N = {SIZES}):\n{np.round(devs, 4)}")
    print(f"median deviation by N: {np.round(np.median(devs, axis=0), 4)}")
    assert decreasing >= 8, f"deviation decreasing in only {decreasing}/10 batches"
