"""Chain diagnostics."""

import numpy as np


def autocovariance(x):
    """Biased autocovariance at lags 0..len(x)-1 via FFT."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def effective_sample_size(x) -> float:
    """Geyer's initial positive sequence estimate of the effective sample size.

    Sums of adjacent autocorrelation pairs are accumulated until the first
    non-positive pair.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 4:
        return float(n)
    acov = autocovariance(x)
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]
    total = 0.0
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        total += pair
    tau = -1.0 + 2.0 * total
    return float(n / max(tau, 1e-12))
