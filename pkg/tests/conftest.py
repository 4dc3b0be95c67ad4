"""Shared fixtures and small data builders for the test suite."""

import numpy as np
import pytest

from sparsefun.kernel import KernelSpec, gauss_legendre
from sparsefun.meanfit import LongitudinalSample


@pytest.fixture
def unit_spec():
    return KernelSpec(order=2, domain=(0.0, 1.0))


@pytest.fixture
def rule41():
    return gauss_legendre(41)


def make_samples(rng, n, m_choices, fn, noise_sd=0.0, prefix="s"):
    """Sparse noisy observations of a common curve: n subjects, m_i drawn
    from m_choices, times uniform on [0, 1]."""
    out = []
    for i in range(n):
        m = int(rng.choice(m_choices))
        t = np.sort(rng.uniform(0.0, 1.0, size=m))
        v = fn(t) + noise_sd * rng.standard_normal(m)
        out.append(LongitudinalSample(subject_id=f"{prefix}{i:03d}", times=t, values=v))
    return out
