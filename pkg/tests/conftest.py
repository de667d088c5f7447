import numpy as np
import pytest

from crossed_lmm import dataset_from_arrays
from crossed_lmm.model import VarianceComponents


def rel(a, b) -> float:
    """Relative discrepancy ||a - b|| / ||b||."""
    b = np.asarray(b, dtype=float)
    denom = max(float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(np.asarray(a, dtype=float) - b) / denom)


def random_records(rng, r_max=40, c_max=40, fill=(0.1, 0.9), p_max=5,
                   vc=None, beta=None):
    """A random crossed design: returns (row_idx, col_idx, x, y, beta, vc)."""
    r = int(rng.integers(2, r_max + 1))
    c = int(rng.integers(2, c_max + 1))
    frac = float(rng.uniform(*fill))
    m = max(4, int(round(frac * r * c)))
    m = min(m, r * c)
    cells = rng.choice(r * c, size=m, replace=False)
    cells.sort()
    i, j = cells // c, cells % c
    p = int(rng.integers(0, p_max + 1))
    x = np.empty((m, p + 1))
    x[:, 0] = 1.0
    if p:
        x[:, 1:] = rng.standard_normal((m, p))
    if beta is None:
        beta = rng.standard_normal(p + 1)
    if vc is None:
        vc = VarianceComponents.from_raw(
            float(rng.uniform(0.0, 3.0)),
            float(rng.uniform(0.0, 3.0)),
            float(rng.uniform(0.1, 3.0)),
            1e-12,
        )
    ru, ri = np.unique(i, return_inverse=True)
    cu, ci = np.unique(j, return_inverse=True)
    a = rng.normal(0, np.sqrt(vc.sigma2_a), ru.size)
    b = rng.normal(0, np.sqrt(vc.sigma2_b), cu.size)
    e = rng.normal(0, np.sqrt(vc.sigma2_e), m)
    y = x @ beta + a[ri] + b[ci] + e
    return ri.astype(np.int64), ci.astype(np.int64), x, y, np.asarray(beta), vc


def random_dataset(rng, **kwargs):
    ri, ci, x, y, beta, vc = random_records(rng, **kwargs)
    return dataset_from_arrays(ri, ci, x, y), (ri, ci, x, y), beta, vc


class CountingDataset:
    """Proxy that counts scans, for pass-budget assertions."""

    def __init__(self, ds):
        self.ds = ds
        self.scans = 0

    def scan(self, chunk_records=None):
        self.scans += 1
        if chunk_records is None:
            return self.ds.scan()
        return self.ds.scan(chunk_records)

    @property
    def profile(self):
        return self.ds.profile

    @property
    def width(self):
        return self.ds.width

    @property
    def warnings(self):
        return self.ds.warnings


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if name.startswith("test_criterion"):
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {name}: {outcome}")
