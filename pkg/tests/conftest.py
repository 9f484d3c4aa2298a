import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci", derandomize=True, deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture
def p3():
    """Path-graph Laplacian plus unit selfloops; spectrum (1, 2, 4)."""
    from hiereig.sparse import SparseSymMatrix

    dense = np.array([[2.0, -1.0, 0.0], [-1.0, 3.0, -1.0], [0.0, -1.0, 2.0]])
    return SparseSymMatrix.from_dense(dense, label="P3")
