import numpy as np
import pytest

from campc.numqp import SoftQP


def random_soft_qp(rng, n_v_max=4, n_c_max=10, n_z_max=3):
    """Random well-conditioned soft QP plus a parameter vector."""
    n_v = int(rng.integers(1, n_v_max + 1))
    n_c = int(rng.integers(1, n_c_max + 1))
    n_z = int(rng.integers(1, n_z_max + 1))
    M = rng.normal(size=(n_v, n_v))
    qp = SoftQP(
        H=M.T @ M + 0.1 * np.eye(n_v),
        F=rng.normal(size=(n_v, n_z)),
        W=rng.normal(size=(n_c, n_v)),
        c=rng.normal(size=n_c),
        L=rng.normal(size=(n_c, n_z)),
        rho=rng.uniform(0.2, 3.0, size=n_c),
    )
    z = rng.normal(size=n_z)
    return qp, z


def scalar_qp(c=0.5, rho=10.0):
    """1-d problem: min v^2 - 2v + rho*eps  s.t.  v <= c + eps."""
    return SoftQP(H=[[2.0]], F=[[2.0]], W=[[1.0]], c=[c],
                  L=[[0.0]], rho=[rho])


@pytest.fixture(scope="session")
def thermal_setup():
    """Thermal benchmark model/problem built once per session."""
    from campc import thermal2d

    return thermal2d.build_thermal_benchmark()
