import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile(
    "default", max_examples=25, deadline=None, derandomize=True
)
hypothesis.settings.load_profile("default")


# ---------------------------------------------------------------------------
# Shared oracles
# ---------------------------------------------------------------------------

def planar2_oracle_terms(m1, m2, l1, l2, g, q, qd):
    """Closed-form M, C, G of the planar 2R arm (COM mid-link, rod inertia,
    gravity acting along -y, angles measured from +x).  Kept independent of
    the library's Newton-Euler implementation."""
    lc1, lc2 = l1 / 2, l2 / 2
    I1, I2 = m1 * l1 ** 2 / 12, m2 * l2 ** 2 / 12
    q1, q2 = q
    dq1, dq2 = qd
    M11 = m1 * lc1 ** 2 + I1 + m2 * (l1 ** 2 + lc2 ** 2 + 2 * l1 * lc2 * np.cos(q2)) + I2
    M12 = m2 * (lc2 ** 2 + l1 * lc2 * np.cos(q2)) + I2
    M22 = m2 * lc2 ** 2 + I2
    M = np.array([[M11, M12], [M12, M22]])
    h = -m2 * l1 * lc2 * np.sin(q2)
    C = np.array([[h * dq2, h * (dq1 + dq2)], [-h * dq1, 0.0]])
    G = np.array([
        (m1 * lc1 + m2 * l1) * g * np.cos(q1) + m2 * lc2 * g * np.cos(q1 + q2),
        m2 * lc2 * g * np.cos(q1 + q2),
    ])
    return M, C, G


def planar2_oracle_tau(m1, m2, l1, l2, g, q, qd, qdd):
    M, C, G = planar2_oracle_terms(m1, m2, l1, l2, g, q, qd)
    return M @ qdd + C @ qd + G


def planar2_kinetic_energy(m1, m2, l1, l2, q, qd):
    """Kinetic energy from link COM velocities, independent of mass matrices."""
    lc1, lc2 = l1 / 2, l2 / 2
    I1, I2 = m1 * l1 ** 2 / 12, m2 * l2 ** 2 / 12
    q1, q2 = q
    dq1, dq2 = qd
    v1 = lc1 * dq1
    # COM 2 velocity
    vx = -l1 * np.sin(q1) * dq1 - lc2 * np.sin(q1 + q2) * (dq1 + dq2)
    vy = l1 * np.cos(q1) * dq1 + lc2 * np.cos(q1 + q2) * (dq1 + dq2)
    return (0.5 * m1 * v1 ** 2 + 0.5 * I1 * dq1 ** 2
            + 0.5 * m2 * (vx ** 2 + vy ** 2) + 0.5 * I2 * (dq1 + dq2) ** 2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
