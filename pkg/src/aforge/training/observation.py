"""Policy observation: relative target position, 6D attitude, velocities."""
import numpy as np

from ..rotations import quat_to_matrix, rotation_6d

OBS_DIM = 15


def observe_batch(state, gate_centers) -> np.ndarray:
    """``(N, 15)`` observations ``(s - p, R6D, v_world, omega_body)``."""
    p = np.asarray(gate_centers, dtype=float) - state.position
    r6 = rotation_6d(quat_to_matrix(state.orientation))
    return np.concatenate([p, r6, state.linear_velocity, state.angular_velocity], axis=-1)


def observe(state, gate) -> np.ndarray:
    """Observation of a single state with respect to ``gate``."""
    center = getattr(gate, "center", gate)
    return observe_batch(state, center)
