"""Rigid-body multirotor simulation, wrench maps and actuation envelopes.

Units: rotor speeds in rev/s, so wrench-map inputs are (rev/s)^2.  World
frame z is up and gravity is ``(0, 0, -g)``.  All state arrays may carry a
leading batch axis; one call to :func:`step` advances every vehicle in the
batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares, linprog

from .design_space import BodyGeometry, MassProperties, MotorLayout, mass_inertia
from .rotations import quat_multiply, quat_to_matrix

GRAVITY = 9.81


@dataclass(frozen=True)
class RotorModel:
    """Motor/propeller actuation model shared by all six motors."""

    k_f: float = 2.0e-5        # N / (rev/s)^2
    k_m: float = 3.0e-7        # N m / (rev/s)^2
    tau: float = 0.05          # s
    rps_min: float = 83.0
    rps_max: float = 400.0
    order: str = "first"
    natural_freq: float = 30.0  # rad/s, second-order only
    damping: float = 0.9
    rate_limit: float = 6000.0  # rev/s^2, second-order only

    def __post_init__(self):
        if self.k_f < 0 or self.k_m < 0:
            raise ValueError("rotor coefficients must be non-negative")
        if self.tau <= 0:
            raise ValueError("motor time constant must be positive")
        if not 0 <= self.rps_min < self.rps_max:
            raise ValueError("need 0 <= rps_min < rps_max")
        if self.order not in ("first", "second"):
            raise ValueError(f"unknown motor model order '{self.order}'")
        if self.order == "second" and min(self.natural_freq, self.damping, self.rate_limit) <= 0:
            raise ValueError("second-order parameters must be positive")

    @property
    def u_bounds(self):
        return self.rps_min ** 2, self.rps_max ** 2


def wrench_map(layout: MotorLayout, mass_props: MassProperties, rotor: RotorModel) -> np.ndarray:
    """6x6 map from squared rotor speeds to body force and torque about the CoM."""
    axes = layout.axes
    arms = layout.positions - mass_props.center_of_mass
    force = rotor.k_f * axes
    torque = rotor.k_f * np.cross(arms, axes) + (layout.spins * rotor.k_m)[:, None] * axes
    return np.vstack([force.T, torque.T])


@dataclass(frozen=True)
class Vehicle:
    """Everything the simulator needs about one airframe."""

    layout: MotorLayout
    mass_props: MassProperties
    rotor: RotorModel
    wrench: np.ndarray = field(repr=False)
    inertia_inv: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, layout: MotorLayout, geom: BodyGeometry | None = None, rotor: RotorModel | None = None,
              mass_props: MassProperties | None = None) -> "Vehicle":
        rotor = rotor or RotorModel()
        geom = geom or BodyGeometry(propeller_radius=layout.propeller_radius)
        mp = mass_props or mass_inertia(layout, geom)
        return cls(layout, mp, rotor, wrench_map(layout, mp, rotor), np.linalg.inv(mp.inertia))

    @property
    def mass(self) -> float:
        return self.mass_props.mass

    @property
    def inertia(self) -> np.ndarray:
        return self.mass_props.inertia

    def with_rotor(self, rotor: RotorModel) -> "Vehicle":
        return replace(self, rotor=rotor, wrench=wrench_map(self.layout, self.mass_props, rotor))


@dataclass
class RigidBodyState:
    position: np.ndarray
    orientation: np.ndarray      # (w, x, y, z), body -> world
    linear_velocity: np.ndarray  # world frame
    angular_velocity: np.ndarray  # body frame
    rotor_speeds: np.ndarray
    rotor_accel: np.ndarray | None = None

    @classmethod
    def at_rest(cls, rotor_speed: float, n: int | None = None) -> "RigidBodyState":
        shape = () if n is None else (n,)
        q = np.zeros(shape + (4,))
        q[..., 0] = 1.0
        return cls(np.zeros(shape + (3,)), q, np.zeros(shape + (3,)), np.zeros(shape + (3,)),
                   np.full(shape + (6,), float(rotor_speed)), np.zeros(shape + (6,)))

    def copy(self) -> "RigidBodyState":
        return RigidBodyState(*(None if a is None else np.array(a, copy=True) for a in self.arrays()))

    def arrays(self):
        return (self.position, self.orientation, self.linear_velocity, self.angular_velocity,
                self.rotor_speeds, self.rotor_accel)

    def is_finite(self) -> np.ndarray:
        ok = np.ones(self.position.shape[:-1], dtype=bool)
        for a in self.arrays():
            if a is not None:
                ok &= np.all(np.isfinite(a), axis=-1)
        return ok

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)


def _body_wrench(vehicle: Vehicle, rotor_speeds):
    w = (rotor_speeds ** 2) @ vehicle.wrench.T
    return w[..., :3], w[..., 3:]


def _rigid_derivs(vehicle: Vehicle, q, v, omega, rotor_speeds):
    force_b, torque_b = _body_wrench(vehicle, rotor_speeds)
    rot = quat_to_matrix(q)
    acc = np.einsum("...ij,...j->...i", rot, force_b) / vehicle.mass
    acc[..., 2] -= GRAVITY
    J = vehicle.inertia
    h = omega @ J.T
    omega_dot = (torque_b - np.cross(omega, h)) @ vehicle.inertia_inv.T
    omega_q = np.concatenate([np.zeros(omega.shape[:-1] + (1,)), omega], axis=-1)
    q_dot = 0.5 * quat_multiply(q, omega_q)
    return v, q_dot, acc, omega_dot


def _rotor_derivs(rotor: RotorModel, speeds, accel, cmd):
    if rotor.order == "first":
        return (cmd - speeds) / rotor.tau, None
    wn, z = rotor.natural_freq, rotor.damping
    accel = np.clip(accel, -rotor.rate_limit, rotor.rate_limit)
    return accel, wn * wn * (cmd - speeds) - 2 * z * wn * accel


def _quat_exp_step(q, omega, dt):
    """Exact integration of a constant body rate over ``dt``."""
    angle = np.linalg.norm(omega, axis=-1, keepdims=True) * dt
    half = 0.5 * angle
    with np.errstate(invalid="ignore", divide="ignore"):
        axis = np.where(angle > 1e-12, omega * dt / np.where(angle > 1e-12, angle, 1.0), 0.0)
    dq = np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)
    return quat_multiply(q, dq)


def _normalize(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def step(state: RigidBodyState, commands, dt: float, vehicle: Vehicle, integrator: str = "euler") -> RigidBodyState:
    """Advance the state by ``dt`` with motor speed ``commands`` held constant.

    ``integrator`` is ``"euler"`` (semi-implicit, for training throughput)
    or ``"rk4"`` (for validation).
    """
    if not 0 < dt <= 0.02:
        raise ValueError(f"dt must be in (0, 0.02], got {dt}")
    if not np.all(state.is_finite()):
        raise FloatingPointError("non-finite state passed to step")
    rotor = vehicle.rotor
    cmd = np.clip(np.asarray(commands, dtype=float), rotor.rps_min, rotor.rps_max)
    p, q, v, w, s = state.position, state.orientation, state.linear_velocity, state.angular_velocity, state.rotor_speeds
    sa = state.rotor_accel if state.rotor_accel is not None else np.zeros_like(s)

    if integrator == "euler":
        if rotor.order == "first":
            s_new = cmd + (s - cmd) * np.exp(-dt / rotor.tau)
            sa_new = (cmd - s_new) / rotor.tau
        else:
            _, sdd = _rotor_derivs(rotor, s, sa, cmd)
            sa_new = np.clip(sa + dt * sdd, -rotor.rate_limit, rotor.rate_limit)
            s_new = s + dt * sa_new
        _, _, acc, wdot = _rigid_derivs(vehicle, q, v, w, s_new)
        v_new = v + dt * acc
        w_new = w + dt * wdot
        p_new = p + dt * v_new
        q_new = _normalize(_quat_exp_step(q, w_new, dt))
    elif integrator == "rk4":
        def f(y):
            p_, q_, v_, w_, s_, sa_ = y
            sdot, sadot = _rotor_derivs(rotor, s_, sa_, cmd)
            pd, qd, vd, wd = _rigid_derivs(vehicle, q_, v_, w_, s_)
            return (pd, qd, vd, wd, sdot, np.zeros_like(sa_) if sadot is None else sadot)

        y0 = (p, q, v, w, s, sa)
        k1 = f(y0)
        k2 = f(tuple(a + 0.5 * dt * b for a, b in zip(y0, k1)))
        k3 = f(tuple(a + 0.5 * dt * b for a, b in zip(y0, k2)))
        k4 = f(tuple(a + dt * b for a, b in zip(y0, k3)))
        p_new, q_new, v_new, w_new, s_new, sa_new = (
            a + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y0, k1, k2, k3, k4))
        q_new = _normalize(q_new)
        if rotor.order == "first":
            sa_new = (cmd - s_new) / rotor.tau
        else:
            sa_new = np.clip(sa_new, -rotor.rate_limit, rotor.rate_limit)
    else:
        raise ValueError(f"unknown integrator '{integrator}'")

    s_new = np.clip(s_new, rotor.rps_min, rotor.rps_max)
    return RigidBodyState(p_new, q_new, v_new, w_new, s_new, sa_new)


def simulate(state: RigidBodyState, commands, duration: float, dt: float, vehicle: Vehicle,
             integrator: str = "euler") -> RigidBodyState:
    """Hold ``commands`` for ``duration`` seconds."""
    n = int(round(duration / dt))
    for _ in range(n):
        state = step(state, commands, dt, vehicle, integrator)
    return state


def angular_momentum_world(state: RigidBodyState, vehicle: Vehicle) -> np.ndarray:
    h_body = state.angular_velocity @ vehicle.inertia.T
    return np.einsum("...ij,...j->...i", state.rotation(), h_body)


@dataclass(frozen=True)
class HoverResult:
    feasible: bool
    hover_speeds: np.ndarray | None
    residual: float


def hover_feasible(wrench: np.ndarray, mass: float, rotor: RotorModel | None = None,
                   rtol: float = 1e-6) -> HoverResult:
    """Can the vehicle hold ``(0, 0, m g)`` with zero torque at level attitude?

    Returns the minimum-norm squared-speed solution when it is inside the
    actuator box, otherwise the in-box solution closest to it in L1.
    """
    rotor = rotor or RotorModel()
    lo, hi = rotor.u_bounds
    target = np.array([0.0, 0.0, mass * GRAVITY, 0.0, 0.0, 0.0])
    scale = max(mass * GRAVITY, 1e-12)

    def result(u):
        u = np.clip(u, lo, hi)
        res = float(np.linalg.norm(wrench @ u - target)) / scale
        ok = res <= rtol
        return HoverResult(ok, np.sqrt(u) if ok else None, res)

    u0 = np.linalg.pinv(wrench) @ target
    if np.all(u0 >= lo) and np.all(u0 <= hi):
        r = result(u0)
        if r.feasible:
            return r
    n = wrench.shape[1]
    c = np.concatenate([np.zeros(n), np.ones(n)])
    eye = np.eye(n)
    a_ub = np.block([[eye, -eye], [-eye, -eye]])
    b_ub = np.concatenate([u0, -u0])
    a_eq = np.hstack([wrench, np.zeros_like(wrench)])
    sol = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=target,
                  bounds=[(lo, hi)] * n + [(0, None)] * n, method="highs")
    if sol.status != 0:
        return HoverResult(False, None, np.inf)
    return result(sol.x[:n])


def accel_envelope(wrench: np.ndarray, mass_props: MassProperties, directions, rotor: RotorModel | None = None,
                   include_gravity: bool = False) -> np.ndarray:
    """Largest torque-free linear acceleration along each body direction.

    For each unit direction ``d`` solves ``max d.F(u) / m`` over the actuator
    box with zero net torque.  With ``include_gravity`` the level-attitude
    gravity vector is added.  LP infeasibility yields 0 for that direction.
    """
    rotor = rotor or RotorModel()
    lo, hi = rotor.u_bounds
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    force, torque = wrench[:3], wrench[3:]
    n = wrench.shape[1]
    out = np.zeros(len(dirs))
    for k, d in enumerate(dirs):
        sol = linprog(-(d @ force), A_eq=torque, b_eq=np.zeros(3), bounds=[(lo, hi)] * n, method="highs")
        if sol.status != 0:
            continue
        u = np.clip(sol.x, lo, hi)
        out[k] = float(d @ (force @ u)) / mass_props.mass
        if include_gravity:
            out[k] -= GRAVITY * d[2]
    return out


def direction_fan(plane: str, n: int) -> np.ndarray:
    """``n`` unit directions evenly spaced in a body coordinate plane."""
    idx = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}[plane]
    ang = 2 * np.pi * np.arange(n) / n
    d = np.zeros((n, 3))
    d[:, idx[0]] = np.cos(ang)
    d[:, idx[1]] = np.sin(ang)
    return d


def envelope_rows(directions, values):
    return [(*(float(c) for c in d), float(v)) for d, v in zip(directions, values)]


ENVELOPE_HEADER = ("dir_x", "dir_y", "dir_z", "max_accel_mps2")


def simulate_rotor_response(commands, dt: float, rotor: RotorModel, start: float | None = None) -> np.ndarray:
    """Rotor speed trace for a command trace, single motor, Euler-integrated."""
    commands = np.clip(np.asarray(commands, dtype=float), rotor.rps_min, rotor.rps_max)
    s = float(commands[0] if start is None else start)
    a = 0.0
    out = np.empty_like(commands)
    for i, c in enumerate(commands):
        if rotor.order == "first":
            s = c + (s - c) * np.exp(-dt / rotor.tau)
        else:
            sdd = rotor.natural_freq ** 2 * (c - s) - 2 * rotor.damping * rotor.natural_freq * a
            a = float(np.clip(a + dt * sdd, -rotor.rate_limit, rotor.rate_limit))
            s = s + dt * a
        s = min(max(s, rotor.rps_min), rotor.rps_max)
        out[i] = s
    return out


def fit_second_order(commands, measured, dt: float, rotor: RotorModel | None = None,
                     guess=(20.0, 0.8, 4000.0)) -> RotorModel:
    """Least-squares fit of (natural frequency, damping, rate limit) to a log.

    ``commands`` and ``measured`` are equally sampled rotor speed traces in
    rev/s, e.g. logged while flying a policy trained with the first-order
    model.
    """
    rotor = replace(rotor or RotorModel(), order="second")
    measured = np.asarray(measured, dtype=float)

    def resid(theta):
        m = replace(rotor, natural_freq=float(np.exp(theta[0])), damping=float(np.exp(theta[1])),
                    rate_limit=float(np.exp(theta[2])))
        return simulate_rotor_response(commands, dt, m, start=measured[0]) - measured

    sol = least_squares(resid, np.log(np.asarray(guess, dtype=float)), method="trf", x_scale=1.0, xtol=1e-12, ftol=1e-12, gtol=1e-12)
    wn, z, rl = np.exp(sol.x)
    return replace(rotor, natural_freq=float(wn), damping=float(z), rate_limit=float(rl))
