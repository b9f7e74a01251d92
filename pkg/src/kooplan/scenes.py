"""Scene files: JSON descriptions of arm + debris + query + execution settings.

A scene bundles everything one benchmark episode needs: the manipulator
preset, the scripted debris field, the synthetic observation spec, the
planning query and the execution-loop settings.  See the README for the
documented schema; `scenes/` ships ready-made configurations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .debris import (
    BallisticMotion,
    CircularMotion,
    DebrisField,
    ObservationSpec,
    Obstacle,
    SinusoidalMotion,
    debris_centers,
    debris_states,
    render_observation,
)
from .dynamics import (
    ManipulatorModel,
    _rk4_step,
    _rnea,
    arm_six,
    fk_points,
    jacobian_position,
    planar_two_link,
)
from .errors import SceneError
from .training import ObservationDataset, ObservationTrajectory

Array = np.ndarray

BUNDLED_SCENE_DIR = Path(__file__).resolve().parents[2] / "scenes"


@dataclass(frozen=True)
class QuerySettings:
    start: Array
    goal: Array
    tolerance: float
    max_nodes: int = 5000
    step_size: float = 0.2
    goal_bias: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float).reshape(3))
        if self.tolerance <= 0:
            raise SceneError("goal tolerance must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise SceneError("goal_bias must lie in [0, 1]")


@dataclass(frozen=True)
class ExecutionSettings:
    dt_sim: float = 0.0025
    dt_cycle: float = 0.05
    time_limit: float = 8.0
    warmup_cycles: int = 40
    refit_period: int = 10
    replan_cooldown: int = 3
    window: int = 200
    min_window: int = 40
    capsule_radius: float = 0.06
    inflation_c0: float = 0.02
    inflation_c1: float = 0.05
    obs_pos_sigma: float = 0.005
    obs_vel_sigma: float = 0.01
    kp: float = 3600.0
    kd: float = 120.0
    speed_fraction: float = 0.7           # edge pace relative to the velocity limit
    edge_resolution: int = 8
    observe_mode: str = "direct"          # "direct" | "encoder"

    def __post_init__(self):
        if self.dt_sim <= 0 or self.dt_cycle <= 0:
            raise SceneError("dt_sim and dt_cycle must be positive")
        ratio = self.dt_cycle / self.dt_sim
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
            raise SceneError("dt_cycle must be an integer multiple of dt_sim")
        if self.observe_mode not in ("direct", "encoder"):
            raise SceneError(f"unknown observe_mode {self.observe_mode!r}")

    @property
    def substeps(self) -> int:
        return max(1, int(round(self.dt_cycle / self.dt_sim)))


@dataclass(frozen=True)
class Scene:
    name: str
    manipulator: ManipulatorModel
    debris: DebrisField
    observation: ObservationSpec
    query: QuerySettings
    execution: ExecutionSettings
    seed: int = 0


_MOTION_KINDS = {
    "ballistic": lambda m: BallisticMotion(m["p0"], m["v0"]),
    "sinusoidal": lambda m: SinusoidalMotion(m["center"], m["amplitude"],
                                             m["rate"], m.get("phase", 0.0)),
    "circular": lambda m: CircularMotion(m["center"], m["radius"],
                                         m["rate"], m.get("phase", 0.0)),
}

_PRESETS = {"arm6": arm_six, "planar2": planar_two_link}


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise SceneError(f"{where}: missing required key {key!r}")
    return mapping[key]


def parse_scene(cfg: dict, where: str = "<scene>") -> Scene:
    name = _require(cfg, "name", where)

    man = _require(cfg, "manipulator", where)
    preset = man.get("preset", "arm6")
    if preset not in _PRESETS:
        raise SceneError(f"{where}: unknown manipulator preset {preset!r}")
    gravity = np.asarray(man.get("gravity", [0.0, 0.0, 0.0]), dtype=float)
    model = _PRESETS[preset](gravity=gravity)

    obstacles = []
    for i, ob in enumerate(cfg.get("debris", [])):
        motion_cfg = _require(ob, "motion", f"{where}: debris[{i}]")
        kind = _require(motion_cfg, "kind", f"{where}: debris[{i}].motion")
        if kind not in _MOTION_KINDS:
            raise SceneError(f"{where}: debris[{i}]: unknown motion kind {kind!r}")
        try:
            motion = _MOTION_KINDS[kind](motion_cfg)
        except KeyError as exc:
            raise SceneError(f"{where}: debris[{i}]: missing motion field {exc}") from exc
        obstacles.append(Obstacle(float(_require(ob, "radius", f"{where}: debris[{i}]")), motion))
    debris = DebrisField(tuple(obstacles))

    oc = cfg.get("observation", {})
    observation = ObservationSpec(
        rows=oc.get("rows", 16),
        cols=oc.get("cols", 16),
        plane=oc.get("plane", "xy"),
        extent=np.asarray(oc.get("extent", [[-1.5, 1.5], [-1.5, 1.5]]), dtype=float),
        noise_sigma=oc.get("noise_sigma", 0.01),
        seed=oc.get("seed", 0),
    )

    qc = _require(cfg, "query", where)
    query = QuerySettings(
        start=_require(qc, "start", f"{where}: query"),
        goal=_require(qc, "goal", f"{where}: query"),
        tolerance=qc.get("tolerance", 0.08),
        max_nodes=qc.get("max_nodes", 5000),
        step_size=qc.get("step_size", 0.2),
        goal_bias=qc.get("goal_bias", 0.05),
    )
    if query.start.shape != (model.n_joints,):
        raise SceneError(f"{where}: query.start must have {model.n_joints} joints")

    execution = ExecutionSettings(**cfg.get("execution", {}))
    return Scene(name, model, debris, observation, query, execution,
                 seed=cfg.get("seed", 0))


def load_scene(path) -> Scene:
    path = Path(path)
    if not path.exists():
        raise SceneError(f"{path}: scene file not found")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    try:
        return parse_scene(cfg, where=str(path))
    except TypeError as exc:
        raise SceneError(f"{path}: {exc}") from exc


def bundled_scene(name: str) -> Scene:
    return load_scene(BUNDLED_SCENE_DIR / f"{name}.json")


# ---------------------------------------------------------------------------
# Training data generation
# ---------------------------------------------------------------------------

class InfluenceField:
    """Obstacle-to-joint coupling used by the data-collection controller.

    Each joint receives an acceleration bias that is part linear, part
    Gaussian-bump nonlinear in the obstacle positions:

        w_j = sum_o [ c_lin . (p_o - a_j)  +  c_nl exp(-|p_o - a_j|^2 / s^2) ]

    The anchors a_j are fixed per scene.  The update of the closed-loop robot
    state is then linear in (q, qd, w, 1), so a feature map that recovers w
    from observations renders the composite dynamics linear, while the raw
    obstacle state leaves the bump component unexplained by any linear
    operator.
    """

    def __init__(self, n_joints: int, seed: int, lin_gain: float = 2.0,
                 nl_gain: float = 12.0, bump_scale: float = 0.8):
        rng = np.random.default_rng(seed)
        self.anchors = rng.uniform([-0.2, -0.6, -0.3], [0.9, 0.8, 0.7],
                                   size=(n_joints, 3))
        self.c_lin = lin_gain * rng.normal(size=(n_joints, 3)) / np.sqrt(3)
        self.c_nl = nl_gain * rng.uniform(0.5, 1.0, size=n_joints) \
            * rng.choice([-1.0, 1.0], size=n_joints)
        self.bump_scale = bump_scale

    def __call__(self, centers: Array) -> Array:
        w = np.zeros(self.anchors.shape[0])
        for j in range(self.anchors.shape[0]):
            d = centers - self.anchors[j]
            w[j] = float(
                (d @ self.c_lin[j]).sum()
                + self.c_nl[j] * np.exp(-(d ** 2).sum(-1) / self.bump_scale ** 2).sum()
            )
        return w


def simulate_coupled_episode(
    scene: Scene,
    n_samples: int,
    q0: Optional[Array] = None,
    hold_gain: float = 10.0,
    damp_gain: float = 6.0,
    couple_gain: float = 10.0,
    t0: float = 0.0,
    field: Optional[InfluenceField] = None,
) -> tuple[Array, Array, Array]:
    """Roll the arm under a posture-hold controller plus obstacle influence.

    The closed loop couples the robot's evolution to the debris positions,
    which is what makes the object features identifiable from robot-state
    prediction error alone.  Returns (t, robot (T, 2n), true object states
    (T, 6k) as [position, velocity] per obstacle) sampled at the control
    interval.
    """
    model = scene.manipulator
    ex = scene.execution
    n = model.n_joints
    q = np.asarray(q0 if q0 is not None else scene.query.start, dtype=float).copy()
    qd = np.zeros(n)
    q_home = q.copy()
    if field is None:
        field = InfluenceField(n, seed=scene.seed)
    args = (model.dh, model.masses, model.coms, model.inertias, model.gravity)

    times = np.empty(n_samples)
    robot = np.empty((n_samples, 2 * n))
    objects = np.empty((n_samples, 6 * len(scene.debris)))
    for s in range(n_samples):
        t = t0 + s * ex.dt_cycle
        times[s] = t
        robot[s] = np.concatenate([q, qd])
        objects[s] = debris_states(scene.debris, t).reshape(-1)
        for sub in range(ex.substeps):
            tt = t + sub * ex.dt_sim
            centers = debris_centers(scene.debris, tt)
            v = (hold_gain * (q_home - q) - damp_gain * qd
                 + couple_gain * field(centers))
            tau = _rnea(*args, q, qd, v)
            q, qd = _rk4_step(*args, q, qd, tau, ex.dt_sim)
    return times, robot, objects


def generate_observation_dataset(
    scene: Scene,
    n_trajectories: int = 2,
    n_samples: int = 400,
    seed: int = 0,
    settle: int = 60,
) -> ObservationDataset:
    """Simulate coupled episodes and render the grid observations.

    The first `settle` control intervals are discarded so the recorded data
    sits on the closed-loop manifold rather than the initial transient.
    Each observation stacks the current and previous rendered frame, making
    obstacle velocity recoverable from a single observation vector; the
    ground-truth object features are therefore [position, velocity] per
    obstacle (6 each).
    """
    rng = np.random.default_rng(seed)
    trajs = []
    for i in range(n_trajectories):
        q0 = scene.query.start + rng.uniform(-0.3, 0.3, scene.manipulator.n_joints)
        q0 = np.clip(q0, scene.manipulator.joint_limits[:, 0],
                     scene.manipulator.joint_limits[:, 1])
        t0 = float(rng.uniform(0.0, 4.0))
        times, robot, objects = simulate_coupled_episode(
            scene, n_samples + settle, q0, t0=t0)
        times, robot, objects = times[settle:], robot[settle:], objects[settle:]
        frames = [render_observation(scene.debris, scene.observation, t)
                  for t in times]
        obs = np.stack([np.concatenate([frames[k], frames[max(k - 1, 0)]])
                        for k in range(len(frames))])
        trajs.append(ObservationTrajectory(robot, obs, objects))
    return ObservationDataset(tuple(trajs), scene.execution.dt_cycle)
