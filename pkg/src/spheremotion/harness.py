"""Scenario runner and performance indicators.

A scenario couples a (possibly perturbed) plant, one controller per axis
and target profiles for speed ``v_d(t)`` and roll ``phi_d(t)``, or a world
trajectory that a pure-pursuit guidance law turns into those targets.  The
plant integrates at 1 ms; controllers update every 20 ms and their torques
are held in between.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .controllers import (ESOMPCVelocityController, OrientationMPCConfig, PWMPCOrientationController,
                          VelocityMPCConfig, roll_pid, speed_pid, steady_roll_pendulum_angle)
from .dynamics import FrictionConfig, GeneralizedState, RobotParams, simulate_hold
from .mlp import DEFAULT_PHI_GRID, DEFAULT_V_GRID, load_model, train_beta_model

__all__ = [
    "UndefinedMetric",
    "ExportError",
    "ScenarioError",
    "Profile",
    "TrajectoryRef",
    "Scenario",
    "Telemetry",
    "Metrics",
    "MetricsConfig",
    "ScenarioResult",
    "COLUMNS",
    "guidance_step",
    "run_scenario",
    "step_response",
    "compute_metrics",
    "export_results",
    "read_telemetry",
    "run_suite",
    "velocity_step_scenario",
    "roll_step_scenario",
    "roll_sine_scenario",
    "simultaneous_sine_scenario",
    "circle_scenario",
]

PLANT_DT = 1e-3
CONTROL_DT = 0.02
COLUMNS = ("t", "v", "v_d", "alpha", "beta", "theta", "phi", "phi_d", "tau1", "tau2", "I1", "I2", "phase")


class UndefinedMetric(ValueError):
    """A step response never reached 90% of the step."""


class ExportError(OSError):
    pass


class ScenarioError(ValueError):
    pass


# ------------------------------------------------------------------ profiles

@dataclass(frozen=True)
class Profile:
    """Target signal of time.

    kinds:
      ``constant``  value
      ``steps``     ``values[i]`` from ``times[i]`` on, ``initial`` before
      ``sine``      ``offset + amplitude*sin(omega*t + phase)`` for ``t >= start``,
                    ``before`` earlier (``t`` is absolute scenario time)
    """

    kind: str = "constant"
    value: float = 0.0
    times: tuple = ()
    values: tuple = ()
    initial: float = 0.0
    amplitude: float = 0.0
    omega: float = 0.0
    phase: float = 0.0
    offset: float = 0.0
    start: float = 0.0
    before: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "steps", "sine"):
            raise ScenarioError(f"unknown profile kind {self.kind!r}")
        if self.kind == "steps":
            if len(self.times) != len(self.values):
                raise ScenarioError("steps profile needs one value per switching time")
            if any(b < a for a, b in zip(self.times, self.times[1:])):
                raise ScenarioError("step times must be nondecreasing")
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def continuous(self) -> bool:
        return self.kind == "sine"

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "steps":
            out = self.initial
            for ti, vi in zip(self.times, self.values):
                if t >= ti - 1e-12:
                    out = vi
            return out
        if t < self.start - 1e-12:
            return self.before
        return self.offset + self.amplitude * math.sin(self.omega * t + self.phase)

    def to_dict(self) -> dict:
        base = {"kind": self.kind}
        keys = {"constant": ("value",), "steps": ("times", "values", "initial"),
                "sine": ("amplitude", "omega", "phase", "offset", "start", "before")}[self.kind]
        for k in keys:
            v = getattr(self, k)
            base[k] = list(v) if isinstance(v, tuple) else v
        return base

    @classmethod
    def from_dict(cls, d) -> "Profile":
        if isinstance(d, (int, float)):
            return cls("constant", float(d))
        d = dict(d)
        kind = d.pop("kind", d.pop("type", "constant"))
        return cls(kind=kind, **{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


# ---------------------------------------------------------------- trajectory

@dataclass(frozen=True)
class TrajectoryRef:
    """Circle ``center + radius*(cos, sin)(omega*t + phase)`` or a straight line.

    A ``line`` runs from ``start`` along ``heading`` at ``speed``.  Gains:
    ``k_y`` (1/m^2) on cross-track error, ``k_psi`` (1/m) on heading error,
    ``k_s`` (1/s) on along-track lag.
    """

    kind: str = "circle"
    center: tuple = (4.0, 4.0)
    radius: float = 4.0
    omega: float = 0.125
    phase: float = -math.pi / 2
    start: tuple = (0.0, 0.0)
    heading: float = 0.0
    speed: float = 0.5
    k_y: float = 0.5
    k_psi: float = 1.0
    k_s: float = 0.5
    phi_max: float = 0.2618

    def __post_init__(self):
        if self.kind not in ("circle", "line"):
            raise ScenarioError(f"unknown trajectory kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "start", tuple(float(c) for c in self.start))

    def reference(self, t: float):
        """``(x, y, psi, speed, curvature)`` of the reference at time ``t``."""
        if self.kind == "circle":
            a = self.omega * t + self.phase
            x = self.center[0] + self.radius * math.cos(a)
            y = self.center[1] + self.radius * math.sin(a)
            sgn = 1.0 if self.omega >= 0 else -1.0
            return x, y, a + sgn * math.pi / 2, abs(self.omega) * self.radius, sgn / self.radius
        x = self.start[0] + self.speed * t * math.cos(self.heading)
        y = self.start[1] + self.speed * t * math.sin(self.heading)
        return x, y, self.heading, self.speed, 0.0

    def initial_pose(self) -> tuple:
        x, y, psi, _, _ = self.reference(0.0)
        return x, y, psi

    def path_error(self, x: float, y: float) -> float:
        """Distance from ``(x, y)`` to the reference path (not to the moving point)."""
        if self.kind == "circle":
            return abs(math.hypot(x - self.center[0], y - self.center[1]) - self.radius)
        dx, dy = x - self.start[0], y - self.start[1]
        return abs(-math.sin(self.heading) * dx + math.cos(self.heading) * dy)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"], d["start"] = list(self.center), list(self.start)
        return d


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def guidance_step(traj: TrajectoryRef, pose, v: float, t: float = 0.0, r: float = 0.3) -> tuple[float, float]:
    """Pure-pursuit style targets ``(v_d, phi_d)`` for a robot at ``pose = (x, y, psi)``.

    The commanded curvature is the reference curvature (corrected for the
    lateral offset) minus cross-track and heading feedback; roll follows
    from ``tan(phi) = r * kappa`` since a shell of radius ``r`` rolling at
    lean ``phi`` traces a circle of radius ``r / tan(phi)``.
    """
    x, y, psi = pose
    xr, yr, psir, vr, kappa = traj.reference(t)
    dx, dy = x - xr, y - yr
    c, s = math.cos(psir), math.sin(psir)
    along = c * dx + s * dy
    cross = -s * dx + c * dy
    e_psi = _wrap(psi - psir)
    v_d = max(0.0, vr - traj.k_s * along)
    kappa_cmd = kappa / (1.0 - kappa * cross) if abs(kappa * cross) < 0.5 else kappa
    kappa_cmd -= traj.k_y * cross + traj.k_psi * math.sin(e_psi)
    phi_d = math.atan(r * kappa_cmd)
    lim = min(traj.phi_max, math.pi / 2 - 1e-6)
    return v_d, min(max(phi_d, -lim), lim)


# ----------------------------------------------------------------- scenario

@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    v_d: Profile = field(default_factory=Profile)
    phi_d: Profile = field(default_factory=Profile)
    trajectory: TrajectoryRef | None = None
    velocity_controller: str = "mpc"
    orientation_controller: str = "mpc"
    phased: bool = True
    mass_perturbation_pct: float = 0.0
    friction: FrictionConfig = field(default_factory=FrictionConfig)
    params: RobotParams = field(default_factory=RobotParams)
    initial_speed: float = 0.0
    beta_model: str = "mlp"
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ScenarioError("duration must be positive")
        for ctl in (self.velocity_controller, self.orientation_controller):
            if ctl not in ("mpc", "pid"):
                raise ScenarioError(f"controller must be 'mpc' or 'pid', got {ctl!r}")
        if self.mass_perturbation_pct <= -100:
            raise ScenarioError("mass perturbation must stay above -100%")
        if self.noise_std < 0:
            raise ScenarioError("noise_std must be nonnegative")

    def plant(self) -> RobotParams:
        return self.params.scaled(1.0 + self.mass_perturbation_pct / 100.0)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "duration": self.duration,
            "v_d": self.v_d.to_dict(),
            "phi_d": self.phi_d.to_dict(),
            "trajectory": None if self.trajectory is None else self.trajectory.to_dict(),
            "controllers": {"velocity": self.velocity_controller, "orientation": self.orientation_controller,
                            "phased": self.phased},
            "plant": {"mass_perturbation_pct": self.mass_perturbation_pct, "friction": asdict(self.friction),
                      "params": asdict(self.params)},
            "initial_speed": self.initial_speed,
            "beta_model": self.beta_model,
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            ctl = d.get("controllers", {})
            plant = d.get("plant", {})
            traj = d.get("trajectory")
            known = {f.name for f in fields(RobotParams)}
            extra = set(plant.get("params", {})) - known
            if extra:
                raise ScenarioError(f"unknown robot parameters {sorted(extra)}")
            return cls(
                name=str(d["name"]),
                duration=float(d["duration"]),
                v_d=Profile.from_dict(d.get("v_d", 0.0)),
                phi_d=Profile.from_dict(d.get("phi_d", 0.0)),
                trajectory=None if traj is None else TrajectoryRef(**traj),
                velocity_controller=ctl.get("velocity", "mpc"),
                orientation_controller=ctl.get("orientation", "mpc"),
                phased=bool(ctl.get("phased", True)),
                mass_perturbation_pct=float(plant.get("mass_perturbation_pct", 0.0)),
                friction=FrictionConfig(**plant.get("friction", {})),
                params=RobotParams(**plant.get("params", {})),
                initial_speed=float(d.get("initial_speed", 0.0)),
                beta_model=str(d.get("beta_model", "mlp")),
                noise_std=float(d.get("noise_std", 0.0)),
            )
        except KeyError as exc:
            raise ScenarioError(f"scenario is missing field {exc}") from None
        except TypeError as exc:
            raise ScenarioError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ------------------------------------------------------------------ presets

def velocity_step_scenario(v: float = 0.5, duration: float = 15.0, controller: str = "mpc",
                           mass_perturbation_pct: float = 10.0,
                           friction: FrictionConfig = FrictionConfig(mu_c=0.02, c_v=2.0)) -> Scenario:
    return Scenario(f"velocity-step-{controller}", duration, v_d=Profile("constant", v),
                    velocity_controller=controller, mass_perturbation_pct=mass_perturbation_pct, friction=friction)


def roll_step_scenario(v: float = 1.0, phi: float = 0.1745, duration: float = 15.0, preamble: float = 5.0,
                       change_to: float | None = None, change_at: float | None = None,
                       controller: str = "mpc", phased: bool = True) -> Scenario:
    """Straight run for ``preamble`` seconds, then a roll step (and optionally a second one)."""
    times, values = [preamble], [phi]
    if change_to is not None:
        times.append(change_at if change_at is not None else preamble + (duration - preamble) / 2)
        values.append(change_to)
    tag = "pwmpc" if controller == "mpc" and phased else ("mpc-fixed" if controller == "mpc" else "pid")
    return Scenario(f"roll-step-{tag}", duration, v_d=Profile("constant", v),
                    phi_d=Profile("steps", times=tuple(times), values=tuple(values)),
                    orientation_controller=controller, phased=phased)


def roll_sine_scenario(v: float = 0.5, duration: float = 45.0, controller: str = "mpc") -> Scenario:
    """Roll ``10 deg * sin(0.15 t - 0.3)`` from t = 2 s at constant speed."""
    amp = math.radians(10.0)
    return Scenario(f"roll-sine-{controller}", duration, v_d=Profile("constant", v),
                    phi_d=Profile("sine", amplitude=amp, omega=0.15, phase=-0.3, start=2.0),
                    orientation_controller=controller, initial_speed=v)


def simultaneous_sine_scenario(duration: float = 63.0, controller: str = "mpc") -> Scenario:
    """Speed ``0.5 sin(0.1 t) + 0.5`` and roll ``0.1745 sin(0.1 t)`` together."""
    return Scenario(f"simultaneous-{controller}", duration,
                    v_d=Profile("sine", amplitude=0.5, omega=0.1, offset=0.5),
                    phi_d=Profile("sine", amplitude=0.1745, omega=0.1),
                    velocity_controller=controller, orientation_controller=controller, initial_speed=0.5)


def circle_scenario(duration: float = 60.0) -> Scenario:
    """4 m circle at 0.125 rad/s starting from (4, 0) heading along +x."""
    return Scenario("circle", duration, trajectory=TrajectoryRef(), initial_speed=0.0)


# ---------------------------------------------------------------- telemetry

@dataclass
class Telemetry:
    t: np.ndarray
    v: np.ndarray
    v_d: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    phi_d: np.ndarray
    tau1: np.ndarray
    tau2: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    phase: list

    def __len__(self):
        return len(self.t)

    def column(self, name):
        return getattr(self, name)


@dataclass
class MetricsConfig:
    rise_fraction: float = 0.9
    band: float = 0.05
    min_step: float = 1e-6


@dataclass
class Metrics:
    t_r: float | None
    sigma: float | None
    t_s: float | None
    e_rmse: float
    rate_range: tuple
    rate_aa: float
    energy_Q: float
    i_aa: tuple

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rate_range"] = list(self.rate_range)
        d["i_aa"] = list(self.i_aa)
        return d


def step_response(t, y, target: float, config: MetricsConfig | None = None):
    """``(t_r, sigma, t_s)`` of a response starting at ``y[0]`` towards ``target``.

    Times are measured from ``t[0]``.  ``t_s`` is ``None`` if the response
    is still outside the band at the last sample; raises ``UndefinedMetric``
    if 90% of the step is never reached.
    """
    cfg = config or MetricsConfig()
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    step = target - y[0]
    if abs(step) <= cfg.min_step:
        raise UndefinedMetric("no step to measure")
    progress = (y - y[0]) / step
    reached = np.nonzero(progress >= cfg.rise_fraction)[0]
    if reached.size == 0:
        raise UndefinedMetric("response never reached the rise threshold")
    t_r = t[reached[0]] - t[0]
    sigma = max(0.0, (progress.max() - 1.0) * 100.0)
    out = np.nonzero(np.abs(y - target) > cfg.band * abs(step))[0]
    if out.size == 0:
        t_s = 0.0
    elif out[-1] == len(y) - 1:
        t_s = None
    else:
        t_s = t[out[-1] + 1] - t[0]
    return float(t_r), float(sigma), None if t_s is None else float(t_s)


def _steps(target, y, cfg):
    idx = [k for k in range(1, len(target)) if target[k] != target[k - 1]]
    if abs(target[0] - y[0]) > cfg.min_step:
        idx.insert(0, 0)
    return idx


def compute_metrics(series: Telemetry, axis: str, profile: Profile | None = None,
                    config: MetricsConfig | None = None, step: int = 0) -> Metrics:
    """Indicators for ``axis`` in ``{"velocity", "roll"}``.

    Step metrics describe step number ``step`` (0-based) of a piecewise
    constant target, over the samples up to the next target change.  For
    continuous profiles they are absent and ``e_rmse`` covers the tracking
    window from the profile start.
    """
    cfg = config or MetricsConfig()
    if len(series) == 0:
        raise ValueError("empty series")
    t = np.asarray(series.t, dtype=float)
    if axis == "velocity":
        y, yd = np.asarray(series.v), np.asarray(series.v_d)
        angle = np.asarray(series.theta)
    elif axis == "roll":
        y, yd = np.asarray(series.phi), np.asarray(series.phi_d)
        angle = np.asarray(series.phi)
    else:
        raise ValueError(f"unknown axis {axis!r}")
    t_r = sigma = t_s = None
    continuous = profile is not None and profile.continuous
    window = slice(None)
    if continuous:
        window = t >= profile.start - 1e-12
    else:
        starts = _steps(yd, y, cfg)
        if step < len(starts):
            k0 = starts[step]
            k1 = starts[step + 1] if step + 1 < len(starts) else len(t)
            seg = slice(k0, k1)
            try:
                t_r, sigma, t_s = step_response(t[seg], y[seg], float(yd[k0]), cfg)
            except UndefinedMetric:
                pass
            window = slice(k0 + int(round(t_s / _dt(t))), k1) if t_s is not None else seg
    err = (y - yd)[window]
    e_rmse = float(np.sqrt(np.mean(err**2))) if err.size else math.nan
    rate = _rate(angle, t)
    a_rate, b_rate = _rate(series.alpha, t), _rate(series.beta, t)
    dt = np.diff(t, append=t[-1] + _dt(t))
    energy = float(np.sum((np.abs(series.tau1 * a_rate) + np.abs(series.tau2 * b_rate)) * dt))
    i_aa = tuple(float(np.mean(np.abs(np.diff(I)) / np.diff(t))) if len(t) > 1 else 0.0
                 for I in (np.asarray(series.I1), np.asarray(series.I2)))
    return Metrics(t_r, sigma, t_s, e_rmse, (float(rate.min()), float(rate.max())),
                   float(np.mean(np.abs(rate))), energy, i_aa)


def _dt(t):
    return float(t[1] - t[0]) if len(t) > 1 else CONTROL_DT


def _rate(x, t):
    x = np.asarray(x, dtype=float)
    return np.gradient(x, t) if len(t) > 1 else np.zeros_like(x)


# ------------------------------------------------------------------- runner

@dataclass
class ScenarioResult:
    scenario: Scenario
    seed: int
    telemetry: Telemetry
    metrics: dict
    flags: list = field(default_factory=list)
    pose: np.ndarray | None = None
    path_error: np.ndarray | None = None

    def metrics_doc(self) -> dict:
        return {"scenario": self.scenario.name, "seed": self.seed,
                **{axis: m.to_dict() for axis, m in self.metrics.items()},
                "failsafe_cycles": len(self.flags)}


@functools.lru_cache(maxsize=8)
def _trained_beta(params: RobotParams):
    return train_beta_model(params, DEFAULT_V_GRID, DEFAULT_PHI_GRID)


def _beta_reference(scenario: Scenario):
    if scenario.beta_model == "mlp":
        return _trained_beta(scenario.params)
    if scenario.beta_model == "exact":
        return functools.partial(steady_roll_pendulum_angle, scenario.params)
    return load_model(scenario.beta_model)


def run_scenario(scenario: Scenario, seed: int = 0) -> ScenarioResult:
    """Closed-loop simulation; controllers only see (optionally noisy) measurements."""
    p = scenario.params
    plant = scenario.plant()
    rng = np.random.default_rng(seed)
    n = int(round(scenario.duration / CONTROL_DT))
    sub = int(round(CONTROL_DT / PLANT_DT))
    if scenario.velocity_controller == "mpc":
        vel = ESOMPCVelocityController(p, VelocityMPCConfig(T_s=CONTROL_DT))
    else:
        vel = speed_pid(CONTROL_DT)
    if scenario.orientation_controller == "mpc":
        roll = PWMPCOrientationController(p, _beta_reference(scenario),
                                          OrientationMPCConfig(T_s=CONTROL_DT, phased=scenario.phased))
    else:
        roll = roll_pid(CONTROL_DT)

    state = GeneralizedState(qdot=[0.0, scenario.initial_speed, 0.0, 0.0])
    traj = scenario.trajectory
    pose = np.array(traj.initial_pose() if traj else (0.0, 0.0, 0.0))
    rows = {c: np.zeros(n) for c in COLUMNS if c != "phase"}
    phases, flags = [], []
    poses = np.zeros((n, 3))
    for k in range(n):
        t = k * CONTROL_DT
        q, qd = state.q.copy(), state.qdot.copy()
        if scenario.noise_std:
            q += rng.normal(0.0, scenario.noise_std, 4)
            qd += rng.normal(0.0, scenario.noise_std, 4)
        v = qd[1]
        if traj is not None:
            v_d, phi_d = guidance_step(traj, pose, v, t, p.r)
        else:
            v_d, phi_d = scenario.v_d(t), scenario.phi_d(t)
        if scenario.velocity_controller == "mpc":
            tau1 = vel.step(v_d, q[0], qd[0], v)
            if vel.last_status != "optimal":
                flags.append((t, "velocity", vel.last_status))
        else:
            tau1 = vel.step(v_d, v, q[0])
        if scenario.orientation_controller == "mpc":
            tau2 = roll.step(phi_d, v, q, qd)
            phase = roll.phase.value
            if roll.last_status != "optimal":
                flags.append((t, "orientation", roll.last_status))
        else:
            tau2 = roll.step(phi_d, q[3], q[2])
            phase = "none"
        tau1 = min(max(tau1, -plant.tau_max), plant.tau_max)
        tau2 = min(max(tau2, -plant.tau_max), plant.tau_max)
        true_q, true_qd = state.q, state.qdot
        for name, val in (("t", t), ("v", true_qd[1]), ("v_d", v_d), ("alpha", true_q[0]),
                          ("beta", true_q[2]), ("theta", true_q[1] / p.r), ("phi", true_q[3]),
                          ("phi_d", phi_d), ("tau1", tau1), ("tau2", tau2),
                          ("I1", tau1 / p.k_t), ("I2", tau2 / p.k_t)):
            rows[name][k] = val
        phases.append(phase)
        poses[k] = pose
        nxt = simulate_hold(plant, scenario.friction, state, (tau1, tau2), PLANT_DT, sub)
        pose = _advance_pose(pose, state, nxt, p.r, CONTROL_DT)
        state = nxt
    tel = Telemetry(phase=phases, **rows)
    metrics = _scenario_metrics(scenario, tel)
    perr = None
    if traj is not None:
        perr = np.array([traj.path_error(x, y) for x, y, _ in poses])
    return ScenarioResult(scenario, seed, tel, metrics, flags, poses, perr)


def _advance_pose(pose, s0, s1, r, dt):
    # trapezoidal rule on x' = v cos psi, y' = v sin psi, psi' = v tan(phi) / r
    def rates(pose_, s):
        v = s.qdot[1]
        return np.array([v * math.cos(pose_[2]), v * math.sin(pose_[2]), v * math.tan(s.q[3]) / r])
    k1 = rates(pose, s0)
    k2 = rates(pose + dt * k1, s1)
    return pose + 0.5 * dt * (k1 + k2)


def _scenario_metrics(scenario: Scenario, tel: Telemetry) -> dict:
    if scenario.trajectory is not None:
        vprof = phiprof = Profile("sine")  # continuous targets from guidance
    else:
        vprof, phiprof = scenario.v_d, scenario.phi_d
    return {"velocity": compute_metrics(tel, "velocity", vprof), "roll": compute_metrics(tel, "roll", phiprof)}


# ------------------------------------------------------------------- export

def _atomic_write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc


def telemetry_csv(tel: Telemetry) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    cols = [tel.column(c) for c in COLUMNS[:-1]]
    for k in range(len(tel)):
        w.writerow([repr(float(c[k])) for c in cols] + [tel.phase[k]])
    return buf.getvalue()


def read_telemetry(path) -> Telemetry:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = list(r)
    data = {c: np.array([float(row[i]) for row in rows]) for i, c in enumerate(COLUMNS[:-1])}
    return Telemetry(phase=[row[-1] for row in rows], **data)


def export_results(result: ScenarioResult, out_dir) -> dict:
    """Write ``telemetry.csv``, ``metrics.json`` and ``scenario.json`` under ``out_dir``."""
    out = Path(out_dir)
    paths = {"telemetry": out / "telemetry.csv", "metrics": out / "metrics.json", "scenario": out / "scenario.json"}
    _atomic_write(paths["telemetry"], telemetry_csv(result.telemetry))
    _atomic_write(paths["metrics"], json.dumps(result.metrics_doc(), indent=2) + "\n")
    echo = {"seed": result.seed, "scenario": result.scenario.to_dict(),
            "plant_dt": PLANT_DT, "control_dt": CONTROL_DT}
    _atomic_write(paths["scenario"], json.dumps(echo, indent=2) + "\n")
    return paths


def run_suite(directory, seed: int = 0, out_dir=None, jobs: int = 1) -> list[dict]:
    """Run every ``*.json`` scenario in ``directory``; returns one table row per scenario and axis."""
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        raise ScenarioError(f"no scenario files in {directory}")
    scenarios = [Scenario.load(f) for f in files]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(run_scenario, scenarios, [seed] * len(scenarios)))
    else:
        results = [run_scenario(s, seed) for s in scenarios]
    rows = []
    for f, res in zip(files, results):
        if out_dir is not None:
            export_results(res, Path(out_dir) / f.stem)
        for axis, m in res.metrics.items():
            rows.append({"scenario": res.scenario.name, "axis": axis, **m.to_dict()})
    if out_dir is not None:
        _atomic_write(Path(out_dir) / "metrics_table.csv", format_table(rows, sep=","))
    return rows


def format_table(rows: list[dict], sep: str = "  ") -> str:
    cols = ["scenario", "axis", "t_r", "sigma", "t_s", "e_rmse", "rate_range", "rate_aa", "energy_Q", "i_aa"]

    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4g}"
        if isinstance(v, (list, tuple)):
            return "[" + " ".join(fmt(x) for x in v) + "]"
        return str(v)

    lines = [sep.join(cols)] + [sep.join(fmt(r[c]) for c in cols) for r in rows]
    return "\n".join(lines) + "\n"
