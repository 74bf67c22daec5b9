"""Ground-truth trajectory generators: Lorenz96 and 1-D viscous Burgers."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IntegrationError
from .nn import Tensor

DIVERGENCE_LIMIT = 1e6
# explicit diffusion stability constant in dt <= c * dx^2 / nu
DIFFUSION_CFL = 0.5


@dataclass(frozen=True)
class Lorenz96Config:
    dim: int = 16
    forcing: float = 8.0
    dt: float = 0.05
    steps: int = 4000
    burn_in: int = 500
    init_seed: int = 0
    init_scale: float = 0.01

    def __post_init__(self):
        if self.dim < 4:
            raise ConfigurationError("Lorenz96 needs dim >= 4 for the cyclic coupling")
        if self.dt <= 0 or self.steps < 1 or self.burn_in < 0 or self.init_scale < 0:
            raise ConfigurationError("Lorenz96 dt/steps/burn_in/init_scale out of range")
        if self.dt * abs(self.forcing) >= 1.0:
            warnings.warn("dt * forcing >= 1: integration may be unstable", RuntimeWarning, stacklevel=2)


@dataclass(frozen=True)
class BurgersConfig:
    """Periodic viscous Burgers on [0, 1).

    ``dt`` is the spacing of recorded states; each recorded step is made of
    ``substeps`` explicit Euler sub-steps. Regime start steps are in recorded
    steps.
    """

    grid_points: int = 64
    dt: float = 5e-3
    steps: int = 100
    regime_schedule: tuple = ((0, 0.05),)
    init_seed: int = 0
    init_kind: str = "random_fourier"
    substeps: int = 5
    init_modes: int = 4
    init_amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "regime_schedule", tuple((int(s), float(v)) for s, v in self.regime_schedule))
        if self.grid_points < 8:
            raise ConfigurationError("Burgers needs at least 8 grid points")
        if self.dt <= 0 or self.steps < 1 or self.substeps < 1:
            raise ConfigurationError("Burgers dt/steps/substeps out of range")
        if self.init_kind not in ("random_fourier", "single_sine"):
            raise ConfigurationError(f"unknown init_kind {self.init_kind!r}")
        sched = self.regime_schedule
        if not sched or sched[0][0] != 0:
            raise ConfigurationError("regime_schedule must start at step 0")
        starts = [s for s, _ in sched]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigurationError("regime_schedule start steps must be strictly increasing")
        if any(v <= 0 for _, v in sched):
            raise ConfigurationError("viscosities must be positive")
        check_diffusion_cfl(self.inner_dt, self.dx, max(v for _, v in sched))

    @property
    def dx(self):
        return 1.0 / self.grid_points

    @property
    def inner_dt(self):
        return self.dt / self.substeps


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    times: np.ndarray
    regime_labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        states = np.array(self.states, dtype=np.float64)
        times = np.array(self.times, dtype=np.float64)
        if states.ndim != 2 or len(states) != len(times):
            raise ConfigurationError("states must be (T, d) with one time per state")
        if not np.all(np.isfinite(states)):
            raise IntegrationError("trajectory contains non-finite states")
        states.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)
        if self.regime_labels is not None:
            labels = np.array(self.regime_labels, dtype=np.int64)
            if len(labels) != len(states):
                raise ConfigurationError("regime_labels length must match states")
            labels.setflags(write=False)
            object.__setattr__(self, "regime_labels", labels)

    def __len__(self):
        return len(self.states)

    @property
    def dim(self):
        return self.states.shape[1]

    def segment(self, start, stop):
        labels = None if self.regime_labels is None else self.regime_labels[start:stop]
        return Trajectory(self.states[start:stop], self.times[start:stop], labels, dict(self.meta))


# ---------------------------------------------------------------------------
# Lorenz96


def lorenz96_rhs(state, forcing):
    """dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F with cyclic indices."""
    x = np.asarray(state, dtype=np.float64)
    if x.shape[-1] < 4:
        raise ConfigurationError("Lorenz96 needs dim >= 4")
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1) - x + forcing


def lorenz96_advection(state):
    x = np.asarray(state, dtype=np.float64)
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1)


def rk4_step(rhs, state, dt, step=None):
    """Classical fourth-order Runge-Kutta step of ``dx/dt = rhs(x)``.

    Works on plain arrays and on autodiff tensors alike.
    """
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    x = state if isinstance(state, Tensor) else np.asarray(state, dtype=np.float64)
    k1 = rhs(x)
    k2 = rhs(x + (0.5 * dt) * k1)
    k3 = rhs(x + (0.5 * dt) * k2)
    k4 = rhs(x + dt * k3)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(getattr(k, "data", k))):
            raise IntegrationError("non-finite RK4 stage", step=step)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_lorenz96(config: Lorenz96Config) -> Trajectory:
    rng = np.random.default_rng(config.init_seed)
    x = np.full(config.dim, float(config.forcing)) + config.init_scale * rng.standard_normal(config.dim)

    def rhs(s):
        return lorenz96_rhs(s, config.forcing)

    total = config.burn_in + config.steps
    out = np.empty((config.steps + 1, config.dim))
    for n in range(total + 1):
        if n >= config.burn_in:
            out[n - config.burn_in] = x
        if n == total:
            break
        x = rk4_step(rhs, x, config.dt, step=n)
        if np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise IntegrationError("Lorenz96 state diverged", step=n + 1)
    times = config.dt * np.arange(config.steps + 1)
    return Trajectory(out, times, meta={"system": "lorenz96", "forcing": config.forcing, "dt": config.dt})


# ---------------------------------------------------------------------------
# Burgers


def check_diffusion_cfl(dt, dx, viscosity):
    limit = DIFFUSION_CFL * dx * dx / viscosity
    if dt > limit * (1 + 1e-12):
        raise ConfigurationError(f"diffusion CFL violated: dt={dt:g} > {limit:g} (nu={viscosity:g}, dx={dx:g})")


def burgers_step(field, viscosity, dt, dx):
    """One explicit Euler step of u_t + (u^2/2)_x = nu u_xx on a periodic grid.

    Advection uses the local Lax-Friedrichs (Rusanov) flux
    F_{j+1/2} = (u_j^2 + u_{j+1}^2)/4 - a/2 (u_{j+1} - u_j), a = max(|u_j|, |u_{j+1}|);
    diffusion is the 3-point central difference.
    """
    u = np.asarray(field, dtype=np.float64)
    if u.ndim != 1 or u.size < 8:
        raise ConfigurationError("Burgers field must be 1-D with at least 8 points")
    check_diffusion_cfl(dt, dx, viscosity)
    umax = float(np.max(np.abs(u))) if u.size else 0.0
    if dt * umax > dx:
        raise ConfigurationError(f"advective CFL violated: dt*max|u|/dx = {dt * umax / dx:.3g} > 1")
    up = np.roll(u, -1)
    a = np.maximum(np.abs(u), np.abs(up))
    flux = 0.25 * (u * u + up * up) - 0.5 * a * (up - u)
    lap = up - 2.0 * u + np.roll(u, 1)
    out = u - (dt / dx) * (flux - np.roll(flux, 1)) + (viscosity * dt / (dx * dx)) * lap
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite Burgers state")
    return out


def burgers_initial(config: BurgersConfig):
    x = np.arange(config.grid_points) / config.grid_points
    if config.init_kind == "single_sine":
        return config.init_amplitude * np.sin(2 * np.pi * x)
    rng = np.random.default_rng(config.init_seed)
    u = np.zeros(config.grid_points)
    for k in range(1, config.init_modes + 1):
        a, b = rng.standard_normal(2) / k
        u += a * np.sin(2 * np.pi * k * x) + b * np.cos(2 * np.pi * k * x)
    return config.init_amplitude * u / max(np.max(np.abs(u)), 1e-12)


def regime_at(schedule, step):
    idx = 0
    for i, (start, _) in enumerate(schedule):
        if step >= start:
            idx = i
    return idx


def simulate_burgers(config: BurgersConfig) -> Trajectory:
    u = burgers_initial(config)
    sched = config.regime_schedule
    out = np.empty((config.steps + 1, config.grid_points))
    labels = np.empty(config.steps + 1, dtype=np.int64)
    out[0] = u
    labels[0] = 0
    for n in range(config.steps):
        r = regime_at(sched, n)
        nu = sched[r][1]
        for sub in range(config.substeps):
            try:
                u = burgers_step(u, nu, config.inner_dt, config.dx)
            except IntegrationError as exc:
                raise IntegrationError(str(exc), step=n) from None
        out[n + 1] = u
        labels[n + 1] = regime_at(sched, n + 1)
    times = config.dt * np.arange(config.steps + 1)
    meta = {"system": "burgers", "dx": config.dx, "dt": config.dt, "viscosities": [v for _, v in sched]}
    return Trajectory(out, times, labels, meta)


def strong_switch_schedule(steps, viscosity=0.05, factor=5.0):
    """Default strong switch: viscosity drops by ``factor`` at the midpoint."""
    return ((0, viscosity), (steps // 2, viscosity / factor))
