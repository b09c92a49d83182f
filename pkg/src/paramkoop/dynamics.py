"""Ground-truth simulators and trajectory data generation.

Four benchmark systems: a parametric Duffing oscillator, a Van der Pol
Mathieu oscillator with per-step forcing, a forced FitzHugh-Nagumo
reaction-diffusion PDE (Neumann boundaries), and a forced Korteweg-de Vries
PDE (periodic boundaries). All right-hand sides are vectorized over a batch
of states so whole trajectory ensembles integrate in lockstep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


# -- systems -----------------------------------------------------------------


class Duffing:
    """x1' = x2, x2' = -delta*x2 - x1*(beta + alpha*x1^2); u = (delta, alpha, beta)."""

    name = "duffing"
    state_dim = 2
    param_dim = 3
    param_mode = "static"
    default_substeps = 10  # dt = 0.25 is coarse for a single RK4 step

    def rhs(self, x, u):
        x1, x2 = x[..., 0], x[..., 1]
        delta, alpha, beta = u[..., 0], u[..., 1], u[..., 2]
        return np.stack([x2, -delta * x2 - x1 * (beta + alpha * x1 * x1)], axis=-1)

    def sample_x0(self, rng):
        return rng.uniform(-2.0, 2.0, size=2)

    def sample_u(self, rng):
        return np.array([rng.uniform(0.0, 1.0), rng.uniform(0.0, 2.0),
                         rng.uniform(-2.0, 2.0)])

    def advance(self, x, u, dt):
        return _rk4_substeps(self, x, u, dt, self.default_substeps)

    def descriptor(self):
        return {"name": self.name}


class VanDerPolMathieu:
    """Oscillator with parametric and external excitation through a scalar u."""

    name = "vdpm"
    state_dim = 2
    param_dim = 1
    param_mode = "per_step"
    k1 = 2.0
    k2 = 2.0
    k3 = 1.0
    w0 = 1.0

    def __init__(self, mu: float = 1.0):
        if mu < 0:
            raise ValueError("mu must be >= 0")
        self.mu = float(mu)

    def rhs(self, x, u):
        x1, x2 = x[..., 0], x[..., 1]
        uu = u[..., 0]
        acc = (self.k1 - self.k2 * x1 * x1) * x2 \
            - (self.w0**2 + 2.0 * self.mu * uu * uu - self.mu) * x1 + uu * self.k3
        return np.stack([x2, acc], axis=-1)

    def sample_x0(self, rng):
        return rng.uniform(-1.0, 1.0, size=2)

    def sample_u(self, rng):
        return rng.uniform(-1.0, 1.0, size=1)

    def advance(self, x, u, dt):
        return _rk4_substeps(self, x, u, dt, 1)

    def descriptor(self):
        return {"name": self.name, "mu": self.mu}


class FitzHughNagumo:
    """Forced activator-inhibitor PDE on (-10, 10) with zero-flux boundaries.

    State stacks the activator and inhibitor values on the grid: (v, w),
    giving state_dim = 2*n_x. Forcing is a sum of three Gaussian bumps,
    scaled by one shared control or by three independent ones.
    """

    name = "fhn"
    param_mode = "per_step"
    delta = 4.0
    epsilon = 0.03
    a1 = 2.0
    a0 = -0.03
    centers = (-5.0, 0.0, 5.0)

    def __init__(self, n_x: int = 10, control_dim: int = 1):
        if control_dim not in (1, 3):
            raise ValueError("control_dim must be 1 or 3")
        self.n_x = int(n_x)
        self.control_dim = int(control_dim)
        self.state_dim = 2 * self.n_x
        self.param_dim = self.control_dim
        self.grid = np.linspace(-10.0, 10.0, self.n_x)
        self.dx = self.grid[1] - self.grid[0]
        self.profiles = np.stack([np.exp(-((self.grid - c) ** 2) / 2.0)
                                  for c in self.centers])

    def _laplacian(self, z):
        lap = np.empty_like(z)
        lap[..., 1:-1] = z[..., 2:] - 2.0 * z[..., 1:-1] + z[..., :-2]
        lap[..., 0] = 2.0 * (z[..., 1] - z[..., 0])
        lap[..., -1] = 2.0 * (z[..., -2] - z[..., -1])
        return lap / self.dx**2

    def rhs(self, x, u):
        n = self.n_x
        v, w = x[..., :n], x[..., n:]
        if self.control_dim == 1:
            force = u[..., 0:1] * self.profiles.sum(axis=0)
        else:
            force = u @ self.profiles
        dv = self._laplacian(v) + v - v**3 - w + force
        dw = self.delta * self._laplacian(w) + self.epsilon * (v - self.a1 * w - self.a0)
        return np.concatenate([dv, dw], axis=-1)

    def sample_x0(self, rng):
        a = rng.integers(2, 20)  # integer in the open interval (1, 20)
        v0 = np.sin(a * np.pi * self.grid / 10.0 + np.pi / 2.0)
        return np.concatenate([v0, np.zeros(self.n_x)])

    def sample_u(self, rng):
        return rng.uniform(-1.0, 1.0, size=self.control_dim)

    def advance(self, x, u, dt):
        # explicit diffusion needs delta*dt_sub/dx^2 <= 0.25
        limit = 0.25 * self.dx**2 / max(1.0, self.delta)
        substeps = max(1, int(np.ceil(dt / limit)))
        return _rk4_substeps(self, x, u, dt, substeps)

    def descriptor(self):
        return {"name": self.name, "n_x": self.n_x, "control_dim": self.control_dim}


class ForcedKdV:
    """eta_t + eta*eta_x + eta_xxx = w on the periodic domain [-pi, pi).

    Spatial derivatives use second-order central differences with periodic
    wrap. The forcing is three Gaussian bumps (width 25) whose amplitudes
    are sin(pi*u_i) in "sin" mode or u_i in "linear" mode.
    """

    name = "kdv"
    param_mode = "per_step"
    param_dim = 3
    centers = (-np.pi / 2.0, 0.0, np.pi / 2.0)
    forcing_width = 25.0

    def __init__(self, n_x: int = 128, forcing: str = "sin"):
        if forcing not in ("sin", "linear"):
            raise ValueError("forcing must be 'sin' or 'linear'")
        self.n_x = int(n_x)
        self.forcing = forcing
        self.state_dim = self.n_x
        self.dx = 2.0 * np.pi / self.n_x
        self.grid = -np.pi + self.dx * np.arange(self.n_x)
        self.profiles = np.stack([
            np.exp(-self.forcing_width * (self.grid - c) ** 2) for c in self.centers
        ])
        self.rk23_tol = 1e-8

    def forcing_field(self, u):
        """Spatial forcing w(x) for controls u, batched on the leading axis."""
        amp = np.sin(np.pi * np.asarray(u)) if self.forcing == "sin" else np.asarray(u)
        return amp @ self.profiles

    def rhs(self, x, u):
        eta = x
        eta_x = (np.roll(eta, -1, axis=-1) - np.roll(eta, 1, axis=-1)) / (2.0 * self.dx)
        eta_xxx = (
            -np.roll(eta, 2, axis=-1) + 2.0 * np.roll(eta, 1, axis=-1)
            - 2.0 * np.roll(eta, -1, axis=-1) + np.roll(eta, -2, axis=-1)
        ) / (2.0 * self.dx**3)
        return -eta * eta_x - eta_xxx + self.forcing_field(u)

    def sample_x0(self, rng):
        b = rng.uniform(0.0, 1.0, size=3)
        b /= b.sum()
        x = self.grid
        return (b[0] * np.exp(-((x - np.pi / 2) ** 2))
                + b[1] * (-np.sin(x / 2.0) ** 2)
                + b[2] * np.exp(-((x + np.pi / 2) ** 2)))

    def sample_u(self, rng):
        return rng.uniform(-1.0, 1.0, size=3)

    def advance(self, x, u, dt):
        return rk23_step(self, x, u, dt, self.rk23_tol)

    def descriptor(self):
        return {"name": self.name, "n_x": self.n_x, "forcing": self.forcing}


_SYSTEMS = {
    "duffing": Duffing,
    "vdpm": VanDerPolMathieu,
    "fhn": FitzHughNagumo,
    "kdv": ForcedKdV,
}


def system_from_descriptor(desc: dict):
    """Rebuild a system object from its serialized descriptor."""
    kwargs = {k: v for k, v in desc.items() if k != "name"}
    try:
        cls = _SYSTEMS[desc["name"]]
    except KeyError:
        raise ValueError(f"unknown system {desc.get('name')!r}") from None
    return cls(**kwargs)


# -- quadrature --------------------------------------------------------------


def mass(eta) -> float:
    """Rectangle-rule integral of eta over the periodic domain."""
    eta = np.asarray(eta)
    dx = 2.0 * np.pi / eta.shape[-1]
    return dx * eta.sum(axis=-1)


def momentum(eta) -> float:
    """Rectangle-rule integral of eta^2 over the periodic domain."""
    eta = np.asarray(eta)
    dx = 2.0 * np.pi / eta.shape[-1]
    return dx * (eta * eta).sum(axis=-1)


# -- integrators -------------------------------------------------------------


def rhs(system, x, u):
    """Evaluate a system right-hand side; x may be (d,) or batched (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.ndim == 1:
        return system.rhs(x[None, :], u[None, :])[0]
    return system.rhs(x, u)


def rk4_step(system, x, u, dt):
    """One classical 4-stage Runge-Kutta step with u held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x, u = x[None, :], u[None, :]
    k1 = system.rhs(x, u)
    k2 = system.rhs(x + 0.5 * dt * k1, u)
    k3 = system.rhs(x + 0.5 * dt * k2, u)
    k4 = system.rhs(x + dt * k3, u)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite state after RK4 step")
    return out[0] if single else out


def _rk4_substeps(system, x, u, dt, substeps):
    h = dt / substeps
    for _ in range(substeps):
        x = rk4_step(system, x, u, h)
    return x


def rk23_step(system, x, u, dt_macro, tol):
    """Advance by dt_macro with adaptive Bogacki-Shampine (2,3) substeps.

    The embedded second/third-order error estimate is kept below ``tol``
    on every substep; substeps exactly tile the macro interval. Batched
    states integrate with fully independent per-row step sizes, so each
    row advances bit-identically to a solo call.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.array(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x, u = x[None, :], u[None, :]

    n = x.shape[0]
    t = np.zeros(n)
    h = np.full(n, float(dt_macro))
    h_min = dt_macro * 1e-12
    k1 = system.rhs(x, u)
    third = 1.0 / 3.0
    while True:
        active = (dt_macro - t) > 1e-14 * dt_macro
        if not active.any():
            break
        h = np.where(active, np.minimum(h, dt_macro - t), h)
        if np.any(h[active] < h_min):
            raise FloatingPointError("RK23 substep underflow")
        hh = h[:, None]
        with np.errstate(over="ignore", invalid="ignore"):
            k2 = system.rhs(x + 0.5 * hh * k1, u)
            k3 = system.rhs(x + 0.75 * hh * k2, u)
            x3 = x + hh * (2.0 * k1 + 3.0 * k2 + 4.0 * k3) / 9.0
            k4 = system.rhs(x3, u)
            err_vec = hh * (-5.0 * k1 / 72.0 + k2 / 12.0 + k3 / 9.0 - k4 / 8.0)
            err = np.max(np.abs(err_vec), axis=-1)
        finite = np.isfinite(err)
        accept = active & finite & (err <= tol)
        x[accept] = x3[accept]
        t[accept] += h[accept]
        k1[accept] = k4[accept]  # first-same-as-last
        with np.errstate(divide="ignore", over="ignore"):
            factor = np.where(err > 0.0,
                              0.9 * (tol / np.maximum(err, 1e-300)) ** third, 5.0)
        factor = np.where(finite, np.clip(factor, 0.2, 5.0), 0.25)
        h = np.where(active, h * factor, h)
    if not np.isfinite(x).all():
        raise FloatingPointError("non-finite state after RK23 step")
    return x[0] if single else x


# -- datasets ----------------------------------------------------------------


@dataclass(frozen=True)
class SamplingSpec:
    """How many trajectories to draw, how long, and from which seed.

    ``param_configs`` groups trajectories of static-parameter systems:
    consecutive blocks of ``n_trajectories // param_configs`` trajectories
    share one parameter draw. Per-step systems ignore it.
    """

    n_trajectories: int
    n_steps: int
    dt: float
    seed: int = 0
    param_configs: int | None = None

    def __post_init__(self):
        if self.n_trajectories < 1 or self.n_steps < 1:
            raise ValueError("need at least one trajectory and one step")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.param_configs is not None:
            if self.n_trajectories % self.param_configs != 0:
                raise ValueError("param_configs must divide n_trajectories")


@dataclass(frozen=True)
class TrajectoryDataset:
    """States (M, N+1, d) and per-step parameters (M, N, m) for M trajectories."""

    states: np.ndarray
    params: np.ndarray
    dt: float
    system: dict
    seed: int = 0
    trajectories_per_config: int = 1

    def __post_init__(self):
        if self.states.shape[0] != self.params.shape[0]:
            raise ValueError("trajectory counts differ between states and params")
        if self.states.shape[1] != self.params.shape[1] + 1:
            raise ValueError("need exactly one more state than parameter per trajectory")
        if not (np.isfinite(self.states).all() and np.isfinite(self.params).all()):
            raise ValueError("dataset contains non-finite values")

    @property
    def n_trajectories(self):
        return self.states.shape[0]

    @property
    def n_steps(self):
        return self.params.shape[1]

    @property
    def state_dim(self):
        return self.states.shape[2]

    @property
    def param_dim(self):
        return self.params.shape[2]

    def transitions(self):
        """Flattened (x_n, u_n, x_{n+1}) triples as (X, U, X_next) row matrices."""
        x = self.states[:, :-1, :].reshape(-1, self.state_dim)
        x_next = self.states[:, 1:, :].reshape(-1, self.state_dim)
        u = self.params.reshape(-1, self.param_dim)
        return x, u, x_next

    def subset(self, traj_indices) -> "TrajectoryDataset":
        idx = np.asarray(traj_indices)
        return TrajectoryDataset(
            states=self.states[idx], params=self.params[idx], dt=self.dt,
            system=self.system, seed=self.seed,
            trajectories_per_config=self.trajectories_per_config,
        )

    def static_parameter_of(self, m: int) -> np.ndarray:
        """Per-trajectory parameter (constant along static trajectories)."""
        return self.params[m, 0, :]


def _trajectory_rng(seed, m):
    return np.random.default_rng([int(seed), 0, int(m)])


def _config_rng(seed, c):
    return np.random.default_rng([int(seed), 1, int(c)])


def generate(system, spec: SamplingSpec) -> TrajectoryDataset:
    """Simulate a seeded trajectory ensemble under the system's sampling law.

    Every trajectory draws from its own RNG stream derived from
    (seed, trajectory index), so the result does not depend on batching.
    """
    m_total, n_steps = spec.n_trajectories, spec.n_steps
    d, p = system.state_dim, system.param_dim

    states = np.empty((m_total, n_steps + 1, d))
    params = np.empty((m_total, n_steps, p))

    static = system.param_mode == "static"
    per_config = 1
    if static:
        n_configs = spec.param_configs or m_total
        per_config = m_total // n_configs
        configs = np.stack([system.sample_u(_config_rng(spec.seed, c))
                            for c in range(n_configs)])

    for m in range(m_total):
        rng = _trajectory_rng(spec.seed, m)
        states[m, 0] = system.sample_x0(rng)
        if static:
            params[m, :, :] = configs[m // per_config]
        else:
            for n in range(n_steps):
                params[m, n] = system.sample_u(rng)

    for n in range(n_steps):
        states[:, n + 1, :] = system.advance(states[:, n, :], params[:, n, :], spec.dt)

    return TrajectoryDataset(
        states=states, params=params, dt=spec.dt,
        system=system.descriptor(), seed=spec.seed,
        trajectories_per_config=per_config,
    )
