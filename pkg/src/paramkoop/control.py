"""Data-driven optimal control on the learned lifted dynamics.

Receding-horizon tracking with box constraints and warm starts, closed-loop
simulation against the true plant, finite-horizon costs with gradients
propagated through the chain of lifted steps, and the sampled-generator
controllability diagnostic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .dictionaries import selector
from .dynamics import ForcedKdV, mass as kdv_mass
from .operators import generator
from .optim import BoxBounds, minimize_box


@dataclass
class TrackingProblem:
    """Track reference values of selected observables over n_total steps.

    ``target_rows`` indexes into the observable vector g (the lift rows
    shift by one for the constant). The plant is the true simulator used
    for the closed loop.
    """

    reference: np.ndarray  # (n_total + 1,) or (n_total + 1, n_targets)
    lam: float
    horizon: int
    target_rows: tuple
    box: BoxBounds
    plant: object
    x0: np.ndarray
    dt: float

    def __post_init__(self):
        self.reference = np.atleast_2d(np.asarray(self.reference, dtype=np.float64).T).T \
            if np.asarray(self.reference).ndim == 1 else np.asarray(self.reference, dtype=np.float64)
        if self.horizon < 1 or self.horizon > self.n_total:
            raise ValueError("horizon must satisfy 1 <= tau <= n_total")
        if not np.isfinite(self.reference).all():
            raise ValueError("reference contains non-finite values")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    @property
    def n_total(self) -> int:
        return self.reference.shape[0] - 1


@dataclass
class BolzaProblem:
    """Finite-horizon cost: terminal phi(y_N) plus running sum of L_n(y_n, u_{n-1}).

    ``terminal`` and ``running`` build tape nodes from tape nodes, so the
    whole cost stays differentiable w.r.t. the control sequence.
    """

    horizon: int
    x0: np.ndarray
    box: BoxBounds
    terminal: object = None  # callable(y_tensor) -> scalar Tensor
    running: object = None   # callable(n, y_tensor, u_tensor) -> scalar Tensor


def _window_rows(dictionary, target_rows):
    b = selector(dictionary.n_y, dictionary.n_psi)
    return b[list(target_rows), :]


def lifted_bolza_cost(dictionary, model, u_sequence, problem: BolzaProblem):
    """Cost of a control sequence on the lifted chain, with its gradient.

    Returns (cost, gradient) where the gradient is w.r.t. the flattened
    control sequence, accumulated in reverse through the chain of lifted
    steps.
    """
    u_sequence = np.asarray(u_sequence, dtype=np.float64)
    n_steps, n_u = u_sequence.shape
    if n_steps != problem.horizon:
        raise ValueError("control sequence length must equal the horizon")

    from .autodiff import matvec

    b_full = selector(dictionary.n_y, dictionary.n_psi)
    psi0 = dictionary.lift_rows(np.asarray(problem.x0)[None, :])[0]

    z = Tensor(u_sequence.reshape(-1))
    psi = Tensor(psi0)
    cost = Tensor(np.float64(0.0))
    y = None
    for n in range(n_steps):
        u_n = z[n * n_u:(n + 1) * n_u]
        psi = model.step_single_tape(u_n, psi)
        if not np.isfinite(psi.value).all():
            raise FloatingPointError(f"non-finite lifted state at step {n + 1}")
        y = matvec(Tensor(b_full), psi)
        if problem.running is not None:
            cost = cost + problem.running(n + 1, y, u_n)
    if problem.terminal is not None:
        cost = cost + problem.terminal(y)
    cost.backward()
    grad = z.grad if z.grad is not None else np.zeros_like(u_sequence.reshape(-1))
    return float(cost.value), np.asarray(grad, dtype=np.float64)


@dataclass
class MpcStepResult:
    u_first: np.ndarray
    window: np.ndarray
    cost: float
    iterations: int
    converged: bool


def _window_cost_grad(dictionary, model, x_now, ref_window, lam, rows):
    """Factory for the window objective/gradient used by one MPC solve."""
    from .autodiff import matvec

    psi0 = dictionary.lift_rows(np.asarray(x_now)[None, :])[0]
    tau = ref_window.shape[0]
    batched = hasattr(model, "matrices_tape")

    def cost_and_grad(z_flat):
        n_u = z_flat.size // tau
        z = Tensor(z_flat)
        psi = Tensor(psi0)
        cost = Tensor(np.float64(0.0))
        k_stack = model.matrices_tape(z.reshape(tau, n_u)) if batched else None
        for i in range(tau):
            if batched:
                psi = matvec(k_stack[i], psi)
            else:
                psi = model.step_single_tape(z[i * n_u:(i + 1) * n_u], psi)
            m_i = matvec(Tensor(rows), psi)
            cost = cost + (m_i - Tensor(ref_window[i])).sum_sq()
        if lam > 0:
            cost = cost + lam * z.sum_sq()
        cost.backward()
        g = z.grad if z.grad is not None else np.zeros_like(z_flat)
        return float(cost.value), np.asarray(g, dtype=np.float64)

    return cost_and_grad


def mpc_step(dictionary, model, x_now, reference_window, lam, tau, box: BoxBounds,
             warm_start=None, max_iter=200, tol=1e-9,
             target_rows=None) -> MpcStepResult:
    """Solve one receding-horizon window and return its first control.

    The prediction inside the window is the plain chain of lifted steps
    (no state resubstitution). ``warm_start`` is the previous window
    shifted by one with its last row repeated; cold starts use zeros.
    ``target_rows`` selects which observables the reference columns track
    (the leading ones by default).
    """
    reference_window = np.atleast_2d(np.asarray(reference_window, dtype=np.float64).T).T \
        if np.asarray(reference_window).ndim == 1 else np.asarray(reference_window)
    if reference_window.shape[0] != tau:
        raise ValueError("reference window must provide tau rows")
    n_u = box.lower.size
    window_box = BoxBounds(np.tile(box.lower, tau), np.tile(box.upper, tau))

    if warm_start is None:
        z0 = np.zeros(tau * n_u)
    else:
        w = np.asarray(warm_start, dtype=np.float64).reshape(tau, n_u)
        z0 = np.vstack([w[1:], w[-1:]]).reshape(-1)

    rows = _window_rows(dictionary, target_rows if target_rows is not None
                        else range(reference_window.shape[1]))
    cg = _window_cost_grad(dictionary, model, x_now, reference_window, lam, rows)
    result = minimize_box(lambda v: cg(v)[0], lambda v: cg(v)[1], z0, window_box,
                          max_iter=max_iter, tol=tol)
    window = result.x.reshape(tau, n_u)
    return MpcStepResult(u_first=window[0].copy(), window=window, cost=result.f,
                         iterations=result.iterations, converged=result.converged)


@dataclass
class ControlResult:
    controls: np.ndarray        # (n_total, n_u) applied controls
    plant_states: np.ndarray    # (n_total + 1, d) true plant trajectory
    tracked: np.ndarray         # (n_total + 1, n_targets) true observable values
    reference: np.ndarray
    dt: float
    step_seconds: list = field(default_factory=list)
    step_iterations: list = field(default_factory=list)
    completed: bool = True


def closed_loop(problem: TrackingProblem, dictionary, model, max_iter=200,
                tol=1e-9) -> ControlResult:
    """Receding-horizon control of the true plant.

    Each step solves the window problem on the learned lifted model, applies
    the first control to the plant simulator, and warm-starts the next
    window from the shifted solution.
    """
    n_total, tau, n_u = problem.n_total, problem.horizon, problem.plant.param_dim
    rows = _window_rows(dictionary, problem.target_rows)
    obs = dictionary.observable
    box = BoxBounds(np.tile(problem.box.lower, tau), np.tile(problem.box.upper, tau))

    x = np.asarray(problem.x0, dtype=np.float64).copy()
    states = np.empty((n_total + 1, x.size))
    states[0] = x
    tracked = np.empty((n_total + 1, len(problem.target_rows)))
    tracked[0] = obs(x[None, :])[0, list(problem.target_rows)]
    controls = np.empty((n_total, n_u))
    result = ControlResult(controls=controls, plant_states=states, tracked=tracked,
                           reference=problem.reference, dt=problem.dt)

    warm = None
    for n in range(n_total):
        window_refs = _padded_window(problem.reference, n + 1, tau)
        tic = time.perf_counter()
        cg = _window_cost_grad(dictionary, model, x, window_refs, problem.lam, rows)
        z0 = np.zeros(tau * n_u) if warm is None else \
            np.vstack([warm[1:], warm[-1:]]).reshape(-1)
        sol = minimize_box(lambda v: cg(v)[0], lambda v: cg(v)[1], z0, box,
                           max_iter=max_iter, tol=tol)
        result.step_seconds.append(time.perf_counter() - tic)
        result.step_iterations.append(sol.iterations)
        warm = sol.x.reshape(tau, n_u)
        u_n = warm[0]
        controls[n] = u_n
        try:
            x = problem.plant.advance(x, u_n, problem.dt)
        except FloatingPointError:
            result.completed = False
            result.controls = controls[:n + 1]
            result.plant_states = states[:n + 2]
            result.tracked = tracked[:n + 2]
            return result
        states[n + 1] = x
        tracked[n + 1] = obs(x[None, :])[0, list(problem.target_rows)]
    return result


def _padded_window(reference, start, tau):
    """References r_{start}..r_{start+tau-1}, repeating the last row at the end."""
    end = min(start + tau, reference.shape[0])
    window = reference[start:end]
    if window.shape[0] < tau:
        pad = np.repeat(reference[-1:], tau - window.shape[0], axis=0)
        window = np.vstack([window, pad])
    return window


# -- controllability --------------------------------------------------------------


@dataclass
class ControllabilityReport:
    n_samples: int
    c_matrix: np.ndarray
    singular_values: np.ndarray
    rank: int
    required_rank: int
    threshold: float

    @property
    def controllable(self) -> bool:
        return self.rank >= self.required_rank


def controllability(model, dt, box: BoxBounds, n_samples: int, seed: int = 0,
                    svd_threshold: float = 1e-6) -> ControllabilityReport:
    """Sampled-generator rank test on the lifted dynamics.

    Columns are flattened projected generators (K(u_i) - I)/dt at parameters
    drawn uniformly from the box. Numerical rank counts singular values above
    svd_threshold times the largest. A fixed first row of K zeroes d entries
    of every column, so the required rank drops from d^2 to d(d-1).
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    d = model.n_psi
    cols = np.empty((d * d, n_samples))
    for i in range(n_samples):
        u = rng.uniform(box.lower, box.upper)
        cols[:, i] = generator(model, u, dt).matrix.reshape(-1)
    sigma = np.linalg.svd(cols, compute_uv=False)
    rank = int(np.sum(sigma > svd_threshold * sigma[0])) if sigma[0] > 0 else 0
    required = d * (d - 1) if getattr(model, "fixed_first_row", False) else d * d
    return ControllabilityReport(n_samples=n_samples, c_matrix=cols,
                                 singular_values=sigma, rank=rank,
                                 required_rank=required, threshold=svd_threshold)


# -- analytic oracle for the integral-tracking problem ------------------------------


def kdv_analytic_mass_control(problem: TrackingProblem) -> np.ndarray:
    """Reference control schedule for mass tracking with no regularization.

    Because the spatial integral of the state evolves at a rate set by the
    forcing alone, the fastest admissible ramp uses the amplitude-maximizing
    control on every component (1/2 under the sine forcing, 1 under linear),
    and zero forcing holds the integral constant. Window lengths follow from
    the required jumps divided by the maximal ramp rate.
    """
    plant = problem.plant
    if not isinstance(plant, ForcedKdV):
        raise ValueError("the analytic schedule applies to the forced KdV plant")
    if problem.lam != 0.0:
        raise ValueError("the analytic schedule needs lam = 0")
    if tuple(problem.target_rows) != (0,):
        raise ValueError("the analytic schedule tracks the integral observable only")

    ref = problem.reference[:, 0]
    levels, switches = _piecewise_levels(ref)
    if len(levels) not in (1, 2):
        raise ValueError("reference must be piecewise constant with at most one jump")

    u_star = 0.5 if plant.forcing == "sin" else 1.0
    rate = kdv_mass(plant.forcing_field(np.full(3, u_star)))
    m0 = kdv_mass(problem.x0)

    controls = np.zeros((problem.n_total, 3))
    prev_level = m0
    for level, switch in zip(levels, [0] + switches):
        ramp_len = int(np.round((level - prev_level) / (rate * problem.dt)))
        if ramp_len < 0:
            raise ValueError("reference decreases; the schedule only adds mass")
        controls[switch:switch + ramp_len, :] = u_star
        prev_level = level
    return controls


def _piecewise_levels(ref):
    """Distinct consecutive levels of a piecewise-constant reference and the
    steps at which new levels begin."""
    levels = [float(ref[0])]
    switches = []
    for n in range(1, len(ref)):
        if ref[n] != ref[n - 1]:
            levels.append(float(ref[n]))
            switches.append(n - 1)
    return levels, switches
