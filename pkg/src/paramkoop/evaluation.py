"""Multi-step prediction and the relative reconstruction error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dictionaries import selector


def rollout(dictionary, model, x0, u_sequence, resubstitute=True) -> np.ndarray:
    """Predict observables over the parameter sequence: (N, n_y) rows.

    Plain mode propagates the lifted coordinates only; resubstitution mode
    re-lifts the predicted full state after every step (which requires the
    observables to be the identity map on the state).
    """
    u_sequence = np.atleast_2d(np.asarray(u_sequence, dtype=np.float64))
    if u_sequence.size == 0:
        return np.zeros((0, dictionary.n_y))
    out = rollout_ensemble(dictionary, model, np.asarray(x0)[None, :],
                           u_sequence[None, :, :], resubstitute=resubstitute)
    return out[0]


def rollout_ensemble(dictionary, model, x0_rows, u_seqs, resubstitute=True) -> np.ndarray:
    """Batched rollout: (M, d) starts and (M, N, n_u) parameters -> (M, N, n_y)."""
    x0_rows = np.atleast_2d(np.asarray(x0_rows, dtype=np.float64))
    u_seqs = np.asarray(u_seqs, dtype=np.float64)
    m, n_steps = u_seqs.shape[0], u_seqs.shape[1]
    if resubstitute and dictionary.n_y != dictionary.state_dim:
        raise ValueError("resubstitution needs the full state among the observables")

    b = selector(dictionary.n_y, dictionary.n_psi)
    psi = dictionary.lift_rows(x0_rows)
    ys = np.empty((m, n_steps, dictionary.n_y))
    for n in range(n_steps):
        from .training import _step_rows

        psi = _step_rows(model, u_seqs[:, n, :], psi)
        y = psi @ b.T
        if not np.isfinite(y).all():
            raise FloatingPointError(f"non-finite lifted prediction at step {n + 1}")
        ys[:, n, :] = y
        if resubstitute:
            psi = dictionary.lift_rows(y)
    return ys


def relative_error(truth, prediction) -> np.ndarray:
    """Cumulative relative reconstruction error E(t_n) for one trajectory.

    E(t_n) = sqrt(sum_{i<=n} |yhat_i - y_i|^2) / sqrt(sum_{i<=n} |y_i|^2).
    """
    y = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    yh = np.atleast_2d(np.asarray(prediction, dtype=np.float64))
    if y.shape != yh.shape or y.shape[0] < 1:
        raise ValueError("truth and prediction must align with length >= 1")
    num = np.cumsum(((yh - y) ** 2).sum(axis=1))
    den = np.cumsum((y ** 2).sum(axis=1))
    if np.any(den <= 0.0):
        raise ZeroDivisionError("truth is identically zero over a prefix")
    return np.sqrt(num) / np.sqrt(den)


def mean_relative_error(truths, predictions):
    """Trajectory-averaged error curve: (mean E(t_n), sample std) arrays."""
    curves = np.stack([relative_error(y, yh) for y, yh in zip(truths, predictions)])
    std = curves.std(axis=0, ddof=1) if curves.shape[0] > 1 else np.zeros(curves.shape[1])
    return curves.mean(axis=0), std


# -- model comparison suites ----------------------------------------------------


@dataclass
class ModelEntry:
    """One trained model to score."""

    name: str
    dictionary: object
    model: object
    resubstitute: bool = True


@dataclass
class NearestNeighborEntry:
    """Family of per-parameter models; each test trajectory is scored by the
    member whose training parameter is nearest (Euclidean) the test one."""

    name: str
    parameters: np.ndarray  # (k, n_u) training parameter per member
    members: list  # (dictionary, model) pairs
    resubstitute: bool = True


@dataclass
class SuiteRow:
    name: str
    mean_curve: np.ndarray
    std_curve: np.ndarray
    per_trajectory: np.ndarray  # (M, N) error curves

    @property
    def final_error(self) -> float:
        return float(self.mean_curve[-1])


def _truth_observables(entry_dictionary, dataset):
    obs = entry_dictionary.observable
    return np.stack([obs(dataset.states[m, 1:, :])
                     for m in range(dataset.n_trajectories)])


def evaluate_suite(entries, dataset) -> dict:
    """Score every entry on every trajectory of the dataset.

    Returns {name: SuiteRow}; curves share the dataset's step grid.
    """
    results = {}
    x0 = dataset.states[:, 0, :]
    u_seqs = dataset.params
    for entry in entries:
        truths = _truth_observables(entry.dictionary if isinstance(entry, ModelEntry)
                                    else entry.members[0][0], dataset)
        if isinstance(entry, ModelEntry):
            preds = rollout_ensemble(entry.dictionary, entry.model, x0, u_seqs,
                                     resubstitute=entry.resubstitute)
        else:
            preds = np.empty_like(truths)
            test_params = np.stack([dataset.static_parameter_of(m)
                                    for m in range(dataset.n_trajectories)])
            dist = ((test_params[:, None, :] - entry.parameters[None, :, :]) ** 2).sum(axis=2)
            chosen = dist.argmin(axis=1)
            for k in np.unique(chosen):
                idx = np.flatnonzero(chosen == k)
                d_k, m_k = entry.members[k]
                preds[idx] = rollout_ensemble(d_k, m_k, x0[idx], u_seqs[idx],
                                              resubstitute=entry.resubstitute)
        curves = np.stack([relative_error(truths[m], preds[m])
                           for m in range(dataset.n_trajectories)])
        std = curves.std(axis=0, ddof=1) if curves.shape[0] > 1 else \
            np.zeros(curves.shape[1])
        results[entry.name] = SuiteRow(name=entry.name, mean_curve=curves.mean(axis=0),
                                       std_curve=std, per_trajectory=curves)
    return results
