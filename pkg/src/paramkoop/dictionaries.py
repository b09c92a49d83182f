"""Observable dictionaries spanning the (approximately) invariant subspace.

Every dictionary has the fixed prefix (1, g(x)) followed by a tail: a
trainable network for learned dictionaries, or Gaussian radial basis
functions for the fixed baselines. The first observables are recovered
from the lift exactly by the constant selector matrix.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat
from .networks import NetworkSpec, forward_batch, forward_tape, init_params
from . import dynamics


# -- observable maps g --------------------------------------------------------


class IdentityObservable:
    """g(x) = x."""

    kind = "identity"

    def __init__(self, state_dim: int):
        self.state_dim = int(state_dim)
        self.n_y = self.state_dim

    def __call__(self, x_rows: np.ndarray) -> np.ndarray:
        return np.asarray(x_rows, dtype=np.float64)

    def descriptor(self):
        return {"kind": self.kind, "state_dim": self.state_dim}


class KdvIntegralsObservable:
    """g(eta) = (integral of eta, integral of eta^2) on the periodic grid."""

    kind = "kdv_integrals"

    def __init__(self, state_dim: int):
        self.state_dim = int(state_dim)
        self.n_y = 2

    def __call__(self, x_rows: np.ndarray) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        return np.stack([dynamics.mass(x_rows), dynamics.momentum(x_rows)], axis=-1)

    def descriptor(self):
        return {"kind": self.kind, "state_dim": self.state_dim}


def observable_from_descriptor(desc: dict):
    kinds = {"identity": IdentityObservable, "kdv_integrals": KdvIntegralsObservable}
    try:
        cls = kinds[desc["kind"]]
    except KeyError:
        raise ValueError(f"unknown observable kind {desc.get('kind')!r}") from None
    return cls(desc["state_dim"])


# -- dictionaries -------------------------------------------------------------


class TrainableDictionary:
    """Psi(x) = (1, g(x), NN(s(x))) with a trainable network tail.

    The prefix carries no trainable parameters, so gradients w.r.t. the
    dictionary parameters vanish identically on components 0..n_y. The
    optional affine pre-scaler s(x) = (x - shift) * scale feeds the network
    only (the prefix g sees raw states) and is stored in checkpoints.
    """

    def __init__(self, observable, net_spec: NetworkSpec, params: np.ndarray | None = None,
                 seed: int = 0, shift=None, scale=None):
        if net_spec.input_dim != observable.state_dim:
            raise ValueError("network input width must match the state dimension")
        self.observable = observable
        self.net_spec = net_spec
        self.params = init_params(net_spec, seed) if params is None else \
            np.asarray(params, dtype=np.float64)
        if self.params.shape != (net_spec.param_count,):
            raise ValueError("parameter vector does not match the network spec")
        d = observable.state_dim
        self.shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=np.float64)
        self.scale = np.ones(d) if scale is None else np.asarray(scale, dtype=np.float64)
        if self.shift.shape != (d,) or self.scale.shape != (d,):
            raise ValueError("pre-scaler must match the state dimension")

    def _scaled(self, x_rows: np.ndarray) -> np.ndarray:
        return (x_rows - self.shift) * self.scale

    @property
    def n_y(self) -> int:
        return self.observable.n_y

    @property
    def n_psi(self) -> int:
        return 1 + self.n_y + self.net_spec.output_dim

    @property
    def state_dim(self) -> int:
        return self.observable.state_dim

    trainable = True

    def lift_rows(self, x_rows: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        """Row-per-sample lift (n, n_psi)."""
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        theta = self.params if params is None else params
        tail = forward_batch(self.net_spec, theta, self._scaled(x_rows))
        ones = np.ones((x_rows.shape[0], 1))
        return np.concatenate([ones, self.observable(x_rows), tail], axis=1)

    def lift_tape(self, theta, x_rows: np.ndarray) -> Tensor:
        """Taped lift for training; gradient flows only into the tail."""
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        tail = forward_tape(self.net_spec, theta, self._scaled(x_rows))
        prefix = np.concatenate(
            [np.ones((x_rows.shape[0], 1)), self.observable(x_rows)], axis=1)
        return concat([Tensor(prefix), tail], axis=1)

    def with_params(self, params: np.ndarray) -> "TrainableDictionary":
        return TrainableDictionary(self.observable, self.net_spec, params=params,
                                   shift=self.shift, scale=self.scale)

    def descriptor(self):
        return {
            "type": "trainable",
            "observable": self.observable.descriptor(),
            "net": {
                "input_dim": self.net_spec.input_dim,
                "hidden_widths": list(self.net_spec.hidden_widths),
                "output_dim": self.net_spec.output_dim,
                "residual": self.net_spec.residual,
            },
        }


class PrefixDictionary:
    """Psi(x) = (1, g(x)) with no tail; the lift used by plain DMD."""

    trainable = False

    def __init__(self, observable):
        self.observable = observable

    @property
    def n_y(self) -> int:
        return self.observable.n_y

    @property
    def n_psi(self) -> int:
        return 1 + self.n_y

    @property
    def state_dim(self) -> int:
        return self.observable.state_dim

    def lift_rows(self, x_rows: np.ndarray, params=None) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        ones = np.ones((x_rows.shape[0], 1))
        return np.concatenate([ones, self.observable(x_rows)], axis=1)

    def descriptor(self):
        return {"type": "prefix", "observable": self.observable.descriptor()}


class RbfDictionary:
    """Psi(x) = (1, g(x), exp(-gamma*|x - c_k|^2) for fixed centers c_k)."""

    trainable = False

    def __init__(self, observable, centers: np.ndarray, gamma: float):
        self.observable = observable
        self.centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        if self.centers.shape[1] != observable.state_dim:
            raise ValueError("centers must live in the state space")
        self.gamma = float(gamma)

    @classmethod
    def from_data(cls, observable, x_rows: np.ndarray, n_centers: int, seed: int = 0):
        """Centers uniform over the data bounding box; shape parameter from
        the median pairwise center distance."""
        rng = np.random.default_rng(seed)
        x_rows = np.atleast_2d(x_rows)
        lo, hi = x_rows.min(axis=0), x_rows.max(axis=0)
        centers = rng.uniform(lo, hi, size=(n_centers, x_rows.shape[1]))
        d2 = ((centers[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        med = np.median(np.sqrt(d2[np.triu_indices(n_centers, k=1)]))
        gamma = 1.0 / (2.0 * med * med) if med > 0 else 1.0
        return cls(observable, centers, gamma)

    @property
    def n_y(self) -> int:
        return self.observable.n_y

    @property
    def n_psi(self) -> int:
        return 1 + self.n_y + self.centers.shape[0]

    @property
    def state_dim(self) -> int:
        return self.observable.state_dim

    def lift_rows(self, x_rows: np.ndarray, params=None) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        d2 = ((x_rows[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=-1)
        tail = np.exp(-self.gamma * d2)
        ones = np.ones((x_rows.shape[0], 1))
        return np.concatenate([ones, self.observable(x_rows), tail], axis=1)

    def descriptor(self):
        return {
            "type": "rbf",
            "observable": self.observable.descriptor(),
            "gamma": self.gamma,
            "n_centers": int(self.centers.shape[0]),
        }


def evaluate(dictionary, x: np.ndarray) -> np.ndarray:
    """Lift a single state to its observable vector (length n_psi)."""
    return dictionary.lift_rows(np.asarray(x)[None, :])[0]


def evaluate_batch(dictionary, states) -> np.ndarray:
    """Columnwise lift: (n_psi, n) matrix with one column per state."""
    return dictionary.lift_rows(np.asarray(states)).T


def selector(n_y: int, n_psi: int) -> np.ndarray:
    """Constant matrix B with B @ Psi(x) = g(x) exactly (skips the 1-prefix)."""
    if n_psi < n_y + 1:
        raise ValueError("lift must contain the constant plus all observables")
    b = np.zeros((n_y, n_psi))
    b[:, 1:n_y + 1] = np.eye(n_y)
    return b
