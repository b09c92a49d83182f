"""Parametric lifted-evolution models u -> K(u).

Variants: a constant matrix, affine-in-control, bilinear, polynomial
feature expansion, and a network-valued matrix function whose first row is
pinned to (1, 0, ..., 0) so the constant observable stays constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .autodiff import Tensor, batched_matvec, concat, matvec
from .networks import NetworkSpec, forward, forward_tape, init_params


# -- monomial features ---------------------------------------------------------


def monomial_exponents(n_u: int, max_degree: int):
    """Exponent tuples of all monomials with total degree <= max_degree,
    graded-lex ordered with the constant first."""
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    out = []
    for d in range(max_degree + 1):
        for combo in combinations_with_replacement(range(n_u), d):
            e = [0] * n_u
            for j in combo:
                e[j] += 1
            out.append(tuple(e))
    return out


def monomials(u: np.ndarray, max_degree: int) -> np.ndarray:
    """Feature vector of all monomials of u up to max_degree."""
    u = np.asarray(u, dtype=np.float64)
    exps = monomial_exponents(u.shape[-1], max_degree)
    feats = [np.prod(u ** np.asarray(e), axis=-1) for e in exps]
    return np.stack(feats, axis=-1)


def _monomials_tape(u: Tensor, exponents) -> list:
    """Monomial features of a control leaf as scalar tape nodes."""
    feats = []
    for e in exponents:
        node = Tensor(np.float64(1.0))
        for j, power in enumerate(e):
            for _ in range(power):
                node = node * u[j]
        feats.append(node)
    return feats


def _expand_stack_tape(theta: Tensor, features: np.ndarray, n_mats, p) -> Tensor:
    """Per-sample matrices sum_i h_i(u) K_i as a (n, p, p) tape node.

    ``theta`` flattens the stacked K_i; ``features`` is the constant
    (n, n_mats) monomial matrix of the batch controls.
    """
    h = features
    kv = theta.value.reshape(n_mats, p, p)
    out = np.einsum("nh,hpq->npq", h, kv)

    def vjp(g):
        return np.einsum("nh,npq->hpq", h, g).reshape(-1)

    return Tensor(out, ((theta, vjp),))


# -- model variants -------------------------------------------------------------


class ConstantK:
    """Parameter-independent lifted evolution (plain and optimized DMD)."""

    variant = "constant"
    has_matrix_form = True
    trainable = False
    fixed_first_row = False

    def __init__(self, k: np.ndarray, n_u: int = 0):
        self.k = np.asarray(k, dtype=np.float64)
        if self.k.ndim != 2 or self.k.shape[0] != self.k.shape[1]:
            raise ValueError("K must be square")
        self.n_u = int(n_u)

    @property
    def n_psi(self):
        return self.k.shape[0]

    def matrix(self, u=None) -> np.ndarray:
        return self.k

    def matrices(self, u_rows) -> np.ndarray:
        n = np.atleast_2d(u_rows).shape[0] if self.n_u else len(u_rows)
        return np.broadcast_to(self.k, (n, *self.k.shape))

    def apply(self, u, psi) -> np.ndarray:
        return self.k @ np.asarray(psi)

    def step_tape(self, theta, u_rows, psi: Tensor) -> Tensor:
        return psi @ Tensor(self.k.T)

    def step_single_tape(self, u: Tensor, psi: Tensor) -> Tensor:
        return matvec(Tensor(self.k), psi)

    def descriptor(self):
        return {"variant": self.variant, "n_psi": self.n_psi, "n_u": self.n_u}

    def payload(self):
        return self.k.reshape(-1)


class AffineControl:
    """Affine lifted evolution psi' = A psi + B u (no pure matrix form)."""

    variant = "affine"
    has_matrix_form = False
    trainable = False
    fixed_first_row = False

    def __init__(self, a: np.ndarray, b_u: np.ndarray):
        self.a = np.asarray(a, dtype=np.float64)
        self.b_u = np.asarray(b_u, dtype=np.float64)
        if self.a.shape[0] != self.a.shape[1] or self.b_u.shape[0] != self.a.shape[0]:
            raise ValueError("A must be square and share rows with B")

    @property
    def n_psi(self):
        return self.a.shape[0]

    @property
    def n_u(self):
        return self.b_u.shape[1]

    def matrix(self, u=None):
        raise ValueError("affine-control evolution has no matrix form; use apply")

    def apply(self, u, psi) -> np.ndarray:
        return self.a @ np.asarray(psi) + self.b_u @ np.asarray(u)

    def step_tape(self, theta, u_rows, psi: Tensor) -> Tensor:
        return psi @ Tensor(self.a.T) + Tensor(np.atleast_2d(u_rows) @ self.b_u.T)

    def step_single_tape(self, u: Tensor, psi: Tensor) -> Tensor:
        return matvec(Tensor(self.a), psi) + matvec(Tensor(self.b_u), u)

    def descriptor(self):
        return {"variant": self.variant, "n_psi": self.n_psi, "n_u": self.n_u}

    def payload(self):
        return np.concatenate([self.a.reshape(-1), self.b_u.reshape(-1)])


class Bilinear:
    """K(u) = A + sum_i u_i B_i."""

    variant = "bilinear"
    has_matrix_form = True
    trainable = False
    fixed_first_row = False

    def __init__(self, a: np.ndarray, b_mats):
        self.a = np.asarray(a, dtype=np.float64)
        self.b_mats = np.stack([np.asarray(b, dtype=np.float64) for b in b_mats])
        if self.b_mats.shape[1:] != self.a.shape:
            raise ValueError("every B_i must match A in shape")

    @property
    def n_psi(self):
        return self.a.shape[0]

    @property
    def n_u(self):
        return self.b_mats.shape[0]

    def matrix(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return self.a + np.einsum("i,ipq->pq", u, self.b_mats)

    def matrices(self, u_rows) -> np.ndarray:
        u_rows = np.atleast_2d(u_rows)
        return self.a + np.einsum("ni,ipq->npq", u_rows, self.b_mats)

    def apply(self, u, psi) -> np.ndarray:
        return self.matrix(u) @ np.asarray(psi)

    def step_tape(self, theta, u_rows, psi: Tensor) -> Tensor:
        u_rows = np.atleast_2d(u_rows)
        out = psi @ Tensor(self.a.T)
        for i in range(self.n_u):
            out = out + Tensor(u_rows[:, i:i + 1]) * (psi @ Tensor(self.b_mats[i].T))
        return out

    def step_single_tape(self, u: Tensor, psi: Tensor) -> Tensor:
        k = Tensor(self.a)
        for i in range(self.n_u):
            k = k + u[i] * Tensor(self.b_mats[i])
        return matvec(k, psi)

    def descriptor(self):
        return {"variant": self.variant, "n_psi": self.n_psi, "n_u": self.n_u}

    def payload(self):
        return np.concatenate([self.a.reshape(-1), self.b_mats.reshape(-1)])


class PolyExpansion:
    """K(u) = sum_i h_i(u) K_i over graded-lex monomials h_i up to a degree."""

    variant = "poly"
    has_matrix_form = True
    fixed_first_row = False

    def __init__(self, coeffs: np.ndarray, n_u: int, max_degree: int, trainable=False):
        self.exponents = monomial_exponents(n_u, max_degree)
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape[0] != len(self.exponents):
            raise ValueError("coefficient stack does not match the monomial count")
        self.coeffs = coeffs
        self.n_u = int(n_u)
        self.max_degree = int(max_degree)
        self.trainable = bool(trainable)

    @classmethod
    def zeros(cls, n_psi: int, n_u: int, max_degree: int, trainable=False,
              identity_constant=True):
        n_mats = len(monomial_exponents(n_u, max_degree))
        coeffs = np.zeros((n_mats, n_psi, n_psi))
        if identity_constant:
            coeffs[0] = np.eye(n_psi)
        return cls(coeffs, n_u, max_degree, trainable=trainable)

    @property
    def n_psi(self):
        return self.coeffs.shape[1]

    @property
    def n_features(self):
        return len(self.exponents)

    def features(self, u_rows) -> np.ndarray:
        return monomials(np.atleast_2d(u_rows), self.max_degree)

    def matrix(self, u) -> np.ndarray:
        h = monomials(np.asarray(u, dtype=np.float64), self.max_degree)
        return np.einsum("h,hpq->pq", h, self.coeffs)

    def matrices(self, u_rows) -> np.ndarray:
        return np.einsum("nh,hpq->npq", self.features(u_rows), self.coeffs)

    def apply(self, u, psi) -> np.ndarray:
        return self.matrix(u) @ np.asarray(psi)

    # -- trainable-parameter plumbing --

    @property
    def theta(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    def with_theta(self, theta: np.ndarray) -> "PolyExpansion":
        coeffs = np.asarray(theta, dtype=np.float64).reshape(self.coeffs.shape)
        return PolyExpansion(coeffs, self.n_u, self.max_degree, trainable=self.trainable)

    def init_theta(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        coeffs = 0.01 * rng.standard_normal(self.coeffs.shape)
        coeffs[0] += np.eye(self.n_psi)
        return coeffs.reshape(-1)

    def step_tape(self, theta, u_rows, psi: Tensor) -> Tensor:
        h = self.features(u_rows)
        if theta is None:
            return batched_matvec(Tensor(self.matrices(u_rows)), psi)
        k_stack = _expand_stack_tape(theta, h, self.n_features, self.n_psi)
        return batched_matvec(k_stack, psi)

    def step_single_tape(self, u: Tensor, psi: Tensor) -> Tensor:
        feats = _monomials_tape(u, self.exponents)
        k = feats[0] * Tensor(self.coeffs[0])
        for h_i, k_i in zip(feats[1:], self.coeffs[1:]):
            k = k + h_i * Tensor(k_i)
        return matvec(k, psi)

    def descriptor(self):
        return {"variant": self.variant, "n_psi": self.n_psi, "n_u": self.n_u,
                "max_degree": self.max_degree}

    def payload(self):
        return self.theta


class NetworkK:
    """Network-valued matrix function u -> K(u).

    With ``fixed_first_row`` (the default) the network emits the trailing
    (n_psi - 1) rows and the first row is the constant (1, 0, ..., 0),
    keeping the constant observable invariant under every K(u).
    """

    variant = "network"
    has_matrix_form = True
    trainable = True

    def __init__(self, n_psi: int, net_spec: NetworkSpec, params: np.ndarray | None = None,
                 fixed_first_row: bool = True, seed: int = 0):
        rows = n_psi - 1 if fixed_first_row else n_psi
        if net_spec.output_dim != rows * n_psi:
            raise ValueError(
                f"network must emit {rows}x{n_psi} matrix entries, got {net_spec.output_dim}")
        self.n_psi = int(n_psi)
        self.net_spec = net_spec
        self.fixed_first_row = bool(fixed_first_row)
        self.params = init_params(net_spec, seed) if params is None else \
            np.asarray(params, dtype=np.float64)
        self._top_row = np.zeros(n_psi)
        self._top_row[0] = 1.0

    @classmethod
    def build(cls, n_psi: int, n_u: int, hidden_widths, fixed_first_row=True, seed=0):
        rows = n_psi - 1 if fixed_first_row else n_psi
        spec = NetworkSpec(n_u, tuple(hidden_widths), rows * n_psi)
        return cls(n_psi, spec, fixed_first_row=fixed_first_row, seed=seed)

    @property
    def n_u(self):
        return self.net_spec.input_dim

    @property
    def n_k(self) -> int:
        """Feature count of the output layer: last hidden width plus bias."""
        widths = self.net_spec.hidden_widths
        return (widths[-1] if widths else self.net_spec.input_dim) + 1

    def matrix(self, u) -> np.ndarray:
        out = forward(self.net_spec, self.params, np.asarray(u, dtype=np.float64))
        if self.fixed_first_row:
            body = out.reshape(self.n_psi - 1, self.n_psi)
            return np.vstack([self._top_row, body])
        return out.reshape(self.n_psi, self.n_psi)

    def matrices(self, u_rows) -> np.ndarray:
        from .networks import forward_batch

        u_rows = np.atleast_2d(u_rows)
        out = forward_batch(self.net_spec, self.params, u_rows)
        if self.fixed_first_row:
            body = out.reshape(-1, self.n_psi - 1, self.n_psi)
            top = np.broadcast_to(self._top_row, (body.shape[0], 1, self.n_psi))
            return np.concatenate([top, body], axis=1)
        return out.reshape(-1, self.n_psi, self.n_psi)

    def apply(self, u, psi) -> np.ndarray:
        return self.matrix(u) @ np.asarray(psi)

    @property
    def theta(self) -> np.ndarray:
        return self.params

    def with_theta(self, theta: np.ndarray) -> "NetworkK":
        return NetworkK(self.n_psi, self.net_spec, params=theta,
                        fixed_first_row=self.fixed_first_row)

    def init_theta(self, seed: int) -> np.ndarray:
        return init_params(self.net_spec, seed)

    def step_tape(self, theta, u_rows, psi: Tensor) -> Tensor:
        u_rows = np.atleast_2d(u_rows)
        if theta is None:
            return batched_matvec(Tensor(self.matrices(u_rows)), psi)
        out = forward_tape(self.net_spec, theta, u_rows)
        n = u_rows.shape[0]
        if self.fixed_first_row:
            body = out.reshape(n, self.n_psi - 1, self.n_psi)
            top = Tensor(np.broadcast_to(self._top_row, (n, 1, self.n_psi)).copy())
            k_stack = concat([top, body], axis=1)
        else:
            k_stack = out.reshape(n, self.n_psi, self.n_psi)
        return batched_matvec(k_stack, psi)

    def step_single_tape(self, u: Tensor, psi: Tensor) -> Tensor:
        out = forward_tape(self.net_spec, self.params, u.reshape(1, -1))
        if self.fixed_first_row:
            body = out.reshape(self.n_psi - 1, self.n_psi)
            k = concat([Tensor(self._top_row[None, :]), body], axis=0)
        else:
            k = out.reshape(self.n_psi, self.n_psi)
        return matvec(k, psi)

    def matrices_tape(self, u_rows: Tensor) -> Tensor:
        """Taped K(u) stack for a whole control window: (tau, p, p)."""
        tau = u_rows.value.shape[0]
        out = forward_tape(self.net_spec, self.params, u_rows)
        if self.fixed_first_row:
            body = out.reshape(tau, self.n_psi - 1, self.n_psi)
            top = Tensor(np.broadcast_to(self._top_row, (tau, 1, self.n_psi)).copy())
            return concat([top, body], axis=1)
        return out.reshape(tau, self.n_psi, self.n_psi)

    def descriptor(self):
        return {
            "variant": self.variant,
            "n_psi": self.n_psi,
            "n_u": self.n_u,
            "hidden_widths": list(self.net_spec.hidden_widths),
            "fixed_first_row": self.fixed_first_row,
        }

    def payload(self):
        return self.params


# -- shared operations ----------------------------------------------------------


def k_matrix(model, u) -> np.ndarray:
    """Matrix form K(u) for matrix-form variants."""
    return model.matrix(u)


def apply(model, u, psi) -> np.ndarray:
    """One lifted step psi -> K(u) psi (or A psi + B u for affine control)."""
    psi = np.asarray(psi, dtype=np.float64)
    if psi.shape != (model.n_psi,):
        raise ValueError(f"lift has length {psi.shape}, model needs {model.n_psi}")
    return model.apply(u, psi)


@dataclass(frozen=True)
class GeneratorSample:
    """Projected generator (K(u) - I) / dt at one parameter value."""

    matrix: np.ndarray
    dt: float


def generator(model, u, dt: float) -> GeneratorSample:
    if dt <= 0:
        raise ValueError("dt must be positive")
    k = model.matrix(u)
    return GeneratorSample(matrix=(k - np.eye(k.shape[0])) / dt, dt=float(dt))
