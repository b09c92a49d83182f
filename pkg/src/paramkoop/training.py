"""Fitting the operator families: closed-form least squares, the joint
network training loop, and the alternating procedures for the affine,
bilinear, and dictionary-learning baselines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .dynamics import TrajectoryDataset
from .operators import AffineControl, Bilinear, ConstantK, NetworkK, PolyExpansion
from .optim import adam_init, adam_step


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 1000
    batch_size: int = 256
    learning_rate: float = 1e-3
    decay_patience: int = 50
    decay_factor: float = 0.8
    ridge: float = 1e-8
    validation_fraction: float = 0.1
    seed: int = 0
    tolerance: float = 1e-9
    dict_steps: int = 20
    checkpoint_cadence: int = 0
    head_refit_every: int = 10
    head_refit_samples: int = 8000

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise ValueError("validation_fraction must be in [0, 1)")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


@dataclass
class FitReport:
    """Training record: loss series are sums of squared one-step residuals.

    ``train_losses[e]`` accumulates the minibatch losses seen during epoch e
    (so it tracks the moving parameters); ``val_losses[e]`` is evaluated at
    the end of the epoch. ``dictionary`` and ``model`` hold the
    best-validation parameters.
    """

    dictionary: object
    model: object
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    diverged: bool = False
    stopped_early: bool = False


# -- loss ---------------------------------------------------------------------


def pk_loss(dictionary, model, batch) -> float:
    """Sum over the batch of |Psi(x') - K(u) Psi(x)|^2."""
    x, u, x_next = batch
    psi_n = dictionary.lift_rows(x)
    psi_p = dictionary.lift_rows(x_next)
    resid = psi_p - _step_rows(model, u, psi_n)
    loss = float((resid * resid).sum())
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite one-step residual loss")
    return loss


def _step_rows(model, u_rows, psi_rows) -> np.ndarray:
    """Plain lifted one-step prediction for a batch of rows."""
    if isinstance(model, AffineControl):
        return psi_rows @ model.a.T + np.atleast_2d(u_rows) @ model.b_u.T
    return np.einsum("npq,nq->np", model.matrices(u_rows), psi_rows)


def _loss_and_grads(dictionary, model, x, u, x_next, theta_psi, theta_k):
    """Taped batch loss with gradients w.r.t. dictionary/operator params."""
    t_psi = Tensor(theta_psi)
    psi_n = dictionary.lift_tape(t_psi, x)
    psi_p = dictionary.lift_tape(t_psi, x_next)
    t_k = None if theta_k is None else Tensor(theta_k)
    pred = model.step_tape(t_k, u, psi_n)
    loss = (psi_p - pred).sum_sq()
    loss.backward()
    g_psi = t_psi.grad if t_psi.grad is not None else np.zeros_like(theta_psi)
    g_k = None
    if t_k is not None:
        g_k = t_k.grad if t_k.grad is not None else np.zeros_like(theta_k)
    return float(loss.value), g_psi, g_k


# -- least squares -------------------------------------------------------------


def _ridge_solve(p_next, z, ridge):
    """W minimizing |P_next - W Z|_F^2 + ridge |W|_F^2 (columns are samples).

    Normal equations with a symmetric solve; falls back to stacked least
    squares when the Gram matrix is badly conditioned.
    """
    gram = z @ z.T
    if ridge > 0:
        gram = gram + ridge * np.eye(gram.shape[0])
    rhs = p_next @ z.T
    cond = np.linalg.cond(gram)
    if ridge == 0.0 and (not np.isfinite(cond) or cond > 1e14):
        raise np.linalg.LinAlgError(
            "singular Gram matrix; pass a positive ridge coefficient")
    if np.isfinite(cond) and cond < 1e12:
        try:
            return np.linalg.solve(gram, rhs.T).T
        except np.linalg.LinAlgError:
            pass
    stacked = np.vstack([z.T, np.sqrt(ridge) * np.eye(z.shape[0])]) if ridge > 0 else z.T
    target = np.vstack([p_next.T, np.zeros((z.shape[0], p_next.shape[0]))]) \
        if ridge > 0 else p_next.T
    sol, *_ = np.linalg.lstsq(stacked, target, rcond=None)
    return sol.T


def edmd_fit(dataset, dictionary, ridge: float = 0.0) -> ConstantK:
    """Least-squares constant lifted evolution on a fixed dictionary."""
    x, u, x_next = dataset.transitions() if isinstance(dataset, TrajectoryDataset) else dataset
    p0 = dictionary.lift_rows(x).T
    p1 = dictionary.lift_rows(x_next).T
    k = _ridge_solve(p1, p0, ridge)
    n_u = u.shape[1] if hasattr(u, "shape") and u.ndim == 2 else 0
    return ConstantK(k, n_u=n_u)


def _fit_affine(p0, p1, u_rows, ridge) -> AffineControl:
    z = np.vstack([p0, u_rows.T])
    w = _ridge_solve(p1, z, ridge)
    p = p0.shape[0]
    return AffineControl(w[:, :p], w[:, p:])


def _fit_bilinear(p0, p1, u_rows, ridge) -> Bilinear:
    p, n_u = p0.shape[0], u_rows.shape[1]
    blocks = [p0] + [u_rows[:, i][None, :] * p0 for i in range(n_u)]
    w = _ridge_solve(p1, np.vstack(blocks), ridge)
    return Bilinear(w[:, :p], [w[:, (i + 1) * p:(i + 2) * p] for i in range(n_u)])


def _fit_poly_ls(p0, p1, u_rows, max_degree, ridge) -> PolyExpansion:
    from .operators import monomials

    h = monomials(u_rows, max_degree)  # (n, n_h)
    n_h, p = h.shape[1], p0.shape[0]
    z = (h.T[:, None, :] * p0[None, :, :]).reshape(n_h * p, -1)
    w = _ridge_solve(p1, z, ridge)
    coeffs = w.reshape(p, n_h, p).transpose(1, 0, 2).copy()
    return PolyExpansion(coeffs, n_u=u_rows.shape[1], max_degree=max_degree)


# -- data plumbing --------------------------------------------------------------


def split_dataset(dataset: TrajectoryDataset, validation_fraction: float):
    """Deterministic train/validation split on whole trajectories (the last
    fraction of trajectories validates, avoiding leakage within one)."""
    m = dataset.n_trajectories
    n_val = int(np.floor(m * validation_fraction))
    n_train = m - n_val
    train = dataset.subset(np.arange(n_train))
    val = dataset.subset(np.arange(n_train, m)) if n_val else None
    return train, val


# -- joint gradient training ------------------------------------------------------


def _ls_head_theta(x, u, x_next, dictionary, model: NetworkK, theta_psi, theta_k,
                   ridge, rng, max_samples) -> np.ndarray:
    """Least-squares refit of the K-network output layer at fixed features.

    The one-step residual is linear in the output-layer weights, so given
    the current hidden features and dictionary the head has a closed-form
    optimum (the same least-squares step the affine/bilinear baselines use
    for their operator blocks).
    """
    from .networks import forward_hidden

    idx = rng.choice(x.shape[0], size=min(x.shape[0], max_samples), replace=False)
    p = model.n_psi
    psi = dictionary.lift_rows(x[idx], params=theta_psi)
    targets = dictionary.lift_rows(x_next[idx], params=theta_psi)
    if model.fixed_first_row:
        targets = targets[:, 1:]
    feats = forward_hidden(model.net_spec, theta_k, u[idx])
    h = np.concatenate([feats, np.ones((len(idx), 1))], axis=1)
    n_f = h.shape[1]

    z = (h[:, :, None] * psi[:, None, :]).reshape(len(idx), n_f * p)
    gram = z.T @ z
    lam = max(ridge, 1e-10) * max(1.0, np.trace(gram) / gram.shape[0])
    gram += lam * np.eye(gram.shape[0])
    w_ls = np.linalg.solve(gram, z.T @ targets)  # (n_f*p, rows)

    head = w_ls.reshape(n_f, p, targets.shape[1]).transpose(0, 2, 1) \
        .reshape(n_f, targets.shape[1] * p)
    theta = theta_k.copy()
    w_slice, b_slice, _, _ = model.net_spec.param_slices()[-1]
    theta[w_slice] = head[:-1].reshape(-1)
    theta[b_slice] = head[-1]
    return theta


def _train_joint(dataset, dictionary, model, cfg: TrainingConfig,
                 on_epoch=None) -> FitReport:
    """Minibatch Adam on the one-step residual, jointly over the dictionary
    tail and the operator parameters; retains the best-validation snapshot.

    For the network-valued operator the output layer is kept at its
    closed-form least-squares optimum (refit every ``head_refit_every``
    epochs) while Adam trains the dictionary tail and the feature layers;
    gradient steps never touch the head, which keeps the loop stable.
    """
    train, val = split_dataset(dataset, cfg.validation_fraction)
    x, u, x_next = train.transitions()
    val_batch = val.transitions() if val is not None else None

    theta_psi = dictionary.params.copy()
    theta_k = model.theta.copy()
    n_psi_params = theta_psi.size
    state = adam_init(n_psi_params + theta_k.size, cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 17])
    refit_rng = np.random.default_rng([cfg.seed, 23])

    refits = cfg.head_refit_every > 0 and isinstance(model, NetworkK)
    head_mask = None
    if refits:
        w_slice, b_slice, _, _ = model.net_spec.param_slices()[-1]
        head_mask = np.zeros(theta_k.size, dtype=bool)
        head_mask[w_slice] = True
        head_mask[b_slice] = True

    def refit_head(tp, tk):
        return _ls_head_theta(x, u, x_next, dictionary, model, tp, tk,
                              cfg.ridge, refit_rng, cfg.head_refit_samples)

    report = FitReport(dictionary=dictionary, model=model)
    best_val = np.inf
    best = (theta_psi.copy(), theta_k.copy())
    stall = 0
    best_train = np.inf

    n = x.shape[0]
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        if refits and epoch % cfg.head_refit_every == 0:
            theta_k = refit_head(theta_psi, theta_k)
        order = rng.permutation(n)
        epoch_loss = 0.0
        diverged = False
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, g_psi, g_k = _loss_and_grads(
                dictionary, model, x[idx], u[idx], x_next[idx], theta_psi, theta_k)
            if not np.isfinite(loss):
                diverged = True
                break
            epoch_loss += loss
            if head_mask is not None:
                g_k[head_mask] = 0.0
            grads = np.concatenate([g_psi, g_k])
            state, packed = adam_step(state, np.concatenate([theta_psi, theta_k]), grads)
            theta_psi, theta_k = packed[:n_psi_params], packed[n_psi_params:]
        if diverged:
            report.diverged = True
            break

        if val_batch is not None:
            val_loss = pk_loss(dictionary.with_params(theta_psi),
                               model.with_theta(theta_k), val_batch)
        else:
            val_loss = epoch_loss
        report.train_losses.append(epoch_loss)
        report.val_losses.append(val_loss)
        report.epoch_seconds.append(time.perf_counter() - tic)
        if val_loss < best_val:
            best_val = val_loss
            best = (theta_psi.copy(), theta_k.copy())
        if epoch_loss < best_train * (1.0 - 1e-12):
            best_train = epoch_loss
            stall = 0
        else:
            stall += 1
            if stall >= cfg.decay_patience:
                state = state.with_learning_rate(state.learning_rate * cfg.decay_factor)
                stall = 0
        if on_epoch is not None:
            on_epoch(epoch, theta_psi, theta_k, epoch_loss, val_loss)
        if epoch_loss <= cfg.tolerance:
            report.stopped_early = True
            break

    theta_psi, theta_k = best if report.val_losses else (theta_psi, theta_k)
    if refits and report.val_losses and not report.diverged:
        theta_k = refit_head(theta_psi, theta_k)
    report.dictionary = dictionary.with_params(theta_psi)
    report.model = model.with_theta(theta_k)
    return report


def train_pknn(dataset, dictionary, model: NetworkK, cfg: TrainingConfig,
               on_epoch=None) -> FitReport:
    """Joint training of the dictionary tail and the network-valued K(u)."""
    if not (dictionary.trainable and model.trainable):
        raise ValueError("joint training needs a trainable dictionary and operator")
    return _train_joint(dataset, dictionary, model, cfg, on_epoch=on_epoch)


# -- alternating fits --------------------------------------------------------------


_ALTERNATING_FITS = {
    "m1": lambda p0, p1, u, ridge: ConstantK(_ridge_solve(p1, p0, ridge), n_u=u.shape[1]),
    "m2": _fit_affine,
    "m3": _fit_bilinear,
}


def _alternating_core(dataset, dictionary, ls_fit, cfg: TrainingConfig) -> FitReport:
    """Rounds of (closed-form operator fit, Adam steps on the dictionary tail)."""
    if not dictionary.trainable:
        raise ValueError("alternating fits train the dictionary; use edmd_fit for fixed ones")

    train, val = split_dataset(dataset, cfg.validation_fraction)
    x, u, x_next = train.transitions()
    val_batch = val.transitions() if val is not None else None

    theta_psi = dictionary.params.copy()
    state = adam_init(theta_psi.size, cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 19])

    model = None
    report = FitReport(dictionary=dictionary, model=None)
    best_val = np.inf
    best = (theta_psi.copy(), None)
    n = x.shape[0]

    for rnd in range(cfg.epochs):
        tic = time.perf_counter()
        d = dictionary.with_params(theta_psi)
        p0 = d.lift_rows(x).T
        p1 = d.lift_rows(x_next).T
        model = ls_fit(p0, p1, u, cfg.ridge)
        loss_after_ls = pk_loss(d, model, (x, u, x_next))

        for _ in range(cfg.dict_steps):
            idx = rng.integers(0, n, size=min(cfg.batch_size, n))
            loss, g_psi, _ = _loss_and_grads(
                dictionary, model, x[idx], u[idx], x_next[idx], theta_psi, None)
            if not np.isfinite(loss):
                report.diverged = True
                break
            state, theta_psi = adam_step(state, theta_psi, g_psi)
        if report.diverged:
            break

        val_loss = pk_loss(dictionary.with_params(theta_psi), model, val_batch) \
            if val_batch is not None else loss_after_ls
        report.train_losses.append(loss_after_ls)
        report.val_losses.append(val_loss)
        report.epoch_seconds.append(time.perf_counter() - tic)
        if val_loss < best_val:
            best_val = val_loss
            best = (theta_psi.copy(), model)
        if loss_after_ls <= cfg.tolerance:
            report.stopped_early = True
            break

    theta_psi, best_model = best if report.val_losses else (theta_psi, model)
    final_dict = dictionary.with_params(theta_psi)
    if best_model is None:
        p0 = final_dict.lift_rows(x).T
        p1 = final_dict.lift_rows(x_next).T
        best_model = ls_fit(p0, p1, u, cfg.ridge)
    report.dictionary = final_dict
    report.model = best_model
    return report


def fit_alternating(dataset, dictionary, variant: str, cfg: TrainingConfig) -> FitReport:
    """Alternate closed-form least squares for the operator blocks with Adam
    steps on the dictionary tail, for cfg.epochs rounds."""
    variant = variant.lower()
    if variant not in _ALTERNATING_FITS:
        raise ValueError(f"unknown alternating variant {variant!r}")
    return _alternating_core(dataset, dictionary, _ALTERNATING_FITS[variant], cfg)


def fit_poly(dataset, dictionary, max_degree: int, trainable_dict: bool,
             cfg: TrainingConfig) -> FitReport:
    """Polynomial-expansion operator fits.

    Fixed dictionaries take one least-squares solve over stacked monomial
    features. Trainable dictionaries run joint minibatch Adam on the
    coefficient stack and the dictionary tail, from a least-squares
    initialization of the coefficients.
    """
    train, val = split_dataset(dataset, cfg.validation_fraction)
    x, u, x_next = train.transitions()

    if not trainable_dict:
        p0 = dictionary.lift_rows(x).T
        p1 = dictionary.lift_rows(x_next).T
        model = _fit_poly_ls(p0, p1, u, max_degree, cfg.ridge)
        report = FitReport(dictionary=dictionary, model=model)
        report.train_losses.append(pk_loss(dictionary, model, (x, u, x_next)))
        if val is not None:
            report.val_losses.append(pk_loss(dictionary, model, val.transitions()))
        return report

    if not dictionary.trainable:
        raise ValueError("trainable_dict=True needs a trainable dictionary")
    p0 = dictionary.lift_rows(x).T
    p1 = dictionary.lift_rows(x_next).T
    init = _fit_poly_ls(p0, p1, u, max_degree, max(cfg.ridge, 1e-10))
    model = PolyExpansion(init.coeffs, n_u=u.shape[1], max_degree=max_degree,
                          trainable=True)
    return _train_joint(dataset, dictionary, model, cfg)
