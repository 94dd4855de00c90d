"""Weighted downstream regressors and grid cross validation.

Kernel ridge regression minimizes sum_i w_i (y_i - f(x_i))^2 +
N lambda |f|^2 over an RBF RKHS, solved exactly in the dual. The
network regressor reuses the MLP machinery with a weighted squared
loss. Hyperparameters are chosen by seeded k-fold cross validation;
training folds keep their weights, validation error is unweighted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import DomainDataset, RngStream
from .density_ratio import median_heuristic_bandwidth, rbf_gram
from .errors import NumericalError, TrainingDivergenceError
from .nets import Adam, Mlp

LEARNER_KINDS = ("krr", "mlp")


@dataclass(frozen=True)
class WeightedTrainingSet:
    """Rows (x_i, y_i, w_i) feeding weighted empirical risk minimization."""

    features: np.ndarray
    responses: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        feats = np.array(self.features, dtype=float, copy=True)
        resp = np.array(self.responses, dtype=float, copy=True).ravel()
        wts = np.array(self.weights, dtype=float, copy=True).ravel()
        if feats.ndim != 2:
            raise ValueError("features must be 2-D")
        if not (feats.shape[0] == resp.size == wts.size):
            raise ValueError("features, responses, and weights lengths disagree")
        if not (np.isfinite(feats).all() and np.isfinite(resp).all()
                and np.isfinite(wts).all()):
            raise ValueError("entries must be finite")
        if wts.min() < 0:
            raise ValueError("weights must be nonnegative")
        if wts.max() == 0:
            raise ValueError("at least one weight must be positive")
        for arr in (feats, resp, wts):
            arr.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "responses", resp)
        object.__setattr__(self, "weights", wts)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "WeightedTrainingSet":
        return WeightedTrainingSet(self.features[idx], self.responses[idx],
                                   self.weights[idx])


@dataclass(frozen=True)
class KrrModel:
    support: np.ndarray
    alpha: np.ndarray
    bandwidth: float
    penalty: float

    def predict(self, features: np.ndarray) -> np.ndarray:
        return rbf_gram(features, self.support, self.bandwidth) @ self.alpha


def fit_weighted_krr(data: WeightedTrainingSet, penalty: float,
                     bandwidth: float) -> KrrModel:
    """Exact weighted kernel ridge solution.

    Solves (W^(1/2) K W^(1/2) + N penalty I) gamma = W^(1/2) y and
    returns alpha = W^(1/2) gamma, the dual coefficients of the
    minimizer of sum_i w_i (y_i - f(x_i))^2 + N penalty |f|^2.
    """
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    n = data.n
    gram = rbf_gram(data.features, data.features, bandwidth)
    sqrt_w = np.sqrt(data.weights)
    system = sqrt_w[:, None] * gram * sqrt_w[None, :]
    system[np.diag_indices(n)] += n * penalty
    try:
        chol = scipy.linalg.cho_factor(system, lower=True, check_finite=False)
        gamma = scipy.linalg.cho_solve(chol, sqrt_w * data.responses,
                                       check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(
            f"weighted kernel ridge solve failed: {exc}",
            condition_estimate=float(np.linalg.cond(system))) from exc
    return KrrModel(support=data.features, alpha=sqrt_w * gamma,
                    bandwidth=float(bandwidth), penalty=float(penalty))


@dataclass(frozen=True)
class MlpRegressor:
    net: Mlp
    loss_trace: np.ndarray

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.net.forward(np.atleast_2d(np.asarray(features, dtype=float)))


def fit_weighted_mlp(data: WeightedTrainingSet, hidden, lr: float,
                     epochs: int, rng: RngStream,
                     batch_size: int | None = None) -> MlpRegressor:
    """ReLU network on the weighted squared loss (1/sum w) sum_i w_i
    (y_i - f(x_i))^2, normalized per batch.

    Full-batch training (the default for N <= 512) keeps row order, so
    rows with weight 0 are exactly inert; mini-batch epochs reshuffle.
    Deterministic given rng.
    """
    n, d = data.features.shape
    if n < 2:
        raise ValueError(f"need at least 2 rows, got {n}")
    gen = rng.generator()
    net = Mlp([d, *[int(h) for h in hidden], 1], gen)
    opt = Adam(net, lr)
    batch = min(batch_size, n) if batch_size else (n if n <= 512 else 256)
    trace = np.empty(epochs)
    for epoch in range(epochs):
        order = gen.permutation(n) if batch < n else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            wts = data.weights[idx]
            w_sum = wts.sum()
            if w_sum == 0.0:
                continue
            out, cache = net.forward_cached(data.features[idx])
            resid = out - data.responses[idx]
            loss = float((wts * resid * resid).sum() / w_sum)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"non-finite training loss at epoch {epoch} "
                    f"(learning_rate={lr})", epoch=epoch, learning_rate=lr)
            dws, dbs = net.backward(cache, 2.0 * wts * resid / w_sum)
            opt.step(dws, dbs)
            epoch_loss += loss * idx.size
        trace[epoch] = epoch_loss / n
    if not net.params_finite():
        raise TrainingDivergenceError(
            f"non-finite weights after training (learning_rate={lr})",
            epoch=epochs - 1, learning_rate=lr)
    return MlpRegressor(net=net, loss_trace=trace)


def default_krr_grid(n: int) -> list[dict]:
    """Nine penalty candidates whose effective dual ridge N*penalty spans
    3^-2 .. 3^6 times 0.1/N."""
    return [{"penalty": (3.0 ** j) * 0.1 / (n * n)} for j in range(-2, 7)]


def default_mlp_grid(epochs: int = 1000) -> list[dict]:
    grid = []
    for hidden in ((10,), (50,), (100,)):
        for lr in (0.0001, 0.001, 0.01):
            grid.append({"hidden": hidden, "lr": lr, "epochs": epochs})
    return grid


def fit_learner(data: WeightedTrainingSet, learner_kind: str,
                candidate: dict, rng: RngStream):
    """Fit one grid candidate; the KRR bandwidth is the median heuristic
    of the training features."""
    if learner_kind == "krr":
        bandwidth = median_heuristic_bandwidth(data.features)
        return fit_weighted_krr(data, candidate["penalty"], bandwidth)
    if learner_kind == "mlp":
        return fit_weighted_mlp(data, candidate["hidden"], candidate["lr"],
                                candidate.get("epochs", 1000), rng)
    raise ValueError(f"learner_kind must be one of {LEARNER_KINDS}")


def _regularization_rank(learner_kind: str, candidate: dict):
    # tie-break order: larger penalty for KRR; smaller network then
    # smaller learning rate for the MLP
    if learner_kind == "krr":
        return (candidate["penalty"],)
    return (-sum(candidate["hidden"]), -candidate["lr"])


@dataclass(frozen=True)
class CvReport:
    learner_kind: str
    candidates: tuple
    mean_mse: np.ndarray
    chosen_index: int

    @property
    def chosen(self) -> dict:
        return self.candidates[self.chosen_index]

    def to_text(self) -> str:
        lines = [f"learner = {self.learner_kind}",
                 "folds_mean_validation_mse:"]
        for i, (cand, mse) in enumerate(zip(self.candidates, self.mean_mse)):
            marker = " <- chosen" if i == self.chosen_index else ""
            lines.append(f"  {cand} : {float(mse)!r}{marker}")
        return "\n".join(lines) + "\n"


def cross_validate(data: WeightedTrainingSet, learner_kind: str,
                   grid: list[dict], folds: int = 5,
                   rng: RngStream = RngStream(0)) -> CvReport:
    """Seeded k-fold selection; exact MSE ties go to the candidate with
    the strongest regularization."""
    if learner_kind not in LEARNER_KINDS:
        raise ValueError(f"learner_kind must be one of {LEARNER_KINDS}")
    if not grid:
        raise ValueError("grid must be non-empty")
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if folds > data.n:
        raise ValueError(f"folds={folds} exceeds sample size {data.n}")
    perm = rng.generator().permutation(data.n)
    fold_indices = np.array_split(perm, folds)
    mean_mse = np.empty(len(grid))
    for ci, candidate in enumerate(grid):
        fold_mse = np.empty(folds)
        for fi, val_idx in enumerate(fold_indices):
            train_idx = np.concatenate(
                [fold_indices[j] for j in range(folds) if j != fi])
            model = fit_learner(data.subset(train_idx), learner_kind, candidate,
                                rng.substream(ci * folds + fi + 1))
            resid = data.responses[val_idx] - model.predict(data.features[val_idx])
            fold_mse[fi] = np.mean(resid * resid)
        mean_mse[ci] = fold_mse.mean()
    best = 0
    for ci in range(1, len(grid)):
        if mean_mse[ci] < mean_mse[best]:
            best = ci
        elif mean_mse[ci] == mean_mse[best] and (
                _regularization_rank(learner_kind, grid[ci])
                > _regularization_rank(learner_kind, grid[best])):
            best = ci
    return CvReport(learner_kind=learner_kind, candidates=tuple(grid),
                    mean_mse=mean_mse, chosen_index=best)


def evaluate_mse(model, test: DomainDataset) -> float:
    """Unweighted mean squared prediction error on a test dataset."""
    if test.n == 0:
        raise ValueError("test set is empty")
    resid = test.responses - model.predict(test.features)
    return float(np.mean(resid * resid))
