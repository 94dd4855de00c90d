"""End-to-end augmentation: train source generators, calibrate them to
the target by quantile matching, synthesize responses at the source
covariates, and attach covariate-shift weights.

Steps, in order:
  1. one generative model per source domain,
  2. M synthetic responses per source at each target covariate,
  3. quantile-matching fit of the target responses on those columns,
  4. calibrated responses beta' V_hat at the source covariates, with
     V_hat entries the mean of M_pred generator draws,
  5. kernel mean matching weights per source (optional).

Features are standardized with pooled statistics before steps 1 to 5 by
default; the augmented output is always reported in the original
coordinates, with the scaler available in the diagnostics. All
randomness derives from config.seed, so a rerun reproduces the output
bitwise.
"""

from __future__ import annotations

import csv
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .data import DomainDataset, RngStream, standardize
from .density_ratio import KmmConfig, estimate_weights
from .engression import EngressionConfig, EngressionModel, draw_noise, train_engression
from .errors import SchemaError
from .learners import WeightedTrainingSet
from .quantile_match import QuantileMatchFit, SyntheticDesign
from . import quantile_match

PREDICT_MODES = ("mean", "single_draw")

# fixed top-level stream indices; one substream per purpose keeps reruns
# bitwise reproducible regardless of execution order
_S_TRAIN = 1
_S_DESIGN = 2
_S_PREDICT = 3


@dataclass(frozen=True)
class PipelineConfig:
    engression: EngressionConfig = field(default_factory=EngressionConfig)
    kmm: KmmConfig = field(default_factory=KmmConfig)
    m_synthetic: int = 3000
    m_predict: int = 512
    constraint_mode: str = "unconstrained"
    use_density_ratio: bool = True
    standardize_features: bool = True
    predict_mode: str = "mean"
    ridge: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.m_synthetic < 1 or self.m_predict < 1:
            raise ValueError("m_synthetic and m_predict must be positive")
        if self.predict_mode not in PREDICT_MODES:
            raise ValueError(f"predict_mode must be one of {PREDICT_MODES}")
        if self.constraint_mode not in quantile_match.CONSTRAINT_MODES:
            raise ValueError(
                f"constraint_mode must be one of {quantile_match.CONSTRAINT_MODES}")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


@dataclass(frozen=True)
class AugmentedDataset:
    """Union of target rows and calibrated synthetic source rows.

    origin is 0 for target rows (weight 1, original responses) and k for
    rows built from source k. Features are in original coordinates.
    """

    features: np.ndarray
    y_tilde: np.ndarray
    weights: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        feats = np.array(self.features, dtype=float, copy=True)
        y = np.array(self.y_tilde, dtype=float, copy=True).ravel()
        w = np.array(self.weights, dtype=float, copy=True).ravel()
        origin = np.array(self.origin, dtype=int, copy=True).ravel()
        if feats.ndim != 2:
            raise ValueError("features must be 2-D")
        if not (feats.shape[0] == y.size == w.size == origin.size):
            raise ValueError("row counts disagree")
        if not (np.isfinite(feats).all() and np.isfinite(y).all()
                and np.isfinite(w).all()):
            raise ValueError("entries must be finite")
        if w.min() < 0:
            raise ValueError("weights must be nonnegative")
        if origin.min() < 0:
            raise ValueError("origin tags must be nonnegative")
        for arr in (feats, y, w, origin):
            arr.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "y_tilde", y)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "origin", origin)

    @property
    def n_total(self) -> int:
        return self.features.shape[0]

    def counts(self) -> dict[int, int]:
        """Row count per origin tag."""
        tags, counts = np.unique(self.origin, return_counts=True)
        return {int(t): int(c) for t, c in zip(tags, counts)}

    def to_weighted_training_set(self) -> WeightedTrainingSet:
        return WeightedTrainingSet(self.features, self.y_tilde, self.weights)

    def to_csv(self, path) -> None:
        d = self.features.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(d)]
                            + ["y_tilde", "weight", "origin"])
            for xi, yi, wi, oi in zip(self.features, self.y_tilde,
                                      self.weights, self.origin):
                writer.writerow([repr(float(v)) for v in xi]
                                + [repr(float(yi)), repr(float(wi)), str(oi)])

    @classmethod
    def from_csv(cls, path) -> "AugmentedDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise SchemaError(f"{path}: no data rows")
        header = rows[0]
        for required in ("y_tilde", "weight", "origin"):
            if required not in header:
                raise SchemaError(f"{path}: missing column {required!r}")
        feature_cols = [i for i, name in enumerate(header)
                        if name not in ("y_tilde", "weight", "origin")]
        yi = header.index("y_tilde")
        wi = header.index("weight")
        oi = header.index("origin")
        body = [[float(cell) for cell in row] for row in rows[1:]]
        body = np.asarray(body, dtype=float)
        return cls(body[:, feature_cols], body[:, yi], body[:, wi],
                   body[:, oi].astype(int))


@contextmanager
def _step(label: str):
    """Prefix exceptions raised inside one pipeline step with its label."""
    try:
        yield
    except Exception as exc:
        exc.args = (f"{label}: {exc}",) + exc.args[1:]
        raise


def build_synthetic_design(target: DomainDataset,
                           models: list[EngressionModel],
                           m: int, rng: RngStream) -> SyntheticDesign:
    """Generate m responses per model at every target covariate.

    Row i*m + j of the result is (1, g_1(X_i, eta), ..., g_K(X_i, eta))
    with fresh independent noise per model and per draw.
    """
    if not models:
        raise ValueError("need at least one source model")
    if m < 1:
        raise ValueError("m must be positive")
    n0, d = target.features.shape
    columns = [np.ones(n0 * m)]
    tiled = np.repeat(target.features, m, axis=0)
    for k, model in enumerate(models):
        if model.n_features != d:
            raise ValueError(
                f"model {k} expects d={model.n_features}, target has d={d}")
        gen = rng.substream(k).generator()
        noise = draw_noise(gen, (n0 * m, model.noise_dim), model.noise_law)
        columns.append(model.forward(tiled, noise))
    return SyntheticDesign(np.column_stack(columns), n0=n0, m=m)


def predict_source_features(models: list[EngressionModel],
                            source: DomainDataset, m_pred: int,
                            rng: RngStream,
                            predict_mode: str = "mean") -> np.ndarray:
    """Predicted V rows (1, Ybar_1, ..., Ybar_K) at the source covariates.

    Ybar_j is the mean of m_pred generator draws; predict_mode
    "single_draw" uses one draw instead, for ablation.
    """
    if not models:
        raise ValueError("need at least one source model")
    if m_pred < 1:
        raise ValueError("m_pred must be positive")
    if predict_mode not in PREDICT_MODES:
        raise ValueError(f"predict_mode must be one of {PREDICT_MODES}")
    draws = 1 if predict_mode == "single_draw" else m_pred
    n, d = source.features.shape
    out = np.ones((n, len(models) + 1))
    tiled = np.repeat(source.features, draws, axis=0)
    for j, model in enumerate(models):
        if model.n_features != d:
            raise ValueError(
                f"model {j} expects d={model.n_features}, source has d={d}")
        gen = rng.substream(j).generator()
        noise = draw_noise(gen, (n * draws, model.noise_dim), model.noise_law)
        out[:, j + 1] = model.forward(tiled, noise).reshape(n, draws).mean(axis=1)
    return out


def run_augmentation(target: DomainDataset, sources: list[DomainDataset],
                     config: PipelineConfig = PipelineConfig()
                     ) -> tuple[AugmentedDataset, QuantileMatchFit | None, dict]:
    """Execute the five augmentation steps.

    Returns the augmented dataset (original coordinates), the
    quantile-matching fit, and a diagnostics dict holding per-source
    engression losses, the fit trace, kernel mean matching flags, the
    scaler, and the predicted V rows per source. With no sources the
    target comes back unchanged with unit weights and a None fit.
    """
    if target.n < 2:
        raise ValueError("target needs at least 2 rows")
    for k, src in enumerate(sources, start=1):
        if src.d != target.d:
            raise ValueError(
                f"source {k} has d={src.d}, target has d={target.d}")
        if src.n < 2:
            raise ValueError(f"source {k} needs at least 2 rows, got {src.n}")

    if not sources:
        aug = AugmentedDataset(target.features, target.responses,
                               np.ones(target.n), np.zeros(target.n, dtype=int))
        return aug, None, {"note": "no sources; target passed through"}

    base = RngStream(config.seed)
    if config.standardize_features:
        scaled, scaler = standardize([target] + list(sources))
        std_target, std_sources = scaled[0], scaled[1:]
    else:
        scaler = None
        std_target, std_sources = target, list(sources)

    with _step("step 1 (train source generators)"):
        train_rng = base.substream(_S_TRAIN)
        models = [train_engression(src, config.engression, train_rng.substream(k))
                  for k, src in enumerate(std_sources)]

    with _step("step 2 (synthesize responses at target covariates)"):
        design = build_synthetic_design(std_target, models, config.m_synthetic,
                                        base.substream(_S_DESIGN))

    with _step("step 3 (quantile-matching fit)"):
        fit = quantile_match.fit(target.responses, design,
                                 constraint_mode=config.constraint_mode,
                                 ridge=config.ridge)

    with _step("step 4 (calibrated responses at source covariates)"):
        predict_rng = base.substream(_S_PREDICT)
        predicted = [predict_source_features(models, src, config.m_predict,
                                             predict_rng.substream(k),
                                             config.predict_mode)
                     for k, src in enumerate(std_sources)]
        y_tilde_sources = [v @ fit.beta for v in predicted]

    kmm_diag = None
    if config.use_density_ratio:
        with _step("step 5 (kernel mean matching weights)"):
            ratio = [estimate_weights(src, std_target, config.kmm)
                     for src in std_sources]
            source_weights = [r.zeta for r in ratio]
            kmm_diag = [{"feasible": r.feasible,
                         "objective_value": r.objective_value,
                         "bandwidth": r.bandwidth} for r in ratio]
    else:
        source_weights = [np.ones(src.n) for src in sources]

    features = np.vstack([target.features] + [src.features for src in sources])
    y_tilde = np.concatenate([target.responses] + y_tilde_sources)
    weights = np.concatenate([np.ones(target.n)] + source_weights)
    origin = np.concatenate(
        [np.zeros(target.n, dtype=int)]
        + [np.full(src.n, k, dtype=int) for k, src in enumerate(sources, start=1)])
    aug = AugmentedDataset(features, y_tilde, weights, origin)

    diagnostics = {
        "engression_final_loss": [float(m.loss_trace[-1]) for m in models],
        "quantile_fit": {
            "beta": fit.beta.tolist(),
            "objective_trace": fit.objective_trace.tolist(),
            "iterations": fit.iterations,
            "converged": fit.converged,
            "constraint_mode": fit.constraint_mode,
            "rank_deficient": fit.rank_deficient,
        },
        "kmm": kmm_diag,
        "scaler": None if scaler is None else {
            "mean": scaler.mean.tolist(), "scale": scaler.scale.tolist()},
        "predicted_features": predicted,
        "predict_mode": config.predict_mode,
        "seed": config.seed,
    }
    return aug, fit, diagnostics
