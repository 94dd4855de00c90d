"""Noise-injecting conditional generative networks trained on the
energy score.

The network maps a feature vector with latent noise appended to one
scalar response draw, so sampling it repeatedly at a fixed x traces out
an estimate of the conditional response law. Training minimizes, per
observation with m noise draws,

    (1/m) sum_j |y - g_j|  -  (1/(2 m (m-1))) sum_{j,j'} |g_j - g_j'|

averaged over the batch. The second sum runs over ordered pairs with a
zero diagonal. Noise is redrawn every epoch, giving an unbiased
stochastic gradient of the population energy score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .data import DomainDataset, RngStream
from .errors import TrainingDivergenceError
from .nets import Adam, Mlp

NOISE_LAWS = ("standard_normal", "uniform")


@dataclass(frozen=True)
class EngressionConfig:
    """Architecture and optimization knobs for one generative model.

    batch_size None resolves to the full batch when n <= 512 and to 256
    otherwise. m_train is the number of noise draws per observation per
    loss evaluation; at least 2 are needed for the pairwise term.
    """

    hidden_sizes: tuple = (100, 100)
    noise_dim: int = 5
    learning_rate: float = 0.001
    epochs: int = 1000
    m_train: int = 2
    batch_size: int | None = None
    noise_law: str = "standard_normal"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"hidden_sizes must be positive, got {self.hidden_sizes}")
        if self.noise_dim < 1:
            raise ValueError("noise_dim must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.m_train < 2:
            raise ValueError("m_train must be at least 2 for the pairwise term")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.noise_law not in NOISE_LAWS:
            raise ValueError(f"noise_law must be one of {NOISE_LAWS}")

    def resolve_batch_size(self, n: int) -> int:
        if self.batch_size is not None:
            return min(self.batch_size, n)
        return n if n <= 512 else 256


def energy_loss(y: float, g_samples) -> float:
    """Sample energy score of g_samples against the single observation y."""
    g = np.asarray(g_samples, dtype=float).ravel()
    m = g.size
    if m < 2:
        raise ValueError(f"need at least 2 samples, got {m}")
    fit = np.abs(y - g).mean()
    spread = np.abs(g[:, None] - g[None, :]).sum() / (2.0 * m * (m - 1))
    return float(fit - spread)


def _energy_loss_batch(y: np.ndarray, g: np.ndarray):
    """Batch-mean energy loss and its gradient in the samples.

    y is (b,), g is (b, m). Returns (loss, dloss/dg). sign(0) = 0, the
    standard subgradient choice for the absolute value at the kink.
    """
    b, m = g.shape
    resid = g - y[:, None]
    fit = np.abs(resid).mean(axis=1)
    diffs = g[:, :, None] - g[:, None, :]
    spread = np.abs(diffs).sum(axis=(1, 2)) / (2.0 * m * (m - 1))
    loss = float((fit - spread).mean())
    dg = (np.sign(resid) / m - np.sign(diffs).sum(axis=2) / (m * (m - 1))) / b
    return loss, dg


def draw_noise(gen: np.random.Generator, shape, noise_law: str) -> np.ndarray:
    if noise_law == "standard_normal":
        return gen.standard_normal(shape)
    if noise_law == "uniform":
        return gen.uniform(0.0, 1.0, size=shape)
    raise ValueError(f"noise_law must be one of {NOISE_LAWS}")


@dataclass
class EngressionModel:
    """A trained conditional sampler g(x, eta)."""

    net: Mlp
    config: EngressionConfig
    loss_trace: np.ndarray
    n_features: int

    @property
    def noise_dim(self) -> int:
        return self.config.noise_dim

    @property
    def noise_law(self) -> str:
        return self.config.noise_law

    def forward(self, features: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Deterministic evaluation on given (features, noise) rows."""
        return self.net.forward(np.hstack([features, noise]))


def train_engression(data: DomainDataset, config: EngressionConfig,
                     rng: RngStream) -> EngressionModel:
    """Fit one generative model to one domain by Adam on the energy loss.

    Deterministic given rng. Mini-batch epochs reshuffle rows; a full
    batch keeps row order. Raises TrainingDivergenceError on a
    non-finite loss, reporting the epoch and learning rate.
    """
    n, d = data.features.shape
    if n < 2:
        raise ValueError(f"need at least 2 observations, got {n}")
    gen = rng.generator()
    m = config.m_train
    net = Mlp([d + config.noise_dim, *config.hidden_sizes, 1], gen)
    opt = Adam(net, config.learning_rate)
    batch = config.resolve_batch_size(n)
    trace = np.empty(config.epochs)
    for epoch in range(config.epochs):
        order = gen.permutation(n) if batch < n else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            xb = data.features[idx]
            yb = data.responses[idx]
            noise = draw_noise(gen, (idx.size * m, config.noise_dim),
                               config.noise_law)
            inputs = np.hstack([np.repeat(xb, m, axis=0), noise])
            out, cache = net.forward_cached(inputs)
            loss, dg = _energy_loss_batch(yb, out.reshape(idx.size, m))
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"non-finite training loss at epoch {epoch} "
                    f"(learning_rate={config.learning_rate})",
                    epoch=epoch, learning_rate=config.learning_rate)
            dws, dbs = net.backward(cache, dg.reshape(-1))
            opt.step(dws, dbs)
            epoch_loss += loss * idx.size
        trace[epoch] = epoch_loss / n
    if not net.params_finite():
        raise TrainingDivergenceError(
            f"non-finite weights after training "
            f"(learning_rate={config.learning_rate})",
            epoch=config.epochs - 1, learning_rate=config.learning_rate)
    return EngressionModel(net=net, config=config, loss_trace=trace, n_features=d)


def sample(model: EngressionModel, x, count: int, rng: RngStream) -> np.ndarray:
    """Draw count independent responses g(x, eta) at one feature vector."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.n_features:
        raise ValueError(
            f"feature dimension mismatch: model expects {model.n_features}, "
            f"got {x.size}")
    if count < 1:
        raise ValueError("count must be positive")
    gen = rng.generator()
    noise = draw_noise(gen, (count, model.noise_dim), model.noise_law)
    return model.forward(np.tile(x, (count, 1)), noise)


def save_model(model: EngressionModel, path) -> None:
    """Serialize to a JSON text file with a config echo."""
    doc = {
        "layer_sizes": model.net.sizes,
        "weights": [w.ravel().tolist() for w in model.net.weights],
        "biases": [b.tolist() for b in model.net.biases],
        "n_features": model.n_features,
        "loss_trace": model.loss_trace.tolist(),
        "config": asdict(model.config),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> EngressionModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg_doc = doc["config"]
    cfg_doc["hidden_sizes"] = tuple(cfg_doc["hidden_sizes"])
    config = EngressionConfig(**cfg_doc)
    sizes = doc["layer_sizes"]
    net = Mlp(sizes, np.random.default_rng(0))
    net.weights = [np.array(w, dtype=float).reshape(fi, fo)
                   for w, fi, fo in zip(doc["weights"], sizes[:-1], sizes[1:])]
    net.biases = [np.array(b, dtype=float) for b in doc["biases"]]
    return EngressionModel(net=net, config=config,
                           loss_trace=np.array(doc["loss_trace"], dtype=float),
                           n_features=int(doc["n_features"]))
