"""Dense ReLU networks with hand-written backprop and Adam.

The same machinery backs the noise-injecting generative model and the
weighted network regressor; both are scalar-output MLPs that differ only
in input dimension and in the loss gradient fed to backward().
All math is float64 numpy. The ReLU subgradient at 0 is taken as 0.
"""

from __future__ import annotations

import numpy as np


class Mlp:
    """Fully connected net, ReLU hidden layers, linear scalar output.

    sizes lists layer widths input first, e.g. [6, 100, 100, 1].
    Weights start Glorot uniform in +-sqrt(6/(fan_in+fan_out)), biases
    at zero, drawn from the supplied generator.
    """

    def __init__(self, sizes: list[int], gen: np.random.Generator):
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        if sizes[-1] != 1:
            raise ValueError("output layer must be scalar")
        self.sizes = [int(s) for s in sizes]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(gen.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Map (n, d_in) to (n,) predictions."""
        a = np.asarray(x, dtype=float)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
        return (a @ self.weights[-1] + self.biases[-1]).ravel()

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping the activations backward() needs."""
        a = np.asarray(x, dtype=float)
        activations = [a]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
            activations.append(a)
        out = (a @ self.weights[-1] + self.biases[-1]).ravel()
        return out, activations

    def backward(self, activations: list[np.ndarray], dout: np.ndarray):
        """Gradients of sum_i dout_i * out_i with respect to all parameters.

        dout is (n,), the loss gradient with respect to each output row.
        Returns (dweights, dbiases) shaped like the parameter lists.
        """
        n_layers = len(self.weights)
        dws = [None] * n_layers
        dbs = [None] * n_layers
        delta = np.asarray(dout, dtype=float).reshape(-1, 1)
        for layer in range(n_layers - 1, -1, -1):
            a_prev = activations[layer]
            dws[layer] = a_prev.T @ delta
            dbs[layer] = delta.sum(axis=0)
            if layer > 0:
                # activations[layer] is the post-ReLU output of this layer's
                # input, positive exactly where the preactivation was positive
                delta = (delta @ self.weights[layer].T) * (activations[layer] > 0.0)
        return dws, dbs

    def params_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and \
            all(np.isfinite(b).all() for b in self.biases)


class Adam:
    """Adam on an Mlp's parameters, conventional moment defaults."""

    def __init__(self, model: Mlp, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.model = model
        self.lr = float(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m_w = [np.zeros_like(w) for w in model.weights]
        self.v_w = [np.zeros_like(w) for w in model.weights]
        self.m_b = [np.zeros_like(b) for b in model.biases]
        self.v_b = [np.zeros_like(b) for b in model.biases]

    def step(self, dws, dbs) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i in range(len(self.model.weights)):
            for param, grad, m, v in (
                    (self.model.weights[i], dws[i], self.m_w[i], self.v_w[i]),
                    (self.model.biases[i], dbs[i], self.m_b[i], self.v_b[i])):
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                param -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
