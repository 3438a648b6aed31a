"""Plain minibatch SGD with softmax cross-entropy, in either execution mode."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .simulator import run_backward, run_forward


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(z)
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class TrainResult:
    losses: list
    params: dict
    accuracy: float

    def to_dict(self):
        return {"losses": list(self.losses), "accuracy": self.accuracy, "steps": len(self.losses)}


def predict(model, params, plan, x, mode="monolithic", nsr=0.0, seed=0):
    out, _, _ = run_forward(model, params, plan, x, mode, nsr=nsr, seed=seed)
    return np.argmax(np.atleast_2d(out), axis=1)


def train(model, params, plan, data, epochs, lr, seed=0, mode="decomposed", batch_size=16,
          nsr=0.0, concurrent=False):
    """SGD for ``epochs`` passes over ``data = (x, labels)``.

    Samples are shuffled each epoch from ``seed``.  Conv factors from each
    step warm-start the split of the next.  With ``nsr > 0`` residuals are
    masked during training and during the final accuracy evaluation.
    Parameters are copied, never modified in place.
    """
    x, labels = data
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    params = copy.deepcopy(params)
    rng = np.random.default_rng(seed)
    losses = []
    warm = {}
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start : start + batch_size]
            step_seed = seed * 1_000_003 + step
            out, _, cache = run_forward(model, params, plan, x[idx], mode, concurrent,
                                        nsr, step_seed, warm)
            loss, dout = softmax_cross_entropy(out, labels[idx])
            grads, _ = run_backward(model, params, plan, cache, dout, concurrent)
            warm = {i: fs[0] for i, fs in cache.factors.items()}
            for i, g in grads.items():
                params[i]["w"] = params[i]["w"] - lr * g["w"]
                params[i]["b"] = params[i]["b"] - lr * g["b"]
            losses.append(loss)
            step += 1
    pred = predict(model, params, plan, x, mode, nsr, seed * 1_000_003 + step)
    accuracy = float(np.mean(pred == labels))
    return TrainResult(losses, params, accuracy)
