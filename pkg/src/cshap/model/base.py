from __future__ import annotations

import numpy as np

N_CLASSES = 3


def as_batch(x) -> tuple[np.ndarray, bool]:
    """Coerce a WindowInstance, a (2, W) array or a (n, 2, W) batch to a batch."""
    if hasattr(x, "as_array"):
        return x.as_array()[None], True
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2:
        return a[None], True
    if a.ndim != 3:
        raise ValueError(f"expected (2, W) or (n, 2, W) input, got shape {a.shape}")
    return a, False


class Classifier:
    """Probability-emitting model over two-channel windows.

    Subclasses implement :meth:`_predict_batch`. ``n_evaluations`` counts
    windows passed through the model.
    """

    supports_masking = True
    n_classes = N_CLASSES
    window_size: int | None = None

    def __init__(self):
        self.n_evaluations = 0

    def predict_proba(self, x) -> np.ndarray:
        batch, single = as_batch(x)
        if self.window_size is not None and batch.shape[-1] != self.window_size:
            raise ValueError(f"model expects windows of length {self.window_size}, got {batch.shape[-1]}")
        self.n_evaluations += len(batch)
        p = self._predict_batch(batch)
        return p[0] if single else p

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=-1)

    def _predict_batch(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
