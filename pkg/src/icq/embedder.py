"""Linear embedding with an optional softmax head for label supervision."""

import numpy as np

from .data import ValidationError


class LinearEmbedder:
    """Maps raw vectors through a trainable linear layer.

    The default construction is the identity, in which case embedding is a
    no-op. A softmax classifier head supplies the supervised loss whose
    gradient trains the weight.

    Args:
        d_raw: input dimensionality.
        d: embedding dimensionality (default d_raw, identity-initialized).
        n_classes: classifier head size; 0 disables the head.
        seed: initialization seed for non-square weights.
    """

    def __init__(self, d_raw: int, d: int | None = None, n_classes: int = 0, seed: int = 0):
        if d_raw < 1:
            raise ValidationError(f"d_raw must be >= 1, got {d_raw}")
        d = d_raw if d is None else d
        if d < 1:
            raise ValidationError(f"d must be >= 1, got {d}")
        self.d_raw = d_raw
        self.d = d
        if d == d_raw:
            self.weight = np.eye(d, dtype=np.float64)
        else:
            rng = np.random.default_rng(seed)
            self.weight = rng.standard_normal((d, d_raw)) / np.sqrt(d_raw)
        self.n_classes = n_classes
        if n_classes:
            # Zero head: uniform class probabilities before any training.
            self.classifier = np.zeros((n_classes, d), dtype=np.float64)
            self.bias = np.zeros(n_classes, dtype=np.float64)
        else:
            self.classifier = None
            self.bias = None

    def embed(self, raw: np.ndarray) -> np.ndarray:
        """Apply the linear map to (n, d_raw) rows."""
        raw = np.asarray(raw)
        if raw.ndim != 2 or raw.shape[1] != self.d_raw:
            raise ValidationError(f"raw shape {raw.shape} does not match d_raw={self.d_raw}")
        return raw @ self.weight.T

    def classification_loss(
        self, raw: np.ndarray, labels: np.ndarray
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean softmax cross-entropy and gradients for weight, classifier, bias.

        Args:
            raw: (n, d_raw) input rows.
            labels: (n,) int class ids in [0, n_classes).
        """
        if self.classifier is None:
            raise RuntimeError("classification_loss requires a classifier head")
        raw = np.asarray(raw, dtype=np.float64)
        labels = np.asarray(labels)
        n = raw.shape[0]
        if labels.shape != (n,):
            raise ValidationError(f"labels shape {labels.shape} does not match n={n}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValidationError("labels out of range for the classifier head")

        x = self.embed(raw)
        logits = x @ self.classifier.T + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        probs = exp / exp.sum(axis=1, keepdims=True)
        loss = float(-np.mean(np.log(probs[np.arange(n), labels])))

        dlogits = probs
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        dx = dlogits @ self.classifier
        grads = {
            "weight": dx.T @ raw,
            "classifier": dlogits.T @ x,
            "bias": dlogits.sum(axis=0),
        }
        return loss, grads
