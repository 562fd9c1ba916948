"""AutoRec embedding stage.

A one-hidden-layer autoencoder reconstructs partially observed rating
vectors (user rows for the user-oriented model, item columns for the
item-oriented one). After training, its hidden activations serve as frozen
embeddings for the domain-adaptation network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .nncore import (AdamState, Dense, MLP, adam_step, add_l2_grad, load_into,
                     params_to_tensors, rng_stream, squared_norm, zero_grads)
from .ratings import RatingMatrix


class AutoRec:
    """Parameters W1 (k x d), b1 (k), W2 (d x k), b2 (d)."""

    def __init__(self, d: int, k: int, std: float = 0.01, seed=None,
                 hidden: str = "sigmoid", output: str = "identity"):
        if k < 1 or d < 1:
            raise ValueError("AutoRec needs k >= 1 and d >= 1")
        rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
        enc = Dense(d, k, hidden, std=std, seed=rng)
        dec = Dense(k, d, output, std=std, seed=rng)
        enc.W.name, enc.b.name, dec.W.name, dec.b.name = "W1", "b1", "W2", "b2"
        self.net = MLP([enc, dec])

    @property
    def d(self) -> int:
        return self.net.n_in

    @property
    def k(self) -> int:
        return self.net.layers[0].n_out

    @property
    def W1(self):
        return self.net.layers[0].W

    @property
    def b1(self):
        return self.net.layers[0].b

    @property
    def W2(self):
        return self.net.layers[1].W

    @property
    def b2(self):
        return self.net.layers[1].b

    def params(self):
        return self.net.params()

    def tensors(self) -> dict[str, np.ndarray]:
        return params_to_tensors(self.params())

    def load(self, tensors) -> None:
        load_into(self.params(), tensors)


def reconstruct(p: AutoRec, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != p.d:
        raise ValueError(f"rating vector length {y.shape[-1]} != {p.d}")
    return p.net(y)


def encode(p: AutoRec, y: np.ndarray) -> np.ndarray:
    return p.net.layers[0].forward(np.asarray(y, dtype=np.float64))[0]


def autorec_loss(p: AutoRec, values: np.ndarray, mask: np.ndarray, alpha: float,
                 backward: bool = False) -> float:
    """Masked squared reconstruction error summed over the batch plus ``alpha`` times
    the squared norms of W1, W2, b1, b2.

    Unobserved positions are zeroed before the encoder sees them, so the mask
    alone decides what enters both the input and the data term. With
    ``backward=True`` the gradient is accumulated into each parameter.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    mask = np.atleast_2d(np.asarray(mask, dtype=np.float64))
    if values.shape[0] == 0:
        raise ValueError("empty batch")
    x = np.where(mask > 0, values, 0.0)
    y_hat, cache = p.net.forward(x)
    resid = (y_hat - x) * mask
    loss = float(np.sum(resid * resid)) + alpha * squared_norm(p.params())
    if backward:
        p.net.backward(cache, 2.0 * resid)
        add_l2_grad(p.params(), alpha)
    return loss


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    val_rmse: list[tuple[int, float]] = field(default_factory=list)
    best_epoch: int | None = None


def masked_rmse(p: AutoRec, inputs: RatingMatrix, truth: RatingMatrix) -> float:
    """RMSE on ``truth``'s entries, reconstructing each row from ``inputs``."""
    r, c, v = truth.entries()
    if len(v) == 0:
        return float("nan")
    pred = predict_entries(p, inputs, r, c)
    return float(np.sqrt(np.mean((pred - v) ** 2)))


def predict_entries(p: AutoRec, inputs: RatingMatrix, rows: np.ndarray, cols: np.ndarray,
                    clip: tuple[float, float] | None = (1.0, 5.0)) -> np.ndarray:
    """Predictions at (row, col) positions from rows reconstructed off ``inputs``."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    out = np.empty(len(rows))
    uniq, inv = np.unique(rows, return_inverse=True)
    for start in range(0, len(uniq), 512):
        chunk = uniq[start:start + 512]
        values, mask = inputs.rows_dense(chunk)
        rec = reconstruct(p, np.where(mask > 0, values, 0.0))
        sel = (inv >= start) & (inv < start + len(chunk))
        out[sel] = rec[inv[sel] - start, cols[sel]]
    if clip is not None:
        out = np.clip(out, *clip)
    return out


def train_autorec(m: RatingMatrix, k: int, alpha: float = 1e-3, lr: float = 1e-3,
                  batch_size: int = 64, epochs: int = 100, seed: int = 0,
                  val: RatingMatrix | None = None, eval_every: int = 10,
                  patience: int | None = None, std: float = 0.01,
                  extra: list[RatingMatrix] | None = None) -> tuple[AutoRec, TrainHistory]:
    """Fit an AutoRec on the rows of ``m`` with mini-batch Adam.

    ``extra`` matrices (same column space) contribute additional training
    rows; this is how one autoencoder is shared across both domains when the
    row vectors have equal length. When ``val`` is given, validation RMSE is
    tracked every ``eval_every`` epochs and the best parameters are kept;
    ``patience`` (in evaluations) stops training early.
    """
    if m.nnz == 0:
        raise ValueError("cannot train AutoRec on an empty matrix")
    mats = [m] + list(extra or [])
    for other in mats[1:]:
        if other.n_items != m.n_items:
            raise ValueError("extra matrices must have the same row length")
    p = AutoRec(m.n_items, k, std=std, seed=rng_stream(seed, "autorec.init"))
    hist = TrainHistory()
    if epochs <= 0:
        return p, hist
    shuffle = rng_stream(seed, "autorec.shuffle")
    state = AdamState(lr=lr)
    params = p.params()
    rows = mats[0] if len(mats) == 1 else RatingMatrix(
        sp.vstack([mat.csr for mat in mats]).tocsr(),
        [f"{j}:{u}" for j, mat in enumerate(mats) for u in mat.user_ids], m.item_ids)
    n = rows.n_users
    best, best_score, stale = None, np.inf, 0
    for epoch in range(epochs):
        order = shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            values, mask = rows.rows_dense(idx)
            zero_grads(params)
            total += autorec_loss(p, values, mask, alpha, backward=True)
            adam_step(params, state)
        if not np.isfinite(total):
            raise FloatingPointError(f"AutoRec loss diverged at epoch {epoch}")
        hist.loss.append(total)
        if val is not None and val.nnz and ((epoch + 1) % eval_every == 0 or epoch + 1 == epochs):
            score = masked_rmse(p, m, val)
            hist.val_rmse.append((epoch + 1, score))
            if score < best_score:
                best_score, best, stale = score, p.tensors(), 0
                best = {name: arr.copy() for name, arr in best.items()}
                hist.best_epoch = epoch + 1
            else:
                stale += 1
                if patience is not None and stale >= patience:
                    break
    if best is not None:
        p.load(best)
    return p, hist


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray
    domain: str
    orientation: str
    ids: tuple[str, ...] = ()

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


def extract_embeddings(p: AutoRec, m: RatingMatrix, domain: str = "source",
                       orientation: str = "user") -> EmbeddingSet:
    """Hidden-layer code g(W1 y + b1) for every row of ``m``."""
    if m.n_items != p.d:
        raise ValueError(f"matrix rows have length {m.n_items}, AutoRec expects {p.d}")
    chunks = []
    for start in range(0, m.n_users, 1024):
        values, mask = m.rows_dense(np.arange(start, min(start + 1024, m.n_users)))
        chunks.append(encode(p, np.where(mask > 0, values, 0.0)))
    return EmbeddingSet(np.vstack(chunks), domain, orientation, m.user_ids)
