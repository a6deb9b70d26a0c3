"""Matrix-factorization recommender trained with a pairwise ranking loss.

The unlearning pipeline is model-agnostic and only ever consumes the user
embedding matrix; item embeddings stay frozen once training ends.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import InteractionDataset
from .nets import OptimizerState, optimizer_step

CHECKPOINT_MAGIC = b"LEGOCF01"


@dataclass
class CFTrainConfig:
    dim: int = 32
    epochs: int = 20
    learning_rate: float = 1e-3
    l2_weight: float = 1e-5
    negatives_per_positive: int = 1
    batch_size: int = 1024
    seed: int = 0

    def __post_init__(self):
        if min(self.dim, self.epochs + 1, self.negatives_per_positive, self.batch_size) <= 0:
            raise ValueError("CF config values must be positive (epochs may be 0)")
        if self.learning_rate <= 0 or self.l2_weight < 0:
            raise ValueError("bad learning rate / l2 weight")


@dataclass
class CFModel:
    user_embeddings: np.ndarray  # (N, d)
    item_embeddings: np.ndarray  # (M, d)
    train_diagnostics: dict | None = None

    @property
    def dim(self) -> int:
        return self.user_embeddings.shape[1]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def pairwise_loss(
    user_emb: np.ndarray, item_emb: np.ndarray, triples: np.ndarray
) -> float:
    """Mean -log sigmoid(s_ui - s_uj) over (user, pos, neg) triples."""
    u, i, j = triples[:, 0], triples[:, 1], triples[:, 2]
    x = np.einsum("nd,nd->n", user_emb[u], item_emb[i] - item_emb[j])
    # -log sigmoid(x) = log(1 + exp(-x)), stable form
    return float(np.logaddexp(0.0, -x).mean())


def _sample_negatives(
    rng: np.random.Generator, users: np.ndarray, n_items: int, positives: np.ndarray | None
) -> np.ndarray:
    neg = rng.integers(0, n_items, size=len(users))
    if positives is None:
        return neg
    for _ in range(20):
        bad = positives[users, neg]
        if not bad.any():
            break
        neg[bad] = rng.integers(0, n_items, size=int(bad.sum()))
    return neg


def train_cf(dataset: InteractionDataset, config: CFTrainConfig) -> CFModel:
    """Train user/item embeddings with BPR-style sampled pairwise updates.

    Deterministic given the seed. Aborts on non-finite loss. The returned
    model carries a diagnostics dict with the pairwise loss on a fixed triple
    sample before and after training.
    """
    if len(dataset.train_pairs) == 0:
        raise ValueError("empty train set")
    rng = np.random.default_rng(config.seed)
    n, m, d = dataset.n_users, dataset.n_items, config.dim
    user_emb = 0.1 * rng.standard_normal((n, d))
    item_emb = 0.1 * rng.standard_normal((m, d))

    positives = None
    if n * m <= 50_000_000:
        positives = np.zeros((n, m), dtype=bool)
        positives[dataset.train_pairs[:, 0], dataset.train_pairs[:, 1]] = True

    diag_idx = rng.integers(0, len(dataset.train_pairs), size=min(4096, len(dataset.train_pairs)))
    diag_pairs = dataset.train_pairs[diag_idx]
    diag_neg = _sample_negatives(rng, diag_pairs[:, 0], m, positives)
    diag_triples = np.column_stack([diag_pairs, diag_neg])
    initial_loss = pairwise_loss(user_emb, item_emb, diag_triples)

    state = OptimizerState(learning_rate=config.learning_rate)
    epoch_losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(dataset.train_pairs))
        for start in range(0, len(order), config.batch_size):
            pairs = dataset.train_pairs[order[start : start + config.batch_size]]
            if config.negatives_per_positive > 1:
                pairs = np.repeat(pairs, config.negatives_per_positive, axis=0)
            u, i = pairs[:, 0], pairs[:, 1]
            j = _sample_negatives(rng, u, m, positives)
            du = item_emb[i] - item_emb[j]
            x = np.einsum("nd,nd->n", user_emb[u], du)
            coeff = -_sigmoid(-x)[:, None] / len(u)  # d(mean loss)/dx, per row
            gu = np.zeros_like(user_emb)
            gi = np.zeros_like(item_emb)
            np.add.at(gu, u, coeff * du + (config.l2_weight / len(u)) * user_emb[u])
            np.add.at(gi, i, coeff * user_emb[u] + (config.l2_weight / len(u)) * item_emb[i])
            np.add.at(gi, j, -coeff * user_emb[u] + (config.l2_weight / len(u)) * item_emb[j])
            optimizer_step(state, [user_emb, item_emb], [gu, gi])
        loss = pairwise_loss(user_emb, item_emb, diag_triples)
        if not np.isfinite(loss):
            raise RuntimeError(f"training diverged (loss={loss}) at epoch {len(epoch_losses)}")
        epoch_losses.append(loss)

    final_loss = epoch_losses[-1] if epoch_losses else initial_loss
    return CFModel(
        user_emb,
        item_emb,
        train_diagnostics={
            "initial_loss": initial_loss,
            "final_loss": final_loss,
            "epoch_losses": epoch_losses,
        },
    )


def score_user(model: CFModel, user: int) -> np.ndarray:
    """Dot-product scores of one user against every item."""
    if not 0 <= user < len(model.user_embeddings):
        raise IndexError(f"user {user} out of range")
    return model.user_embeddings[user] @ model.item_embeddings.T


def top_k(model_or_embeddings, user: int, k: int, exclusions=frozenset()) -> np.ndarray:
    """Top-k item ids for a user, descending score, ties to the smaller id.

    Accepts either a CFModel or a ``(user_embeddings, item_embeddings)`` pair,
    so rankings can be produced for calibrated/combined user matrices without
    touching the item side.
    """
    if isinstance(model_or_embeddings, CFModel):
        user_emb, item_emb = model_or_embeddings.user_embeddings, model_or_embeddings.item_embeddings
    else:
        user_emb, item_emb = model_or_embeddings
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 <= user < len(user_emb):
        raise IndexError(f"user {user} out of range")
    m = len(item_emb)
    available = m - len(exclusions)
    if k > available:
        raise ValueError(f"k={k} exceeds {available} rankable items")
    scores = user_emb[user] @ item_emb.T
    if exclusions:
        scores = scores.copy()
        scores[list(exclusions)] = -np.inf
    order = np.lexsort((np.arange(m), -scores))
    return order[:k]


def save_model(model: CFModel, path) -> None:
    n, d = model.user_embeddings.shape
    m = model.item_embeddings.shape[0]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<III", n, m, d))
        fh.write(np.ascontiguousarray(model.user_embeddings, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.item_embeddings, dtype="<f8").tobytes())


def load_model(path) -> CFModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        n, m, d = struct.unpack("<III", fh.read(12))
        users = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).copy()
        items = np.frombuffer(fh.read(8 * m * d), dtype="<f8").reshape(m, d).copy()
    return CFModel(users, items)
