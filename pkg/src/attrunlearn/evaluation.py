"""Attack-based and ranking-based evaluation of a user embedding matrix.

The attacker is a dense classifier trained per fold on the embeddings it is
evaluated against (gray-box: released embeddings only, never the originals
when scoring a manipulated matrix). Ranking quality is leave-one-out HR@K /
NDCG@K against the full negative item set.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import nets
from .data import AttributeTable, InteractionDataset
from .nets import DenseNetwork, OptimizerState

log = logging.getLogger(__name__)


@dataclass
class FoldSpec:
    seed: int
    assignments: np.ndarray  # (N,) fold index per user
    n_folds: int = 5


@dataclass
class AttributeAttackStats:
    bacc_mean: float
    bacc_std: float
    f1_mean: float
    f1_std: float


@dataclass
class AttackReport:
    per_attribute: dict[str, AttributeAttackStats]
    bacc_average: float
    f1_average: float

    def to_json(self) -> str:
        payload = {
            name: {
                "bacc_mean": s.bacc_mean,
                "bacc_std": s.bacc_std,
                "f1_mean": s.f1_mean,
                "f1_std": s.f1_std,
            }
            for name, s in self.per_attribute.items()
        }
        payload["averages"] = {"bacc": self.bacc_average, "f1": self.f1_average}
        return json.dumps(payload, indent=2, sort_keys=True)


@dataclass
class RecReport:
    hr: float
    ndcg: float
    k: int
    per_user_rank: np.ndarray | None = None

    def to_json(self) -> str:
        return json.dumps({"hr_at_k": self.hr, "ndcg_at_k": self.ndcg, "k": self.k}, indent=2)


def make_folds(n_users: int, n_folds: int = 5, seed: int = 0) -> FoldSpec:
    """Partition users into folds whose sizes differ by at most one."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_users)
    assignments = np.empty(n_users, dtype=np.int64)
    assignments[order] = np.arange(n_users) % n_folds
    return FoldSpec(seed=seed, assignments=assignments, n_folds=n_folds)


def bacc(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Balanced accuracy in percent: mean per-class recall over observed classes."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions/labels length mismatch")
    recalls = []
    for cls in np.unique(labels):
        mask = labels == cls
        recalls.append(float((predictions[mask] == cls).mean()))
    return 100.0 * float(np.mean(recalls))


def micro_f1(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Micro-averaged F1 in percent via pooled TP/FP/FN counts.

    For single-label multiclass prediction this equals plain accuracy: every
    error is simultaneously one false positive and one false negative.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions/labels length mismatch")
    classes = np.union1d(predictions, labels)
    tp = fp = fn = 0
    for cls in classes:
        tp += int(((predictions == cls) & (labels == cls)).sum())
        fp += int(((predictions == cls) & (labels != cls)).sum())
        fn += int(((predictions != cls) & (labels == cls)).sum())
    if tp == 0 and fp == 0 and fn == 0:
        return 0.0
    return 100.0 * 2.0 * tp / (2.0 * tp + fp + fn)


def train_attacker(
    embeddings: np.ndarray,
    labels: np.ndarray,
    cardinality: int,
    seed: int = 0,
    hidden: int = 100,
    l2: float = 1.0,
    learning_rate: float = 1e-2,
    max_iterations: int = 500,
    tol: float = 1e-4,
    n_iter_no_change: int = 10,
) -> DenseNetwork:
    """Train the adversarial classifier on raw embeddings.

    Full-batch Adam with an L2 weight penalty of l2/(2*n_samples)*sum(W^2),
    stopping early once the penalized loss stops improving by ``tol`` for
    ``n_iter_no_change`` consecutive iterations.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ValueError("attacker needs at least 2 classes in the training data")
    net = nets.init_network([embeddings.shape[1], hidden, cardinality], seed)
    opt = OptimizerState(learning_rate=learning_rate)
    n = len(labels)
    best = np.inf
    stale = 0
    for _ in range(max_iterations):
        logits = nets.forward(net, embeddings)
        loss, logit_grads = nets.log_softmax_nll(logits, labels)
        penalty = 0.0
        for layer in net.layers:
            penalty += float((layer.weights**2).sum())
        loss += l2 * penalty / (2.0 * n)
        bundle = nets.backward(net, embeddings, logit_grads)
        for li, layer in enumerate(net.layers):
            bundle.param_grads[2 * li] += (l2 / n) * layer.weights
        nets.optimizer_step(opt, net.parameters(), bundle.param_grads)
        if loss < best - tol:
            best = loss
            stale = 0
        else:
            stale += 1
            if stale >= n_iter_no_change:
                break
    return net


def predict(net: DenseNetwork, embeddings: np.ndarray) -> np.ndarray:
    return nets.forward(net, embeddings).argmax(axis=1)


def _attack_one(
    U: np.ndarray, labels: np.ndarray, cardinality: int, folds: FoldSpec, **kwargs
) -> AttributeAttackStats:
    spec = folds
    for attempt in range(20):
        ok = all(
            len(np.unique(labels[spec.assignments != f])) >= 2 for f in range(spec.n_folds)
        )
        if ok:
            break
        log.warning(
            "fold split (seed=%d) left a train side single-class; regenerating", spec.seed
        )
        spec = make_folds(len(U), spec.n_folds, spec.seed + 1 + attempt)
    else:
        raise ValueError("could not build folds with >=2 train classes")
    baccs, f1s = [], []
    for f in range(spec.n_folds):
        train_mask = spec.assignments != f
        net = train_attacker(
            U[train_mask], labels[train_mask], cardinality, seed=spec.seed * 1000 + f, **kwargs
        )
        preds = predict(net, U[~train_mask])
        baccs.append(bacc(preds, labels[~train_mask]))
        f1s.append(micro_f1(preds, labels[~train_mask]))
    return AttributeAttackStats(
        bacc_mean=float(np.mean(baccs)),
        bacc_std=float(np.std(baccs)),
        f1_mean=float(np.mean(f1s)),
        f1_std=float(np.std(f1s)),
    )


def attack_metrics(
    U: np.ndarray, attributes: AttributeTable | list, folds: FoldSpec, **attacker_kwargs
) -> AttackReport:
    """Five-fold cross-validated attack against every attribute in the table.

    Classifiers are always trained on the same matrix they are evaluated on.
    """
    if isinstance(attributes, AttributeTable):
        entries = [(a.name, a.labels, a.cardinality) for a in attributes.attributes]
    else:
        entries = attributes
    per_attr = {}
    for name, labels, cardinality in entries:
        labels = np.asarray(labels)
        if len(labels) != len(U):
            raise ValueError(f"attribute {name!r}: labels do not cover all users")
        per_attr[name] = _attack_one(U, labels, cardinality, folds, **attacker_kwargs)
    return AttackReport(
        per_attribute=per_attr,
        bacc_average=float(np.mean([s.bacc_mean for s in per_attr.values()])),
        f1_average=float(np.mean([s.f1_mean for s in per_attr.values()])),
    )


def hr_ndcg_at_k(
    user_embeddings: np.ndarray,
    item_embeddings: np.ndarray,
    dataset: InteractionDataset,
    k: int = 10,
    keep_ranks: bool = False,
) -> RecReport:
    """Leave-one-out HR@K and NDCG@K over the full negative item set.

    Each user's held-out item is ranked among all items outside their train
    set; score ties resolve toward the smaller item id. A hit contributes
    1/log2(rank+1) to NDCG, so NDCG <= HR at the same K.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = dataset.n_users
    hits = np.zeros(n)
    gains = np.zeros(n)
    ranks = np.zeros(n, dtype=np.int64) if keep_ranks else None
    skipped = 0
    for u in range(n):
        test_item = int(dataset.test_items[u])
        if test_item < 0:
            skipped += 1
            log.warning("user %d has no test item; skipped", u)
            continue
        scores = user_embeddings[u] @ item_embeddings.T
        train_items = dataset.train_item_sets[u]
        if train_items:
            scores = scores.copy()
            scores[list(train_items)] = -np.inf
        s = scores[test_item]
        rank = 1 + int((scores > s).sum())
        rank += int(((scores == s) & (np.arange(len(scores)) < test_item)).sum())
        if ranks is not None:
            ranks[u] = rank
        if rank <= k:
            hits[u] = 1.0
            gains[u] = 1.0 / np.log2(rank + 1)
    denom = max(n - skipped, 1)
    return RecReport(
        hr=float(hits.sum() / denom),
        ndcg=float(gains.sum() / denom),
        k=k,
        per_user_rank=ranks,
    )
