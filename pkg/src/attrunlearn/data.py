"""MovieLens-style ingestion: parsing, attribute binning, leave-one-out splits.

Also provides a synthetic generator with attributes planted as linear signal
in the user preference vectors, used as a controllable test bed.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

ML100K_OCCUPATIONS = (
    "administrator", "artist", "doctor", "educator", "engineer",
    "entertainment", "executive", "healthcare", "homemaker", "lawyer",
    "librarian", "marketing", "none", "other", "programmer", "retired",
    "salesman", "scientist", "student", "technician", "writer",
)


@dataclass
class UserRecord:
    age: int
    gender: str
    occupation: str


@dataclass
class RawRatings:
    ratings: np.ndarray  # (n, 4) int64 columns: user, item, rating, timestamp
    users: dict[int, UserRecord]


@dataclass
class Attribute:
    name: str
    cardinality: int
    labels: np.ndarray  # (N,) ints in [0, cardinality)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.cardinality):
            raise ValueError(
                f"attribute {self.name!r}: labels outside [0, {self.cardinality})"
            )


@dataclass
class AttributeTable:
    attributes: list[Attribute]
    user_ids: np.ndarray  # raw user id per label row

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def get(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(f"unknown attribute {name!r}; have {self.names}")

    def subset(self, names) -> "AttributeTable":
        return AttributeTable([self.get(n) for n in names], self.user_ids)

    def align(self, dataset: "InteractionDataset") -> "AttributeTable":
        """Reorder label rows to the dataset's dense user index."""
        pos = {int(u): i for i, u in enumerate(self.user_ids)}
        missing = [int(u) for u in dataset.user_ids if int(u) not in pos]
        if missing:
            raise ValueError(f"no attribute labels for raw users {missing[:5]}")
        order = np.array([pos[int(u)] for u in dataset.user_ids])
        return AttributeTable(
            [Attribute(a.name, a.cardinality, a.labels[order]) for a in self.attributes],
            dataset.user_ids.copy(),
        )


@dataclass
class InteractionDataset:
    n_users: int
    n_items: int
    train_pairs: np.ndarray  # (T, 2) dense (user, item)
    test_items: np.ndarray  # (N,) dense item per user
    train_item_sets: list[set[int]]
    user_ids: np.ndarray  # dense -> raw
    item_ids: np.ndarray  # dense -> raw
    oracle_embeddings: np.ndarray | None = None  # synthetic generator only
    oracle_item_embeddings: np.ndarray | None = None

    def fingerprint(self) -> str:
        """Stable content hash used as a cache key component."""
        h = hashlib.sha256()
        h.update(np.int64([self.n_users, self.n_items]).tobytes())
        h.update(np.ascontiguousarray(self.train_pairs, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.test_items, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    def summary(self) -> dict:
        n_inter = len(self.train_pairs) + self.n_users
        return {
            "users": self.n_users,
            "items": self.n_items,
            "interactions": n_inter,
            "train_interactions": int(len(self.train_pairs)),
            "sparsity_percent": round(100.0 * (1.0 - n_inter / (self.n_users * self.n_items)), 3),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _parse_ratings(path, sep: str, name: str) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) != 4:
                raise ValueError(f"{name}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                rows.append([int(p) for p in parts])
            except ValueError as exc:
                raise ValueError(f"{name}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{name}: no rating rows")
    arr = np.array(rows, dtype=np.int64)
    if arr[:, 0].min() < 0 or arr[:, 1].min() < 0:
        raise ValueError(f"{name}: negative ids")
    return arr


def load_ml100k(data_path, user_path) -> RawRatings:
    """Parse the tab-separated ``u.data`` and pipe-separated ``u.user`` files."""
    ratings = _parse_ratings(data_path, "\t", str(data_path))
    users: dict[int, UserRecord] = {}
    with open(user_path, "r", encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("|")
            if len(parts) != 5:
                raise ValueError(f"{user_path}:{lineno}: expected 5 fields, got {len(parts)}")
            users[int(parts[0])] = UserRecord(int(parts[1]), parts[2], parts[3])
    if not users:
        raise ValueError(f"{user_path}: no user rows")
    return RawRatings(ratings, users)


def load_ml1m(ratings_path, users_path) -> RawRatings:
    """Parse the '::'-separated ``ratings.dat`` / ``users.dat`` files."""
    ratings = _parse_ratings(ratings_path, "::", str(ratings_path))
    users: dict[int, UserRecord] = {}
    with open(users_path, "r", encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 5:
                raise ValueError(f"{users_path}:{lineno}: expected 5 fields, got {len(parts)}")
            # users.dat order is id::gender::age::occupation::zip
            users[int(parts[0])] = UserRecord(int(parts[2]), parts[1], parts[3])
    if not users:
        raise ValueError(f"{users_path}: no user rows")
    return RawRatings(ratings, users)


def _age_bin(age: int, dataset_tag: str) -> int:
    lo, hi = (28, 40) if dataset_tag == "ml-100k" else (25, 35)
    if age < lo:
        return 0
    if age <= hi:
        return 1
    return 2


def bin_attributes(
    raw: RawRatings, dataset_tag: str, dataset: InteractionDataset | None = None
) -> AttributeTable:
    """Encode gender/age/occupation as dense categorical labels.

    Gender: M=0, F=1. Age: three bins (<28, 28-40, >40 for ml-100k;
    <25, 25-35, >35 for ml-1m). Occupation: the 21 canonical categories
    (ml-100k strings, ml-1m integer codes). Rows follow raw-user-id order, or
    the dataset's dense index when one is supplied.
    """
    if dataset_tag not in ("ml-100k", "ml-1m"):
        raise ValueError(f"unknown dataset tag {dataset_tag!r}")
    ids = np.array(sorted(raw.users), dtype=np.int64)
    gender = np.empty(len(ids), dtype=np.int64)
    age = np.empty(len(ids), dtype=np.int64)
    occupation = np.empty(len(ids), dtype=np.int64)
    occ_index = {name: i for i, name in enumerate(ML100K_OCCUPATIONS)}
    for row, uid in enumerate(ids):
        rec = raw.users[int(uid)]
        g = rec.gender.strip().upper()
        if g not in ("M", "F"):
            raise ValueError(f"user {uid}: unknown gender {rec.gender!r}")
        gender[row] = 0 if g == "M" else 1
        age[row] = _age_bin(rec.age, dataset_tag)
        occ = rec.occupation.strip()
        if dataset_tag == "ml-100k":
            if occ not in occ_index:
                raise ValueError(f"user {uid}: unknown occupation {occ!r}")
            occupation[row] = occ_index[occ]
        else:
            code = int(occ)
            if not 0 <= code < 21:
                raise ValueError(f"user {uid}: occupation code {code} outside [0, 21)")
            occupation[row] = code
    table = AttributeTable(
        [
            Attribute("gender", 2, gender),
            Attribute("age", 3, age),
            Attribute("occupation", 21, occupation),
        ],
        ids,
    )
    return table.align(dataset) if dataset is not None else table


def preprocess_split(raw: RawRatings, min_interactions: int = 5) -> InteractionDataset:
    """Leave-one-out split: drop light users, hold out each user's latest item.

    Ratings are treated as implicit positives. Timestamp ties are broken by
    the larger item id so the split is deterministic.
    """
    ratings = raw.ratings
    uids, counts = np.unique(ratings[:, 0], return_counts=True)
    kept = set(uids[counts >= min_interactions].tolist())
    if not kept:
        raise ValueError("no users meet the interaction threshold")
    mask = np.fromiter((int(u) in kept for u in ratings[:, 0]), bool, len(ratings))
    ratings = ratings[mask]

    user_ids = np.array(sorted(kept), dtype=np.int64)
    item_ids = np.unique(ratings[:, 1])
    umap = {int(u): i for i, u in enumerate(user_ids)}
    imap = {int(v): i for i, v in enumerate(item_ids)}

    n_users = len(user_ids)
    per_user: list[list[tuple[int, int]]] = [[] for _ in range(n_users)]
    for u_raw, v_raw, _, ts in ratings:
        per_user[umap[int(u_raw)]].append((int(ts), imap[int(v_raw)]))

    test_items = np.empty(n_users, dtype=np.int64)
    train_pairs = []
    train_item_sets: list[set[int]] = []
    for u in range(n_users):
        events = per_user[u]
        test_items[u] = max(events)[1]  # (timestamp, item) lexicographic
        items = {item for _, item in events if item != test_items[u]}
        train_item_sets.append(items)
        train_pairs.extend((u, item) for item in sorted(items))

    return InteractionDataset(
        n_users=n_users,
        n_items=len(item_ids),
        train_pairs=np.array(train_pairs, dtype=np.int64),
        test_items=test_items,
        train_item_sets=train_item_sets,
        user_ids=user_ids,
        item_ids=item_ids,
    )


def synthetic_dataset(
    n_users: int,
    n_items: int,
    d_signal: int,
    seed: int,
    cardinalities: tuple[int, ...] = (2,),
    items_per_user: int = 20,
    signal_scale: float = 0.3,
    block_noise: float = 0.1,
    noise_scale: float = 1.0,
    taste_dims: int = 12,
    item_signal_scale: float = 0.1,
) -> tuple[InteractionDataset, AttributeTable]:
    """Deterministic test bed with attributes planted as linear latent signal.

    Each attribute occupies its own ``d_signal``-wide block of the user
    preference vectors: class means drawn at ``signal_scale`` with tight
    within-class spread ``block_noise``, so a linear probe reads the label
    easily while the block stays a small fraction of the total variance. The
    remaining ``taste_dims`` carry attribute-free taste at ``noise_scale``.
    Items load on the signal blocks only at ``item_signal_scale`` (sensitive
    attributes are rarely the main driver of preference). With d_signal=0 the
    labels are independent of everything. The true vectors are attached to
    the returned dataset as ``oracle_embeddings`` / ``oracle_item_embeddings``;
    the user matrix is normalized to unit RMS.
    """
    if n_users < 4 or n_items < 4:
        raise ValueError("need at least 4 users and 4 items")
    if items_per_user >= n_items:
        raise ValueError("items_per_user must leave room for ranking")
    rng = np.random.default_rng(seed)
    k = len(cardinalities)
    d_total = k * d_signal + taste_dims

    labels = []
    for p in cardinalities:
        lab = rng.permutation(np.arange(n_users) % p)
        labels.append(lab.astype(np.int64))

    z = np.empty((n_users, d_total))
    z[:, k * d_signal :] = noise_scale * rng.standard_normal((n_users, taste_dims))
    for t, p in enumerate(cardinalities):
        if d_signal == 0:
            continue
        block = slice(t * d_signal, (t + 1) * d_signal)
        means = signal_scale * rng.standard_normal((p, d_signal))
        z[:, block] = means[labels[t]] + block_noise * rng.standard_normal((n_users, d_signal))
    z /= np.sqrt((z**2).mean())

    items = rng.standard_normal((n_items, d_total))
    items[:, : k * d_signal] *= item_signal_scale
    scores = z @ items.T
    scores = (scores - scores.mean(axis=1, keepdims=True)) / (
        scores.std(axis=1, keepdims=True) + 1e-12
    )
    gumbel = rng.gumbel(0.0, 0.7, size=scores.shape)
    order = np.argsort(-(scores + gumbel), axis=1, kind="stable")
    chosen = order[:, :items_per_user]

    train_pairs = []
    test_items = np.empty(n_users, dtype=np.int64)
    train_item_sets: list[set[int]] = []
    for u in range(n_users):
        stamps = rng.permutation(items_per_user)
        latest = int(np.argmax(stamps))
        test_items[u] = chosen[u, latest]
        items_u = {int(v) for j, v in enumerate(chosen[u]) if j != latest}
        train_item_sets.append(items_u)
        train_pairs.extend((u, v) for v in sorted(items_u))

    dataset = InteractionDataset(
        n_users=n_users,
        n_items=n_items,
        train_pairs=np.array(train_pairs, dtype=np.int64),
        test_items=test_items,
        train_item_sets=train_item_sets,
        user_ids=np.arange(n_users, dtype=np.int64),
        item_ids=np.arange(n_items, dtype=np.int64),
        oracle_embeddings=z,
        oracle_item_embeddings=items,
    )
    table = AttributeTable(
        [Attribute(f"attr{t}", p, labels[t]) for t, p in enumerate(cardinalities)],
        np.arange(n_users, dtype=np.int64),
    )
    return dataset, table
