"""Step 2: merge per-attribute calibrated embeddings under simplex weights.

The weights are optimized against the summed contrastive MI estimate across
all requested attributes, with a softmax projection keeping them on the
simplex. Also houses the averaging ablation, the end-to-end joint optimizer,
and the empirical two-step-vs-joint gap check.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import mi
from .calibration import CalibrationConfig, CalibrationResult, _attribute_seed, project_ball
from .nets import OptimizerState, optimizer_step


@dataclass
class CombinationConfig:
    iterations: int = 500
    batch_size: int = 256
    step_size: float = 1e-2  # plain gradient step on the weights
    variational_lr: float = 1e-4
    hidden: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 2 or self.step_size <= 0:
            raise ValueError("bad combination config")

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class CombinationResult:
    alpha: np.ndarray
    embeddings: np.ndarray  # weighted combination under alpha
    attributes: list[str]
    per_attribute_mi: dict[str, float]
    mi_trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    alpha_trace: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def to_json(self) -> str:
        return json.dumps(
            {
                "alpha": self.alpha.tolist(),
                "attributes": self.attributes,
                "per_attribute_mi": self.per_attribute_mi,
            },
            indent=2,
            sort_keys=True,
        )


@dataclass
class BoundCheckReport:
    p1: float
    p2: float
    gap: float
    eps: float
    k: int
    c_norm: float  # Frobenius norm of the original embeddings (proxy for C)
    notes: str = (
        "c_norm is the Frobenius proxy for the spectral constant; the MI "
        "Lipschitz constant has no constructive value, so only the empirical "
        "gap is reported"
    )

    def to_json(self) -> str:
        return json.dumps(
            {k: (v if isinstance(v, (int, str)) else float(v)) for k, v in asdict(self).items()},
            indent=2,
            sort_keys=True,
        )


def project_simplex_softmax(alpha: np.ndarray) -> np.ndarray:
    """Softmax map onto the open simplex: strictly positive, unit sum, shift-invariant."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if not np.all(np.isfinite(alpha)):
        raise ValueError("weights must be finite")
    shifted = alpha - alpha.max()
    e = np.exp(shifted)
    return e / e.sum()


def combine(embeddings: list[np.ndarray], alpha: np.ndarray) -> np.ndarray:
    """Elementwise weighted sum of equally shaped matrices."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if len(embeddings) != len(alpha):
        raise ValueError(f"{len(embeddings)} matrices vs {len(alpha)} weights")
    if not embeddings:
        raise ValueError("nothing to combine")
    shape = embeddings[0].shape
    if any(e.shape != shape for e in embeddings):
        raise ValueError("embedding shapes differ")
    out = np.zeros(shape)
    for w, e in zip(alpha, embeddings):
        out += w * e
    return out


def _label_arrays(attributes: list[tuple[str, np.ndarray, int]]):
    names = [a[0] for a in attributes]
    labels = [np.asarray(a[1], dtype=np.int64) for a in attributes]
    cards = [int(a[2]) for a in attributes]
    return names, labels, cards


def summed_estimate_and_alpha_gradient(
    models: list,
    component_rows: list[np.ndarray],
    batch_labels: list[np.ndarray],
    alpha: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Batch value of the summed MI estimate at U(alpha) and its alpha gradient.

    The gradient chains the estimate's embedding gradient into each component:
    d/d alpha_i = sum over batch rows of <dI/dU(alpha), U_i>. Classifiers are
    not touched.
    """
    k = len(component_rows)
    batch = sum(w * r for w, r in zip(alpha, component_rows))
    total = 0.0
    grad_alpha = np.zeros(k)
    for t, model in enumerate(models):
        total += mi.estimate_vclub(model, batch, batch_labels[t]).value
        grad_rows = mi.vclub_input_gradient(model, batch, batch_labels[t])
        for i in range(k):
            grad_alpha[i] += float(np.sum(grad_rows * component_rows[i]))
    return total, grad_alpha


def optimize_weights(
    calibrated: list[CalibrationResult],
    attributes: list[tuple[str, np.ndarray, int]],
    config: CombinationConfig,
) -> CombinationResult:
    """Descend the summed MI estimate over the simplex weights.

    Weights start uniform. Per iteration: sample a batch of combined rows,
    one ascent step for each attribute's classifier, then a plain gradient
    step on the weights followed by the softmax projection. The weight
    gradient is the batch inner product between the estimate's embedding
    gradient and each component matrix.
    """
    if len(calibrated) == 0:
        raise ValueError("need at least one calibrated embedding")
    if len(calibrated) != len(attributes):
        raise ValueError("one attribute entry per calibrated embedding required")
    names, labels, cards = _label_arrays(attributes)
    mats = [c.embeddings for c in calibrated]
    n, d = mats[0].shape
    for lab in labels:
        if len(lab) != n:
            raise ValueError("labels do not cover all users")
    k = len(mats)

    rng = np.random.default_rng(_attribute_seed(config.seed, "|".join(names)))
    models = [
        mi.make_variational_model(
            d, cards[t], seed=_attribute_seed(config.seed, f"phi:{names[t]}"),
            hidden=config.hidden, learning_rate=config.variational_lr, attribute=names[t],
        )
        for t in range(k)
    ]
    alpha = np.full(k, 1.0 / k)
    sampler = mi.BatchSampler(n, config.batch_size, rng) if config.iterations else None

    mi_trace, alpha_trace = [], []
    for _ in range(config.iterations):
        idx = sampler.next_batch()
        rows = [m[idx] for m in mats]
        batch = sum(w * r for w, r in zip(alpha, rows))
        batch_labels = [labels[t][idx] for t in range(k)]
        for t in range(k):
            mi.fit_variational_step(models[t], batch, batch_labels[t])
        total, grad_alpha = summed_estimate_and_alpha_gradient(
            models, rows, batch_labels, alpha
        )
        alpha = project_simplex_softmax(alpha - config.step_size * grad_alpha)
        mi_trace.append(total)
        alpha_trace.append(alpha.copy())

    combined = combine(mats, alpha)
    final_rng = np.random.default_rng(_attribute_seed(config.seed, "final-eval"))
    per_attr = {
        names[t]: mi.mi_over_embedding(
            models[t], combined, labels[t], config.batch_size, passes=1, rng=final_rng
        )
        for t in range(k)
    }
    return CombinationResult(
        alpha=alpha,
        embeddings=combined,
        attributes=names,
        per_attribute_mi=per_attr,
        mi_trace=np.array(mi_trace),
        alpha_trace=np.array(alpha_trace) if alpha_trace else np.empty((0, k)),
    )


def average_combination(
    calibrated: list[CalibrationResult],
    attributes: list[tuple[str, np.ndarray, int]] | None = None,
) -> CombinationResult:
    """Uniform-weight ablation: plain average of the calibrated embeddings."""
    if len(calibrated) == 0:
        raise ValueError("need at least one calibrated embedding")
    k = len(calibrated)
    alpha = np.full(k, 1.0 / k)
    names = [c.attribute for c in calibrated]
    if attributes is not None:
        names = [a[0] for a in attributes]
    return CombinationResult(
        alpha=alpha,
        embeddings=combine([c.embeddings for c in calibrated], alpha),
        attributes=names,
        per_attribute_mi={},
    )


def summed_mi_estimate(
    U: np.ndarray,
    attributes: list[tuple[str, np.ndarray, int]],
    seed: int,
    fit_iterations: int = 2000,
    batch_size: int = 256,
    passes: int = 2,
    learning_rate: float = 1e-4,
) -> float:
    """Shared protocol for comparing embeddings by total leakage.

    Fits a fresh classifier per attribute on U for a fixed budget, then
    averages batch estimates over full passes and sums across attributes.
    Identical seeds give identical values for identical U. The deliberately
    small learning rate caps total weight movement, which keeps the fit from
    memorizing individual rows and inflating the contrastive estimate.
    """
    names, labels, cards = _label_arrays(attributes)
    total = 0.0
    for name, lab, card in zip(names, labels, cards):
        s = _attribute_seed(seed, f"eval:{name}")
        model = mi.make_variational_model(
            U.shape[1], card, seed=s, learning_rate=learning_rate, attribute=name
        )
        rng = np.random.default_rng(s + 1)
        mi.fit_variational(model, U, lab, fit_iterations, batch_size, rng)
        total += mi.mi_over_embedding(model, U, lab, batch_size, passes, rng)
    return total


def joint_unlearn(
    U0: np.ndarray,
    attributes: list[tuple[str, np.ndarray, int]],
    config: CalibrationConfig,
    alpha_step: float = 1e-2,
    eps: float | None = None,
    iterations: int | None = None,
) -> tuple[list[np.ndarray], np.ndarray, float]:
    """End-to-end comparator: alternate ball-projected updates of every
    component matrix with softmax-projected weight updates against the summed
    estimate. Returns (component matrices, weights, total leakage of the
    combination under the shared protocol).

    Component gradients carry an alpha factor (about 1/k each), so the default
    budget is k * config.iterations to match the per-component movement the
    two-step pipeline gets; this compares optima rather than step counts.
    """
    names, labels, cards = _label_arrays(attributes)
    k = len(names)
    if k == 0:
        raise ValueError("need at least one attribute")
    n, d = U0.shape
    if eps is None:
        eps = config.eps_ratio * n
    if iterations is None:
        iterations = k * config.iterations

    rng = np.random.default_rng(_attribute_seed(config.seed, "joint:" + "|".join(names)))
    models = [
        mi.make_variational_model(
            d, cards[t], seed=_attribute_seed(config.seed, f"joint-phi:{names[t]}"),
            hidden=config.hidden, learning_rate=config.variational_lr, attribute=names[t],
        )
        for t in range(k)
    ]
    mats = [U0.copy() for _ in range(k)]
    opts = [OptimizerState(learning_rate=config.step_size) for _ in range(k)]
    alpha = np.full(k, 1.0 / k)
    sampler = mi.BatchSampler(n, config.batch_size, rng) if iterations else None

    for _ in range(iterations):
        idx = sampler.next_batch()
        rows = [m[idx] for m in mats]
        batch = sum(w * r for w, r in zip(alpha, rows))
        grad_batch = np.zeros_like(batch)
        grad_alpha = np.zeros(k)
        for t in range(k):
            batch_labels = labels[t][idx]
            mi.fit_variational_step(models[t], batch, batch_labels)
            estimate = mi.estimate_vclub(models[t], batch, batch_labels).value
            if not np.isfinite(estimate):
                raise RuntimeError(f"non-finite MI estimate for {names[t]!r}")
            grad_rows = mi.vclub_input_gradient(models[t], batch, batch_labels)
            grad_batch += grad_rows
            for i in range(k):
                grad_alpha[i] += float(np.sum(grad_rows * rows[i]))
        for i in range(k):
            full = np.zeros_like(mats[i])
            full[idx] = alpha[i] * grad_batch
            optimizer_step(opts[i], [mats[i]], [full])
            mats[i] = project_ball(mats[i], U0, eps)
        alpha = project_simplex_softmax(alpha - alpha_step * grad_alpha)

    combined = combine(mats, alpha)
    p2 = summed_mi_estimate(combined, attributes, seed=config.seed)
    return mats, alpha, p2


def bound_check(
    U0: np.ndarray,
    attributes: list[tuple[str, np.ndarray, int]],
    calib_config: CalibrationConfig,
    comb_config: CombinationConfig,
    parallelism: int = 1,
) -> BoundCheckReport:
    """Empirical two-step vs joint comparison under a shared leakage protocol."""
    if len(attributes) < 2:
        raise ValueError("bound check needs at least 2 attributes")
    from .calibration import calibrate_many

    results = calibrate_many(
        U0, attributes, calib_config, parallelism=parallelism
    )
    ordered = [results[name] for name, _, _ in attributes]
    two_step = optimize_weights(ordered, attributes, comb_config)
    p1 = summed_mi_estimate(two_step.embeddings, attributes, seed=calib_config.seed)
    _, _, p2 = joint_unlearn(U0, attributes, calib_config, alpha_step=comb_config.step_size)
    return BoundCheckReport(
        p1=p1,
        p2=p2,
        gap=p1 - p2,
        eps=calib_config.eps_ratio * len(U0),
        k=len(attributes),
        c_norm=float(np.linalg.norm(U0)),
    )
