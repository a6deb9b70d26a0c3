"""Step 1 of the unlearning pipeline: per-attribute embedding calibration.

Alternates one classifier likelihood-ascent step with one embedding descent
step on the contrastive MI estimate, projecting back onto the Frobenius
epsilon-ball around the original embeddings after every update.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import mi
from .nets import OptimizerState, optimizer_step


@dataclass
class CalibrationConfig:
    eps_ratio: float = 0.5  # epsilon = eps_ratio * n_users
    iterations: int = 2000
    batch_size: int = 256
    step_size: float = 1e-3  # Adam lr for the embeddings
    variational_lr: float = 1e-4
    inner_steps: int = 1  # classifier steps per embedding step
    hidden: int = 100
    seed: int = 0
    plateau_stop: bool = False
    plateau_window: int = 200
    plateau_tol: float = 1e-4

    def __post_init__(self):
        if self.eps_ratio < 0:
            raise ValueError("eps_ratio must be >= 0")
        if self.iterations < 0 or self.batch_size < 2 or self.inner_steps < 1:
            raise ValueError("bad iterations/batch_size/inner_steps")

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class CalibrationResult:
    embeddings: np.ndarray  # calibrated user matrix
    attribute: str
    mi_trace: np.ndarray
    nll_trace: np.ndarray
    distance_trace: np.ndarray  # Frobenius distance to the original, post-projection
    config_hash: str


class CalibrationError(RuntimeError):
    def __init__(self, message: str, trace: list[float]):
        super().__init__(f"{message}; MI trace tail: {trace[-10:]}")
        self.trace = trace


def project_ball(U: np.ndarray, U0: np.ndarray, eps: float) -> np.ndarray:
    """Project onto the Frobenius ball of radius eps centred at U0.

    Inside the ball the input is returned unchanged (the same object), so the
    operation is bitwise idempotent.
    """
    if U.shape != U0.shape:
        raise ValueError(f"shape mismatch {U.shape} vs {U0.shape}")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    diff = U - U0
    norm = float(np.linalg.norm(diff))
    # the 1e-12 relative slack keeps re-projection bitwise idempotent despite
    # rounding in the rescale below (well inside the 1e-9 feasibility tolerance)
    if norm <= eps * (1.0 + 1e-12):
        return U
    if eps == 0.0:
        return U0.copy()
    return U0 + (eps / norm) * diff


def _attribute_seed(base_seed: int, attribute: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{attribute}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def calibrate(
    U0: np.ndarray,
    labels: np.ndarray,
    config: CalibrationConfig,
    attribute: str = "attr",
    cardinality: int | None = None,
) -> CalibrationResult:
    """Remove one attribute's information from a copy of U0.

    Per iteration: sample a batch, take ``inner_steps`` classifier ascent
    steps, evaluate the batch MI estimate, descend the sampled embedding rows
    through Adam, then project onto the epsilon-ball. Never mutates U0 or the
    labels.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != len(U0):
        raise ValueError(f"{len(labels)} labels for {len(U0)} users")
    if cardinality is None:
        cardinality = int(labels.max()) + 1
    if not np.all(np.isfinite(U0)):
        raise ValueError("U0 has non-finite entries")

    n, d = U0.shape
    eps = config.eps_ratio * n
    seed = _attribute_seed(config.seed, attribute)
    rng = np.random.default_rng(seed)
    model = mi.make_variational_model(
        d, cardinality, seed=seed + 1, hidden=config.hidden,
        learning_rate=config.variational_lr, attribute=attribute,
    )
    U = U0.copy()
    emb_opt = OptimizerState(learning_rate=config.step_size)
    sampler = mi.BatchSampler(n, config.batch_size, rng) if config.iterations else None

    mi_trace: list[float] = []
    nll_trace: list[float] = []
    dist_trace: list[float] = []
    for _ in range(config.iterations):
        idx = sampler.next_batch()
        batch, batch_labels = U[idx], labels[idx]
        for _ in range(config.inner_steps):
            nll = mi.fit_variational_step(model, batch, batch_labels)
        estimate = mi.estimate_vclub(model, batch, batch_labels).value
        if not np.isfinite(estimate):
            raise CalibrationError(f"non-finite MI estimate for {attribute!r}", mi_trace)
        grad_rows = mi.vclub_input_gradient(model, batch, batch_labels)
        full_grad = np.zeros_like(U)
        full_grad[idx] = grad_rows
        optimizer_step(emb_opt, [U], [full_grad])
        U = project_ball(U, U0, eps)
        mi_trace.append(estimate)
        nll_trace.append(nll)
        dist_trace.append(float(np.linalg.norm(U - U0)))
        if config.plateau_stop and len(mi_trace) >= 2 * config.plateau_window:
            recent = np.mean(mi_trace[-config.plateau_window :])
            prev = np.mean(mi_trace[-2 * config.plateau_window : -config.plateau_window])
            if abs(prev - recent) < config.plateau_tol:
                break

    return CalibrationResult(
        embeddings=U,
        attribute=attribute,
        mi_trace=np.array(mi_trace),
        nll_trace=np.array(nll_trace),
        distance_trace=np.array(dist_trace),
        config_hash=config.hash(),
    )


def calibrate_many(
    U0: np.ndarray,
    attributes: list[tuple[str, np.ndarray, int]],
    config: CalibrationConfig,
    parallelism: int = 1,
) -> dict[str, CalibrationResult]:
    """Calibrate several attributes independently, optionally in parallel.

    Each attribute's run derives its own seed from (config.seed, name), so the
    outputs are identical whatever the worker count.
    """
    names = [name for name, _, _ in attributes]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate attribute ids in {names}")
    if not attributes:
        return {}

    def run(entry):
        name, labels, cardinality = entry
        return name, calibrate(U0, labels, config, attribute=name, cardinality=cardinality)

    if parallelism <= 1 or len(attributes) == 1:
        return dict(run(entry) for entry in attributes)
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return dict(pool.map(run, attributes))


def trace_to_csv(result: CalibrationResult, path) -> None:
    """Emit the optimization trace as (iteration, mi, nll, distance) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "mi_estimate", "nll", "distance"])
        for i, (m, nl, dist) in enumerate(
            zip(result.mi_trace, result.nll_trace, result.distance_trace)
        ):
            writer.writerow([i, f"{m:.10g}", f"{nl:.10g}", f"{dist:.10g}"])
