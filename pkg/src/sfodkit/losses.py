"""Training objectives and their hand-derived gradients.

Three terms make up the adaptation objective: a hard cross-entropy on
high-confidence assignments, a soft cross-entropy against teacher
distributions on the matched low-confidence proposals, and a spatial
contrastive term over mixed features of those same proposals. Gradients
are written out by hand against the tiny ROI head (no autograd) and
validated by the central-difference checker at the bottom.

Contrastive term, per matched proposal i with mixing weight w_i and
query q_i = (1-w_i) f^s_i + w_i k_i (k_i the neighbor key):

    l_i = -[ (1-w_i) * s_ii + w_i * pos2_i - logsumexp_j s_ij ]

with s_ij = q_i . f^s_j / tau and pos2_i = q_i . k_i / tau. The
denominator ranges over student features only, exactly as the objective
is stated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .detector import ModelParams, RoiOutput, softmax, zero_grads
from .geometry import BBox, boxes_to_array, iou_matrix

log = logging.getLogger(__name__)

PST_CLAMP = 1e-12

# Partner-selection strategies for the contrastive mixup; the trailing "-"
# variants take the neighbor key from the student instead of the teacher.
MIXUP_STRATEGIES = ("iou", "random", "cls", "iou-", "random-", "cls-")


def parse_mixup_strategy(strategy: str) -> tuple[str, str]:
    """-> (partner rule, neighbor feature source "teacher"|"student")."""
    if strategy not in MIXUP_STRATEGIES:
        raise ValueError(f"unknown mixup strategy {strategy!r}, expected one of {MIXUP_STRATEGIES}")
    base = strategy.rstrip("-")
    source = "student" if strategy.endswith("-") else "teacher"
    return base, source


@dataclass
class ProposalBatch:
    """Everything the soft objectives need about the matched proposals."""

    boxes: list[BBox]
    f_s: np.ndarray  # (N, h) student embeddings, strong view
    f_t: np.ndarray  # (N, h) teacher embeddings, weak view (constant)
    p_s: np.ndarray  # (N, C+1) student probs
    p_t: np.ndarray  # (N, C+1) teacher probs (constant)
    neighbors: np.ndarray | None = None  # (N,) partner indices, A_i != i
    weights: np.ndarray | None = None  # (N,) mixing weights in [0, 1]
    mixed: np.ndarray | None = None  # (N, h) queries f'
    neighbor_source: str = "teacher"

    def __post_init__(self):
        n = len(self.boxes)
        for name in ("f_s", "f_t"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} must have {n} rows")
        if self.neighbor_source not in ("teacher", "student"):
            raise ValueError("neighbor_source must be teacher|student")
        if self.neighbors is not None and n >= 2:
            self.neighbors = np.asarray(self.neighbors, dtype=np.intp)
            if np.any(self.neighbors == np.arange(n)):
                raise ValueError("a proposal may not be its own neighbor")

    @property
    def n(self) -> int:
        return len(self.boxes)

    def neighbor_keys(self) -> np.ndarray:
        """The second positive key per proposal: f^t_{A_i} or f^s_{A_i}."""
        src = self.f_t if self.neighbor_source == "teacher" else self.f_s
        return src[self.neighbors]


@dataclass
class LossReport:
    l_h: float
    l_pst: float
    l_lscl: float
    l_total: float
    lambda1: float
    lambda2: float
    tau: float
    n_p: int = 0
    high_count: int = 0
    low_count: int = 0
    lscl_skipped: bool = False


# ---------------------------------------------------------------------------
# Loss values
# ---------------------------------------------------------------------------

def loss_high(student_probs: np.ndarray, hard_labels: np.ndarray) -> float:
    """Mean -log p[label] over proposals; empty batch -> 0."""
    labels = np.asarray(hard_labels, dtype=np.intp)
    if labels.size == 0:
        return 0.0
    p = np.asarray(student_probs, dtype=np.float64)
    return float(np.mean(-np.log(p[np.arange(labels.size), labels])))


def loss_pst(p_s: np.ndarray, p_t: np.ndarray) -> float:
    """Soft cross-entropy (1/N) sum_i sum_c -p^t log p^s over all C+1 classes."""
    p_s = np.atleast_2d(np.asarray(p_s, dtype=np.float64))
    p_t = np.atleast_2d(np.asarray(p_t, dtype=np.float64))
    if p_s.shape[0] == 0:
        return 0.0
    if p_s.shape != p_t.shape:
        raise ValueError("p_s and p_t must have matching shapes")
    clamped = p_s < PST_CLAMP
    if clamped.any():
        log.warning("loss_pst clamped %d student probabilities at %g", clamped.sum(), PST_CLAMP)
    return float(np.mean(np.sum(-p_t * np.log(np.maximum(p_s, PST_CLAMP)), axis=1)))


def nearest_neighbor(boxes: list[BBox]) -> np.ndarray:
    """A_i = argmax_{j != i} IoU(T_i, T_j); ties and all-zero rows -> lowest j != i."""
    n = len(boxes)
    if n < 2:
        raise ValueError("nearest_neighbor needs at least two boxes")
    arr = boxes_to_array(boxes)
    overlaps = iou_matrix(arr, arr)
    np.fill_diagonal(overlaps, -1.0)
    return overlaps.argmax(axis=1).astype(np.intp)


def random_neighbors(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform partner over j != i."""
    if n < 2:
        raise ValueError("need at least two proposals")
    draws = rng.integers(0, n - 1, size=n)
    return np.where(draws < np.arange(n), draws, draws + 1).astype(np.intp)


def cls_neighbors(probs: np.ndarray) -> np.ndarray:
    """Partner = argmax cosine similarity of class-probability vectors, ties -> lowest."""
    p = np.asarray(probs, dtype=np.float64)
    if p.shape[0] < 2:
        raise ValueError("need at least two proposals")
    unit = p / np.linalg.norm(p, axis=1, keepdims=True)
    sim = unit @ unit.T
    np.fill_diagonal(sim, -np.inf)
    return sim.argmax(axis=1).astype(np.intp)


def mixed_features(f_s: np.ndarray, neighbor_keys: np.ndarray, w: np.ndarray) -> np.ndarray:
    return (1.0 - w)[:, None] * f_s + w[:, None] * neighbor_keys


def iou_mixup(batch: ProposalBatch) -> ProposalBatch:
    """Fill w_i = IoU(T_i, T_{A_i}) and the mixed queries f'. Mutates the batch."""
    if batch.neighbors is None:
        raise ValueError("neighbors must be assigned before mixup")
    arr = boxes_to_array(batch.boxes)
    overlaps = iou_matrix(arr, arr)
    batch.weights = overlaps[np.arange(batch.n), batch.neighbors]
    batch.mixed = mixed_features(batch.f_s, batch.neighbor_keys(), batch.weights)
    return batch


def build_proposal_batch(
    boxes: list[BBox],
    f_s: np.ndarray,
    f_t: np.ndarray,
    p_s: np.ndarray,
    p_t: np.ndarray,
    strategy: str = "iou",
    rng: np.random.Generator | None = None,
) -> ProposalBatch:
    """Assign partners per strategy, then fill mixing weights and queries."""
    base, source = parse_mixup_strategy(strategy)
    batch = ProposalBatch(boxes=boxes, f_s=f_s, f_t=f_t, p_s=p_s, p_t=p_t,
                          neighbor_source=source)
    if base == "iou":
        batch.neighbors = nearest_neighbor(boxes)
    elif base == "random":
        if rng is None:
            raise ValueError("random mixup requires an rng")
        batch.neighbors = random_neighbors(batch.n, rng)
    else:
        batch.neighbors = cls_neighbors(p_t)
    return iou_mixup(batch)


def _lscl_terms(batch: ProposalBatch, tau: float):
    """Shared forward pieces: similarity matrix, second positives, weights."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    q, s_feats, w = batch.mixed, batch.f_s, batch.weights
    if q is None or w is None:
        raise ValueError("batch must pass through iou_mixup before the lscl loss")
    sim = q @ s_feats.T / tau  # (N, N)
    keys = batch.neighbor_keys()
    pos2 = np.einsum("ij,ij->i", q, keys) / tau
    return sim, pos2, keys, w


def loss_lscl(batch: ProposalBatch, tau: float) -> float:
    """Contrastive consistency over matched proposals; N_p < 2 -> 0 (skipped)."""
    if batch.n < 2:
        return 0.0
    sim, pos2, _, w = _lscl_terms(batch, tau)
    lse = logsumexp(sim, axis=1)
    diag = np.diagonal(sim)
    per_i = (1.0 - w) * diag + w * pos2 - lse
    return float(-np.mean(per_i))


def total_loss(l_h: float, l_pst: float, l_lscl: float, lambda1: float, lambda2: float) -> float:
    if not all(np.isfinite([l_h, l_pst, l_lscl])):
        raise ValueError("loss components must be finite")
    return l_h + lambda1 * l_pst + lambda2 * l_lscl


# ---------------------------------------------------------------------------
# Analytic gradients. Each grad_* returns (value, grads-dict) with grads for
# every parameter array, zeros where a loss has no influence.
# ---------------------------------------------------------------------------

def roi_backprop(
    params: ModelParams,
    out: RoiOutput,
    d_logits: np.ndarray | None = None,
    d_embeddings: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Push cotangents at the logits and/or embeddings down to the parameters."""
    grads = zero_grads(params)
    d_emb = np.zeros_like(out.embeddings)
    if d_logits is not None:
        grads["W2"] = d_logits.T @ out.embeddings
        grads["b2"] = d_logits.sum(axis=0)
        d_emb += d_logits @ params.W2
    if d_embeddings is not None:
        d_emb += d_embeddings
    d_pre = d_emb * (1.0 - out.embeddings**2)  # tanh'
    grads["W1"] = d_pre.T @ out.inputs
    grads["b1"] = d_pre.sum(axis=0)
    return grads


def grad_loss_high(
    params: ModelParams, out: RoiOutput, labels: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size == 0:
        return 0.0, zero_grads(params)
    value = loss_high(out.probs, labels)
    d_logits = out.probs.copy()
    d_logits[np.arange(labels.size), labels] -= 1.0
    d_logits /= labels.size
    return value, roi_backprop(params, out, d_logits=d_logits)


def grad_loss_pst(
    params: ModelParams, out: RoiOutput, rows: np.ndarray, p_t: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Soft cross-entropy on the matched rows of a student forward pass.

    The clamp makes the loss flat in any clamped coordinate, so its
    gradient contribution is zero; everything else is the usual softmax
    Jacobian-vector product.
    """
    rows = np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        return 0.0, zero_grads(params)
    p_s = out.probs[rows]
    value = loss_pst(p_s, p_t)
    g_p = -p_t / np.maximum(p_s, PST_CLAMP)
    g_p[p_s < PST_CLAMP] = 0.0
    g_p /= rows.size
    d_rows = p_s * (g_p - np.sum(g_p * p_s, axis=1, keepdims=True))
    d_logits = np.zeros_like(out.logits)
    d_logits[rows] = d_rows
    return value, roi_backprop(params, out, d_logits=d_logits)


def lscl_feature_grads(batch: ProposalBatch, tau: float) -> tuple[float, np.ndarray]:
    """Loss value and gradient with respect to the student features f^s.

    Teacher features are constants. With c_ij = (1-w_i)[j==i] - sigma_ij
    (sigma the row softmax of the similarity matrix) the chain rule gives,
    per term i: key path  dS_j += c_ij q_i / tau; query path
    dS_i += (1-w_i) g_i with g_i = (sum_j c_ij S_j + w_i k_i)/tau; and for
    student-sourced keys two extra paths into S_{A_i}: w_i g_i from the
    query mix and w_i q_i / tau from the second positive. All scaled by
    -1/N for the leading -(1/N) sum.
    """
    n = batch.n
    if n < 2:
        return 0.0, np.zeros_like(batch.f_s)
    sim, pos2, keys, w = _lscl_terms(batch, tau)
    lse = logsumexp(sim, axis=1)
    value = float(-np.mean((1.0 - w) * np.diagonal(sim) + w * pos2 - lse))

    c = -softmax(sim)
    c[np.arange(n), np.arange(n)] += 1.0 - w
    q = batch.mixed
    d_s = c.T @ q / tau  # key path
    g_query = (c @ batch.f_s + w[:, None] * keys) / tau
    d_s += (1.0 - w)[:, None] * g_query
    if batch.neighbor_source == "student":
        np.add.at(d_s, batch.neighbors, w[:, None] * (g_query + q / tau))
    return value, -d_s / n


def grad_loss_lscl(
    params: ModelParams,
    out: RoiOutput,
    rows: np.ndarray,
    batch: ProposalBatch,
    tau: float,
    normalized: bool = False,
) -> tuple[float, dict[str, np.ndarray]]:
    """Contrastive loss and parameter gradients (only W1/b1 receive signal).

    ``rows`` maps batch entries to rows of ``out``; if ``normalized``,
    batch.f_s holds unit vectors of out.embeddings[rows] and the
    normalization Jacobian is chained in.
    """
    rows = np.asarray(rows, dtype=np.intp)
    if batch.n < 2:
        return 0.0, zero_grads(params)
    value, d_feat = lscl_feature_grads(batch, tau)
    if normalized:
        raw = out.embeddings[rows]
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        unit = raw / norms
        d_feat = (d_feat - np.sum(d_feat * unit, axis=1, keepdims=True) * unit) / norms
    d_emb = np.zeros_like(out.embeddings)
    d_emb[rows] = d_feat
    return value, roi_backprop(params, out, d_embeddings=d_emb)


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    tolerance: float
    worst: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def format_report(self) -> str:
        lines = [
            f"grad_check: {self.n_checked} coordinates, "
            f"max rel err {self.max_rel_err:.3e} (tolerance {self.tolerance:.1e}) "
            f"-> {'PASS' if self.passed else 'FAIL'}"
        ]
        lines.append("param   flat_idx   analytic        numeric         rel_err")
        for name, idx, a, nmr, err in self.worst:
            lines.append(f"{name:<7} {idx:<10d} {a: .8e} {nmr: .8e} {err:.3e}")
        return "\n".join(lines)


def grad_check(
    value_and_grad,
    params: ModelParams,
    tolerance: float = 1e-4,
    step: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences, coordinatewise.

    ``value_and_grad(params) -> (value, grads)`` must be pure. Checks every
    coordinate unless ``max_coords`` caps it (random subsample, at least
    200 whenever available). Relative error uses denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    _, grads = value_and_grad(params)
    analytic = np.concatenate([grads[k].ravel() for k in params.arrays()])
    total = analytic.size
    spans = []
    pos = 0
    for name, a in params.arrays().items():
        spans.append((name, pos, pos + a.size))
        pos += a.size
    if max_coords is None or max_coords >= total:
        coords = np.arange(total)
    else:
        n_pick = max(min(200, total), max_coords)
        rng = rng or np.random.default_rng(0)
        coords = np.sort(rng.choice(total, size=n_pick, replace=False))

    base = params.as_vector()
    probe = params.copy()
    records = []
    for idx in coords:
        for sign in (+1.0, -1.0):
            vec = base.copy()
            vec[idx] += sign * step
            probe.set_vector(vec)
            if sign > 0:
                f_plus, _ = value_and_grad(probe)
            else:
                f_minus, _ = value_and_grad(probe)
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = analytic[idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        name = next(nm for nm, lo, hi in spans if lo <= idx < hi)
        records.append((name, int(idx), float(a), float(numeric), float(err)))
    records.sort(key=lambda r: -r[4])
    max_err = records[0][4] if records else 0.0
    return GradCheckReport(
        max_rel_err=max_err, n_checked=len(coords), tolerance=tolerance, worst=records[:5]
    )
