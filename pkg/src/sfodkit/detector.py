"""Tiny ROI classification head and its student/teacher update rules.

The model maps an oracle feature x to an embedding e = tanh(W1 x + b1)
and class logits z = W2 e + b2 over C foreground categories plus
background. Hand-rolled numpy forward pass; gradients live in losses.py.
The student descends with SGD plus momentum, the teacher tracks the
student by exponential moving average.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox
from .synthworld import DomainConfig, Proposal, Scene, extract_features

CHECKPOINT_MAGIC = "SFODKIT-CKPT v1"

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class ModelParams:
    W1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (C+1, h)
    b2: np.ndarray  # (C+1,)

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        h, d = self.W1.shape
        k, h2 = self.W2.shape
        if h2 != h or self.b1.shape != (h,) or self.b2.shape != (k,):
            raise ValueError("inconsistent parameter shapes")

    @property
    def feature_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def num_classes(self) -> int:
        """Foreground categories plus one background class."""
        return self.W2.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()})

    def as_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def set_vector(self, vec: np.ndarray) -> None:
        pos = 0
        for a in self.arrays().values():
            a.flat[:] = vec[pos : pos + a.size]
            pos += a.size
        if pos != vec.size:
            raise ValueError("vector length does not match parameter count")


def init_params(
    feature_dim: int, hidden_dim: int, num_categories: int, rng: np.random.Generator,
    scale: float = 0.1,
) -> ModelParams:
    """Uniform(-scale, scale) init for every weight and bias."""
    return ModelParams(
        W1=rng.uniform(-scale, scale, (hidden_dim, feature_dim)),
        b1=rng.uniform(-scale, scale, hidden_dim),
        W2=rng.uniform(-scale, scale, (num_categories + 1, hidden_dim)),
        b2=rng.uniform(-scale, scale, num_categories + 1),
    )


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays().items()}


@dataclass
class RoiOutput:
    inputs: np.ndarray  # (N, d)
    embeddings: np.ndarray  # (N, h), tanh activations
    logits: np.ndarray  # (N, C+1)
    probs: np.ndarray  # (N, C+1), rows sum to 1, strictly positive


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: ModelParams, x: np.ndarray) -> RoiOutput:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    e = np.tanh(x @ params.W1.T + params.b1)
    z = e @ params.W2.T + params.b2
    return RoiOutput(inputs=x, embeddings=e, logits=z, probs=softmax(z))


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: ModelParams) -> "OptimizerState":
        return cls(velocity=zero_grads(params))


def sgd_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    momentum: float,
) -> None:
    """In-place descent step: v <- momentum*v + g; p <- p - lr*v."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    for name, p in params.arrays().items():
        v = state.velocity[name]
        v *= momentum
        v += grads[name]
        p -= lr * v


def ema_update(teacher: ModelParams, student: ModelParams, alpha: float) -> None:
    """In-place teacher <- alpha*teacher + (1-alpha)*student, elementwise.

    alpha=1 keeps the teacher bit-exact and alpha=0 copies the student;
    for interior alpha the result is clipped to the [teacher, student]
    interval so rounding can never push a value outside the hull.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    for name, t in teacher.arrays().items():
        s = student.arrays()[name]
        if alpha == 1.0:
            continue
        if alpha == 0.0:
            t[...] = s
            continue
        mixed = alpha * t + (1.0 - alpha) * s
        np.clip(mixed, np.minimum(t, s), np.maximum(t, s), out=mixed)
        t[...] = mixed


@dataclass
class Detection:
    box: BBox
    category: int
    score: float


def detections_from_probs(
    proposals: list[Proposal],
    probs: np.ndarray,
    score_threshold: float = 0.0,
    nms_iou: float = 0.5,
) -> list[Detection]:
    """Turn per-proposal class probabilities into per-category NMS survivors.

    A proposal whose overall argmax is background emits nothing; any other
    proposal becomes one candidate for its highest-probability foreground
    class (ties -> lowest index) scored by that class probability. NMS
    runs per category; the survivors come back sorted by descending
    score (stable, so ties keep category order).
    """
    from .geometry import nms  # local import keeps module load order flat

    if not proposals:
        return []
    c = probs.shape[1] - 1
    fg = probs[:, :c]
    cats = np.argmax(fg, axis=1)
    scores = fg[np.arange(len(proposals)), cats]
    foreground = np.argmax(probs, axis=1) != c
    dets: list[Detection] = []
    for cat in range(c):
        idx = [i for i in range(len(proposals))
               if foreground[i] and cats[i] == cat and scores[i] >= score_threshold]
        if not idx:
            continue
        pool = [(proposals[i].box, float(scores[i])) for i in idx]
        for keep in nms(pool, nms_iou):
            dets.append(Detection(box=pool[keep][0], category=cat, score=pool[keep][1]))
    dets.sort(key=lambda det: -det.score)
    return dets


def predict_detections(
    params: ModelParams,
    world: DomainConfig,
    scene: Scene,
    proposals: list[Proposal],
    rng: np.random.Generator,
    view: str = "weak",
    score_threshold: float = 0.0,
    nms_iou: float = 0.5,
) -> list[Detection]:
    """Extract features, classify, and apply per-category NMS."""
    if not proposals:
        return []
    feats = extract_features(world, scene, [p.box for p in proposals], view, rng)
    out = forward(params, feats)
    return detections_from_probs(proposals, out.probs, score_threshold, nms_iou)


# ---------------------------------------------------------------------------
# Text checkpoints: magic line, a dims line, then one whitespace-separated
# %.17g line per parameter array (row-major). %.17g round-trips float64
# exactly, so save -> load is bit-identical.
# ---------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    lines = [CHECKPOINT_MAGIC]
    lines.append(
        "dims %d %d %d" % (params.feature_dim, params.hidden_dim, params.num_classes)
    )
    for name, a in params.arrays().items():
        lines.append(name + " " + " ".join("%.17g" % v for v in a.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> ModelParams:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (missing magic header)")
    tok = lines[1].split()
    if tok[0] != "dims" or len(tok) != 4:
        raise ValueError(f"{path}: malformed dims line")
    d, h, k = (int(v) for v in tok[1:])
    shapes = {"W1": (h, d), "b1": (h,), "W2": (k, h), "b2": (k,)}
    arrays: dict[str, np.ndarray] = {}
    for line in lines[2:]:
        name, *vals = line.split()
        if name not in shapes:
            raise ValueError(f"{path}: unexpected array {name!r}")
        arr = np.array([float(v) for v in vals], dtype=np.float64)
        arrays[name] = arr.reshape(shapes[name])
    missing = [n for n in PARAM_NAMES if n not in arrays]
    if missing:
        raise ValueError(f"{path}: checkpoint missing arrays {missing}")
    return ModelParams(**arrays)
