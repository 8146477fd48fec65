"""Point-set task classifier with hand-written backpropagation.

The network reads a control-point set (optionally concatenated with a
replicated global feature vector), applies shared per-point layers, max-pools
over points and classifies the pooled vector into one of six task families.
Max-pooling makes the output independent of point order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .geometry import ControlGrid, FeatureMap, GeometryError
from .losses import NUM_CLASSES, log_softmax

log = logging.getLogger(__name__)

POINTWISE_DIMS = (256, 256, 512)
HEAD_DIMS = (512, 256)
FAMILY_COUNT = NUM_CLASSES

Layer = tuple[np.ndarray, np.ndarray]  # weight (out, in), bias (out,)


@dataclass(frozen=True)
class TaskLabel:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.shape != (NUM_CLASSES,):
            raise GeometryError(f"task label needs {NUM_CLASSES} entries, got {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise GeometryError("task label must be a probability vector")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def one_hot(cls, index: int) -> "TaskLabel":
        p = np.zeros(NUM_CLASSES)
        p[index] = 1.0
        return cls(p)

    def argmax(self) -> int:
        return int(np.argmax(self.probs))


@dataclass
class ClassifierParams:
    pointwise: list[Layer]
    head: list[Layer]
    global_layer: Layer | None = None
    seed: int | None = None

    def __post_init__(self):
        self.pointwise = [(np.asarray(w, float), np.asarray(b, float)) for w, b in self.pointwise]
        self.head = [(np.asarray(w, float), np.asarray(b, float)) for w, b in self.head]
        if self.global_layer is not None:
            w, b = self.global_layer
            self.global_layer = (np.asarray(w, float), np.asarray(b, float))
        self.validate()

    @property
    def global_dim(self) -> int:
        return 0 if self.global_layer is None else self.global_layer[0].shape[0]

    @property
    def global_input_dim(self) -> int:
        return 0 if self.global_layer is None else self.global_layer[0].shape[1]

    def layers(self) -> list[Layer]:
        out = list(self.pointwise) + list(self.head)
        if self.global_layer is not None:
            out.append(self.global_layer)
        return out

    def validate(self) -> None:
        if not self.pointwise or not self.head:
            raise GeometryError("classifier needs pointwise and head layers")
        expected = 2 + self.global_dim
        for name, stack in (("pointwise", self.pointwise), ("head", self.head)):
            for i, (w, b) in enumerate(stack):
                if w.ndim != 2 or b.shape != (w.shape[0],):
                    raise GeometryError(f"{name}[{i}]: bad weight/bias shapes {w.shape}, {b.shape}")
                if w.shape[1] != expected:
                    raise GeometryError(f"{name}[{i}]: expects input {w.shape[1]}, chain gives {expected}")
                expected = w.shape[0]
        if expected != NUM_CLASSES:
            raise GeometryError(f"head must end in {NUM_CLASSES} units, got {expected}")
        for w, b in self.layers():
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise GeometryError("classifier parameters must be finite")

    def flat(self) -> list[np.ndarray]:
        """Every parameter array in a fixed order (the order gradients are returned in)."""
        return [a for layer in self.layers() for a in layer]

    def copy(self) -> "ClassifierParams":
        g = None if self.global_layer is None else tuple(a.copy() for a in self.global_layer)
        return ClassifierParams(
            [(w.copy(), b.copy()) for w, b in self.pointwise],
            [(w.copy(), b.copy()) for w, b in self.head],
            g,
            self.seed,
        )


def count_parameters(params: ClassifierParams) -> int:
    return int(sum(a.size for a in params.flat()))


def init_params(
    seed: int = 0,
    pointwise_dims: Sequence[int] = POINTWISE_DIMS,
    head_dims: Sequence[int] = HEAD_DIMS,
    global_input_dim: int = 0,
    global_dim: int = 0,
) -> ClassifierParams:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)

    def layer(n_in, n_out):
        bound = np.sqrt(6.0 / n_in)
        return rng.uniform(-bound, bound, size=(n_out, n_in)), np.zeros(n_out)

    glayer = None
    if global_dim:
        if not global_input_dim:
            raise ValueError("global_input_dim is required when global_dim > 0")
        glayer = layer(global_input_dim, global_dim)
    dims = [2 + global_dim, *pointwise_dims]
    pointwise = [layer(a, b) for a, b in zip(dims, dims[1:])]
    hdims = [dims[-1], *head_dims, NUM_CLASSES]
    head = [layer(a, b) for a, b in zip(hdims, hdims[1:])]
    return ClassifierParams(pointwise, head, glayer, seed)


def zero_params(like: ClassifierParams | None = None) -> ClassifierParams:
    like = init_params() if like is None else like
    z = lambda layer: (np.zeros_like(layer[0]), np.zeros_like(layer[1]))  # noqa: E731
    return ClassifierParams(
        [z(l) for l in like.pointwise],
        [z(l) for l in like.head],
        None if like.global_layer is None else z(like.global_layer),
        like.seed,
    )


def pool_features(features: FeatureMap) -> np.ndarray:
    """Channelwise spatial max of a feature map (input to the global layer)."""
    return features.data.reshape(-1, features.channels).max(axis=0)


def _as_batch(points) -> np.ndarray:
    if isinstance(points, ControlGrid):
        return points.points[None]
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[1] == 0:
        raise GeometryError(f"expected (N, 2) or (B, N, 2) points, got {arr.shape}")
    return arr


def _forward(params: ClassifierParams, x: np.ndarray, g: np.ndarray | None):
    """Batched forward pass. Returns logits ``(B, 6)`` and the cache for backward."""
    b, n, _ = x.shape
    cache = {"x": x, "g": g}
    inp = x
    if params.global_layer is not None:
        if g is None:
            raise GeometryError("these parameters need a global feature vector")
        g = np.asarray(g, dtype=np.float64).reshape(b, -1)
        if g.shape[1] != params.global_input_dim:
            raise GeometryError(f"global feature has {g.shape[1]} entries, expected {params.global_input_dim}")
        w, bias = params.global_layer
        fg = g @ w.T + bias
        cache["g"] = g
        inp = np.concatenate([x, np.broadcast_to(fg[:, None, :], (b, n, fg.shape[1]))], axis=2)
    elif g is not None:
        raise GeometryError("global feature given but the parameters have no global layer")

    acts = [inp.reshape(b * n, -1)]
    h = acts[0]
    for w, bias in params.pointwise:
        h = np.maximum(h @ w.T + bias, 0.0)
        acts.append(h)
    feat = h.reshape(b, n, -1)
    idx = np.argmax(feat, axis=1)  # first maximum wins ties
    pooled = np.take_along_axis(feat, idx[:, None, :], axis=1)[:, 0, :]
    head_acts = [pooled]
    z = pooled
    for i, (w, bias) in enumerate(params.head):
        z = z @ w.T + bias
        if i < len(params.head) - 1:
            z = np.maximum(z, 0.0)
        head_acts.append(z)
    cache.update(acts=acts, idx=idx, head_acts=head_acts, shape=(b, n))
    return z, cache


def _backward(params: ClassifierParams, cache, dlogits: np.ndarray) -> list[np.ndarray]:
    """Gradients for every array in ``params.flat()`` order given ``dL/dlogits``."""
    b, n = cache["shape"]
    head_acts = cache["head_acts"]
    head_grads = []
    dz = dlogits
    for i in range(len(params.head) - 1, -1, -1):
        w, _ = params.head[i]
        inp = head_acts[i]
        head_grads.append((dz.T @ inp, dz.sum(axis=0)))
        dz = dz @ w
        if i > 0:
            dz = dz * (head_acts[i] > 0.0)
    head_grads.reverse()

    acts = cache["acts"]
    d = acts[-1].shape[1]
    dfeat = np.zeros((b, n, d))
    np.put_along_axis(dfeat, cache["idx"][:, None, :], dz[:, None, :], axis=1)
    dh = dfeat.reshape(b * n, d)
    point_grads = []
    for i in range(len(params.pointwise) - 1, -1, -1):
        w, _ = params.pointwise[i]
        dpre = dh * (acts[i + 1] > 0.0)
        point_grads.append((dpre.T @ acts[i], dpre.sum(axis=0)))
        dh = dpre @ w
    point_grads.reverse()

    grads = [a for layer in point_grads for a in layer] + [a for layer in head_grads for a in layer]
    if params.global_layer is not None:
        dinp = dh.reshape(b, n, -1)
        dfg = dinp[:, :, 2:].sum(axis=1)
        grads += [dfg.T @ cache["g"], dfg.sum(axis=0)]
    return grads


def classifier_logits(params: ClassifierParams, points, global_feat=None) -> np.ndarray:
    """Logits for a single point set ``(6,)`` or a batch ``(B, 6)``."""
    single = isinstance(points, ControlGrid) or np.asarray(points).ndim == 2
    x = _as_batch(points)
    g = None if global_feat is None else np.asarray(global_feat, dtype=np.float64).reshape(x.shape[0], -1)
    logits, _ = _forward(params, x, g)
    return logits[0] if single else logits


def classifier_forward(params: ClassifierParams, points, global_feat=None) -> tuple[np.ndarray, TaskLabel]:
    logits = classifier_logits(params, points, global_feat)
    if logits.ndim != 1:
        raise GeometryError("classifier_forward takes a single point set; use classifier_logits for batches")
    return logits, TaskLabel(np.exp(log_softmax(logits)))


def classifier_backward(params: ClassifierParams, points, label: int, global_feat=None) -> list[np.ndarray]:
    """Gradients of the cross-entropy at ``label`` w.r.t. ``params.flat()``.

    At max-pool ties the gradient goes to the lowest point index.
    """
    if not 0 <= int(label) < NUM_CLASSES:
        raise ValueError(f"label {label} out of range")
    x = _as_batch(points)
    g = None if global_feat is None else np.asarray(global_feat, dtype=np.float64).reshape(1, -1)
    logits, cache = _forward(params, x, g)
    p = np.exp(log_softmax(logits))
    p[0, int(label)] -= 1.0
    return _backward(params, cache, p)


def batch_loss_and_grads(params: ClassifierParams, x: np.ndarray, labels: np.ndarray, g=None):
    """Mean cross-entropy over a batch and its gradients."""
    logits, cache = _forward(params, x, g)
    lsm = log_softmax(logits)
    rows = np.arange(len(labels))
    loss = float(-lsm[rows, labels].mean())
    d = np.exp(lsm)
    d[rows, labels] -= 1.0
    d /= len(labels)
    return loss, _backward(params, cache, d)


def predict_task(params: ClassifierParams, points, global_feat=None) -> int:
    """Index of the largest logit; ties go to the lowest index."""
    logits = classifier_logits(params, points, global_feat)
    return int(np.argmax(logits))


@dataclass
class TrainConfig:
    """``optimizer`` is ``"adam"`` (decoupled weight decay when ``weight_decay > 0``)
    or ``"sgd"``. ``cosine`` anneals the step from ``lr`` to ``lr * min_lr_ratio``.
    """

    epochs: int = 30
    lr: float = 5e-4
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    cosine: bool = True
    min_lr_ratio: float = 0.01

    def step_size(self, epoch: int) -> float:
        if not self.cosine or self.epochs <= 1:
            return self.lr
        frac = epoch / (self.epochs - 1)
        lo = self.lr * self.min_lr_ratio
        return lo + 0.5 * (self.lr - lo) * (1.0 + np.cos(np.pi * frac))


class _Adam:
    def __init__(self, arrays, config: TrainConfig):
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.b1, self.b2 = config.betas
        self.eps = config.eps
        self.wd = config.weight_decay
        self.t = 0

    def step(self, arrays, grads, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.wd:
                a -= lr * self.wd * a
            a -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _Sgd:
    def step(self, arrays, grads, lr: float) -> None:
        for a, g in zip(arrays, grads):
            a -= lr * g


@dataclass
class TrainReport:
    initial_loss: float
    epoch_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_loss[-1] if self.epoch_loss else self.initial_loss


def _stack(dataset) -> tuple[np.ndarray, np.ndarray]:
    grids = [item[0] for item in dataset]
    labels = np.array([int(item[1]) for item in dataset], dtype=np.intp)
    shapes = {g.shape for g in grids}
    if len(shapes) != 1:
        raise GeometryError(f"all grids in a dataset must share one size, got {sorted(shapes)}")
    return np.stack([g.points for g in grids]), labels


def dataset_loss(params: ClassifierParams, x: np.ndarray, labels: np.ndarray, chunk: int = 256) -> float:
    total = 0.0
    for s in range(0, len(x), chunk):
        logits, _ = _forward(params, x[s:s + chunk], None)
        lsm = log_softmax(logits)
        total += float(-lsm[np.arange(len(lsm)), labels[s:s + chunk]].sum())
    return total / len(x)


def accuracy(params: ClassifierParams, dataset) -> float:
    x, labels = _stack(dataset)
    pred = np.argmax(classifier_logits(params, x), axis=1)
    return float((pred == labels).mean())


def train_classifier(
    dataset,
    config: TrainConfig | None = None,
    test_set=None,
    params: ClassifierParams | None = None,
) -> tuple[ClassifierParams, TrainReport]:
    """Minibatch training on the mean cross-entropy.

    ``dataset`` is a sequence of ``(ControlGrid, label)`` pairs (extra tuple
    items are ignored). Runs single-threaded so results are bitwise
    reproducible for a fixed seed. The returned parameters are those of the
    epoch with the lowest training loss, which is never above the initial loss.
    """
    config = TrainConfig() if config is None else config
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    x, labels = _stack(dataset)
    if len(np.unique(labels)) < 2:
        raise ValueError("training needs at least two classes")
    params = init_params(config.seed) if params is None else params.copy()
    if config.optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {config.optimizer!r}")
    opt = _Adam(params.flat(), config) if config.optimizer == "adam" else _Sgd()
    rng = np.random.default_rng(config.seed + 1)
    with threadpool_limits(limits=1):
        report = TrainReport(initial_loss=dataset_loss(params, x, labels))
        best, best_loss = params.copy(), report.initial_loss
        for epoch in range(config.epochs):
            order = rng.permutation(len(x))
            lr = config.step_size(epoch)
            for s in range(0, len(x), config.batch_size):
                sel = order[s:s + config.batch_size]
                _, grads = batch_loss_and_grads(params, x[sel], labels[sel])
                opt.step(params.flat(), grads, lr)
            loss = dataset_loss(params, x, labels)
            report.epoch_loss.append(loss)
            if test_set is not None:
                report.test_accuracy.append(accuracy(params, test_set))
            log.info(
                "epoch %d loss %.5f%s", epoch + 1, loss,
                f" test acc {report.test_accuracy[-1]:.3f}" if test_set is not None else "",
            )
            if loss <= best_loss:
                best, best_loss = params.copy(), loss
    return best, report
