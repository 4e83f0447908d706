"""Loss assembly, optimisers, temperature schedule and the training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .data import Dataset
from .gates import GateSample, sample_gates
from .network import (
    GatedNetwork,
    LayerSpec,
    backward,
    deterministic_gates,
    forward,
    forward_masked,
)
from .rng import Rng

log = logging.getLogger(__name__)

LOSS_KINDS = ("softmax_xent", "sigmoid_bce")
OPTIMIZERS = ("sgd", "adam")


class NumericAbort(RuntimeError):
    """Non-finite loss during training."""

    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch = epoch
        self.batch = batch
        msg = f"non-finite loss at epoch {epoch}, batch {batch}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


@dataclass
class TrainConfig:
    alpha: float = 10.0
    d_target: float = 0.1
    tau_start: float = 2.0
    tau_end: float = 0.5
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss_kind: str = "softmax_xent"
    # None -> same as learning_rate
    gate_learning_rate: float | None = None
    # None -> same as optimizer
    gate_optimizer: str | None = None
    finetune_epochs: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not 0.0 < self.d_target <= 1.0:
            raise ValueError("d_target must lie in (0, 1]")
        if not self.tau_start >= self.tau_end > 0:
            raise ValueError("need tau_start >= tau_end > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.gate_learning_rate is not None and self.gate_learning_rate <= 0:
            raise ValueError("gate_learning_rate must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.gate_optimizer is not None and self.gate_optimizer not in OPTIMIZERS:
            raise ValueError(f"gate_optimizer must be one of {OPTIMIZERS}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.finetune_epochs < 0:
            raise ValueError("finetune_epochs must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# losses


def softmax_xent(scores: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. scores."""
    n = scores.shape[0]
    lse = logsumexp(scores, axis=1)
    loss = float(np.mean(lse - scores[np.arange(n), labels]))
    grad = np.exp(scores - lse[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def sigmoid_bce(scores: np.ndarray, targets: np.ndarray):
    """Mean binary cross-entropy over all entries and its gradient."""
    loss = -float(np.mean(targets * log_expit(scores) + (1.0 - targets) * log_expit(-scores)))
    grad = (expit(scores) - targets) / scores.size
    return loss, grad


def prediction_loss(scores, targets, loss_kind: str):
    if loss_kind == "softmax_xent":
        return softmax_xent(scores, targets)
    return sigmoid_bce(scores, targets)


def targets_for(dataset: Dataset, loss_kind: str, n_outputs: int) -> np.ndarray:
    """Labels shaped for the chosen loss: class ids or a float (n, k) matrix."""
    y = dataset.labels
    if loss_kind == "softmax_xent":
        if y.ndim != 1:
            raise ValueError("softmax_xent needs integer class labels")
        return y.astype(np.int64)
    y = y.reshape(len(y), -1).astype(np.float64)
    if y.shape[1] != n_outputs:
        raise ValueError(f"{y.shape[1]} label columns for {n_outputs} outputs")
    return y


@dataclass
class LossParts:
    prediction: float
    sparsity: float
    density: float
    d_outputs: np.ndarray
    d_gates: float


def total_loss(outputs, targets, gates: GateSample, cfg: TrainConfig):
    """Prediction loss plus ``alpha * |mean(g) - D_target|``.

    ``g`` are the same straight-through gate values that gated the forward
    pass, so the density penalty reaches the logits via the soft path.  The
    subgradient of ``|.|`` at zero is taken as 0.  Returns ``(total, parts)``.
    """
    if len(outputs) != len(targets):
        raise ValueError(f"batch mismatch: {len(outputs)} outputs vs {len(targets)} targets")
    pred, d_out = prediction_loss(outputs, targets, cfg.loss_kind)
    density = float(np.mean(gates.hard))
    gap = density - cfg.d_target
    sparsity = cfg.alpha * abs(gap)
    d_gates = cfg.alpha * float(np.sign(gap)) / gates.hard.size
    return pred + sparsity, LossParts(pred, sparsity, density, d_out, d_gates)


def temperature_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Geometric schedule from ``tau_start`` to ``tau_end``."""
    if total_steps <= 0:
        return cfg.tau_start
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return cfg.tau_start * (cfg.tau_end / cfg.tau_start) ** (step / total_steps)


# ---------------------------------------------------------------------------
# optimisers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> None:
        for k, p in params.items():
            p -= self.lr * grads[k]


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


class _Split:
    """Route weight/bias and gate-logit updates to separate optimisers."""

    def __init__(self, main, gates):
        self.main = main
        self.gates = gates

    def step(self, params: dict, grads: dict) -> None:
        self.main.step({k: p for k, p in params.items() if k[0] != "phi"}, grads)
        gp = {k: p for k, p in params.items() if k[0] == "phi"}
        if gp:
            self.gates.step(gp, grads)


def _build(kind: str, lr: float, cfg: TrainConfig):
    if kind == "sgd":
        return SGD(lr)
    return Adam(lr, cfg.beta1, cfg.beta2, cfg.eps)


def make_optimizer(cfg: TrainConfig):
    gate_kind = cfg.gate_optimizer or cfg.optimizer
    gate_lr = cfg.learning_rate if cfg.gate_learning_rate is None else cfg.gate_learning_rate
    return _Split(_build(cfg.optimizer, cfg.learning_rate, cfg), _build(gate_kind, gate_lr, cfg))


# ---------------------------------------------------------------------------
# pruned networks and evaluation


@dataclass
class PrunedNetwork:
    """Fixed sparse network: masked weights, biases and the binary mask."""

    specs: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    masks: list[np.ndarray]

    @property
    def n_gates(self) -> int:
        return sum(m.size for m in self.masks)

    @property
    def retained_count(self) -> int:
        return int(sum(int(m.sum()) for m in self.masks))

    @property
    def density(self) -> float:
        return self.retained_count / self.n_gates

    @property
    def layer_densities(self) -> list[float]:
        return [float(m.mean()) for m in self.masks]

    @property
    def mask(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.masks])

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.specs[0].input_size:
            raise ValueError(f"input batch must have shape (n, {self.specs[0].input_size}), got {h.shape}")
        for spec, W, b in zip(self.specs, self.weights, self.biases):
            z = h @ W.T + b
            h = np.maximum(z, 0.0) if spec.activation == "relu" else z
        return h


def finalize(net: GatedNetwork) -> PrunedNetwork:
    """Freeze the deterministic mask (phi >= 0) and zero every pruned weight."""
    masks = net.split(deterministic_gates(net))
    return PrunedNetwork(
        specs=list(net.specs),
        weights=[l.W * m for l, m in zip(net.layers, masks)],
        biases=[l.b.copy() for l in net.layers],
        masks=[m.copy() for m in masks],
    )


def predict_scores(model, x: np.ndarray, batch: int = 8192) -> np.ndarray:
    if isinstance(model, PrunedNetwork):
        fn = model.forward
    else:
        mask = deterministic_gates(model)

        def fn(xb):
            return forward_masked(model, mask, xb)

    return np.concatenate([fn(x[i : i + batch]) for i in range(0, len(x), batch)])


def accuracy_from_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    """Argmax match for class-id labels, threshold 0.5 (score > 0) otherwise."""
    if labels.ndim == 1 and scores.shape[1] > 1:
        return float(np.mean(np.argmax(scores, axis=1) == labels))
    y = labels.reshape(len(labels), -1)
    return float(np.mean((scores > 0.0) == (y > 0.5)))


def evaluate(model, dataset: Dataset) -> float:
    """Accuracy of a GatedNetwork (deterministic gates) or a PrunedNetwork."""
    if dataset.n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return accuracy_from_scores(predict_scores(model, dataset.features), dataset.labels)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    prediction_loss: float
    sparsity_loss: float
    soft_density: float
    hard_density: float
    tau: float
    train_accuracy: float
    test_accuracy: float
    mask_density: float
    layer_densities: list[float]
    phase: str = "train"


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    n_gates: int = 0
    retained_count: int = 0
    pruned_density: float = 0.0
    test_accuracy: float = 0.0
    train_accuracy: float = 0.0
    layer_densities: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "n_gates": self.n_gates,
            "retained_count": self.retained_count,
            "pruned_density": self.pruned_density,
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "layer_densities": list(self.layer_densities),
            "epochs": len(self.epochs),
        }

    def numeric_rows(self) -> list[tuple]:
        return [
            (r.epoch, r.prediction_loss, r.sparsity_loss, r.soft_density, r.hard_density,
             r.tau, r.train_accuracy, r.test_accuracy, r.mask_density, *r.layer_densities)
            for r in self.epochs
        ]


def _param_dict(net: GatedNetwork, with_gates: bool) -> dict:
    params = {}
    for k, layer in enumerate(net.layers):
        params[("W", k)] = layer.W
        params[("b", k)] = layer.b
        if with_gates:
            params[("phi", k)] = layer.phi
    return params


def _grad_dict(grads, with_gates: bool) -> dict:
    out = {}
    for k in range(len(grads.dW)):
        out[("W", k)] = grads.dW[k]
        out[("b", k)] = grads.db[k]
        if with_gates:
            out[("phi", k)] = grads.dphi[k]
    return out


def _check_widths(net: GatedNetwork, *datasets: Dataset) -> None:
    width = net.layers[0].spec.input_size
    for ds in datasets:
        if ds is not None and ds.features.shape[1] != width:
            raise ValueError(f"dataset has {ds.features.shape[1]} features, network expects {width}")


def _run_epochs(
    net: GatedNetwork,
    train_set: Dataset,
    test_set: Dataset | None,
    cfg: TrainConfig,
    report: TrainReport,
    *,
    epochs: int,
    pinned_mask: np.ndarray | None,
    rng: Rng,
    phase: str,
) -> None:
    n_out = net.layers[-1].spec.output_size
    y_all = targets_for(train_set, cfg.loss_kind, n_out)
    x_all = train_set.features
    n = len(x_all)
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = epochs * steps_per_epoch
    order_rng = rng.stream(f"{phase}/batches")
    gate_rng = rng.stream(f"{phase}/gates")
    learn_gates = pinned_mask is None
    opt = make_optimizer(cfg)
    params = _param_dict(net, learn_gates)
    pinned = None if learn_gates else GateSample.constant(pinned_mask)

    step = 0
    for epoch in range(epochs):
        perm = order_rng.permutation(n)
        sums = np.zeros(4)
        for bi in range(steps_per_epoch):
            idx = perm[bi * cfg.batch_size : (bi + 1) * cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            tau = temperature_at(step, total_steps, cfg)
            net.tau = tau
            gates = sample_gates(net.gate_params(), gate_rng) if learn_gates else pinned
            out, tape = forward(net, gates, xb)
            total, parts = total_loss(out, yb, gates, cfg)
            if not np.isfinite(total):
                raise NumericAbort(epoch, bi, f"prediction={parts.prediction}, sparsity={parts.sparsity}")
            d_gates = parts.d_gates if learn_gates else None
            grads = backward(net, tape, parts.d_outputs, d_gates)
            opt.step(params, _grad_dict(grads, learn_gates))
            sums += (parts.prediction, parts.sparsity, float(np.mean(gates.soft)), parts.density)
            step += 1
        net.tau = temperature_at(step, total_steps, cfg)
        means = sums / steps_per_epoch
        if learn_gates:
            mask = deterministic_gates(net)
        else:
            mask = np.asarray(pinned_mask, dtype=np.float64)
        train_acc = accuracy_from_scores(_masked_scores(net, mask, x_all), train_set.labels)
        test_acc = (
            accuracy_from_scores(_masked_scores(net, mask, test_set.features), test_set.labels)
            if test_set is not None and test_set.n
            else float("nan")
        )
        rec = EpochRecord(
            epoch=len(report.epochs),
            prediction_loss=float(means[0]),
            sparsity_loss=float(means[1]),
            soft_density=float(means[2]),
            hard_density=float(means[3]),
            tau=float(net.tau),
            train_accuracy=train_acc,
            test_accuracy=test_acc,
            mask_density=float(mask.mean()),
            layer_densities=[float(m.mean()) for m in net.split(mask)],
            phase=phase,
        )
        report.epochs.append(rec)
        log.info(
            "%s epoch %d: pred %.4f sparsity %.4f density %.4f/%.4f mask %.4f tau %.3f acc %.4f/%.4f",
            phase, rec.epoch, rec.prediction_loss, rec.sparsity_loss, rec.soft_density,
            rec.hard_density, rec.mask_density, rec.tau, rec.train_accuracy, rec.test_accuracy,
        )


def _masked_scores(net: GatedNetwork, mask: np.ndarray, x: np.ndarray, batch: int = 8192):
    return np.concatenate([forward_masked(net, mask, x[i : i + batch]) for i in range(0, len(x), batch)])


def _finish(report: TrainReport, net: GatedNetwork, mask: np.ndarray, train_set, test_set) -> None:
    report.n_gates = net.n_gates
    report.retained_count = int(mask.sum())
    report.pruned_density = report.retained_count / report.n_gates
    report.layer_densities = [float(m.mean()) for m in net.split(mask)]
    report.train_accuracy = accuracy_from_scores(_masked_scores(net, mask, train_set.features), train_set.labels)
    if test_set is not None and test_set.n:
        report.test_accuracy = accuracy_from_scores(_masked_scores(net, mask, test_set.features), test_set.labels)
    else:
        report.test_accuracy = float("nan")


def fit(net: GatedNetwork, train_set: Dataset, test_set: Dataset | None, cfg: TrainConfig):
    """Jointly train weights, biases and gate logits.

    Each mini-batch: sample gates, gated forward, total loss, backward, one
    optimiser step on {W, b, phi}.  Gates are sampled once per mini-batch.
    With ``cfg.finetune_epochs > 0`` the finalised mask is then pinned and
    only weights and biases keep training.  Returns ``(trained_net, report)``;
    the input network is not modified.
    """
    _check_widths(net, train_set, test_set)
    net = net.copy()
    rng = Rng(cfg.seed)
    report = TrainReport()
    _run_epochs(net, train_set, test_set, cfg, report, epochs=cfg.epochs,
                pinned_mask=None, rng=rng, phase="train")
    mask = deterministic_gates(net)
    if cfg.finetune_epochs:
        _run_epochs(net, train_set, test_set, cfg, report, epochs=cfg.finetune_epochs,
                    pinned_mask=mask, rng=rng, phase="finetune")
    _finish(report, net, mask, train_set, test_set)
    return net, report


def train_pinned(net: GatedNetwork, mask: np.ndarray, train_set: Dataset, test_set: Dataset | None,
                 cfg: TrainConfig):
    """Train weights and biases under a fixed mask; ``phi`` is left untouched."""
    _check_widths(net, train_set, test_set)
    mask = np.asarray(mask, dtype=np.float64).ravel()
    if mask.size != net.n_gates:
        raise ValueError(f"mask has {mask.size} entries, network has {net.n_gates} connections")
    net = net.copy()
    report = TrainReport()
    _run_epochs(net, train_set, test_set, cfg, report, epochs=cfg.epochs,
                pinned_mask=mask, rng=Rng(cfg.seed), phase="train")
    _finish(report, net, mask, train_set, test_set)
    return net, report
