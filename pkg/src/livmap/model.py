"""Trainable fusion head: batch norm, FC(D->100), FC(100->1), aerial adapter.

The adapter is an identity-initialized D x D affine applied to the
aerial vector before fusion; it stands in for backbone fine-tuning and
follows the staged schedule (frozen for the first three epochs, trained
afterwards). Gradients are derived by hand; all training math runs in
float64.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import LivmapError, TrainingDiverged, ValidationError
from .features import PatchBundle, SplitDatasets
from .splits import TRAIN, VAL

HIDDEN_UNITS = 100
CKPT_MAGIC = b"LVM1"

# Serialization and Adam-traversal order; running stats are not trainable.
PARAM_ORDER = ("bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var",
               "W1", "b1", "W2", "b2", "adapter_W", "adapter_b")
TRAINABLE = ("bn_gamma", "bn_beta", "W1", "b1", "W2", "b2", "adapter_W", "adapter_b")
DECAYED = frozenset({"W1", "W2", "adapter_W"})
ADAPTER_PARAMS = frozenset({"adapter_W", "adapter_b"})


@dataclass
class FusionHeadParams:
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    adapter_W: np.ndarray
    adapter_b: np.ndarray

    @property
    def dim(self) -> int:
        return self.bn_gamma.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def named(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    def copy(self) -> "FusionHeadParams":
        return FusionHeadParams(**{name: getattr(self, name).copy() for name in PARAM_ORDER})

    def check_finite(self) -> None:
        for name, value in self.named().items():
            if not np.all(np.isfinite(value)):
                raise ValidationError(f"parameter {name} contains non-finite values")


@dataclass
class TrainConfig:
    epochs: int = 25
    lr: float = 0.001
    weight_decay: float = 0.001
    batch_size: int = 64
    freeze_adapter_epochs: int = 3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    decoupled_weight_decay: bool = False

    def __post_init__(self):
        # freeze_adapter_epochs may exceed epochs; the adapter then never unfreezes.
        if self.epochs < 0 or self.batch_size < 2:
            raise ValidationError("epochs must be >= 0 and batch_size >= 2")
        if self.freeze_adapter_epochs < 0:
            raise ValidationError("freeze_adapter_epochs must be >= 0")
        for name in ("lr", "beta1", "beta2", "eps", "bn_eps", "bn_momentum"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_rmse: float
    val_tau: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0


def init_params(dim: int, seed: int, hidden: int = HIDDEN_UNITS) -> FusionHeadParams:
    """Fresh parameters: unit batch norm, Kaiming-uniform FCs, identity adapter.

    W1 then W2 are drawn uniform in +-sqrt(6/fan_in) from a PCG64 stream,
    so the same seed always yields bit-identical parameters.
    """
    if dim < 1 or hidden < 1:
        raise ValidationError("dim and hidden must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    bound1 = np.sqrt(6.0 / dim)
    bound2 = np.sqrt(6.0 / hidden)
    return FusionHeadParams(
        bn_gamma=np.ones(dim),
        bn_beta=np.zeros(dim),
        bn_running_mean=np.zeros(dim),
        bn_running_var=np.ones(dim),
        W1=rng.uniform(-bound1, bound1, size=(hidden, dim)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-bound2, bound2, size=(1, hidden)),
        b2=np.zeros(1),
        adapter_W=np.eye(dim),
        adapter_b=np.zeros(dim),
    )


def forward(params: FusionHeadParams, aerial: np.ndarray, ground: np.ndarray,
            mode: str = "eval", bn_eps: float = 1e-5, bn_momentum: float = 0.1,
            update_running: bool | None = None) -> tuple[np.ndarray, dict | None]:
    """Run the head on a batch; returns (predictions, cache).

    The adapter transforms the aerial rows before fusion. Train mode
    normalizes with batch statistics (batch size >= 2) and, unless
    ``update_running`` is False, folds them into the running stats with
    the configured momentum; eval mode uses the running stats and returns
    no cache.
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"unknown forward mode {mode!r}")
    A = np.asarray(aerial, dtype=np.float64)
    G = np.asarray(ground, dtype=np.float64)
    if A.ndim != 2 or A.shape != G.shape or A.shape[1] != params.dim:
        raise ValidationError(f"bad batch shapes {A.shape} / {G.shape} for dim {params.dim}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(G))):
        raise ValidationError("non-finite values in the input batch")
    batch = A.shape[0]
    if batch < 1 or (mode == "train" and batch < 2):
        raise ValidationError(f"batch size {batch} too small for mode {mode}")

    X = A @ params.adapter_W.T + params.adapter_b
    M = X + G

    if mode == "train":
        mean = M.mean(axis=0)
        var = M.var(axis=0)
        if update_running is None or update_running:
            # Normalization uses the biased batch variance; the running
            # average keeps the unbiased estimate (standard convention).
            unbiased = var * (batch / (batch - 1.0))
            params.bn_running_mean *= 1.0 - bn_momentum
            params.bn_running_mean += bn_momentum * mean
            params.bn_running_var *= 1.0 - bn_momentum
            params.bn_running_var += bn_momentum * unbiased
    else:
        mean = params.bn_running_mean
        var = params.bn_running_var

    inv_std = 1.0 / np.sqrt(var + bn_eps)
    centered = M - mean
    x_hat = centered * inv_std
    h0 = params.bn_gamma * x_hat + params.bn_beta
    z1 = h0 @ params.W1.T + params.b1
    h1 = np.maximum(z1, 0.0)
    preds = (h1 @ params.W2.T).ravel() + params.b2[0]

    if mode != "train":
        return preds, None
    cache = {
        "A": A, "x_hat": x_hat, "inv_std": inv_std,
        "h0": h0, "z1": z1, "h1": h1, "preds": preds, "params": params,
    }
    return preds, cache


def mse_loss(preds: np.ndarray, targets: np.ndarray) -> float:
    """Mean over the batch of the squared score error."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValidationError(f"length mismatch: {preds.shape} vs {targets.shape}")
    diff = targets - preds
    return float(np.mean(diff * diff))


def backward(cache: dict, targets: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the batch-mean squared error for every trainable field.

    Includes the batch-statistic terms of the normalization and the
    adapter; requires the cache of a train-mode forward on this batch.
    """
    if cache is None or "x_hat" not in cache:
        raise ValidationError("backward needs the cache of a train-mode forward")
    params: FusionHeadParams = cache["params"]
    targets = np.asarray(targets, dtype=np.float64)
    preds = cache["preds"]
    if targets.shape != preds.shape:
        raise ValidationError(f"length mismatch: {targets.shape} vs {preds.shape}")
    batch = preds.shape[0]

    d_preds = 2.0 * (preds - targets) / batch
    grad_W2 = d_preds[None, :] @ cache["h1"]
    grad_b2 = np.array([d_preds.sum()])
    d_h1 = d_preds[:, None] @ params.W2
    d_z1 = d_h1 * (cache["z1"] > 0.0)
    grad_W1 = d_z1.T @ cache["h0"]
    grad_b1 = d_z1.sum(axis=0)
    d_h0 = d_z1 @ params.W1

    x_hat = cache["x_hat"]
    grad_gamma = (d_h0 * x_hat).sum(axis=0)
    grad_beta = d_h0.sum(axis=0)
    d_xhat = d_h0 * params.bn_gamma
    # Backprop through the batch mean/variance of the normalization.
    d_M = (cache["inv_std"] / batch) * (
        batch * d_xhat
        - d_xhat.sum(axis=0)
        - x_hat * (d_xhat * x_hat).sum(axis=0))

    grad_adapter_W = d_M.T @ cache["A"]
    grad_adapter_b = d_M.sum(axis=0)

    return {
        "bn_gamma": grad_gamma, "bn_beta": grad_beta,
        "W1": grad_W1, "b1": grad_b1, "W2": grad_W2, "b2": grad_b2,
        "adapter_W": grad_adapter_W, "adapter_b": grad_adapter_b,
    }


def init_adam_state(params: FusionHeadParams) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(getattr(params, name)) for name in TRAINABLE},
        v={name: np.zeros_like(getattr(params, name)) for name in TRAINABLE},
        t=0,
    )


def adam_step(params: FusionHeadParams, grads: Mapping[str, np.ndarray],
              state: AdamState, config: TrainConfig,
              frozen: frozenset[str] = frozenset()) -> tuple[FusionHeadParams, AdamState]:
    """One Adam update with bias correction, in place.

    Weight decay enters as coupled L2 on the weight matrices only (or as
    a decoupled shrink when configured). Frozen parameters are skipped
    entirely so neither their moments nor the decay can move them.
    """
    state.t += 1
    bc1 = 1.0 - config.beta1 ** state.t
    bc2 = 1.0 - config.beta2 ** state.t
    for name in TRAINABLE:
        if name in frozen:
            continue
        grad = np.asarray(grads[name], dtype=np.float64)
        theta = getattr(params, name)
        if grad.shape != theta.shape:
            raise ValidationError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(grad)):
            raise ValidationError(f"non-finite gradient for {name}")
        if config.weight_decay > 0.0 and name in DECAYED and not config.decoupled_weight_decay:
            grad = grad + config.weight_decay * theta
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * grad
        v *= config.beta2
        v += (1.0 - config.beta2) * grad * grad
        m_hat = m / bc1
        v_hat = v / bc2
        theta -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
        if config.weight_decay > 0.0 and name in DECAYED and config.decoupled_weight_decay:
            theta -= config.lr * config.weight_decay * theta
    return params, state


def _bundle_matrices(bundles: Sequence[PatchBundle]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    aerial = np.stack([b.aerial for b in bundles])
    ground = np.stack([b.pooled_ground for b in bundles])
    targets = np.array([b.target for b in bundles], dtype=np.float64)
    return aerial, ground, targets


def predict(params: FusionHeadParams, bundles: Sequence[PatchBundle],
            bn_eps: float = 1e-5, chunk: int = 1024) -> np.ndarray:
    """Eval-mode predictions for every bundle, in input order.

    Work is split into fixed-size chunks; chunks may be evaluated by a
    thread pool (capped by LIVMAP_THREADS) without changing the result.
    """
    if not bundles:
        return np.zeros(0)
    for b in bundles:
        if b.aerial.shape[0] != params.dim:
            raise ValidationError(
                f"bundle dim {b.aerial.shape[0]} does not match model dim {params.dim}")
    spans = [(start, min(start + chunk, len(bundles))) for start in range(0, len(bundles), chunk)]
    out = np.zeros(len(bundles))

    def run(span):
        start, stop = span
        aerial, ground, _ = _bundle_matrices(bundles[start:stop])
        preds, _ = forward(params, aerial, ground, mode="eval", bn_eps=bn_eps)
        return start, stop, preds

    from .runtime import max_threads
    workers = min(max_threads(), len(spans))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, spans))
    else:
        results = [run(span) for span in spans]
    for start, stop, preds in results:
        out[start:stop] = preds
    return out


def train_model(datasets: SplitDatasets, config: TrainConfig) -> tuple[FusionHeadParams, TrainHistory]:
    """Seeded-shuffle minibatch Adam on the squared-error loss.

    The adapter stays frozen (exactly identity) for the first
    ``freeze_adapter_epochs`` epochs and trains afterwards; the ground
    path has no trainable parameters anywhere. Returns the parameters of
    the epoch with the best validation RMSE. Size-1 remainder batches are
    skipped because train-mode normalization needs two samples.
    """
    from .evaluation import kendall_tau, rmse  # local import to avoid a cycle

    train_bundles = datasets.bundles(TRAIN)
    val_bundles = datasets.bundles(VAL)
    if not train_bundles or not val_bundles:
        raise ValidationError(
            f"empty split: train={len(train_bundles)} val={len(val_bundles)} bundles")

    params = init_params(datasets.dim, config.seed)
    history = TrainHistory()
    if config.epochs == 0:
        return params, history

    state = init_adam_state(params)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    best_params = params.copy()
    best_rmse = np.inf
    n_train = len(train_bundles)

    for epoch in range(1, config.epochs + 1):
        frozen = ADAPTER_PARAMS if epoch <= config.freeze_adapter_epochs else frozenset()
        order = rng.permutation(n_train)
        sq_err_sum = 0.0
        sq_err_count = 0
        for start in range(0, n_train, config.batch_size):
            idx = order[start:start + config.batch_size]
            if idx.shape[0] < 2:
                continue
            batch = [train_bundles[i] for i in idx]
            aerial, ground, targets = _bundle_matrices(batch)
            preds, cache = forward(params, aerial, ground, mode="train",
                                   bn_eps=config.bn_eps, bn_momentum=config.bn_momentum)
            loss = mse_loss(preds, targets)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            sq_err_sum += loss * idx.shape[0]
            sq_err_count += idx.shape[0]
            grads = backward(cache, targets)
            adam_step(params, grads, state, config, frozen=frozen)

        val_preds = predict(params, val_bundles, bn_eps=config.bn_eps)
        val_targets = np.array([b.target for b in val_bundles])
        val_rmse = rmse(val_preds, val_targets)
        if not np.isfinite(val_rmse):
            raise TrainingDiverged(epoch, val_rmse)
        try:
            val_tau = kendall_tau(val_preds, val_targets, variant="tau_b")
        except LivmapError:
            val_tau = float("nan")
        train_loss = sq_err_sum / sq_err_count if sq_err_count else float("nan")
        history.epochs.append(EpochStats(epoch, train_loss, val_rmse, val_tau))
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best_params = params.copy()
            history.best_epoch = epoch

    return best_params, history


# ---------------------------------------------------------------- file io


def save_checkpoint(params: FusionHeadParams, path) -> None:
    """Write model.ckpt: magic LVM1, u32 dim, then float64 tensors.

    Tensor order is PARAM_ORDER; the hidden width is recovered from the
    file size on load.
    """
    params.check_finite()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", params.dim))
        for name in PARAM_ORDER:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())


def load_checkpoint(path) -> FusionHeadParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}, expected {CKPT_MAGIC!r}")
        (dim,) = struct.unpack("<I", fh.read(4))
        payload = fh.read()
    count = len(payload) // 8
    if len(payload) != count * 8:
        raise ValidationError(f"{path}: truncated checkpoint payload")
    # Total floats: 4 dim-vectors + W1(h*D) + b1(h) + W2(h) + b2(1) + adapter (D*D + D).
    fixed = 4 * dim + dim * dim + dim + 1
    if (count - fixed) % (dim + 2) != 0:
        raise ValidationError(f"{path}: payload size {count} inconsistent with dim {dim}")
    hidden = (count - fixed) // (dim + 2)
    if hidden < 1:
        raise ValidationError(f"{path}: inferred hidden width {hidden} invalid")
    values = np.frombuffer(payload, dtype="<f8")
    shapes = {
        "bn_gamma": (dim,), "bn_beta": (dim,),
        "bn_running_mean": (dim,), "bn_running_var": (dim,),
        "W1": (hidden, dim), "b1": (hidden,), "W2": (1, hidden), "b2": (1,),
        "adapter_W": (dim, dim), "adapter_b": (dim,),
    }
    fields = {}
    offset = 0
    for name in PARAM_ORDER:
        size = int(np.prod(shapes[name]))
        fields[name] = values[offset:offset + size].reshape(shapes[name]).copy()
        offset += size
    if offset != count:
        raise ValidationError(f"{path}: {count - offset} unread floats")
    params = FusionHeadParams(**fields)
    params.check_finite()
    if np.any(params.bn_running_var <= 0):
        raise ValidationError(f"{path}: running variance must stay positive")
    return params


def save_history(history: TrainHistory, path) -> None:
    from .grid import format_float
    with open(path, "w", newline="\n") as fh:
        fh.write("epoch,train_loss,val_rmse,val_tau\n")
        for row in history.epochs:
            fh.write(f"{row.epoch},{format_float(row.train_loss)},"
                     f"{format_float(row.val_rmse)},{format_float(row.val_tau)}\n")


def load_history(path) -> TrainHistory:
    history = TrainHistory()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch", "train_loss", "val_rmse", "val_tau"]:
            raise ValidationError(f"{path}: bad history header")
        for row in reader:
            if not row:
                continue
            history.epochs.append(EpochStats(
                int(row[0]), float(row[1]), float(row[2]), float(row[3])))
    return history
