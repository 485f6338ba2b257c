"""L2 training with Adam, patience-based early stopping and checkpoints.

A run is a pure function of (seed, config, data): shuffling and weight
initialization come from one seeded generator, minibatch gradients are
summed in fixed order on the tape, and the optimizer walks parameters in
a fixed order - two identical runs produce bitwise-identical logs.

Loss and metrics are always computed on de-normalized predictions, so
norm=0 and norm=1 runs are directly comparable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DivergenceError
from .model import VARIANTS, TpgnConfig, TpgnParams, tpgn_forward_batch

__all__ = [
    "TrainConfig",
    "AdamState",
    "Checkpoint",
    "EpochRecord",
    "mse",
    "mae",
    "adam_step",
    "fit",
    "evaluate",
    "predict_windows",
    "params_from_checkpoint",
    "write_epoch_log",
]

CHECKPOINT_MAGIC = b"TPGN1"
_EVAL_CHUNK = 512  # windows per untracked forward during evaluation


@dataclass
class TrainConfig:
    """Training protocol knobs; defaults follow the benchmark recipe."""

    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 25
    patience: int = 5
    seed: int = 2023
    d_m: int = 32
    norm: int = 0
    period: int = 24
    l_h: int = 168
    l_f: int = 168
    variant: str = "full"

    def __post_init__(self):
        for name in ("lr", "batch_size", "max_epochs", "patience", "d_m",
                     "period", "l_h", "l_f"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patience > self.max_epochs:
            raise ConfigError(
                f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.norm not in (0, 1):
            raise ConfigError(f"norm must be 0 or 1, got {self.norm}")
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"variant must be one of {sorted(VARIANTS)}, got {self.variant!r}")

    def model_config(self) -> TpgnConfig:
        return TpgnConfig(norm=self.norm, period=self.period,
                          variant=VARIANTS[self.variant])

    def as_dict(self) -> dict[str, str]:
        return {k: str(getattr(self, k)) for k in
                ("lr", "batch_size", "max_epochs", "patience", "seed", "d_m",
                 "norm", "period", "l_h", "l_f", "variant")}


@dataclass
class AdamState:
    """First/second moments per named parameter plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, arrays: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(a) for k, a in arrays.items()},
                   v={k: np.zeros_like(a) for k, a in arrays.items()})


def _metric_arrays(pred, target):
    p = pred.data if isinstance(pred, ad.Tensor) else np.asarray(pred, dtype=np.float64)
    t = target.data if isinstance(target, ad.Tensor) else np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ConfigError(f"prediction shape {p.shape} != target shape {t.shape}")
    if p.size == 0:
        raise ContractError("metrics need at least one element")
    return p, t


def mse(pred, target) -> float:
    p, t = _metric_arrays(pred, target)
    return float(((p - t) ** 2).mean())


def mae(pred, target) -> float:
    p, t = _metric_arrays(pred, target)
    return float(np.abs(p - t).mean())


def adam_step(arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One in-place update. Aborts (leaving parameters untouched) on a
    non-finite gradient, naming the offending tensor."""
    for name in arrays:
        g = grads[name]
        if g.shape != arrays[name].shape:
            raise ConfigError(f"gradient for {name} has shape {g.shape}, "
                              f"expected {arrays[name].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for name, theta in arrays.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        theta -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class Checkpoint:
    """Named tensors plus a config echo; round-trips bitwise through disk."""

    tensors: dict[str, np.ndarray]
    config: dict[str, str]
    best_val_loss: float
    epoch: int

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            for name in sorted(self.tensors):
                # asarray keeps rank-0 arrays rank-0 (ascontiguousarray does not)
                arr = np.asarray(self.tensors[name], dtype="<f8", order="C")
                encoded = name.encode("utf-8")
                fh.write(len(encoded).to_bytes(8, "little"))
                fh.write(encoded)
                fh.write(arr.ndim.to_bytes(8, "little"))
                for dim in arr.shape:
                    fh.write(int(dim).to_bytes(8, "little"))
                fh.write(arr.tobytes())
            fh.write((0).to_bytes(8, "little"))  # name_len = 0 ends the tensor list
            lines = [f"{k}={v}" for k, v in sorted(self.config.items())]
            lines.append(f"best_val_loss={self.best_val_loss!r}")
            lines.append(f"epoch={self.epoch}")
            fh.write("\n".join(lines).encode("utf-8"))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            magic = fh.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise ConfigError(f"{path} is not a checkpoint (bad magic {magic!r})")
            tensors: dict[str, np.ndarray] = {}
            while True:
                name_len = int.from_bytes(fh.read(8), "little")
                if name_len == 0:
                    break
                name = fh.read(name_len).decode("utf-8")
                rank = int.from_bytes(fh.read(8), "little")
                shape = tuple(int.from_bytes(fh.read(8), "little") for _ in range(rank))
                count = int(np.prod(shape, dtype=np.int64)) if shape else 1
                payload = fh.read(count * 8)
                tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
            config: dict[str, str] = {}
            for line in fh.read().decode("utf-8").splitlines():
                if line:
                    key, _, value = line.partition("=")
                    config[key] = value
        best = float(config.pop("best_val_loss", "inf"))
        epoch = int(config.pop("epoch", "0"))
        return cls(tensors=tensors, config=config, best_val_loss=best, epoch=epoch)


def params_from_checkpoint(ckpt: Checkpoint) -> tuple[TpgnParams, TrainConfig]:
    """Rebuild the model and its training config from a checkpoint echo."""
    cfg = TrainConfig(
        lr=float(ckpt.config["lr"]), batch_size=int(ckpt.config["batch_size"]),
        max_epochs=int(ckpt.config["max_epochs"]), patience=int(ckpt.config["patience"]),
        seed=int(ckpt.config["seed"]), d_m=int(ckpt.config["d_m"]),
        norm=int(ckpt.config["norm"]), period=int(ckpt.config["period"]),
        l_h=int(ckpt.config["l_h"]), l_f=int(ckpt.config["l_f"]),
        variant=ckpt.config["variant"])
    c_time = int(ckpt.config.get("c_time", "4"))
    head_shared = ckpt.config.get("head_shared", "1") == "1"
    params = TpgnParams.init(cfg.l_h, cfg.l_f, cfg.period, c_time, cfg.d_m,
                             np.random.default_rng(cfg.seed), VARIANTS[cfg.variant],
                             head_shared=head_shared)
    arrays = params.named_arrays()
    if set(arrays) != set(ckpt.tensors):
        raise ConfigError(
            f"checkpoint tensors {sorted(ckpt.tensors)} do not match the model "
            f"structure {sorted(arrays)}")
    for name, arr in arrays.items():
        stored = ckpt.tensors[name]
        if stored.shape != arr.shape:
            raise ConfigError(f"checkpoint tensor {name} has shape {stored.shape}, "
                              f"model expects {arr.shape}")
        arr[...] = stored
    return params, cfg


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    elapsed_seconds: float


def write_epoch_log(path, records: list[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,elapsed_seconds\n")
        for r in records:
            fh.write(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},"
                     f"{r.elapsed_seconds:.3f}\n")


def predict_windows(params: TpgnParams, windows, mcfg: TpgnConfig) -> np.ndarray:
    """Untracked batched predictions [N, L_f] in original units."""
    chunks = []
    for lo in range(0, len(windows), _EVAL_CHUNK):
        out = tpgn_forward_batch(windows[lo:lo + _EVAL_CHUNK], params, mcfg)
        chunks.append(out.data)
    return np.concatenate(chunks, axis=0)


def _dataset_mse(params: TpgnParams, windows, mcfg: TpgnConfig) -> float:
    preds = predict_windows(params, windows, mcfg)
    targets = np.stack([w.y_true for w in windows])
    return mse(preds, targets)


def fit(params: TpgnParams, train_windows, val_windows, cfg: TrainConfig,
        extra_config: dict[str, str] | None = None,
        ) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train in place; returns the best-validation checkpoint and the log.

    Every epoch reshuffles with the run generator, walks minibatches of
    ``batch_size`` (final partial batch kept), and then scores the full
    validation set.  Training stops at ``max_epochs`` or after
    ``patience`` consecutive epochs without a strictly lower validation
    loss.  A non-finite loss or gradient aborts with the last good
    checkpoint attached to the raised :class:`DivergenceError`.
    """
    if not train_windows or not val_windows:
        raise ConfigError("training and validation window sets must be non-empty")
    params.validate()
    mcfg = cfg.model_config()
    arrays = params.named_arrays()
    state = AdamState.init(arrays)
    rng = np.random.default_rng(cfg.seed)

    echo = cfg.as_dict()
    echo["c_time"] = str(params.channels - 1)
    echo["head_shared"] = "1" if params.head_shared else "0"
    if extra_config:
        echo.update(extra_config)

    def snapshot(best_val: float, epoch: int) -> Checkpoint:
        return Checkpoint(tensors={k: a.copy() for k, a in arrays.items()},
                          config=dict(echo), best_val_loss=best_val, epoch=epoch)

    best = snapshot(float("inf"), 0)
    records: list[EpochRecord] = []
    bad_epochs = 0
    n = len(train_windows)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        seen = 0
        weighted = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = [train_windows[i] for i in order[lo:lo + cfg.batch_size]]
            graph = ad.Graph()
            leaves = params.leaf_into(graph)
            preds = tpgn_forward_batch(batch, params, mcfg, weights=leaves)
            targets = np.stack([w.y_true for w in batch])
            diff = ad.sub(preds, ad.constant(targets))
            loss = ad.reduce_mean(ad.mul(diff, diff))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}",
                    checkpoint=best, log=records)
            grad_map = ad.backward(loss)
            grads = {name: grad_map[leaves[name]] for name in arrays}
            try:
                adam_step(arrays, grads, state, cfg.lr)
            except DivergenceError as exc:
                raise DivergenceError(str(exc), checkpoint=best, log=records) from None
            weighted += loss_value * len(batch)
            seen += len(batch)
        train_loss = weighted / seen
        val_loss = _dataset_mse(params, val_windows, mcfg)
        records.append(EpochRecord(epoch=epoch, train_loss=train_loss,
                                   val_loss=val_loss,
                                   elapsed_seconds=time.perf_counter() - t0))
        if val_loss < best.best_val_loss:
            best = snapshot(val_loss, epoch)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    return best, records


def evaluate(ckpt: Checkpoint, test_windows) -> dict[str, float]:
    """MSE and MAE of a checkpointed model over a window set, original units."""
    if not test_windows:
        raise ConfigError("evaluation needs at least one window")
    params, cfg = params_from_checkpoint(ckpt)
    preds = predict_windows(params, test_windows, cfg.model_config())
    targets = np.stack([w.y_true for w in test_windows])
    return {"mse": mse(preds, targets), "mae": mae(preds, targets)}
