"""Optimization loop: decoupled-weight-decay Adam, a triangular cyclical
learning-rate schedule, seeded mini-batching, and binary checkpoints.

Checkpoint format (little-endian): magic ``HMCKPT1``, uint32 length +
UTF-8 config text (``key=value`` lines for the model and ablation
configs), uint32 tensor count, then per tensor uint32 name length, name
bytes, uint32 rank, uint32 dims, float64 payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import RngState, Tensor, backward
from .data import Sample
from .errors import ConfigError, FormatError, NumericError
from .model import LOSSES, AblationConfig, Batch, HybridModel, ModelConfig


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: OptimizerState, lr: float) -> None:
    """One decoupled-weight-decay Adam update over all parameters.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
    """
    state.step_count += 1
    t = state.step_count
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if np.isnan(g).any() or np.isinf(g).any():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1 ** t)
        v_hat = state.v[name] / (1 - state.beta2 ** t)
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p.data)


@dataclass
class LrSchedule:
    """Triangular wave from base_lr up to max_lr and back over one cycle."""

    base_lr: float = 7e-6
    max_lr: float = 7e-5
    cycle_length: int = 100

    def __post_init__(self):
        if not 0 < self.base_lr <= self.max_lr:
            raise ConfigError("need 0 < base_lr <= max_lr")
        if self.cycle_length < 2:
            raise ConfigError("cycle_length must be at least 2 steps")

    def lr_at(self, step: int) -> float:
        phase = (step % self.cycle_length) / self.cycle_length
        tri = 1.0 - abs(2.0 * phase - 1.0)
        return self.base_lr + (self.max_lr - self.base_lr) * tri


def lr_at(schedule: LrSchedule, step: int) -> float:
    return schedule.lr_at(step)


@dataclass
class TrainRunConfig:
    batch_size: int = 128
    epochs: int = 9
    seed: int = 0
    shuffle: bool = True
    weight_decay: float = 0.01
    loss: str = "mse"
    selection: str = "best"  # best validation MAE, or "last" epoch
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.selection not in ("best", "last"):
            raise ConfigError(f"selection must be 'best' or 'last', got {self.selection!r}")


@dataclass
class HistoryRow:
    epoch: int
    step: int
    lr: float
    train_loss: float
    val_mae: float


def history_csv(history: list[HistoryRow]) -> str:
    lines = ["epoch,step,lr,train_loss,val_mae"]
    for row in history:
        lines.append(
            f"{row.epoch},{row.step},{row.lr!r},{row.train_loss!r},{row.val_mae!r}"
        )
    return "\n".join(lines) + "\n"


def batch_from_samples(samples: list[Sample]) -> Batch:
    return Batch(
        x=np.stack([s.x for s in samples]),
        s_n=np.stack([s.s_n for s in samples]),
        s_d=np.stack([s.s_d for s in samples]),
        y=np.stack([s.y for s in samples]),
    )


def _iter_batches(samples: list[Sample], batch_size: int, order) -> list[list[Sample]]:
    ordered = [samples[i] for i in order]
    return [ordered[i:i + batch_size] for i in range(0, len(ordered), batch_size)]


def validation_mae(model: HybridModel, samples: list[Sample], batch_size: int = 256) -> float:
    total = 0.0
    count = 0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        batch = batch_from_samples(chunk)
        preds = model.forward(batch, training=False).predictions.data
        total += np.abs(preds - batch.y).sum()
        count += batch.y.size
    return total / count if count else float("nan")


def fit(model: HybridModel, train_samples: list[Sample], val_samples: list[Sample],
        run: TrainRunConfig, schedule: LrSchedule) -> tuple[HybridModel, list[HistoryRow]]:
    """Train in place; returns the selected model plus the per-epoch history.

    Shuffling, dropout, and initialization all derive from ``run.seed``.
    On divergence (non-finite loss) the last good checkpoint is kept and
    ``NumericError`` raised.
    """
    if not train_samples:
        raise ConfigError("empty training set")
    loss_fn = LOSSES[run.loss]
    state = OptimizerState(weight_decay=run.weight_decay)
    root = RngState(run.seed)
    history: list[HistoryRow] = []
    best_mae = float("inf")
    best_params: dict[str, np.ndarray] | None = None
    ckpt_dir = Path(run.checkpoint_dir) if run.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    global_step = 0
    for epoch in range(run.epochs):
        order = (
            root.split(f"shuffle:{epoch}").permutation(len(train_samples))
            if run.shuffle else np.arange(len(train_samples))
        )
        epoch_loss = 0.0
        seen = 0
        for bi, chunk in enumerate(_iter_batches(train_samples, run.batch_size, order)):
            batch = batch_from_samples(chunk)
            rng = root.split(f"dropout:{epoch}:{bi}")
            out = model.forward(batch, training=True, rng=rng)
            loss = loss_fn(out.predictions, batch.y)
            value = loss.item()
            if not np.isfinite(value):
                if ckpt_dir and best_params is not None:
                    _restore(model, best_params)
                    save_checkpoint(model, ckpt_dir / "best.ckpt")
                raise NumericError(f"training diverged at epoch {epoch}, batch {bi}")
            model.zero_grad()
            backward(loss)
            adamw_step(model.named_parameters(), state, schedule.lr_at(global_step))
            epoch_loss += value * len(chunk)
            seen += len(chunk)
            global_step += 1

        val_mae = validation_mae(model, val_samples) if val_samples else float("nan")
        history.append(HistoryRow(epoch, global_step, schedule.lr_at(global_step),
                                  epoch_loss / seen, val_mae))
        if val_samples and val_mae < best_mae:
            best_mae = val_mae
            best_params = {k: t.data.copy() for k, t in model.named_parameters().items()}
            if ckpt_dir:
                save_checkpoint(model, ckpt_dir / "best.ckpt")

    if ckpt_dir:
        save_checkpoint(model, ckpt_dir / "final.ckpt")
    if run.selection == "best" and best_params is not None:
        _restore(model, best_params)
    return model, history


def _restore(model: HybridModel, params: dict[str, np.ndarray]) -> None:
    for name, t in model.named_parameters().items():
        t.data[...] = params[name]


_CKPT_MAGIC = b"HMCKPT1"


def _config_text(model: HybridModel) -> str:
    c = model.config
    a = model.ablation
    lines = [
        f"model.input_channels={c.input_channels}",
        f"model.numeric_static_count={c.numeric_static_count}",
        "model.categorical_vocab_sizes=" + ",".join(str(v) for v in c.categorical_vocab_sizes),
        f"model.lstm_layers={c.lstm_layers}",
        f"model.hidden_size={c.hidden_size}",
        f"model.embed_dim={c.embed_dim}",
        f"model.reduced_dim={c.reduced_dim}",
        f"model.mlp_layers={c.mlp_layers}",
        f"model.mlp_hidden={c.mlp_hidden}",
        f"model.dropout={c.dropout!r}",
        f"model.embed_dropout={c.embed_dropout!r}",
        f"ablation.use_static={a.use_static}",
        f"ablation.use_timeseries={a.use_timeseries}",
        f"ablation.use_attention={a.use_attention}",
        f"seed={model.seed}",
    ]
    return "\n".join(lines)


def _parse_config_text(text: str) -> tuple[ModelConfig, AblationConfig, int]:
    kv = {}
    for line in text.splitlines():
        key, _, value = line.partition("=")
        kv[key] = value
    try:
        vocab = [int(v) for v in kv["model.categorical_vocab_sizes"].split(",") if v]
        config = ModelConfig(
            input_channels=int(kv["model.input_channels"]),
            numeric_static_count=int(kv["model.numeric_static_count"]),
            categorical_vocab_sizes=vocab,
            lstm_layers=int(kv["model.lstm_layers"]),
            hidden_size=int(kv["model.hidden_size"]),
            embed_dim=int(kv["model.embed_dim"]),
            reduced_dim=int(kv["model.reduced_dim"]),
            mlp_layers=int(kv["model.mlp_layers"]),
            mlp_hidden=int(kv["model.mlp_hidden"]),
            dropout=float(kv["model.dropout"]),
            embed_dropout=float(kv["model.embed_dropout"]),
        )
        ablation = AblationConfig(
            use_static=kv["ablation.use_static"] == "True",
            use_timeseries=kv["ablation.use_timeseries"] == "True",
            use_attention=kv["ablation.use_attention"] == "True",
        )
        seed = int(kv["seed"])
    except KeyError as exc:
        raise FormatError(f"checkpoint config missing {exc}") from None
    return config, ablation, seed


def save_checkpoint(model: HybridModel, path) -> None:
    """Atomic write (temp file + rename) of configs and parameters."""
    config = _config_text(model).encode()
    chunks = [_CKPT_MAGIC, struct.pack("<I", len(config)), config]
    params = model.named_parameters()
    chunks.append(struct.pack("<I", len(params)))
    for name, t in params.items():
        nb = name.encode()
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", t.data.ndim))
        chunks.append(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path) -> HybridModel:
    blob = Path(path).read_bytes()
    if blob[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    view = memoryview(blob)
    offset = len(_CKPT_MAGIC)

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError(f"{path}: truncated checkpoint")
        piece = view[offset:offset + n]
        offset += n
        return piece

    (config_len,) = struct.unpack("<I", take(4))
    config, ablation, seed = _parse_config_text(bytes(take(config_len)).decode())
    model = HybridModel.build(config, ablation, seed)
    params = model.named_parameters()
    (count,) = struct.unpack("<I", take(4))
    if count != len(params):
        raise FormatError(f"{path}: expected {len(params)} tensors, found {count}")
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = bytes(take(n)).decode()
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        payload = np.frombuffer(take(8 * int(np.prod(shape))), dtype="<f8").reshape(shape)
        if name not in params:
            raise FormatError(f"{path}: unknown parameter {name!r}")
        if params[name].data.shape != shape:
            raise FormatError(f"{path}: shape mismatch for {name!r}")
        params[name].data[...] = payload
    if offset != len(blob):
        raise FormatError(f"{path}: trailing bytes")
    return model
