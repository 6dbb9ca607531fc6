"""Loss, AdamW with warmup/linear-decay schedule, the training loop, and checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import numerics as nx
from .model import DropoutPlan, GeoDecoderConfig, forward_batch, init_params, is_no_decay, make_batch, param_shapes
from .numerics import Tensor
from .taskgen import load_image, load_manifest, load_vocab
from .textcodec import EOS_ID, PAD_ID, Vocabulary, encode

CKPT_MAGIC = b"GEODECODER-CKPT\n"
CKPT_FORMAT = 1


@dataclass(frozen=True)
class TrainHyper:
    batch_size: int = 64
    epochs: int = 20
    max_steps: Optional[int] = None  # stop early once this many steps have run
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup: int = 100
    peak_lr: float = 1e-4
    dropout: float = 0.1
    seed: int = 0
    log_every: int = 10
    max_grad_norm: Optional[float] = None

    def __post_init__(self):
        for name in ("batch_size", "epochs", "log_every"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.max_steps is not None and (not isinstance(self.max_steps, int) or self.max_steps <= 0):
            raise ValueError(f"max_steps must be a positive integer, got {self.max_steps!r}")
        if not 0 < self.beta1 < 1:
            raise ValueError(f"beta1 must lie in (0, 1), got {self.beta1}")
        if not 0 < self.beta2 < 1:
            raise ValueError(f"beta2 must lie in (0, 1), got {self.beta2}")
        if isinstance(self.warmup, bool) or not isinstance(self.warmup, int) or self.warmup < 0:
            raise ValueError(f"warmup must be a non-negative integer, got {self.warmup!r}")
        if self.peak_lr < 0:
            raise ValueError(f"peak_lr must be non-negative, got {self.peak_lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ValueError(f"max_grad_norm must be positive, got {self.max_grad_norm}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainHyper":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train field(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, Tensor]) -> "OptimizerState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()}, {k: np.zeros_like(p.data) for k, p in params.items()})


def loss_fn(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy over output positions, ignoring <pad>."""
    return nx.cross_entropy(logits, targets, ignore_index=PAD_ID)


def lr_at(step: int, hyper: TrainHyper, total_steps: int) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    w = hyper.warmup
    if w > 0 and step <= w:
        return hyper.peak_lr * step / w
    if total_steps <= w:
        return hyper.peak_lr
    return hyper.peak_lr * max(0.0, (total_steps - step) / (total_steps - w))


def adamw_step(params: Mapping[str, Tensor], state: OptimizerState, hyper: TrainHyper, lr: float,
               grads: Optional[Mapping[str, np.ndarray]] = None) -> None:
    """One in-place AdamW update; gradients default to each tensor's `.grad`."""

    def grad_of(name, p):
        g = grads[name] if grads is not None else p.grad
        return np.zeros_like(p.data) if g is None else g

    for name, p in params.items():
        if not np.all(np.isfinite(grad_of(name, p))):
            raise FloatingPointError(f"non-finite gradient in parameter {name}")
    state.step += 1
    t = state.step
    b1, b2 = hyper.beta1, hyper.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for name, p in params.items():
        g = grad_of(name, p).astype(p.data.dtype, copy=False)
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if hyper.weight_decay and not is_no_decay(name):
            p.data *= p.data.dtype.type(1.0 - lr * hyper.weight_decay)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)).astype(p.data.dtype, copy=False)


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params.values() if p.grad is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return total


# -- checkpoints ---------------------------------------------------------------


@dataclass
class Checkpoint:
    config: GeoDecoderConfig
    params: dict[str, Tensor]
    state: Optional[OptimizerState]
    step: int
    meta: dict

    @property
    def vocab(self) -> Vocabulary:
        if "vocab" not in self.meta:
            raise ValueError("checkpoint carries no vocabulary")
        return Vocabulary(self.meta["vocab"])


def save_checkpoint(path, config: GeoDecoderConfig, params: Mapping[str, Tensor],
                    state: Optional[OptimizerState] = None, step: int = 0, meta: Optional[dict] = None) -> None:
    chunks: list[bytes] = []
    offset = 0

    def index(name, arr):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        chunks.append(raw)
        entry = {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        offset += len(raw)
        return entry

    tensors = [index(name, p.data) for name, p in params.items()]
    opt = []
    if state is not None:
        opt = [index(f"m/{k}", state.m[k]) for k in params if k in state.m]
        opt += [index(f"v/{k}", state.v[k]) for k in params if k in state.v]
    header = {
        "ckpt_format": CKPT_FORMAT,
        "config": config.to_dict(),
        "step": int(step),
        "optimizer_step": None if state is None else int(state.step),
        "meta": meta or {},
        "tensors": tensors,
        "optimizer_tensors": opt,
    }
    blob = CKPT_MAGIC + json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n" + b"".join(chunks)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def read_checkpoint_header(data: bytes) -> tuple[dict, int]:
    if not data.startswith(CKPT_MAGIC):
        raise ValueError("not a checkpoint file (bad magic at byte offset 0)")
    end = data.find(b"\n", len(CKPT_MAGIC))
    if end < 0:
        raise ValueError(f"checkpoint header is truncated (no terminator after byte offset {len(CKPT_MAGIC)})")
    try:
        header = json.loads(data[len(CKPT_MAGIC):end])
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed checkpoint header at byte offset {len(CKPT_MAGIC) + e.pos}") from e
    if header.get("ckpt_format") != CKPT_FORMAT:
        raise ValueError(f"unsupported ckpt_format {header.get('ckpt_format')!r} (expected {CKPT_FORMAT})")
    return header, end + 1


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    header, base = read_checkpoint_header(data)
    config = GeoDecoderConfig.from_dict(header["config"])
    shapes = param_shapes(config)

    def read(entry):
        start = base + entry["offset"]
        stop = start + entry["nbytes"]
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if entry["nbytes"] != 4 * n:
            raise ValueError(f"tensor {entry['name']}: {entry['nbytes']} bytes for shape {entry['shape']}")
        if stop > len(data):
            raise ValueError(f"checkpoint truncated: tensor {entry['name']} needs bytes up to offset {stop}, file ends at {len(data)}")
        return np.frombuffer(data, dtype="<f4", count=n, offset=start).reshape(entry["shape"]).astype(np.float32)

    params = {}
    for entry in header["tensors"]:
        name = entry["name"]
        if name not in shapes:
            raise ValueError(f"checkpoint tensor {name} is not a parameter of this config")
        if tuple(entry["shape"]) != shapes[name]:
            raise ValueError(f"tensor {name}: shape {tuple(entry['shape'])} does not match config {shapes[name]}")
        params[name] = Tensor(read(entry), requires_grad=True)
    missing = set(shapes) - set(params)
    if missing:
        raise ValueError(f"checkpoint lacks tensor {sorted(missing)[0]}")
    params = {k: params[k] for k in shapes}
    state = None
    if header.get("optimizer_step") is not None:
        state = OptimizerState(step=int(header["optimizer_step"]))
        for entry in header["optimizer_tensors"]:
            kind, name = entry["name"].split("/", 1)
            if name not in shapes or tuple(entry["shape"]) != shapes[name]:
                raise ValueError(f"optimizer tensor {entry['name']} does not match the parameters")
            (state.m if kind == "m" else state.v)[name] = read(entry)
    return Checkpoint(config, params, state, int(header["step"]), header.get("meta", {}))


# -- training loop -------------------------------------------------------------


@dataclass
class EncodedSet:
    """Manifest rows with their texts encoded; images are read from disk per batch."""

    dataset_dir: Path
    rows: list[dict]
    inputs: list[list[int]]
    outputs: list[list[int]]  # each ends with <eos>

    def __len__(self) -> int:
        return len(self.rows)

    def images(self, idx: Sequence[int]) -> np.ndarray:
        return np.stack([load_image(self.dataset_dir, self.rows[i]).data for i in idx])


def encode_rows(dataset_dir, rows: Sequence[dict], vocab: Vocabulary) -> EncodedSet:
    inputs, outputs = [], []
    for row in rows:
        try:
            inputs.append(encode(vocab, row["input_text"]))
            outputs.append(encode(vocab, row["target_text"]) + [EOS_ID])
        except ValueError as e:
            raise ValueError(f"sample {row['id']}: {e}") from e
    return EncodedSet(Path(dataset_dir), list(rows), inputs, outputs)


def select_rows(dataset_dir, split: Optional[str] = "train", kinds: Optional[Sequence[str]] = None) -> list[dict]:
    rows = load_manifest(dataset_dir)
    if split not in (None, "all"):
        rows = [r for r in rows if r["split"] == split]
    if kinds:
        rows = [r for r in rows if r["kind"] in set(kinds)]
    return rows


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    state: OptimizerState
    steps: int
    losses: list[tuple[int, float]]
    checkpoint: Optional[Path]


def train(config: GeoDecoderConfig, hyper: TrainHyper, data: EncodedSet, vocab: Vocabulary, out_dir=None,
          params: Optional[dict[str, Tensor]] = None, meta: Optional[dict] = None,
          on_step: Optional[Callable[[int, float], Optional[bool]]] = None) -> TrainResult:
    """Run AdamW over `data`; writes train_log.jsonl and per-epoch checkpoints when `out_dir` is given.

    A truthy return from `on_step` ends training after that step.
    """
    if len(data) == 0:
        raise ValueError("no training samples")
    if len(vocab) > config.vocab_size:
        raise ValueError(f"vocabulary of {len(vocab)} tokens exceeds model vocab_size {config.vocab_size}")
    params = params if params is not None else init_params(config, hyper.seed)
    state = OptimizerState.zeros_like(params)
    steps_per_epoch = math.ceil(len(data) / hyper.batch_size)
    total = steps_per_epoch * hyper.epochs
    if hyper.max_steps is not None:
        total = min(total, hyper.max_steps)
    meta = {**(meta or {}), "vocab": vocab.tokens, "hyper": hyper.to_dict()}
    out = None if out_dir is None else Path(out_dir)
    log = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log = open(out / "train_log.jsonl", "w", encoding="utf-8")
    losses: list[tuple[int, float]] = []
    step = 0
    last_ckpt = None
    try:
        for epoch in range(hyper.epochs):
            order = np.random.default_rng(np.random.SeedSequence([hyper.seed, epoch])).permutation(len(data))
            for b in range(steps_per_epoch):
                if step >= total:
                    break
                step += 1
                idx = order[b * hyper.batch_size:(b + 1) * hyper.batch_size]
                batch = make_batch(data.images(idx), [data.inputs[i] for i in idx], [data.outputs[i] for i in idx], config)
                drop = DropoutPlan(hyper.dropout, hyper.seed, step) if hyper.dropout > 0 else None
                nx.zero_grad(params.values())
                with nx.Tape() as tape:
                    loss = loss_fn(forward_batch(config, params, batch, drop), batch.targets)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise FloatingPointError(f"non-finite loss {value} at step {step} (epoch {epoch + 1})")
                nx.backward(tape, loss)
                if hyper.max_grad_norm is not None:
                    clip_grad_norm(params, hyper.max_grad_norm)
                lr = lr_at(step, hyper, total)
                adamw_step(params, state, hyper, lr)
                losses.append((step, value))
                if on_step is not None and on_step(step, value):
                    total = step
                if log is not None and (step % hyper.log_every == 0 or step == total):
                    log.write(json.dumps({"step": step, "lr": lr, "loss": value}) + "\n")
                    log.flush()
            if out is not None:
                last_ckpt = out / f"checkpoint-epoch{epoch + 1:03d}.ckpt"
                save_checkpoint(last_ckpt, config, params, state, step, {**meta, "epoch": epoch + 1})
            if step >= total:
                break
    finally:
        if log is not None:
            log.close()
    final = None
    if out is not None:
        final = out / "checkpoint.ckpt"
        save_checkpoint(final, config, params, state, step, meta)
    return TrainResult(params, state, step, losses, final)


def train_from_dataset(config: GeoDecoderConfig, hyper: TrainHyper, dataset_dir, out_dir, split: Optional[str] = "train",
                       kinds: Optional[Sequence[str]] = None) -> TrainResult:
    vocab = load_vocab(dataset_dir)
    rows = select_rows(dataset_dir, split, kinds)
    data = encode_rows(dataset_dir, rows, vocab)
    result = train(config, hyper, data, vocab, out_dir, meta={"dataset": str(dataset_dir), "split": split})
    if out_dir is not None and result.losses:
        from .plotting import plot_loss_curve

        plot_loss_curve(result.losses, Path(out_dir) / "loss_curve.png")
    return result
