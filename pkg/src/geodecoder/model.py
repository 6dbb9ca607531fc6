"""Modality-expert prefix-LM transformer over map images and text.

Sequence layout is ``[image patches | <bos> input text | <sep> output text]``.
Image patches and input text form a bidirectional prefix; the output segment
attends to the whole prefix and causally to itself. Every block keeps two
parameter sets (image expert "im", text expert "tx"): layer norms, Q/K/V/O
projections and the FFN are applied per position with the expert matching its
modality, while attention itself mixes all positions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .textcodec import BOS_ID, EOS_ID, PAD_ID, SEP_ID

MODALITIES = ("im", "tx")
LN_EPS = 1e-5
INIT_STD = 0.02


@dataclass(frozen=True)
class GeoDecoderConfig:
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    ffn_dim: int = 256
    vocab_size: int = 512
    image_size: int = 96
    patch_size: int = 16
    max_text_in: int = 192
    max_text_out: int = 128
    dropout: float = 0.1
    temperature: float = 1.0

    def __post_init__(self):
        for f in ("layers", "hidden", "heads", "ffn_dim", "vocab_size", "image_size", "patch_size",
                  "max_text_in", "max_text_out"):
            v = getattr(self, f)
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                raise ValueError(f"{f} must be a positive integer, got {v!r}")
        if self.hidden % self.heads:
            raise ValueError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size ({self.image_size}) must be divisible by patch_size ({self.patch_size})")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must cover the four special tokens")

    @property
    def n_img(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def max_text(self) -> int:
        return self.max_text_in + self.max_text_out

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeoDecoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config field(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def full_size(cls) -> "GeoDecoderConfig":
        """Full-size hyperparameters: 12 layers, 768 hidden, 16 heads, 224 px images, 60 text positions."""
        return cls(layers=12, hidden=768, heads=16, ffn_dim=3072, vocab_size=82088,
                   image_size=224, patch_size=16, max_text_in=40, max_text_out=20)


def count_params(config: GeoDecoderConfig) -> int:
    d, v, f, p = config.hidden, config.vocab_size, config.ffn_dim, config.patch_size
    per_expert = 4 * (d * d + d) + 4 * d + (d * f + f + f * d + d)
    return (
        v * d
        + (3 * p * p * d + d)
        + (config.n_img + config.max_text) * d
        + config.layers * 2 * per_expert
        + 2 * d
        + (d * v + v)
    )


def param_shapes(config: GeoDecoderConfig) -> dict[str, tuple[int, ...]]:
    d, f, p = config.hidden, config.ffn_dim, config.patch_size
    shapes = {
        "tok_emb": (config.vocab_size, d),
        "patch.w": (3 * p * p, d),
        "patch.b": (d,),
        "pos.img": (config.n_img, d),
        "pos.txt": (config.max_text, d),
    }
    for layer in range(config.layers):
        for m in MODALITIES:
            pre = f"blocks.{layer}.{m}."
            shapes.update({
                pre + "ln1.g": (d,), pre + "ln1.b": (d,),
                pre + "q.w": (d, d), pre + "q.b": (d,),
                pre + "k.w": (d, d), pre + "k.b": (d,),
                pre + "v.w": (d, d), pre + "v.b": (d,),
                pre + "o.w": (d, d), pre + "o.b": (d,),
                pre + "ln2.g": (d,), pre + "ln2.b": (d,),
                pre + "ffn1.w": (d, f), pre + "ffn1.b": (f,),
                pre + "ffn2.w": (f, d), pre + "ffn2.b": (d,),
            })
    shapes.update({"ln_f.g": (d,), "ln_f.b": (d,), "head.w": (d, config.vocab_size), "head.b": (config.vocab_size,)})
    return shapes


def is_no_decay(name: str) -> bool:
    """Layer-norm affines and biases are excluded from weight decay."""
    return name.endswith(".b") or name.endswith(".g")


def init_params(config: GeoDecoderConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".g"):
            arr = np.ones(shape)
        elif name.endswith(".b"):
            arr = np.zeros(shape)
        else:
            arr = rng.standard_normal(shape)
            bad = np.abs(arr) > 2.0
            while bad.any():  # truncate at two standard deviations by resampling
                arr[bad] = rng.standard_normal(int(bad.sum()))
                bad = np.abs(arr) > 2.0
            arr *= INIT_STD
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return params


def cast_params(params: dict[str, Tensor], dtype) -> dict[str, Tensor]:
    return {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad) for k, v in params.items()}


def build_attention_mask(n_img: int, n_in: int, n_out: int) -> np.ndarray:
    """Boolean (T, T) mask; entry (q, k) is True when query q may attend to key k."""
    if min(n_img, n_in, n_out) < 0:
        raise ValueError("segment lengths must be non-negative")
    prefix = n_img + n_in
    t = prefix + n_out
    q = np.arange(t)[:, None]
    k = np.arange(t)[None, :]
    return ((q < prefix) & (k < prefix)) | ((q >= prefix) & (k <= q))


class DropoutPlan:
    """Deterministic dropout keys: (seed, step, call-site counter)."""

    def __init__(self, rate: float, seed: int, step: int):
        self.rate, self.seed, self.step = rate, seed, step
        self._site = 0

    def __call__(self, x: Tensor) -> Tensor:
        self._site += 1
        return nx.dropout(x, self.rate, (self.seed, self.step, self._site))


def _identity(x: Tensor) -> Tensor:
    return x


class _Router:
    """Splits a (B, T, d) tensor into per-modality parts and merges them back in position order."""

    def __init__(self, is_image: np.ndarray):
        is_image = np.asarray(is_image, dtype=bool)
        self.idx = {"im": np.nonzero(is_image)[0], "tx": np.nonzero(~is_image)[0]}
        order = np.concatenate([self.idx["im"], self.idx["tx"]])
        self.inverse = None if np.array_equal(order, np.arange(len(order))) else np.argsort(order)
        self.contiguous = self.inverse is None
        self.n_im = len(self.idx["im"])

    def split(self, x: Tensor) -> list[tuple[str, Tensor]]:
        parts = []
        for m in MODALITIES:
            idx = self.idx[m]
            if len(idx) == 0:
                continue
            if len(idx) == x.shape[1]:
                parts.append((m, x))
            elif self.contiguous:
                sl = np.arange(0, self.n_im) if m == "im" else np.arange(self.n_im, x.shape[1])
                parts.append((m, nx.take(x, sl, axis=1)))
            else:
                parts.append((m, nx.take(x, idx, axis=1)))
        return parts

    def merge(self, parts: Sequence[Tensor]) -> Tensor:
        y = parts[0] if len(parts) == 1 else nx.concat(parts, axis=1)
        return y if self.inverse is None else nx.take(y, self.inverse, axis=1)


def block_forward(
    x: Tensor,
    is_image: np.ndarray,
    mask: np.ndarray,
    params: dict[str, Tensor],
    prefix: str,
    heads: int,
    drop=_identity,
) -> Tensor:
    """One expert block on x of shape (B, T, d); `mask` broadcasts to (B, heads, T, T)."""
    if x.ndim != 3:
        raise ValueError(f"block input must be (batch, positions, hidden), got {x.shape}")
    b, t, d = x.shape
    if len(is_image) != t:
        raise ValueError(f"{len(is_image)} modality tags for {t} positions")
    if d % heads:
        raise ValueError(f"hidden size {d} not divisible by {heads} heads")
    dh = d // heads
    router = _Router(is_image)

    def p(m, name):
        return params[f"{prefix}{m}.{name}"]

    q_parts, k_parts, v_parts = [], [], []
    for m, xm in router.split(x):
        ym = nx.layer_norm(xm, p(m, "ln1.g"), p(m, "ln1.b"), LN_EPS)
        q_parts.append(nx.linear(ym, p(m, "q.w"), p(m, "q.b")))
        k_parts.append(nx.linear(ym, p(m, "k.w"), p(m, "k.b")))
        v_parts.append(nx.linear(ym, p(m, "v.w"), p(m, "v.b")))

    def heads_view(parts):
        return nx.transpose(nx.reshape(router.merge(parts), (b, t, heads, dh)), (0, 2, 1, 3))

    q, k, v = heads_view(q_parts), heads_view(k_parts), heads_view(v_parts)
    scores = nx.matmul(q, nx.swapaxes(k, -1, -2))
    attn = nx.softmax_masked(scores, mask, temperature=math.sqrt(dh))
    ctx = nx.reshape(nx.transpose(nx.matmul(attn, v), (0, 2, 1, 3)), (b, t, d))
    o_parts = [nx.linear(cm, p(m, "o.w"), p(m, "o.b")) for m, cm in router.split(ctx)]
    x1 = x + drop(router.merge(o_parts))

    out_parts = []
    for m, xm in router.split(x1):
        hm = nx.layer_norm(xm, p(m, "ln2.g"), p(m, "ln2.b"), LN_EPS)
        hm = nx.linear(nx.gelu(nx.linear(hm, p(m, "ffn1.w"), p(m, "ffn1.b"))), p(m, "ffn2.w"), p(m, "ffn2.b"))
        out_parts.append(xm + drop(hm))
    return router.merge(out_parts)


# -- embedding and full forward --------------------------------------------


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, H, W, 3) uint8 -> (B, N, 3*patch*patch) in [0, 1], patches row-major, pixels (row, col, channel)."""
    b, h, w, c = images.shape
    x = images.reshape(b, h // patch, patch, w // patch, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, (h // patch) * (w // patch), patch * patch * c) / 255.0


def patch_embed(images: np.ndarray, params: dict[str, Tensor], config: GeoDecoderConfig) -> Tensor:
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != (config.image_size, config.image_size, 3):
        raise ValueError(f"image shape {images.shape[1:]} does not match config image_size {config.image_size}")
    dtype = params["patch.w"].dtype
    patches = Tensor(patchify(images, config.patch_size).astype(dtype))
    return nx.linear(patches, params["patch.w"], params["patch.b"]) + params["pos.img"]


@dataclass
class Batch:
    """Padded model inputs. Text arrays are (B, L) int with PAD beyond each row's length."""

    images: Optional[np.ndarray]  # (B, H, W, 3) uint8, or None for text-only sequences
    text_in: np.ndarray
    n_in: np.ndarray
    text_out: np.ndarray
    n_out: np.ndarray
    targets: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return len(self.n_in)


def make_batch(images, inputs: Sequence[Sequence[int]], outputs: Sequence[Sequence[int]], config: GeoDecoderConfig) -> Batch:
    """Wrap raw id sequences: inputs gain a leading <bos>; outputs are targets (ending in <eos>)
    and are fed shifted right behind a <sep>."""
    bsz = len(inputs)
    n_in = np.array([len(s) + 1 for s in inputs], dtype=np.int64)
    n_out = np.array([len(s) for s in outputs], dtype=np.int64)
    if n_in.max(initial=0) > config.max_text_in:
        raise ValueError(f"input text of {n_in.max() - 1} tokens exceeds max_text_in={config.max_text_in} (with <bos>)")
    if n_out.max(initial=0) > config.max_text_out:
        raise ValueError(f"output text of {n_out.max()} tokens exceeds max_text_out={config.max_text_out}")
    lin, lout = int(n_in.max(initial=1)), int(n_out.max(initial=0))
    text_in = np.full((bsz, lin), PAD_ID, dtype=np.int64)
    text_out = np.full((bsz, lout), PAD_ID, dtype=np.int64)
    targets = np.full((bsz, lout), PAD_ID, dtype=np.int64)
    for i, (si, so) in enumerate(zip(inputs, outputs)):
        text_in[i, 0] = BOS_ID
        text_in[i, 1:len(si) + 1] = si
        if len(so):
            text_out[i, 0] = SEP_ID
            text_out[i, 1:len(so)] = so[:-1]
            targets[i, :len(so)] = so
    if images is not None:
        images = np.asarray(images, dtype=np.uint8)
        if images.ndim == 3:
            images = images[None]
    return Batch(images, text_in, n_in, text_out, n_out, targets)


def _layout(config: GeoDecoderConfig, batch: Batch):
    n_img = 0 if batch.images is None else config.n_img
    lin, lout = batch.text_in.shape[1], batch.text_out.shape[1]
    t = n_img + lin + lout
    is_image = np.zeros(t, dtype=bool)
    is_image[:n_img] = True
    cols_in = np.arange(lin)[None, :]
    cols_out = np.arange(lout)[None, :]
    valid_in = cols_in < batch.n_in[:, None]
    valid_out = cols_out < batch.n_out[:, None]
    key_valid = np.concatenate([np.ones((batch.size, n_img), dtype=bool), valid_in, valid_out], axis=1)
    pos_ids = np.concatenate([np.where(valid_in, cols_in, 0), np.where(valid_out, batch.n_in[:, None] + cols_out, 0)], axis=1)
    mask = build_attention_mask(n_img, lin, lout)[None, None] & key_valid[:, None, None, :]
    return n_img, is_image, mask, pos_ids


def hidden_states(config: GeoDecoderConfig, params: dict[str, Tensor], batch: Batch, drop=None) -> Tensor:
    """Final-block hidden states (B, T, d) before the output layer norm."""
    drop = drop or _identity
    n_img, is_image, mask, pos_ids = _layout(config, batch)
    if pos_ids.size and pos_ids.max() >= config.max_text:
        raise ValueError("text exceeds the position table")
    parts = []
    if n_img:
        parts.append(patch_embed(batch.images, params, config))
    tokens = np.concatenate([batch.text_in, batch.text_out], axis=1)
    if tokens.shape[1]:
        if tokens.max() >= config.vocab_size:
            raise ValueError(f"token id {tokens.max()} outside vocab_size {config.vocab_size}")
        parts.append(nx.embedding(params["tok_emb"], tokens) + nx.embedding(params["pos.txt"], pos_ids))
    x = parts[0] if len(parts) == 1 else nx.concat(parts, axis=1)
    x = drop(x)
    for layer in range(config.layers):
        x = block_forward(x, is_image, mask, params, f"blocks.{layer}.", config.heads, drop)
    return x


def forward_batch(config: GeoDecoderConfig, params: dict[str, Tensor], batch: Batch, drop=None) -> Tensor:
    """Logits (B, L_out, V); row t scores the output token at index t."""
    h = hidden_states(config, params, batch, drop)
    lout = batch.text_out.shape[1]
    t = h.shape[1]
    out = nx.take(h, np.arange(t - lout, t), axis=1)
    out = nx.layer_norm(out, params["ln_f.g"], params["ln_f.b"], LN_EPS)
    return nx.linear(out, params["head.w"], params["head.b"])


def _image_array(raster) -> Optional[np.ndarray]:
    if raster is None or isinstance(raster, np.ndarray):
        return raster
    return raster.data


def forward(config: GeoDecoderConfig, params: dict[str, Tensor], raster, input_ids: Sequence[int],
            output_ids: Sequence[int], drop=None) -> Tensor:
    """Single-sample logits (n_out, V) for `output_ids` under teacher forcing."""
    image = _image_array(raster)
    batch = make_batch(None if image is None else image[None], [list(input_ids)], [list(output_ids)], config)
    return nx.reshape(forward_batch(config, params, batch, drop), (len(output_ids), config.vocab_size))


def generate_batch(config: GeoDecoderConfig, params: dict[str, Tensor], images, prompts: Sequence[Sequence[int]],
                   max_len: Optional[int] = None, temperature: Optional[float] = None,
                   vocab_limit: Optional[int] = None) -> list[list[int]]:
    """Greedy decoding for a batch of prompts; each result excludes the terminating <eos>.

    `vocab_limit` restricts choices to ids below it when the tokenizer is smaller than the head.
    """
    max_len = config.max_text_out if max_len is None else max_len
    if max_len > config.max_text_out:
        raise ValueError(f"max_len {max_len} exceeds max_text_out {config.max_text_out}")
    temperature = config.temperature if temperature is None else temperature
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    n = len(prompts)
    outs: list[list[int]] = [[] for _ in range(n)]
    done = np.zeros(n, dtype=bool)
    for step in range(max_len):
        active = np.nonzero(~done)[0]
        if len(active) == 0:
            break
        # feed everything generated so far plus a placeholder slot for the next token
        batch = make_batch(
            None if images is None else np.asarray(images)[active],
            [prompts[i] for i in active],
            [outs[i] + [PAD_ID] for i in active],
            config,
        )
        logits = forward_batch(config, params, batch).data[:, step, :vocab_limit]
        # scaling by a positive temperature never changes the argmax; np.argmax picks the lowest id on ties
        choice = np.argmax(logits / temperature, axis=-1)
        for i, tok in zip(active, choice):
            if tok == EOS_ID:
                done[i] = True
            else:
                outs[i].append(int(tok))
    return outs


def generate(config: GeoDecoderConfig, params: dict[str, Tensor], raster, prompt_ids: Sequence[int],
             temperature: Optional[float] = None, max_len: Optional[int] = None,
             vocab_limit: Optional[int] = None) -> list[int]:
    image = _image_array(raster)
    return generate_batch(config, params, None if image is None else image[None], [list(prompt_ids)], max_len,
                          temperature, vocab_limit)[0]


def sequence_logprobs(config: GeoDecoderConfig, params: dict[str, Tensor], images, prompts: Sequence[Sequence[int]],
                      outputs: Sequence[Sequence[int]]) -> np.ndarray:
    """Total log-probability of each output sequence (ending in <eos>) given its image and prompt."""
    batch = make_batch(images, prompts, outputs, config)
    logits = forward_batch(config, params, batch).data.astype(np.float64)
    m = logits.max(axis=-1, keepdims=True)
    logp = logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
    tgt = batch.targets
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    return np.where(tgt != PAD_ID, picked, 0.0).sum(axis=1)


def rank_candidates(config: GeoDecoderConfig, params: dict[str, Tensor], image, prompt: Sequence[int],
                    candidates: Sequence[Sequence[int]]) -> int:
    """Index of the most likely candidate output (lowest index on ties)."""
    image = _image_array(image)
    images = None if image is None else np.repeat(image[None], len(candidates), axis=0)
    scores = sequence_logprobs(config, params, images, [list(prompt)] * len(candidates),
                               [list(c) + [EOS_ID] for c in candidates])
    return int(np.argmax(scores))


def gradcheck_model(config: GeoDecoderConfig, seed: int = 0, batch_size: int = 2, h: float = 1e-4,
                    n_coords: int = 20, floor: float = 1e-6) -> dict[str, float]:
    """Per-tensor relative gradient error of the full loss on random inputs (float64, no dropout).

    The step h=1e-4 keeps round-off of the summed loss well below the O(h^2) truncation error.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, seed, np.float64)
    images = rng.integers(0, 256, (batch_size, config.image_size, config.image_size, 3), dtype=np.uint8)
    hi = config.vocab_size
    prompts = [list(rng.integers(4, hi, int(rng.integers(1, config.max_text_in)))) for _ in range(batch_size)]
    outs = [list(rng.integers(4, hi, int(rng.integers(0, config.max_text_out)))) + [EOS_ID] for _ in range(batch_size)]
    batch = make_batch(images, prompts, outs, config)

    def loss():
        return nx.cross_entropy(forward_batch(config, params, batch), batch.targets, PAD_ID)

    return nx.grad_check_per_tensor(loss, params, h=h, n_coords=n_coords, seed=seed, floor=floor)
