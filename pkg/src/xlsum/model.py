"""The sequence model: one encoder feeding two decoders whose bottom layers
share parameters (literally the same tensors), reserved task-tag tokens on
the encoder input, and a small feed-forward extraction head over encoder
states for salience distillation.

Desk-scale defaults (64-dim, 3+3 layers) train in minutes on one core.
Layers are pre-norm, which stays stable without warmup at this size.
"""
from __future__ import annotations

import dataclasses
import enum
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from . import autodiff as ad
from .data import BOS_ID, EOS_ID, SUM_ID, TRANS_ID
from .serialize import load_arrays, save_arrays

CHECKPOINT_FORMAT = "xlsum-checkpoint"
CHECKPOINT_VERSION = 1

NEG_INF = -1e9


class TaskTag(enum.Enum):
    """Reserved tokens prepended to encoder input so one encoder can serve
    both the summarization and translation objectives."""

    SUM = SUM_ID
    TRANS = TRANS_ID


@dataclass
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    d_model: int = 64
    n_heads: int = 2
    ffn_dim: int = 128
    n_encoder_layers: int = 3
    n_decoder_layers: int = 3
    n_shared_decoder_layers: int = 2
    max_src_len: int = 256
    max_tgt_len: int = 64
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.n_shared_decoder_layers > self.n_decoder_layers:
            raise ValueError("n_shared_decoder_layers must be <= n_decoder_layers")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(np.float64)
    dim = np.arange(d_model // 2)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * dim / d_model)
    enc = np.zeros((length, d_model))
    enc[:, 0::2] = np.sin(angle)
    enc[:, 1::2] = np.cos(angle)
    return enc


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), NEG_INF), k=1)


def embed_sequence(
    table: ad.Tensor, ids: list[int], d_model: int, dropout_rate: float = 0.0, train: bool = False, rng=None
) -> ad.Tensor:
    """Scaled token embeddings plus sinusoidal positions."""
    x = ad.embedding_lookup(table, np.asarray(ids, dtype=np.int64))
    x = x * math.sqrt(d_model)
    x = x + ad.Tensor(sinusoidal_positions(len(ids), d_model))
    return ad.dropout(x, dropout_rate, rng, train)


class Linear:
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, init: str = "xavier"):
        if init == "xavier":
            w = ad.xavier_uniform(rng, d_in, d_out)
        else:
            w = rng.normal(0.0, 0.02, size=(d_in, d_out))
        self.w = ad.parameter(w)
        self.b = ad.parameter(np.zeros(d_out))

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.linear(x, self.w, self.b)

    def named_params(self, prefix: str) -> Iterator[tuple[str, ad.Tensor]]:
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


class LayerNorm:
    def __init__(self, d: int):
        self.gain = ad.parameter(np.ones(d))
        self.bias = ad.parameter(np.zeros(d))

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.layer_norm(x, self.gain, self.bias)

    def named_params(self, prefix: str) -> Iterator[tuple[str, ad.Tensor]]:
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.bias", self.bias


class MultiHeadAttention:
    def __init__(self, rng: np.random.Generator, d_model: int, n_heads: int):
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(rng, d_model, d_model)
        self.wk = Linear(rng, d_model, d_model)
        self.wv = Linear(rng, d_model, d_model)
        self.wo = Linear(rng, d_model, d_model)

    def __call__(self, query: ad.Tensor, memory: ad.Tensor, mask: np.ndarray | None = None) -> ad.Tensor:
        q, k, v = self.wq(query), self.wk(memory), self.wv(memory)
        scale = 1.0 / math.sqrt(self.d_head)
        heads = []
        for h in range(self.n_heads):
            cols = slice(h * self.d_head, (h + 1) * self.d_head)
            scores = ad.matmul(q[:, cols], ad.transpose(k[:, cols])) * scale
            if mask is not None:
                scores = scores + ad.Tensor(mask)
            heads.append(ad.matmul(ad.softmax(scores, axis=-1), v[:, cols]))
        return self.wo(ad.concat(heads, axis=1))

    def named_params(self, prefix: str) -> Iterator[tuple[str, ad.Tensor]]:
        for name, sub in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            yield from sub.named_params(f"{prefix}.{name}")


class FeedForward:
    def __init__(self, rng: np.random.Generator, d_model: int, ffn_dim: int):
        self.w1 = Linear(rng, d_model, ffn_dim)
        self.w2 = Linear(rng, ffn_dim, d_model)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return self.w2(ad.relu(self.w1(x)))

    def named_params(self, prefix: str) -> Iterator[tuple[str, ad.Tensor]]:
        yield from self.w1.named_params(f"{prefix}.w1")
        yield from self.w2.named_params(f"{prefix}.w2")


class EncoderLayer:
    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        self.attn = MultiHeadAttention(rng, cfg.d_model, cfg.n_heads)
        self.ffn = FeedForward(rng, cfg.d_model, cfg.ffn_dim)
        self.ln1 = LayerNorm(cfg.d_model)
        self.ln2 = LayerNorm(cfg.d_model)
        self.rate = cfg.dropout_rate

    def __call__(self, x: ad.Tensor, train: bool, rng) -> ad.Tensor:
        normed = self.ln1(x)
        x = x + ad.dropout(self.attn(normed, normed), self.rate, rng, train)
        x = x + ad.dropout(self.ffn(self.ln2(x)), self.rate, rng, train)
        return x

    def named_params(self, prefix: str) -> Iterator[tuple[str, ad.Tensor]]:
        for name, sub in (("attn", self.attn), ("ffn", self.ffn), ("ln1", self.ln1), ("ln2", self.ln2)):
            yield from sub.named_params(f"{prefix}.{name}")


class DecoderLayer:
    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        self.self_attn = MultiHeadAttention(rng, cfg.d_model, cfg.n_heads)
        self.cross_attn = MultiHeadAttention(rng, cfg.d_model, cfg.n_heads)
        self.ffn = FeedForward(rng, cfg.d_model, cfg.ffn_dim)
        self.ln1 = LayerNorm(cfg.d_model)
        self.ln2 = LayerNorm(cfg.d_model)
        self.ln3 = LayerNorm(cfg.d_model)
        self.rate = cfg.dropout_rate

    def __call__(self, x: ad.Tensor, memory: ad.Tensor, mask: np.ndarray, train: bool, rng) -> ad.Tensor:
        normed = self.ln1(x)
        x = x + ad.dropout(self.self_attn(normed, normed, mask=mask), self.rate, rng, train)
        x = x + ad.dropout(self.cross_attn(self.ln2(x), memory), self.rate, rng, train)
        x = x + ad.dropout(self.ffn(self.ln3(x)), self.rate, rng, train)
        return x

    def named_params(self, prefix: str) -> Iterator[tuple[str, ad.Tensor]]:
        subs = (
            ("self_attn", self.self_attn),
            ("cross_attn", self.cross_attn),
            ("ffn", self.ffn),
            ("ln1", self.ln1),
            ("ln2", self.ln2),
            ("ln3", self.ln3),
        )
        for name, sub in subs:
            yield from sub.named_params(f"{prefix}.{name}")


class XlsModel:
    """Encoder + summarization decoder ("d1") + translation decoder ("d2").

    The bottom ``n_shared_decoder_layers`` of both decoders are the same
    layer objects, so an update through either task's path is visible to the
    other; each decoder keeps its own top layers, final norm, and output
    projection.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng([seed, 0xE17])
        d = config.d_model
        # embeddings at d^-1/2 so that after the sqrt(d) input scaling token
        # identity is not drowned out by the unit-scale position encodings
        self.src_embed = ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(d), size=(config.src_vocab_size, d)))
        self.tgt_embed = ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(d), size=(config.tgt_vocab_size, d)))
        self.encoder_layers = [EncoderLayer(rng, config) for _ in range(config.n_encoder_layers)]
        self.encoder_ln = LayerNorm(d)
        n_top = config.n_decoder_layers - config.n_shared_decoder_layers
        self.shared_decoder_layers = [DecoderLayer(rng, config) for _ in range(config.n_shared_decoder_layers)]
        self.d1_top = [DecoderLayer(rng, config) for _ in range(n_top)]
        self.d2_top = [DecoderLayer(rng, config) for _ in range(n_top)]
        self.d1_ln = LayerNorm(d)
        self.d2_ln = LayerNorm(d)
        self.d1_out = Linear(rng, d, config.tgt_vocab_size, init="small")
        self.d2_out = Linear(rng, d, config.tgt_vocab_size, init="small")
        self.extract_hidden = Linear(rng, d, d)
        self.extract_out = Linear(rng, d, 1)

    # -- parameters ---------------------------------------------------------

    def named_parameters(self) -> dict[str, ad.Tensor]:
        out: dict[str, ad.Tensor] = {}

        def collect(pairs: Iterable[tuple[str, ad.Tensor]]):
            for name, tensor in pairs:
                out[name] = tensor

        collect([("src_embed", self.src_embed), ("tgt_embed", self.tgt_embed)])
        for i, layer in enumerate(self.encoder_layers):
            collect(layer.named_params(f"encoder.{i}"))
        collect(self.encoder_ln.named_params("encoder.ln"))
        for i, layer in enumerate(self.shared_decoder_layers):
            collect(layer.named_params(f"decoder_shared.{i}"))
        for i, layer in enumerate(self.d1_top):
            collect(layer.named_params(f"d1_top.{i}"))
        for i, layer in enumerate(self.d2_top):
            collect(layer.named_params(f"d2_top.{i}"))
        collect(self.d1_ln.named_params("d1.ln"))
        collect(self.d2_ln.named_params("d2.ln"))
        collect(self.d1_out.named_params("d1.out"))
        collect(self.d2_out.named_params("d2.out"))
        collect(self.extract_hidden.named_params("extract.hidden"))
        collect(self.extract_out.named_params("extract.out"))
        return out

    def parameters(self) -> list[ad.Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- forward ------------------------------------------------------------

    def _embed(self, table: ad.Tensor, ids: list[int], train: bool, rng) -> ad.Tensor:
        return embed_sequence(table, ids, self.config.d_model, self.config.dropout_rate, train, rng)

    def encode(self, src_tokens: list[int], tag: TaskTag, train: bool = False, rng=None) -> ad.Tensor:
        """Per-position encodings of [tag; src_tokens]; overlength inputs are
        truncated (keeping the tag) with a warning."""
        if not isinstance(tag, TaskTag):
            raise ValueError(f"tag must be a TaskTag, got {tag!r}")
        max_body = self.config.max_src_len - 1
        if len(src_tokens) > max_body:
            warnings.warn(f"encoder input truncated from {len(src_tokens)} to {max_body} tokens")
            src_tokens = list(src_tokens)[:max_body]
        ids = [tag.value] + list(src_tokens)
        x = self._embed(self.src_embed, ids, train, rng)
        for layer in self.encoder_layers:
            x = layer(x, train, rng)
        return self.encoder_ln(x)

    def _decoder_stack(self, decoder: str):
        if decoder == "d1":
            return self.shared_decoder_layers + self.d1_top, self.d1_ln, self.d1_out
        if decoder == "d2":
            return self.shared_decoder_layers + self.d2_top, self.d2_ln, self.d2_out
        raise ValueError(f"decoder must be 'd1' or 'd2', got {decoder!r}")

    def decode_logits(self, decoder: str, memory: ad.Tensor, prefix: list[int], train: bool = False, rng=None) -> ad.Tensor:
        """Teacher-forced next-token logits for every prefix position, [T, V].
        Causal: row t depends only on memory and prefix[:t+1]."""
        if not prefix or prefix[0] != BOS_ID:
            raise ValueError("decoder prefix must begin with the BOS id")
        layers, final_ln, out = self._decoder_stack(decoder)
        x = self._embed(self.tgt_embed, list(prefix), train, rng)
        mask = causal_mask(len(prefix))
        for layer in layers:
            x = layer(x, memory, mask, train, rng)
        return out(final_ln(x))

    def decode_step(self, decoder: str, memory: ad.Tensor, prefix: list[int]) -> ad.Tensor:
        """Logits for the token following ``prefix`` (eval mode)."""
        logits = self.decode_logits(decoder, memory, prefix)
        return logits[len(prefix) - 1 :, :].reshape(self.config.tgt_vocab_size)

    def salience_predict(self, memory: ad.Tensor, unit_positions: list[int]) -> ad.Tensor:
        """Inclusion probability per queried position, each strictly in (0, 1)."""
        if len(unit_positions) == 0:
            return ad.Tensor(np.zeros(0))
        rows = ad.embedding_lookup(memory, np.asarray(unit_positions, dtype=np.int64))
        hidden = ad.relu(self.extract_hidden(rows))
        return ad.sigmoid(self.extract_out(hidden)).reshape(len(unit_positions))

    # -- persistence --------------------------------------------------------

    def save(self, path: str, extras: dict | None = None) -> None:
        header = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": dataclasses.asdict(self.config),
            "extras": extras or {},
        }
        save_arrays(path, header, {name: p.data for name, p in self.named_parameters().items()})

    @classmethod
    def load(cls, path: str) -> tuple["XlsModel", dict]:
        header, arrays = load_arrays(path)
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")
        model = cls(ModelConfig(**header["config"]))
        params = model.named_parameters()
        if set(params) != set(arrays):
            raise ValueError("checkpoint parameter names do not match the model")
        for name, tensor in params.items():
            if tensor.data.shape != arrays[name].shape:
                raise ValueError(f"shape mismatch for {name}")
            tensor.data = arrays[name]
        return model, header["extras"]


# ---------------------------------------------------------------------------
# decoding


def sample_token(logits: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    """Draw one token from softmax(logits) at temperature 1; returns
    (token id, its log-probability)."""
    shifted = logits - logits.max()
    logp = shifted - math.log(np.exp(shifted).sum())
    probs = np.exp(logp)
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    idx = min(idx, len(probs) - 1)
    return idx, float(logp[idx])


def greedy_decode(model: XlsModel, src_tokens: list[int], tag: TaskTag, max_len: int | None = None) -> list[int]:
    """Argmax decoding with decoder d1; output includes the EOS id when one
    is produced within ``max_len`` steps."""
    max_len = model.config.max_tgt_len if max_len is None else max_len
    with ad.no_grad():
        memory = model.encode(src_tokens, tag)
        prefix = [BOS_ID]
        out: list[int] = []
        for _ in range(max_len):
            logits = model.decode_step("d1", memory, prefix)
            nxt = int(np.argmax(logits.data))
            out.append(nxt)
            prefix.append(nxt)
            if nxt == EOS_ID:
                break
    return out


def sample_decode(
    model: XlsModel, src_tokens: list[int], tag: TaskTag, max_len: int | None = None, seed: int = 0
) -> tuple[list[int], list[float]]:
    """Multinomial decoding with decoder d1; deterministic given ``seed``.
    Returns the emitted ids and the log-probability of each emitted token."""
    max_len = model.config.max_tgt_len if max_len is None else max_len
    rng = np.random.default_rng(seed)
    with ad.no_grad():
        memory = model.encode(src_tokens, tag)
        prefix = [BOS_ID]
        out: list[int] = []
        logps: list[float] = []
        for _ in range(max_len):
            logits = model.decode_step("d1", memory, prefix)
            nxt, logp = sample_token(logits.data, rng)
            out.append(nxt)
            logps.append(logp)
            prefix.append(nxt)
            if nxt == EOS_ID:
                break
    return out, logps


def sequence_log_prob(
    model: XlsModel, decoder: str, memory: ad.Tensor, token_ids: list[int], train: bool = False, rng=None
) -> ad.Tensor:
    """Differentiable sum of log p(token_t | tokens_<t, memory)."""
    if not token_ids:
        raise ValueError("sequence_log_prob needs at least one token")
    prefix = [BOS_ID] + list(token_ids[:-1])
    logits = model.decode_logits(decoder, memory, prefix, train=train, rng=rng)
    logp = ad.log_softmax(logits, axis=-1)
    picked = ad.embedding_lookup(
        ad.reshape(logp, (-1,)),
        np.arange(len(token_ids)) * model.config.tgt_vocab_size + np.asarray(token_ids),
    )
    return ad.sum_(picked)
