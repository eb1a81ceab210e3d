"""Training orchestration: supervised multi-task pre-training (summarization
cross-entropy + translation cross-entropy + salience distillation, alternating
minibatches), the toy extractive teacher, and self-critical RL fine-tuning
with pluggable rewards.

All randomness flows from per-purpose generators derived from the config
seed (data order, sampling, dropout), so identical (config, seed, data)
yields bitwise-identical checkpoints.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .data import (
    BOS_ID,
    EOS_ID,
    Example,
    Tokenizer,
    insert_separators,
    split_sentences,
)
from .metrics import WORD, CorpusReport, corpus_report, rouge_l, segment
from .model import (
    EncoderLayer,
    LayerNorm,
    Linear,
    ModelConfig,
    TaskTag,
    XlsModel,
    embed_sequence,
    greedy_decode,
    sample_decode,
    sequence_log_prob,
)
from .serialize import load_arrays, save_arrays
from .similarity import SimilarityModel, xsim_score

DISTILL_SQUARED_LOG = "squared-log"
DISTILL_KL = "kl"

REWARD_ROUGE_L = "rouge_l"
REWARD_XSIM = "xsim"
REWARD_MEAN = "mean"


class Recipe(enum.Enum):
    MLE_XLS = "MLE_XLS"
    MLE_XLS_MT = "MLE_XLS_MT"
    MLE_XLS_MT_DIS = "MLE_XLS_MT_DIS"
    RL_ROUGE = "RL_ROUGE"
    RL_XSIM = "RL_XSIM"
    RL_ROUGE_XSIM = "RL_ROUGE_XSIM"

    @property
    def uses_mt(self) -> bool:
        return self in (Recipe.MLE_XLS_MT, Recipe.MLE_XLS_MT_DIS)

    @property
    def uses_distill(self) -> bool:
        return self is Recipe.MLE_XLS_MT_DIS

    @property
    def is_rl(self) -> bool:
        return self in (Recipe.RL_ROUGE, Recipe.RL_XSIM, Recipe.RL_ROUGE_XSIM)

    @property
    def reward_kind(self) -> str:
        return {
            Recipe.RL_ROUGE: REWARD_ROUGE_L,
            Recipe.RL_XSIM: REWARD_XSIM,
            Recipe.RL_ROUGE_XSIM: REWARD_MEAN,
        }[self]


@dataclass
class TrainConfig:
    lambda_distill: float = 10.0
    lr: float = 1e-3
    batch_size_xls: int = 8
    batch_size_mt: int = 8
    epochs: int = 4
    seed: int = 0
    distill_variant: str = DISTILL_SQUARED_LOG
    clamp_eps: float = 1e-4
    mt_per_xls: int = 1

    def __post_init__(self):
        if self.lambda_distill < 0:
            raise ValueError("lambda_distill must be >= 0")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ValueError("clamp_eps must be in (0, 0.5)")
        if self.distill_variant not in (DISTILL_SQUARED_LOG, DISTILL_KL):
            raise ValueError(f"unknown distill variant {self.distill_variant!r}")
        if self.mt_per_xls < 1:
            raise ValueError("mt_per_xls must be >= 1")


@dataclass
class RlConfig:
    gamma: float = 0.998
    reward_kind: str = REWARD_XSIM
    seed: int = 0
    max_decode_len: int = 32
    epochs: int = 2
    batch_size: int = 8
    lr: float = 1e-4
    seg_mode: str = WORD

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.reward_kind not in (REWARD_ROUGE_L, REWARD_XSIM, REWARD_MEAN):
            raise ValueError(f"unknown reward kind {self.reward_kind!r}")


# ---------------------------------------------------------------------------
# prepared inputs


@dataclass
class PreparedExample:
    example: Example
    enc_ids: list[int]
    tgt_ids: list[int] | None
    sal_positions: list[int] | None  # indices into encoder output (tag offset applied)
    sal_targets: np.ndarray | None


@dataclass
class PreparedPair:
    src_ids: list[int]
    tgt_ids: list[int]


def prepare_example(ex: Example, src_tok: Tokenizer, tgt_tok: Tokenizer, config: ModelConfig) -> PreparedExample:
    sep_text, _ = insert_separators(ex.article_src)
    enc_ids = src_tok.encode(sep_text)[: config.max_src_len - 1]
    tgt_ids = None
    if ex.pseudo_summary_tgt is not None:
        tgt_ids = tgt_tok.encode(ex.pseudo_summary_tgt)[: config.max_tgt_len - 1] + [EOS_ID]
    positions = targets = None
    if ex.salience is not None:
        kept = [(p + 1, q) for p, q in ex.salience if p + 1 < config.max_src_len]
        positions = [p for p, _ in kept]
        targets = np.array([q for _, q in kept])
    return PreparedExample(ex, enc_ids, tgt_ids, positions, targets)


def prepare_pair(pair: tuple[str, str], src_tok: Tokenizer, tgt_tok: Tokenizer, config: ModelConfig) -> PreparedPair:
    src_ids = src_tok.encode(pair[0])[: config.max_src_len - 1]
    tgt_ids = tgt_tok.encode(pair[1])[: config.max_tgt_len - 1] + [EOS_ID]
    return PreparedPair(src_ids, tgt_ids)


# ---------------------------------------------------------------------------
# losses


def _clamp(t: ad.Tensor, lo: float, hi: float) -> ad.Tensor:
    # piecewise-linear clamp built from relu; identity (gradient 1) inside
    return lo + ad.relu(t - lo) - ad.relu(t - hi)


def loss_xls(model: XlsModel, prep: PreparedExample, train: bool = False, rng=None, memory: ad.Tensor | None = None) -> ad.Tensor:
    """Mean token NLL of the pseudo target summary under decoder d1."""
    if prep.tgt_ids is None:
        raise ValueError(f"example {prep.example.id} has no pseudo target summary")
    if memory is None:
        memory = model.encode(prep.enc_ids, TaskTag.SUM, train=train, rng=rng)
    logits = model.decode_logits("d1", memory, [BOS_ID] + prep.tgt_ids[:-1], train=train, rng=rng)
    return ad.cross_entropy(logits, prep.tgt_ids)


def loss_mt(model: XlsModel, pair: PreparedPair, train: bool = False, rng=None) -> ad.Tensor:
    """Mean token NLL of the translation under decoder d2."""
    memory = model.encode(pair.src_ids, TaskTag.TRANS, train=train, rng=rng)
    logits = model.decode_logits("d2", memory, [BOS_ID] + pair.tgt_ids[:-1], train=train, rng=rng)
    return ad.cross_entropy(logits, pair.tgt_ids)


def _distill_probs(model, prep, train, rng, memory):
    if prep.sal_positions is None or prep.sal_targets is None:
        raise ValueError(f"example {prep.example.id} has no salience labels")
    if memory is None:
        memory = model.encode(prep.enc_ids, TaskTag.SUM, train=train, rng=rng)
    return model.salience_predict(memory, prep.sal_positions)


def loss_dis(
    model: XlsModel, prep: PreparedExample, clamp_eps: float = 1e-4, train: bool = False, rng=None, memory=None
) -> ad.Tensor:
    """Squared log-difference between teacher targets q and head outputs p,
    both clamped away from {0, 1} so the logs stay finite."""
    p = _distill_probs(model, prep, train, rng, memory)
    q = np.clip(prep.sal_targets, clamp_eps, 1.0 - clamp_eps)
    diff = ad.Tensor(np.log(q)) - ad.log(_clamp(p, clamp_eps, 1.0 - clamp_eps))
    return ad.mean(diff * diff)


def loss_dis_kl(
    model: XlsModel, prep: PreparedExample, clamp_eps: float = 1e-4, train: bool = False, rng=None, memory=None
) -> ad.Tensor:
    """The KL-style variant: negated mean of q * log p."""
    p = _distill_probs(model, prep, train, rng, memory)
    return -ad.mean(ad.Tensor(prep.sal_targets) * ad.log(_clamp(p, clamp_eps, 1.0 - clamp_eps)))


# ---------------------------------------------------------------------------
# pre-training


@dataclass
class PretrainResult:
    trace: list[tuple[int, str, float]]  # (step, objective, value)
    touched_params: set[str]
    steps: int

    def objective_values(self, objective: str) -> list[float]:
        return [v for _, obj, v in self.trace if obj == objective]


def _batches(count: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]


def _cycle_batches(count: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    while True:
        yield from _batches(count, batch_size, rng)


def pretrain(
    model: XlsModel,
    xls_examples: Sequence[Example],
    mt_pairs: Sequence[tuple[str, str]],
    config: TrainConfig,
    recipe: Recipe,
    src_tok: Tokenizer,
    tgt_tok: Tokenizer,
) -> PretrainResult:
    """Alternating-minibatch supervised pre-training.

    Per cycle: ``mt_per_xls`` translation batches through d2 (when the recipe
    uses them), then one summarization batch through d1 carrying the
    distillation term weighted by lambda (when the recipe uses it). Epochs
    count passes over the summarization corpus.
    """
    if recipe.is_rl:
        raise ValueError(f"{recipe.value} is an RL recipe; use rl_finetune")
    if not xls_examples:
        raise ValueError("pretrain needs a non-empty summarization corpus")
    if recipe.uses_mt and not mt_pairs:
        raise ValueError(f"{recipe.value} needs a non-empty MT corpus")

    xls = [prepare_example(ex, src_tok, tgt_tok, model.config) for ex in xls_examples]
    for prep in xls:
        if prep.tgt_ids is None:
            raise ValueError(f"example {prep.example.id} has no pseudo target summary")
        if recipe.uses_distill and prep.sal_positions is None:
            raise ValueError(f"example {prep.example.id} has no salience labels")
    mt = [prepare_pair(p, src_tok, tgt_tok, model.config) for p in mt_pairs] if recipe.uses_mt else []

    params = model.named_parameters()
    by_id = {id(p): name for name, p in params.items()}
    tensors = list(params.values())
    opt = ad.Adam(lr=config.lr)
    xls_rng = np.random.default_rng([config.seed, 1])
    mt_rng = np.random.default_rng([config.seed, 2])
    drop_rng = np.random.default_rng([config.seed, 3])

    mt_stream = _cycle_batches(len(mt), config.batch_size_mt, mt_rng) if mt else None
    trace: list[tuple[int, str, float]] = []
    touched: set[str] = set()
    step = 0

    def optimize(loss: ad.Tensor, objective: str):
        nonlocal step
        opt.zero_grad(tensors)
        ad.backward(loss)
        for p in opt.step(tensors):
            touched.add(by_id[id(p)])
        trace.append((step, objective, loss.item()))
        step += 1

    for _ in range(config.epochs):
        for batch in _batches(len(xls), config.batch_size_xls, xls_rng):
            if mt_stream is not None:
                for _ in range(config.mt_per_xls):
                    mt_batch = next(mt_stream)
                    mt_loss = ad.mean(
                        ad.concat([loss_mt(model, mt[i], train=True, rng=drop_rng).reshape(1) for i in mt_batch])
                    )
                    optimize(mt_loss, "mt")
            xls_terms = []
            for i in batch:
                memory = model.encode(xls[i].enc_ids, TaskTag.SUM, train=True, rng=drop_rng)
                term = loss_xls(model, xls[i], train=True, rng=drop_rng, memory=memory)
                if recipe.uses_distill and config.lambda_distill > 0:
                    dis_fn = loss_dis if config.distill_variant == DISTILL_SQUARED_LOG else loss_dis_kl
                    term = term + config.lambda_distill * dis_fn(
                        model, xls[i], config.clamp_eps, train=True, rng=drop_rng, memory=memory
                    )
                xls_terms.append(term.reshape(1))
            optimize(ad.mean(ad.concat(xls_terms)), "xls")
    return PretrainResult(trace=trace, touched_params=touched, steps=step)


# ---------------------------------------------------------------------------
# extractive teacher


def greedy_oracle_labels(article: str, summary: str, mode=WORD) -> list[int]:
    """Binary per-sentence labels by greedy selection maximizing ROUGE-L F1 of
    the running selection against the summary; stops when nothing improves.
    Candidate ties go to the earlier sentence."""
    sentences = split_sentences(article)
    selected: set[int] = set()
    best = 0.0
    while len(selected) < len(sentences):
        choice, choice_score = None, best
        for i in range(len(sentences)):
            if i in selected:
                continue
            text = " . ".join(sentences[j] for j in sorted(selected | {i}))
            score = rouge_l(text, summary, mode).f1
            if score > choice_score:
                choice, choice_score = i, score
        if choice is None:
            break
        selected.add(choice)
        best = choice_score
    return [1 if i in selected else 0 for i in range(len(sentences))]


class ExtractiveTeacher:
    """Monolingual extractive model: the same encoder architecture plus the
    2-layer salience head, trained on greedy oracle labels."""

    FORMAT = "xlsum-teacher"

    def __init__(self, config: ModelConfig, tokenizer: Tokenizer, seed: int = 0):
        self.config = config
        self.tokenizer = tokenizer
        rng = np.random.default_rng([seed, 0x7EA])
        d = config.d_model
        self.embed = ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(d), size=(config.src_vocab_size, d)))
        self.layers = [EncoderLayer(rng, config) for _ in range(config.n_encoder_layers)]
        self.ln = LayerNorm(d)
        self.extract_hidden = Linear(rng, d, d)
        self.extract_out = Linear(rng, d, 1)

    def named_parameters(self) -> dict[str, ad.Tensor]:
        out = {"embed": self.embed}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_params(f"encoder.{i}"))
        out.update(self.ln.named_params("ln"))
        out.update(self.extract_hidden.named_params("extract.hidden"))
        out.update(self.extract_out.named_params("extract.out"))
        return out

    def _encode(self, ids: list[int], train: bool = False, rng=None) -> ad.Tensor:
        x = embed_sequence(self.embed, ids, self.config.d_model, self.config.dropout_rate, train, rng)
        for layer in self.layers:
            x = layer(x, train, rng)
        return self.ln(x)

    def _probs(self, article: str, train: bool = False, rng=None) -> tuple[ad.Tensor, int]:
        sep_text, sep_positions = insert_separators(article)
        ids = self.tokenizer.encode(sep_text)[: self.config.max_src_len]
        positions = [p for p in sep_positions if p < len(ids)]
        memory = self._encode(ids, train=train, rng=rng)
        return self.salience(memory, positions), len(sep_positions)

    def salience(self, memory: ad.Tensor, positions: list[int]) -> ad.Tensor:
        if not positions:
            return ad.Tensor(np.zeros(0))
        rows = ad.embedding_lookup(memory, np.asarray(positions, dtype=np.int64))
        hidden = ad.relu(self.extract_hidden(rows))
        return ad.sigmoid(self.extract_out(hidden)).reshape(len(positions))

    def predict_sentence_probs(self, article: str) -> np.ndarray:
        """One inclusion probability per sentence; truncated tail sentences
        (beyond the encoder length limit) fall back to probability 0."""
        with ad.no_grad():
            probs, n_sentences = self._probs(article)
        out = np.zeros(n_sentences)
        out[: probs.shape[0]] = probs.data
        return out

    def save(self, path: str) -> None:
        header = {
            "format": self.FORMAT,
            "version": 1,
            "config": dataclasses.asdict(self.config),
            "vocab": self.tokenizer.vocab,
            "tokenizer_mode": self.tokenizer.mode,
        }
        save_arrays(path, header, {k: p.data for k, p in self.named_parameters().items()})

    @classmethod
    def load(cls, path: str) -> "ExtractiveTeacher":
        header, arrays = load_arrays(path)
        if header.get("format") != cls.FORMAT:
            raise ValueError(f"not a {cls.FORMAT} file: {path}")
        teacher = cls(ModelConfig(**header["config"]), Tokenizer(header["vocab"], header["tokenizer_mode"]))
        for name, tensor in teacher.named_parameters().items():
            tensor.data = arrays[name]
        return teacher


@dataclass
class TeacherConfig:
    epochs: int = 6
    lr: float = 1e-3
    seed: int = 0
    batch_size: int = 8


def train_extractive_teacher(
    examples: Sequence[Example], model_config: ModelConfig, config: TeacherConfig = TeacherConfig(), tokenizer: Tokenizer | None = None
) -> tuple[ExtractiveTeacher, list[float]]:
    """Fit the teacher with binary cross-entropy against greedy oracle labels.
    Returns the teacher and its per-step loss trace."""
    if not examples:
        raise ValueError("teacher training needs a non-empty corpus")
    if tokenizer is None:
        sep_texts = [insert_separators(ex.article_src)[0] for ex in examples]
        tokenizer = Tokenizer.from_texts(sep_texts)
    teacher = ExtractiveTeacher(model_config, tokenizer, seed=config.seed)
    labels = [np.array(greedy_oracle_labels(ex.article_src, ex.summary_src), dtype=np.float64) for ex in examples]

    params = list(teacher.named_parameters().values())
    opt = ad.Adam(lr=config.lr)
    order_rng = np.random.default_rng([config.seed, 4])
    drop_rng = np.random.default_rng([config.seed, 5])
    trace: list[float] = []
    eps = 1e-7
    for _ in range(config.epochs):
        for batch in _batches(len(examples), config.batch_size, order_rng):
            terms = []
            for i in batch:
                probs, _ = teacher._probs(examples[i].article_src, train=True, rng=drop_rng)
                y = labels[i][: probs.shape[0]]
                if probs.shape[0] == 0:
                    continue
                p = _clamp(probs, eps, 1.0 - eps)
                bce = -ad.mean(ad.Tensor(y) * ad.log(p) + ad.Tensor(1.0 - y) * ad.log(1.0 - p))
                terms.append(bce.reshape(1))
            if not terms:
                continue
            loss = ad.mean(ad.concat(terms))
            opt.zero_grad(params)
            ad.backward(loss)
            opt.step(params)
            trace.append(loss.item())
    return teacher, trace


# ---------------------------------------------------------------------------
# rewards and RL


def reward(
    kind: str,
    generated_tgt: str,
    example: Example,
    xsim_model: SimilarityModel | None = None,
    seg_mode=WORD,
) -> float:
    """Scalar reward for a generated target-language summary."""
    if kind == REWARD_ROUGE_L:
        if example.pseudo_summary_tgt is None:
            raise ValueError("rouge_l reward needs a pseudo target summary")
        return rouge_l(generated_tgt, example.pseudo_summary_tgt, seg_mode).f1
    if kind == REWARD_XSIM:
        if xsim_model is None:
            raise ValueError("xsim reward needs a similarity model")
        return xsim_score(xsim_model, generated_tgt, example.summary_src)
    if kind == REWARD_MEAN:
        return 0.5 * (
            reward(REWARD_ROUGE_L, generated_tgt, example, xsim_model, seg_mode)
            + reward(REWARD_XSIM, generated_tgt, example, xsim_model, seg_mode)
        )
    raise ValueError(f"unknown reward kind {kind!r}")


def rl_loss_from_frozen(
    model: XlsModel,
    prep: PreparedExample,
    sampled_ids: list[int],
    advantage: float,
    train: bool = False,
    rng=None,
) -> ad.Tensor:
    """Self-critical loss for an already-decoded sample: advantage times the
    sample's summed log-probability. The advantage is a constant; gradient
    flows only through the log-probabilities."""
    memory = model.encode(prep.enc_ids, TaskTag.SUM, train=train, rng=rng)
    return advantage * sequence_log_prob(model, "d1", memory, sampled_ids, train=train, rng=rng)


@dataclass
class RlSampleInfo:
    greedy_reward: float
    sample_reward: float
    advantage: float
    greedy_ids: list[int]
    sampled_ids: list[int]


def loss_rl(
    model: XlsModel,
    prep: PreparedExample,
    tgt_tok: Tokenizer,
    reward_fn: Callable[[str], float],
    seed: int,
    max_len: int = 32,
    train: bool = False,
    rng=None,
) -> tuple[ad.Tensor, RlSampleInfo]:
    """Greedy-vs-sample self-critical objective for one example.

    ``reward_fn`` maps generated target text to a scalar. With equal rewards
    the loss is the constant 0 (no gradient at all)."""
    greedy_ids = greedy_decode(model, prep.enc_ids, TaskTag.SUM, max_len=max_len)
    sampled_ids, _ = sample_decode(model, prep.enc_ids, TaskTag.SUM, max_len=max_len, seed=seed)
    r_greedy = reward_fn(tgt_tok.decode(greedy_ids))
    r_sample = reward_fn(tgt_tok.decode(sampled_ids))
    advantage = r_greedy - r_sample
    info = RlSampleInfo(r_greedy, r_sample, advantage, greedy_ids, sampled_ids)
    if advantage == 0.0 or not sampled_ids:
        return ad.Tensor(0.0), info
    return rl_loss_from_frozen(model, prep, sampled_ids, advantage, train=train, rng=rng), info


@dataclass
class RlResult:
    trace: list[tuple[int, str, float]]
    epoch_greedy_reward: list[float]
    steps: int


def rl_finetune(
    model: XlsModel,
    examples: Sequence[Example],
    config: RlConfig,
    src_tok: Tokenizer,
    tgt_tok: Tokenizer,
    xsim_model: SimilarityModel | None = None,
) -> RlResult:
    """Fine-tune with gamma * L_rl + (1 - gamma) * L_xls per batch.

    Only the encoder and decoder d1 lie on the gradient path, so the
    translation decoder's own layers stay frozen. Skipped terms (gamma of 0
    or 1) are not evaluated at all."""
    if not examples:
        raise ValueError("rl_finetune needs a non-empty corpus")
    if config.reward_kind in (REWARD_XSIM, REWARD_MEAN) and xsim_model is None:
        raise ValueError(f"reward {config.reward_kind!r} needs a trained similarity model")
    preps = [prepare_example(ex, src_tok, tgt_tok, model.config) for ex in examples]
    if config.gamma < 1.0:
        for prep in preps:
            if prep.tgt_ids is None:
                raise ValueError(f"example {prep.example.id} has no pseudo target summary")

    tensors = model.parameters()
    opt = ad.Adam(lr=config.lr)
    order_rng = np.random.default_rng([config.seed, 11])
    drop_rng = np.random.default_rng([config.seed, 12])
    sample_seed_rng = np.random.default_rng([config.seed, 13])

    trace: list[tuple[int, str, float]] = []
    epoch_rewards: list[float] = []
    step = 0
    for _ in range(config.epochs):
        greedy_rewards: list[float] = []
        for batch in _batches(len(preps), config.batch_size, order_rng):
            terms: list[ad.Tensor] = []
            rl_values: list[float] = []
            xls_values: list[float] = []
            for i in batch:
                prep = preps[i]
                if config.gamma > 0.0:
                    reward_fn = lambda text, ex=prep.example: reward(
                        config.reward_kind, text, ex, xsim_model, config.seg_mode
                    )
                    sample_seed = int(sample_seed_rng.integers(1 << 62))
                    l_rl, info = loss_rl(
                        model,
                        prep,
                        tgt_tok,
                        reward_fn,
                        seed=sample_seed,
                        max_len=config.max_decode_len,
                        train=True,
                        rng=drop_rng,
                    )
                    greedy_rewards.append(info.greedy_reward)
                    rl_values.append(l_rl.item())
                    terms.append((config.gamma * l_rl).reshape(1))
                if config.gamma < 1.0:
                    l_xls = loss_xls(model, prep, train=True, rng=drop_rng)
                    xls_values.append(l_xls.item())
                    terms.append(((1.0 - config.gamma) * l_xls).reshape(1))
            loss = ad.sum_(ad.concat(terms)) * (1.0 / len(batch))
            opt.zero_grad(tensors)
            ad.backward(loss)
            opt.step(tensors)
            if rl_values:
                trace.append((step, "rl", float(np.mean(rl_values))))
            if xls_values:
                trace.append((step, "xls", float(np.mean(xls_values))))
            step += 1
        epoch_rewards.append(float(np.mean(greedy_rewards)) if greedy_rewards else float("nan"))
    return RlResult(trace=trace, epoch_greedy_reward=epoch_rewards, steps=step)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    report: CorpusReport
    xsim_mean: float | None
    mean_generated_len: float
    mean_reference_len: float
    outputs: list[str]

    def summary_row(self) -> dict[str, float]:
        row = {
            "rouge1": 100.0 * self.report.rouge1,
            "rouge2": 100.0 * self.report.rouge2,
            "rougeL": 100.0 * self.report.rouge_l,
        }
        if self.xsim_mean is not None:
            row["xsim"] = 100.0 * self.xsim_mean
        return row


def generate_summary(model: XlsModel, ex: Example, src_tok: Tokenizer, tgt_tok: Tokenizer, max_len: int = 32) -> str:
    sep_text, _ = insert_separators(ex.article_src)
    ids = src_tok.encode(sep_text)[: model.config.max_src_len - 1]
    return tgt_tok.decode(greedy_decode(model, ids, TaskTag.SUM, max_len=max_len))


def evaluate_model(
    model: XlsModel,
    examples: Sequence[Example],
    src_tok: Tokenizer,
    tgt_tok: Tokenizer,
    xsim_model: SimilarityModel | None = None,
    max_len: int = 32,
    seg_mode=WORD,
) -> EvalResult:
    """Greedy-decode each example and score against the pseudo target
    references (ROUGE) and source summaries (xsim)."""
    outputs, pairs, sims = [], [], []
    for ex in examples:
        if ex.pseudo_summary_tgt is None:
            raise ValueError(f"example {ex.id} has no reference for evaluation")
        out = generate_summary(model, ex, src_tok, tgt_tok, max_len=max_len)
        outputs.append(out)
        pairs.append((out, ex.pseudo_summary_tgt))
        if xsim_model is not None:
            sims.append(xsim_score(xsim_model, out, ex.summary_src))
    report = corpus_report(pairs, mode=seg_mode)
    gen_lens = [len(segment(o, seg_mode)) for o in outputs]
    ref_lens = [len(segment(r, seg_mode)) for _, r in pairs]
    return EvalResult(
        report=report,
        xsim_mean=float(np.mean(sims)) if sims else None,
        mean_generated_len=float(np.mean(gen_lens)),
        mean_reference_len=float(np.mean(ref_lens)),
        outputs=outputs,
    )
