"""Desk-scale cross-lingual summarization: multi-task pre-training plus
self-critical RL fine-tuning with a bilingual semantic-similarity reward."""

from .autodiff import Adam, Tensor, backward, no_grad
from .data import Example, SyntheticSpec, Tokenizer, ToyTranslator, build_pseudo_corpus, generate_synthetic
from .metrics import RougeScore, corpus_report, rouge_l, rouge_n
from .model import ModelConfig, TaskTag, XlsModel, greedy_decode, sample_decode
from .similarity import SimilarityConfig, SimilarityModel, train_similarity, xsim_score
from .training import (
    Recipe,
    RlConfig,
    TrainConfig,
    evaluate_model,
    loss_dis,
    loss_mt,
    loss_rl,
    loss_xls,
    pretrain,
    reward,
    rl_finetune,
    train_extractive_teacher,
)

__version__ = "0.1.0"
