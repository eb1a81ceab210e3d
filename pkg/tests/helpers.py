"""Shared test utilities: the finite-difference gradient oracle, the
primitive-op check suite, and the scaled-down ordering experiment reused by
both the unit tests and the acceptance gate. The FD oracle only ever calls
forward functions, never the tape."""
from __future__ import annotations

import os
import tempfile
import time
from typing import Callable, Sequence

import numpy as np

from xlsum import autodiff as ad


def finite_difference(f: Callable[[], ad.Tensor], tensors: Sequence[ad.Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of the scalar ``f()`` w.r.t. each tensor."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f().item()
            flat[i] = orig - h
            lo = f().item()
            flat[i] = orig
            gf[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def check_gradients(build: Callable[[], ad.Tensor], params: Sequence[ad.Tensor], h: float = 1e-5) -> float:
    """Return the worst relative error between backward grads and the oracle."""
    for p in params:
        p.zero_grad()
    loss = build()
    ad.backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    numeric = finite_difference(build, params, h=h)
    return max(max_rel_err(a, n) for a, n in zip(analytic, numeric))


def primitive_gradient_suite(seed: int) -> dict[str, float]:
    """Worst FD relative error for every differentiable primitive, one seed."""
    rng = np.random.default_rng(seed)
    errs: dict[str, float] = {}

    def rnd(*shape):
        return ad.parameter(rng.normal(size=shape))

    def weighted(expr: ad.Tensor, w: np.ndarray) -> ad.Tensor:
        return ad.sum_(ad.mul(expr, ad.Tensor(w)))

    a, b = rnd(4, 5), rnd(4, 5)
    w = rng.normal(size=(4, 5))
    errs["add"] = check_gradients(lambda: weighted(ad.add(a, b), w), [a, b])
    errs["sub"] = check_gradients(lambda: weighted(ad.sub(a, b), w), [a, b])
    errs["mul"] = check_gradients(lambda: weighted(ad.mul(a, b), w), [a, b])
    dsor = ad.parameter(rng.normal(size=(4, 5)) + np.sign(rng.normal(size=(4, 5))) * 1.5)
    errs["div"] = check_gradients(lambda: weighted(ad.div(a, dsor), w), [a, dsor])
    errs["neg"] = check_gradients(lambda: weighted(ad.neg(a), w), [a])

    bias = rnd(5)
    errs["add_broadcast"] = check_gradients(lambda: weighted(ad.add(a, bias), w), [a, bias])

    m1, m2 = rnd(4, 5), rnd(5, 3)
    wm = rng.normal(size=(4, 3))
    errs["matmul"] = check_gradients(lambda: weighted(ad.matmul(m1, m2), wm), [m1, m2])

    x = rnd(3, 6)
    wx = rng.normal(size=(3, 6))
    errs["softmax"] = check_gradients(lambda: weighted(ad.softmax(x, axis=-1), wx), [x])
    errs["softmax_axis0"] = check_gradients(lambda: weighted(ad.softmax(x, axis=0), wx), [x])
    errs["log_softmax"] = check_gradients(lambda: weighted(ad.log_softmax(x, axis=-1), wx), [x])
    errs["exp"] = check_gradients(lambda: weighted(ad.exp(x), wx), [x])
    pos = ad.parameter(np.abs(rng.normal(size=(3, 6))) + 0.5)
    errs["log"] = check_gradients(lambda: weighted(ad.log(pos), wx), [pos])
    errs["sqrt"] = check_gradients(lambda: weighted(ad.sqrt(pos), wx), [pos])

    # keep relu/dropout inputs away from the kink / mask threshold
    r = ad.parameter(rng.normal(size=(3, 6)) + np.sign(rng.normal(size=(3, 6))) * 0.2)
    errs["relu"] = check_gradients(lambda: weighted(ad.relu(r), wx), [r])
    errs["sigmoid"] = check_gradients(lambda: weighted(ad.sigmoid(x), wx), [x])

    drop_seed = int(rng.integers(1 << 30))
    errs["dropout"] = check_gradients(
        lambda: weighted(ad.dropout(x, 0.4, rng=np.random.default_rng(drop_seed), train=True), wx), [x]
    )

    logits = rnd(5, 7)
    targets = rng.integers(0, 7, size=5)
    targets[int(rng.integers(5))] = ad.IGNORE_INDEX
    errs["cross_entropy"] = check_gradients(lambda: ad.cross_entropy(logits, targets), [logits])

    ln_x, gain, bias2 = rnd(4, 6), ad.parameter(1.0 + 0.1 * rng.normal(size=6)), rnd(6)
    wl = rng.normal(size=(4, 6))
    errs["layer_norm"] = check_gradients(lambda: weighted(ad.layer_norm(ln_x, gain, bias2), wl), [ln_x, gain, bias2])

    table = rnd(7, 4)
    ids = rng.integers(0, 7, size=6)
    we = rng.normal(size=(6, 4))
    errs["embedding_lookup"] = check_gradients(lambda: weighted(ad.embedding_lookup(table, ids), we), [table])

    lx, lw, lb = rnd(3, 4), rnd(4, 5), rnd(5)
    wl2 = rng.normal(size=(3, 5))
    errs["linear"] = check_gradients(lambda: weighted(ad.linear(lx, lw, lb), wl2), [lx, lw, lb])

    c1, c2 = rnd(2, 4), rnd(3, 4)
    wc = rng.normal(size=(5, 4))
    errs["concat"] = check_gradients(lambda: weighted(ad.concat([c1, c2], axis=0), wc), [c1, c2])

    s = rnd(4, 5)
    ws = rng.normal(size=(2, 3))
    errs["slice"] = check_gradients(lambda: weighted(s[1:3, 1:4], ws), [s])

    w_sum = rng.normal(size=4)
    w_mean = rng.normal(size=5)
    w_reshape = rng.normal(size=(2, 10))
    errs["sum"] = check_gradients(lambda: weighted(ad.sum_(a, axis=1), w_sum), [a])
    errs["mean"] = check_gradients(lambda: weighted(ad.mean(a, axis=0), w_mean), [a])
    errs["transpose"] = check_gradients(lambda: weighted(ad.transpose(a), w.T), [a])
    errs["reshape"] = check_gradients(lambda: weighted(ad.reshape(a, (2, 10)), w_reshape), [a])
    return errs


def check_gradients_sampled(
    build: Callable[[], ad.Tensor],
    params: Sequence[ad.Tensor],
    rng: np.random.Generator,
    n_coords: int = 30,
    h: float = 1e-5,
) -> float:
    """FD check on a random subset of parameter coordinates (for losses whose
    full parameter count makes element-wise FD too slow)."""
    for p in params:
        p.zero_grad()
    loss = build()
    ad.backward(loss)
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum(sizes) - sizes
    worst = 0.0
    for pick in picks:
        which = int(np.searchsorted(offsets, pick, side="right")) - 1
        p = params[which]
        idx = int(pick - offsets[which])
        flat = p.data.ravel()
        orig = flat[idx]
        flat[idx] = orig + h
        hi = build().item()
        flat[idx] = orig - h
        lo = build().item()
        flat[idx] = orig
        numeric = (hi - lo) / (2.0 * h)
        analytic = 0.0 if p.grad is None else float(p.grad.ravel()[idx])
        denom = max(1.0, abs(analytic), abs(numeric))
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# scaled-down ordering experiment (shared by calibration runs and acceptance)


def build_experiment_data(n_train: int, n_test: int, seed: int = 0, tau: float = 0.6, noise: float = 0.1):
    """Synthetic corpus split plus tokenizers and the similarity model's
    training pairs. Test references come from the noise-free translator (the
    stand-in for post-edited references)."""
    from xlsum import data as dp
    from xlsum.data import Tokenizer, insert_separators

    spec = dp.SyntheticSpec(seed=seed)
    examples, parallel = dp.generate_synthetic(spec, n_train + n_test)
    lexicon = spec.resolve_lexicon()
    noisy = dp.ToyTranslator(lexicon, noise_rate=noise, seed=seed + 101)
    clean = dp.ToyTranslator(lexicon, noise_rate=0.0, seed=seed + 202)
    train_corpus, train_report = dp.build_pseudo_corpus(examples[:n_train], noisy, tau=tau)
    test_corpus, _ = dp.build_pseudo_corpus(examples[n_train:], clean, tau=0.0)
    for ex in train_corpus:
        ex.salience = dp.make_salience_labels(ex, "keyword")
        ex.unit_mode = "keyword"
    src_tok = Tokenizer.from_texts(insert_separators(e.article_src)[0] for e in train_corpus)
    tgt_texts = [e.pseudo_summary_tgt for e in train_corpus] + [t for _, t in parallel]
    tgt_tok = Tokenizer.from_texts(tgt_texts)
    return {
        "train": train_corpus,
        "test": test_corpus,
        "parallel": parallel,
        "src_tok": src_tok,
        "tgt_tok": tgt_tok,
        "filter_report": train_report,
    }


def run_ordering_experiment(
    n_train: int = 2000,
    n_test: int = 200,
    seed: int = 0,
    epochs: int = 3,
    rl_epochs: int = 1,
    rl_subset: int | None = None,
    batch_size: int = 8,
    lr: float = 1e-3,
    rl_lr: float = 1e-4,
    gamma: float = 0.998,
    lambda_distill: float = 10.0,
    d_model: int = 32,
    ffn_dim: int = 64,
    n_layers: int = 2,
    n_shared: int = 1,
    max_decode_len: int = 32,
    xsim_pairs: int = 5000,
    verbose: bool = False,
) -> dict:
    """Train the MLE recipe ladder plus RL_XSIM and evaluate all four on the
    held-out split. Returns per-recipe metrics keyed by recipe name."""
    from xlsum import training as tr
    from xlsum.model import ModelConfig, XlsModel
    from xlsum.similarity import SimilarityConfig, train_similarity

    t0 = time.monotonic()

    def log(msg):
        if verbose:
            print(f"[{time.monotonic() - t0:7.1f}s] {msg}", flush=True)

    data = build_experiment_data(n_train, n_test, seed=seed)
    log(f"data ready: {len(data['train'])} train / {len(data['test'])} test")

    xsim_model, _ = train_similarity(data["parallel"][:xsim_pairs], SimilarityConfig(epochs=8, seed=seed))
    log("xsim trained")

    config = ModelConfig(
        src_vocab_size=data["src_tok"].size,
        tgt_vocab_size=data["tgt_tok"].size,
        d_model=d_model,
        n_heads=2,
        ffn_dim=ffn_dim,
        n_encoder_layers=n_layers,
        n_decoder_layers=n_layers,
        n_shared_decoder_layers=n_shared,
        max_src_len=192,
        max_tgt_len=48,
        dropout_rate=0.0,
    )
    train_cfg = dict(
        lr=lr, batch_size_xls=batch_size, batch_size_mt=batch_size, epochs=epochs, seed=seed,
        lambda_distill=lambda_distill,
    )
    results: dict[str, dict] = {}
    models: dict[str, XlsModel] = {}
    from xlsum.training import Recipe

    for recipe in (Recipe.MLE_XLS, Recipe.MLE_XLS_MT, Recipe.MLE_XLS_MT_DIS):
        model = XlsModel(config, seed=seed)
        tr.pretrain(
            model, data["train"], data["parallel"], tr.TrainConfig(**train_cfg), recipe,
            data["src_tok"], data["tgt_tok"],
        )
        models[recipe.value] = model
        ev = tr.evaluate_model(
            model, data["test"], data["src_tok"], data["tgt_tok"], xsim_model=xsim_model, max_len=max_decode_len
        )
        results[recipe.value] = {
            "rougeL": 100.0 * ev.report.rouge_l,
            "rouge1": 100.0 * ev.report.rouge1,
            "xsim": ev.xsim_mean,
            "gen_len": ev.mean_generated_len,
        }
        log(f"{recipe.value}: {results[recipe.value]}")

    # task-tag separation on the trained multi-task model: the same article
    # yields a compressed summary under SUM/d1 but a full-length translation
    # under TRANS/d2 (applied per sentence, the way the MT decoder is trained)
    from xlsum import autodiff as ad
    from xlsum.data import BOS_ID, EOS_ID, split_sentences
    from xlsum.model import TaskTag, greedy_decode
    from xlsum.training import prepare_example

    def translate_document(model, article: str) -> int:
        emitted = 0
        with ad.no_grad():
            for sentence in split_sentences(article):
                memory = model.encode(data["src_tok"].encode(sentence), TaskTag.TRANS)
                prefix = [BOS_ID]
                for _ in range(config.max_tgt_len):
                    nxt = int(np.argmax(model.decode_step("d2", memory, prefix).data))
                    prefix.append(nxt)
                    if nxt == EOS_ID:
                        break
                emitted += len(prefix) - 1
        return emitted

    tagged_model = models[Recipe.MLE_XLS_MT.value]
    sum_lens, trans_lens = [], []
    for ex in data["test"][:20]:
        prep = prepare_example(ex, data["src_tok"], data["tgt_tok"], config)
        sum_lens.append(len(greedy_decode(tagged_model, prep.enc_ids, TaskTag.SUM, max_len=config.max_tgt_len)))
        trans_lens.append(translate_document(tagged_model, ex.article_src))
    results["tag_separation"] = {
        "mean_summary_len": float(np.mean(sum_lens)),
        "mean_translation_len": float(np.mean(trans_lens)),
    }
    log(f"tag separation: {results['tag_separation']}")

    # RL starts from the strongest supervised checkpoint (round-tripped
    # through a file so the supervised model itself stays untouched)
    with tempfile.TemporaryDirectory() as tmp:
        ckpt = os.path.join(tmp, "dis.ckpt")
        models[Recipe.MLE_XLS_MT_DIS.value].save(ckpt)
        rl_model, _ = XlsModel.load(ckpt)
    rl_data = data["train"] if rl_subset is None else data["train"][:rl_subset]
    rl_cfg = tr.RlConfig(
        gamma=gamma, reward_kind=tr.REWARD_XSIM, seed=seed, max_decode_len=max_decode_len,
        epochs=rl_epochs, batch_size=batch_size, lr=rl_lr,
    )
    rl_result = tr.rl_finetune(rl_model, rl_data, rl_cfg, data["src_tok"], data["tgt_tok"], xsim_model=xsim_model)
    ev = tr.evaluate_model(
        rl_model, data["test"], data["src_tok"], data["tgt_tok"], xsim_model=xsim_model, max_len=max_decode_len
    )
    results[Recipe.RL_XSIM.value] = {
        "rougeL": 100.0 * ev.report.rouge_l,
        "rouge1": 100.0 * ev.report.rouge1,
        "xsim": ev.xsim_mean,
        "gen_len": ev.mean_generated_len,
        "epoch_greedy_reward": rl_result.epoch_greedy_reward,
    }
    log(f"RL_XSIM: {results[Recipe.RL_XSIM.value]}")
    results["elapsed_seconds"] = time.monotonic() - t0
    return results
