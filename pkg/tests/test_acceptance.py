"""One pass/fail test per acceptance criterion.

The latent-query behaviour tests (A2 to A4) share a module fixture that
trains three desk-scale models on the synthetic query-copy corpus, which
takes a few minutes on one CPU.
"""
from __future__ import annotations

import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_force_lcs, brute_force_su4_units
from latentquery import autodiff as ad
from latentquery import nn
from latentquery.autodiff import Tensor
from latentquery.bpe import BpeSequence, encode, train_bpe
from latentquery.config import DecodeConfig, TrainConfig
from latentquery.data import SyntheticSpec, generate_documents, generate_synthetic
from latentquery.diagnostics import mean_auc, query_steering
from latentquery.latent_query import (QueryBelief, anneal_delta, entropy, kl_to_uniform, posterior,
                                      query_focused_view, query_loss, score)
from latentquery.mds import Cluster, compose, iterative_summarize, rank_documents
from latentquery.model import DualView, decoder_forward, init_params
from latentquery.params import ModelParams
from latentquery.rouge import rouge_su4, su4_units
from latentquery.trainer import train_loop
from latentquery.weak_labels import lcs_align, lcs_char, lcs_positions, lcs_word, project_labels

N_INSTANCES = 20
TOL = 1e-4


# ---------------------------------------------------------------------------
# A1 gradient integrity
# ---------------------------------------------------------------------------


def _param(shape, rng, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * Tensor(w)).sum()


def gradcheck(fn, inputs, eps: float = 1e-6) -> float:
    """Relative error over the concatenated gradient of all ``inputs``.

    Pooling matters for the attention key bias: softmax is invariant to it,
    so its true gradient is zero and a per-tensor ratio would compare two
    round-off residues.
    """
    for x in inputs:
        x.grad = None
        x.requires_grad = True
    fn().backward()
    analytic = np.concatenate([(np.zeros_like(x.data) if x.grad is None else x.grad).ravel() for x in inputs])
    numeric = np.concatenate([ad.numerical_grad(fn, x, eps).ravel() for x in inputs])
    return ad.relative_error(analytic, numeric)


def _check_scorer(rng):
    d = 5
    p = ModelParams()
    p.add("lq.hidden.weight", rng.standard_normal((d, d)))
    p.add("lq.hidden.bias", rng.standard_normal(d))
    p.add("lq.out.weight", rng.standard_normal((d, 2)))
    p.add("lq.out.bias", rng.standard_normal(2))
    h = _param((2, 4, d), rng)
    w = rng.standard_normal((2, 4, 2))
    return gradcheck(lambda: _weighted(score(h, p), w), [h, *p.values()])


def _check_posterior(rng):
    logits = _param((3, 6, 2), rng, 2.0)
    w = rng.standard_normal((3, 6))
    tau = float(rng.uniform(0.3, 1.5))
    return gradcheck(lambda: _weighted(posterior(logits, tau, "infer").probs, w), [logits])


def _check_gate(rng):
    h = _param((2, 5, 4), rng)
    q = Tensor(rng.uniform(0.05, 0.95, (2, 5)), requires_grad=True)
    w = rng.standard_normal((2, 5, 4))
    return gradcheck(lambda: _weighted(query_focused_view(QueryBelief(q), h), w), [h, q])


def _check_layernorm(rng):
    x = _param((3, 4, 6), rng)
    g, b = _param((6,), rng), _param((6,), rng)
    w = rng.standard_normal((3, 4, 6))
    return gradcheck(lambda: _weighted(ad.layer_norm(x, g, b, 1e-5), w), [x, g, b])


def _check_ffn(rng):
    p = ModelParams()
    nn.init_ffn(p, "f", 4, 7, rng, np.float64)
    x = _param((2, 3, 4), rng)
    w = rng.standard_normal((2, 3, 4))
    return gradcheck(lambda: _weighted(nn.feed_forward(x, p, "f"), w), [x, *p.values()])


def _cross_attention_check(view: str):
    def check(rng):
        cfg = TrainConfig(d_model=8, num_heads=2, d_ff=12, n_shared=1, n_decoder=1, dtype="float64",
                          max_target_length=4)
        params = init_params(cfg, 11, int(rng.integers(1 << 30)))
        q, d = _param((2, 4, 8), rng), _param((2, 4, 8), rng)
        pad = np.zeros((2, 4), dtype=bool)
        pad[1, 3] = True
        prefix = rng.integers(0, 11, (2, 3))
        w = rng.standard_normal((2, 3, 11))
        mem = q if view == "q" else d
        weights = [t for k, t in params.items() if k.startswith(f"dec.0.cross_{view}.")]
        return gradcheck(lambda: _weighted(decoder_forward(params, cfg, prefix, DualView(q, d, pad)), w),
                         [mem, *weights])
    return check


GRAD_CASES = {
    "mlp_scorer": _check_scorer,
    "gumbel_softmax_infer": _check_posterior,
    "query_view_gate": _check_gate,
    "cross_attention_query_view": _cross_attention_check("q"),
    "cross_attention_document_view": _cross_attention_check("d"),
    "layernorm": _check_layernorm,
    "ffn": _check_ffn,
}


def test_A1_gradient_integrity():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}
    for name, check in GRAD_CASES.items():
        errs = [check(rng) for _ in range(N_INSTANCES)]
        worst[name] = max(errs)
    elapsed = time.perf_counter() - started
    assert all(e < TOL for e in worst.values()), worst
    assert elapsed < 120, f"gradient checks took {elapsed:.0f}s"


# ---------------------------------------------------------------------------
# A2 to A4: trained behaviour on the synthetic query-copy corpus
# ---------------------------------------------------------------------------

SPEC = SyntheticSpec(seed=0)
DESK_STEPS = 3000


@pytest.fixture(scope="module")
def trained():
    train = generate_synthetic(SPEC, 2000, "train")
    base = TrainConfig(total_steps=DESK_STEPS, log_every=0)
    variants = {
        "full": base,
        "no_dual_view": base.with_overrides(dual_view=False),
        "no_weak_supervision": base.with_overrides(omega=0.0),
    }
    models, seconds = {}, {}
    for name, cfg in variants.items():
        res = train_loop(train, cfg)
        models[name], seconds[name] = res.model, res.seconds
    return models, seconds


@pytest.fixture(scope="module")
def steering(trained):
    models, _ = trained
    docs = generate_documents(SPEC, 60, "test")
    return {name: query_steering(m, docs, queries_per_doc=2) for name, m in models.items()}


@pytest.mark.slow
def test_A2_latent_query_recovery(trained):
    models, seconds = trained
    held_out = generate_synthetic(SPEC, 200, "test")
    auc = mean_auc(models["full"], held_out)
    assert auc >= 0.9, f"mean posterior AUC {auc:.3f}"
    assert seconds["full"] < 30 * 60


@pytest.mark.slow
def test_A3_calibration_steers_output(trained, steering):
    full = steering["full"]
    assert full.gain >= 0.10, f"calibrated {full.calibrated:.3f} vs uncalibrated {full.uncalibrated:.3f}"
    model = trained[0]["full"]
    decode = DecodeConfig(max_target_length=model.config.max_target_length)
    for d in generate_documents(SPEC, 10, "test"):
        doc = model.tokenize(d.document)
        assert model.generate_ids([doc], [model.tokenize("")], decode) == model.generate_ids([doc], None, decode)
        assert model.generate(d.document, "") == model.generate(d.document)


@pytest.mark.slow
def test_A4_ablation_directions(steering):
    full = steering["full"].calibrated
    assert steering["no_dual_view"].calibrated < full
    assert steering["no_weak_supervision"].calibrated < full
    assert steering["full"].uncalibrated < full


# ---------------------------------------------------------------------------
# A5 oracle equivalences
# ---------------------------------------------------------------------------


def _all_strings(max_len: int, alphabet: int = 4):
    for n in range(max_len + 1):
        yield from itertools.product(range(alphabet), repeat=n)


def test_A5_lcs_and_su4_match_brute_force():
    short = list(_all_strings(4))
    for a in short:
        for b in short:
            assert list(lcs_positions(a, b)) == brute_force_lcs(a, b), (a, b)
    rng = np.random.default_rng(5)
    for _ in range(3000):
        a = tuple(rng.integers(0, 4, rng.integers(0, 11)))
        b = tuple(rng.integers(0, 4, rng.integers(0, 11)))
        assert list(lcs_positions(a, b)) == brute_force_lcs(a, b), (a, b)
    # the wrapper over BPE sequences agrees with the bare kernel
    s = BpeSequence((0, 1, 2, 1), ("a", "b", "c", "b"), (0, 1, 2, 3))
    t = BpeSequence((1, 1), ("b", "b"), (0, 1))
    assert lcs_align(s, t).labels == (0, 1, 0, 1)

    lexicon = "the cat sat on a mat by dog".split()
    base = 1 << 24
    for _ in range(500):
        ws = [lexicon[i] for i in rng.integers(0, len(lexicon), rng.integers(0, 13))]
        vocab: dict[str, int] = {}
        got = su4_units(ws, vocab)
        inv = {i: w for w, i in vocab.items()}
        decoded = sorted(("u", inv[c]) if kind == "u" else ("b", inv[c // base], inv[c % base])
                         for (kind, c), n in got.items() for _ in range(n))
        assert decoded == sorted(brute_force_su4_units(ws))
    assert rouge_su4("a c", "a b c").f1 == pytest.approx(2 / 3, abs=0)


# ---------------------------------------------------------------------------
# A6 analytical identities
# ---------------------------------------------------------------------------


@settings(max_examples=500, deadline=None)
@given(st.floats(0.0, 1.0))
def test_A6_kl_entropy_identity(q):
    assert abs(kl_to_uniform(q) - (math.log(2) - entropy(q))) <= 1e-9


def test_A6_query_loss_value_and_schedule_endpoints():
    loss = query_loss(QueryBelief(np.array([0.5])), [1], omega=10.0, beta=0.1).item()
    assert abs(loss - 6.8622) <= 1e-3
    assert anneal_delta(0, 3000) == 1.0
    assert anneal_delta(3000, 3000) == 0.5


# ---------------------------------------------------------------------------
# A7 word vs subword vs character alignment
# ---------------------------------------------------------------------------


def _in_vocabulary_table(*texts):
    # every word is a single unit except the hyphenated compound, which the
    # table has only seen as two separate words
    corpus = " ".join(t.replace("Boston-area", "Boston area") for t in texts)
    return train_bpe([(corpus + " ") * 10], 300)


def test_A7_type_two_boston():
    doc = "a man in the Boston-area will ship you snow for a fee"
    summary = "A man in suburban Boston is selling snow online"
    position = doc.split().index("Boston-area")
    assert lcs_word(doc.split(), summary.split()).labels[position] == 0
    table = _in_vocabulary_table(doc, summary)
    seq = encode(doc, table, prefix_space=True)
    labels = lcs_align(seq, encode(summary, table, prefix_space=True))
    boston = seq.surfaces.index("\u2581Boston")
    assert seq.word_index[boston] == position and labels.labels[boston] == 1
    assert project_labels(labels, seq)[position] == 1


def test_A7_type_one_defeat():
    doc = "Real Madrid de Barcelona"
    summary = "Real Madrid slump to defeat"
    position = doc.split().index("de")
    assert lcs_char(doc.split(), summary.split()).labels[position] == 1
    table = _in_vocabulary_table(doc, summary)
    seq = encode(doc, table, prefix_space=True)
    assert "\u2581de" in seq.surfaces
    labels = project_labels(lcs_align(seq, encode(summary, table, prefix_space=True)), seq)
    assert labels[position] == 0


# ---------------------------------------------------------------------------
# A8 multi-document composition
# ---------------------------------------------------------------------------


def _seq(ids):
    return BpeSequence(tuple(ids), tuple(map(str, ids)), tuple(range(len(ids))))


def test_A8_mds_contract():
    # hand-counted: query units {7, 8}; hits are 1, 3, 0, 3
    docs = [_seq([7, 1, 2]), _seq([8, 8, 7, 5]), _seq([1, 2, 3]), _seq([7, 7, 8])]
    assert rank_documents(Cluster(docs, _seq([7, 8]))) == [1, 3, 0, 2]

    rng = np.random.default_rng(8)
    words = "storm snow boston harbour ferry price rose fell city mayor".split()
    for _ in range(200):
        summaries = [" ".join(" ".join(rng.choice(words, rng.integers(3, 40))) + "." for _ in range(3))
                     for _ in range(rng.integers(1, 12))]
        assert len(compose(summaries).split()) <= 250

    cluster = Cluster([_seq([1]), _seq([1]), _seq([2])], _seq([]))
    texts = ["Snow fell across Boston. The ferry stopped.", "Snow fell across Boston. The ferry stopped.",
             "Prices rose downtown."]
    out = iterative_summarize(cluster, lambda i: texts[i])
    assert out == "Snow fell across Boston. The ferry stopped. Prices rose downtown."
