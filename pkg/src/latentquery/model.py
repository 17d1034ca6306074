"""Conditional language model with a query-focused and a query-agnostic view.

Encoder: shared layers, then two branches of their own layers.  The
document branch yields the query-agnostic view ``D``; the query branch
yields ``H_q``, which the inference network scores and which, gated by the
beliefs, becomes the query-focused view ``Q``.  Each decoder layer runs
causal self-attention, cross-attention over ``Q``, cross-attention over
``D``, then a feed-forward block, each wrapped in residual + layer norm.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ShapeError, Tensor, no_grad
from .bpe import BpeSequence, MergeTable, decode_ids, encode
from .config import DecodeConfig, TrainConfig
from .latent_query import (QueryBelief, calibrate, init_inference_net, posterior,
                           query_focused_view, score)
from .params import ModelParams, load_checkpoint, save_checkpoint

N_SPECIAL = 4  # pad, bos, eos, unk appended after the BPE units


class EmptyDocumentError(ValueError):
    pass


@dataclass
class Vocab:
    """Model id space: BPE unit ids followed by the four special symbols."""

    n_units: int

    @property
    def pad(self) -> int:
        return self.n_units

    @property
    def bos(self) -> int:
        return self.n_units + 1

    @property
    def eos(self) -> int:
        return self.n_units + 2

    @property
    def unk(self) -> int:
        return self.n_units + 3

    @property
    def size(self) -> int:
        return self.n_units + N_SPECIAL

    def from_units(self, ids: Sequence[int]) -> list[int]:
        return [i if i < self.n_units else self.unk for i in ids]

    def strip(self, ids: Sequence[int]) -> list[int]:
        out = []
        for i in ids:
            if i == self.eos:
                break
            if i < self.n_units:
                out.append(int(i))
        return out


@dataclass
class DualView:
    Q: Tensor
    D: Tensor
    pad_mask: np.ndarray  # (batch, M), true at padding

    def __post_init__(self):
        if self.Q.shape != self.D.shape:
            raise ShapeError(f"views differ in shape: Q {self.Q.shape}, D {self.D.shape}")


@dataclass
class EncoderOutput:
    views: DualView
    h_q: Tensor
    logits: Tensor      # inference-network scores, (batch, M, 2)
    belief: QueryBelief  # the belief that built Q


def init_params(cfg: TrainConfig, vocab_size: int, seed: int) -> ModelParams:
    """Random initialisation.

    The query branch and the inference network draw from their own
    generator, so they are independent of the shared/document/decoder
    weights.
    """
    dtype = np.dtype(cfg.dtype)
    d, h = cfg.d_model, cfg.d_ff
    rng = np.random.default_rng([seed, 0])
    qrng = np.random.default_rng([seed, 1])
    p = ModelParams()
    p.add("embed", (rng.standard_normal((vocab_size, d)) / np.sqrt(d)).astype(dtype))
    for i in range(cfg.n_shared):
        nn.init_encoder_layer(p, f"enc.shared.{i}", d, h, rng, dtype)
    for i in range(cfg.n_doc):
        nn.init_encoder_layer(p, f"enc.doc.{i}", d, h, rng, dtype)
    for i in range(cfg.n_query):
        nn.init_encoder_layer(p, f"enc.query.{i}", d, h, qrng, dtype)
    init_inference_net(p, d, qrng, "lq", dtype)
    for i in range(cfg.n_decoder):
        name = f"dec.{i}"
        nn.init_attention(p, f"{name}.self", d, rng, dtype)
        nn.init_layer_norm(p, f"{name}.ln_self", d, dtype)
        if _has_cross(cfg, i):
            for view in ("q", "d"):
                nn.init_attention(p, f"{name}.cross_{view}", d, rng, dtype)
                nn.init_layer_norm(p, f"{name}.ln_{view}", d, dtype)
        nn.init_ffn(p, f"{name}.ffn", d, h, rng, dtype)
        nn.init_layer_norm(p, f"{name}.ln_ffn", d, dtype)
    return p


def _has_cross(cfg: TrainConfig, layer: int) -> bool:
    return cfg.cross_every_layer or layer == cfg.n_decoder - 1


def _embed(ids: np.ndarray, params: ModelParams, cfg: TrainConfig) -> Tensor:
    d = cfg.d_model
    x = ad.embedding(ids, params["embed"]) * float(np.sqrt(d))
    pos = nn.sinusoidal_positions(ids.shape[1], d, np.dtype(cfg.dtype))
    return x + Tensor(pos)


def encode_views(params: ModelParams, cfg: TrainConfig, src: np.ndarray, pad_mask: np.ndarray,
                 belief_fn: Callable[[Tensor, Tensor], QueryBelief],
                 rng: np.random.Generator | None = None) -> EncoderOutput:
    """Run the three encoders and build both views.

    ``belief_fn(logits, h_q)`` turns inference-network scores into the belief
    that gates ``Q`` (estimated, dropped out, or calibrated).
    """
    src = np.asarray(src, dtype=np.int64)
    if src.ndim != 2 or src.shape[1] == 0:
        raise EmptyDocumentError("nothing to summarize: empty document")
    x = _embed(src, params, cfg)
    heads, eps = cfg.num_heads, cfg.layer_norm_eps
    for i in range(cfg.n_shared):
        x = nn.encoder_layer(x, params, f"enc.shared.{i}", heads, pad_mask, eps, cfg.dropout, rng)
    d_view = x
    for i in range(cfg.n_doc):
        d_view = nn.encoder_layer(d_view, params, f"enc.doc.{i}", heads, pad_mask, eps, cfg.dropout, rng)
    h_q = x
    for i in range(cfg.n_query):
        h_q = nn.encoder_layer(h_q, params, f"enc.query.{i}", heads, pad_mask, eps, cfg.dropout, rng)
    logits = score(h_q, params, "lq")
    belief = belief_fn(logits, h_q)
    q_view = query_focused_view(belief, h_q)
    return EncoderOutput(DualView(q_view, d_view, pad_mask), h_q, logits, belief)


def decoder_forward(params: ModelParams, cfg: TrainConfig, prefix: np.ndarray, views: DualView,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Logits ``(batch, T, vocab)`` for every prefix position."""
    prefix = np.asarray(prefix, dtype=np.int64)
    if prefix.shape[1] > cfg.max_target_length + 1:
        raise ShapeError(f"prefix of length {prefix.shape[1]} exceeds max_target_length {cfg.max_target_length}")
    heads, eps = cfg.num_heads, cfg.layer_norm_eps
    x = _embed(prefix, params, cfg)
    causal = nn.causal_mask(prefix.shape[1])
    key_mask = views.pad_mask[:, None, None, :]
    order = ("q", "d") if cfg.cross_order == "QD" else ("d", "q")
    if not cfg.dual_view:
        order = ("q",)
    for i in range(cfg.n_decoder):
        name = f"dec.{i}"
        h = nn.multi_head_attention(x, x, x, heads, params, f"{name}.self", causal)
        x = nn.layer_norm(x + ad.dropout(h, cfg.dropout, rng), params, f"{name}.ln_self", eps)
        if _has_cross(cfg, i):
            for view in order:
                mem = views.Q if view == "q" else views.D
                h = nn.multi_head_attention(x, mem, mem, heads, params, f"{name}.cross_{view}", key_mask)
                x = nn.layer_norm(x + ad.dropout(h, cfg.dropout, rng), params, f"{name}.ln_{view}", eps)
        h = nn.feed_forward(x, params, f"{name}.ffn", cfg.dropout, rng)
        x = nn.layer_norm(x + ad.dropout(h, cfg.dropout, rng), params, f"{name}.ln_ffn", eps)
    return x @ ad.transpose(params["embed"], (1, 0))


def lm_loss(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean token NLL per sequence, averaged over the batch; padding excluded."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    if targets.ndim == 1:
        targets = targets[None]
        logits = logits.reshape((1,) + logits.shape)
        mask = None if mask is None else np.asarray(mask)[None]
    m = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    nll = ad.cross_entropy(logits, targets, m)
    lengths = np.maximum(m.sum(axis=1), 1.0)
    weights = (m / lengths[:, None] / targets.shape[0]).astype(logits.dtype)
    return (nll * weights).sum()


# ---------------------------------------------------------------------------
# batching helpers
# ---------------------------------------------------------------------------


def pad_batch(seqs: Sequence[Sequence[int]], pad: int) -> tuple[np.ndarray, np.ndarray]:
    n = max(1, max(len(s) for s in seqs))
    out = np.full((len(seqs), n), pad, dtype=np.int64)
    mask = np.ones((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
        mask[i, :len(s)] = False
    return out, mask


def pad_float(rows: Sequence[Sequence[float]], width: int, dtype) -> np.ndarray:
    out = np.zeros((len(rows), width), dtype=dtype)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


# ---------------------------------------------------------------------------
# bundled model
# ---------------------------------------------------------------------------


class Summarizer:
    """Parameters + config + tokenizer: everything needed to generate."""

    def __init__(self, params: ModelParams, config: TrainConfig, table: MergeTable):
        self.params = params
        self.config = config
        self.table = table
        self.vocab = Vocab(table.vocab_size)

    @classmethod
    def create(cls, config: TrainConfig, table: MergeTable, seed: int | None = None) -> "Summarizer":
        vocab = Vocab(table.vocab_size)
        seed = config.seed if seed is None else seed
        return cls(init_params(config, vocab.size, seed), config, table)

    # -- io ---------------------------------------------------------------
    def save(self, path, extra_meta: dict | None = None, state: dict | None = None) -> None:
        meta = {"config": self.config.to_dict(), "merge_table": self.table.to_text()}
        meta.update(extra_meta or {})
        save_checkpoint(path, self.params, meta, state)

    @classmethod
    def load(cls, path) -> "Summarizer":
        params, meta, _ = load_checkpoint(path)
        return cls(params, TrainConfig.from_dict(meta["config"]), MergeTable.from_text(meta["merge_table"]))

    # -- text helpers -------------------------------------------------------
    def tokenize(self, text: str) -> BpeSequence:
        seq = encode(text, self.table, prefix_space=True)
        return seq.truncate(self.config.max_source_length)

    def source_ids(self, seq: BpeSequence) -> list[int]:
        return self.vocab.from_units(seq.ids)

    def detokenize(self, ids: Sequence[int]) -> str:
        return decode_ids(self.vocab.strip(ids), self.table)

    # -- inference ----------------------------------------------------------
    def infer_beliefs(self, docs: Sequence[BpeSequence],
                      queries: Sequence[BpeSequence | None] | None = None) -> tuple[EncoderOutput, list[QueryBelief]]:
        """Infer-mode beliefs (no Gumbel noise), calibrated where a query is given."""
        if any(len(d) == 0 for d in docs):
            raise EmptyDocumentError("nothing to summarize: empty document")
        queries = list(queries) if queries is not None else [None] * len(docs)
        src, pad = pad_batch([self.source_ids(d) for d in docs], self.vocab.pad)
        per_doc: list[QueryBelief] = []

        def belief_fn(logits, h_q):
            est = posterior(logits, self.config.tau, "infer")
            rows = []
            for b, (doc, query) in enumerate(zip(docs, queries)):
                single = QueryBelief(Tensor(est.probs.data[b, :len(doc)].copy()), "estimated")
                single = calibrate(single, doc, query)
                per_doc.append(single)
                rows.append(single.probs.data)
            return QueryBelief(Tensor(pad_float(rows, src.shape[1], est.probs.dtype)),
                               "calibrated" if any(q is not None and len(q) for q in queries) else "estimated")

        with no_grad():
            enc = encode_views(self.params, self.config, src, pad, belief_fn)
        return enc, per_doc

    def encode_with_beliefs(self, docs: Sequence[BpeSequence], beliefs: Sequence[Sequence[float]]) -> EncoderOutput:
        """Encode with caller-supplied beliefs in place of the inference network's."""
        src, pad = pad_batch([self.source_ids(d) for d in docs], self.vocab.pad)
        for d, b in zip(docs, beliefs):
            if len(b) != len(d):
                raise ShapeError(f"belief covers {len(b)} units but document has {len(d)}")
        probs = pad_float(beliefs, src.shape[1], np.dtype(self.config.dtype))
        with no_grad():
            return encode_views(self.params, self.config, src, pad,
                                lambda logits, h_q: QueryBelief(Tensor(probs), "calibrated"))

    def generate_ids(self, docs: Sequence[BpeSequence], queries=None,
                     decode: DecodeConfig | None = None, beliefs=None) -> list[list[int]]:
        """Generate for a batch; ``beliefs`` (one list per document) bypasses inference."""
        decode = decode or DecodeConfig(max_target_length=self.config.max_target_length)
        if beliefs is not None:
            enc = self.encode_with_beliefs(docs, beliefs)
        else:
            enc, _ = self.infer_beliefs(docs, queries)
        max_len = min(decode.max_target_length, self.config.max_target_length)
        if decode.strategy == "beam":
            return [self._beam(enc.views, b, decode, max_len) for b in range(len(docs))]
        return self._greedy(enc.views, max_len)

    def generate(self, document: str, query: str | None = None, decode: DecodeConfig | None = None) -> str:
        if not document.strip():
            raise EmptyDocumentError("nothing to summarize: empty document")
        doc = self.tokenize(document)
        q = self.tokenize(query) if query else None
        return self.detokenize(self.generate_ids([doc], [q], decode)[0])

    def _greedy(self, views: DualView, max_len: int) -> list[list[int]]:
        v = self.vocab
        n = views.Q.shape[0]
        prefix = np.full((n, 1), v.bos, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        with no_grad():
            for _ in range(max_len):
                logits = decoder_forward(self.params, self.config, prefix, views).data[:, -1]
                logits[:, [v.pad, v.bos, v.unk]] = -np.inf
                nxt = logits.argmax(axis=-1)
                nxt = np.where(done, v.eos, nxt)
                prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
                done |= nxt == v.eos
                if done.all():
                    break
        return [row[1:].tolist() for row in prefix]

    def _beam(self, views: DualView, b: int, decode: DecodeConfig, max_len: int) -> list[int]:
        v = self.vocab
        single = DualView(views.Q.data[b:b + 1], views.D.data[b:b + 1], views.pad_mask[b:b + 1])
        single = DualView(Tensor(single.Q), Tensor(single.D), single.pad_mask)
        beams = [([v.bos], 0.0)]
        finished: list[tuple[list[int], float]] = []

        def norm(seq, lp):
            return lp / (((5.0 + len(seq)) / 6.0) ** decode.length_penalty)

        with no_grad():
            for _ in range(max_len):
                prefix = np.asarray([s for s, _ in beams], dtype=np.int64)
                k = len(beams)
                rep = DualView(Tensor(np.repeat(single.Q.data, k, 0)), Tensor(np.repeat(single.D.data, k, 0)),
                               np.repeat(single.pad_mask, k, 0))
                logits = decoder_forward(self.params, self.config, prefix, rep).data[:, -1].astype(np.float64)
                logits[:, [v.pad, v.bos, v.unk]] = -np.inf
                logp = logits - logits.max(-1, keepdims=True)
                logp = logp - np.log(np.exp(logp).sum(-1, keepdims=True))
                cand = []
                for i, (seq, lp) in enumerate(beams):
                    top = np.argsort(-logp[i])[:decode.beam_width]
                    for t in top:
                        cand.append((seq + [int(t)], lp + float(logp[i, t])))
                cand.sort(key=lambda c: -c[1])
                beams = []
                for seq, lp in cand:
                    if seq[-1] == v.eos:
                        finished.append((seq, norm(seq, lp)))
                    else:
                        beams.append((seq, lp))
                    if len(beams) == decode.beam_width:
                        break
                if not beams or len(finished) >= decode.beam_width:
                    break
        if not finished:
            finished = [(s, norm(s, lp)) for s, lp in beams]
        best = max(finished, key=lambda c: c[1])[0]
        return best[1:]
