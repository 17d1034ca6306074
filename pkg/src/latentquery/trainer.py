"""Joint training of the summarizer and the latent query tagger.

Randomness is keyed, not streamed: the Gumbel noise and the posterior
dropout draw of an example come from ``default_rng([seed, step, uid])`` and
the example order of epoch ``e`` from ``default_rng([seed, e])``.  Splitting a
batch into micro-batches therefore sees the same draws, and resuming only
needs the step counter.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .bpe import MergeTable, encode, train_bpe
from .config import TrainConfig
from .data import SummarizationExample
from .latent_query import (QueryBelief, anneal_delta, gumbel_noise, posterior,
                           posterior_dropout, query_loss_terms)
from .model import Summarizer, encode_views, decoder_forward, lm_loss, pad_batch, pad_float
from .nn import ConfigError
from .optim import Adam
from .weak_labels import lcs_align

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "l_lm", "l_tag", "l_entropy", "delta", "lr", "loss")


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class PreparedExample:
    uid: int
    id: str
    src: list[int]           # model ids of the document units
    labels: np.ndarray       # weak labels, one per document unit
    target: list[int]        # model ids of the summary units
    gold: np.ndarray | None = None  # unit-level ground-truth mask when known


@dataclass
class LossComponents:
    l_lm: float
    l_tag: float
    l_entropy: float
    l_query: float
    total: float

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.l_lm, self.l_tag, self.l_entropy, self.total))


def unit_mask(word_mask: Sequence[int], seq) -> np.ndarray:
    """Lift a word-level mask to units through ``seq.word_index``."""
    return np.asarray([word_mask[w] if 0 <= w < len(word_mask) else 0 for w in seq.word_index],
                      dtype=np.int8)


def prepare(examples: Sequence[SummarizationExample], model: Summarizer) -> list[PreparedExample]:
    """Tokenize, align and convert training examples to model ids."""
    cfg = model.config
    out = []
    for uid, ex in enumerate(examples):
        doc = model.tokenize(ex.document)
        if len(doc) == 0 or not ex.summary:
            log.warning("example %s skipped: empty document or summary", ex.id)
            continue
        summary = encode(ex.summary, model.table, prefix_space=True).truncate(cfg.max_target_length)
        labels = lcs_align(doc, summary).as_array(np.int8)
        gold = None if ex.mask is None else unit_mask(ex.mask, doc)
        out.append(PreparedExample(uid, ex.id, model.source_ids(doc), labels,
                                   model.vocab.from_units(summary.ids), gold))
    return out


def example_rng(seed: int, step: int, uid: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, uid])


def batch_loss(model: Summarizer, batch: Sequence[PreparedExample], step: int,
               delta: float) -> tuple[Tensor, LossComponents]:
    """Forward one micro-batch; returns the differentiable total and its parts.

    The query loss is taken on the estimated belief even when dropout hands
    the decoder the weak labels instead.
    """
    cfg, vocab = model.config, model.vocab
    dtype = np.dtype(cfg.dtype)
    src, pad = pad_batch([ex.src for ex in batch], vocab.pad)
    width = src.shape[1]
    labels = pad_float([ex.labels for ex in batch], width, dtype)
    valid = (~pad).astype(dtype)
    noise = np.zeros(src.shape + (2,), dtype=dtype)
    draws = np.zeros(src.shape if cfg.per_token_dropout else src.shape[:1], dtype=bool)
    for b, ex in enumerate(batch):
        rng = example_rng(cfg.seed, step, ex.uid)
        n = len(ex.src)
        noise[b, :n] = gumbel_noise((n, 2), rng, dtype)
        if cfg.per_token_dropout:
            draws[b, :n] = rng.random(n) < delta
        else:
            draws[b] = rng.random() < delta
    holder: dict[str, QueryBelief] = {}

    def belief_fn(logits, h_q):
        est = posterior(logits, cfg.tau, "train", noise=noise)
        est = QueryBelief(est.probs * Tensor(valid), "estimated")
        holder["estimated"] = est
        return posterior_dropout(est, labels, delta, None, cfg.per_token_dropout, draw=draws)

    enc = encode_views(model.params, cfg, src, pad, belief_fn)
    targets_in, tmask_in = pad_batch([[vocab.bos] + ex.target for ex in batch], vocab.pad)
    targets_out, tmask_out = pad_batch([ex.target + [vocab.eos] for ex in batch], vocab.pad)
    logits = decoder_forward(model.params, cfg, targets_in, enc.views)
    l_lm = lm_loss(logits, targets_out, ~tmask_out)
    l_tag, l_ent = query_loss_terms(holder["estimated"], labels, valid)
    total = l_lm
    if cfg.omega or cfg.beta:
        total = total + l_tag * (-cfg.omega) + l_ent * cfg.beta
    parts = LossComponents(float(l_lm.data), float(l_tag.data), float(l_ent.data),
                           float(-cfg.omega * l_tag.data + cfg.beta * l_ent.data), float(total.data))
    return total, parts


def _locate_bad_example(model: Summarizer, batch, step: int, delta: float) -> str:
    with no_grad():
        for ex in batch:
            _, parts = batch_loss(model, [ex], step, delta)
            for name in ("l_lm", "l_tag", "l_entropy"):
                if not math.isfinite(getattr(parts, name)):
                    return f"{name} is non-finite for example {ex.id!r}"
    return "non-finite loss could not be attributed to a single example"


class Trainer:
    """Owns the parameters and the optimizer for one training run."""

    def __init__(self, model: Summarizer, examples: Sequence[PreparedExample]):
        if not examples:
            raise ConfigError("training corpus is empty")
        cfg = model.config
        if cfg.batch_size % cfg.accumulation_steps:
            raise ConfigError(f"batch_size {cfg.batch_size} not divisible by "
                              f"accumulation_steps {cfg.accumulation_steps}")
        self.model = model
        self.config = cfg
        self.examples = list(examples)
        self.optimizer = Adam(model.params, cfg.lr, (cfg.adam_beta1, cfg.adam_beta2),
                              cfg.adam_eps, cfg.warmup_steps)
        self.step = 0
        self._perm_cache: dict[int, np.ndarray] = {}

    # -- data order ---------------------------------------------------------
    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perm_cache:
            self._perm_cache = {epoch: np.random.default_rng([self.config.seed, epoch]).permutation(len(self.examples))}
        return self._perm_cache[epoch]

    def batch_for(self, step: int) -> list[PreparedExample]:
        n, bs = len(self.examples), self.config.batch_size
        out = []
        for pos in range(step * bs, (step + 1) * bs):
            out.append(self.examples[self._perm(pos // n)[pos % n]])
        return out

    def delta_at(self, step: int) -> float:
        cfg = self.config
        return anneal_delta(min(step, max(cfg.total_steps - 1, 0)), max(cfg.total_steps - 1, 0),
                            cfg.delta_start, cfg.delta_end)

    # -- one optimizer step ---------------------------------------------------
    def train_step(self, batch: Sequence[PreparedExample] | None = None) -> LossComponents:
        cfg = self.config
        step = self.step
        batch = self.batch_for(step) if batch is None else list(batch)
        delta = self.delta_at(step)
        self.model.params.zero_grad()
        accum = cfg.accumulation_steps
        micro = max(1, len(batch) // accum)
        sums = np.zeros(5)
        for k in range(accum):
            chunk = batch[k * micro:(k + 1) * micro]
            if not chunk:
                continue
            total, parts = batch_loss(self.model, chunk, step, delta)
            if not parts.finite():
                raise NonFiniteLossError(f"step {step}: {_locate_bad_example(self.model, chunk, step, delta)}")
            (total * (1.0 / accum)).backward()
            sums += np.array([parts.l_lm, parts.l_tag, parts.l_entropy, parts.l_query, parts.total]) / accum
        lr = self.optimizer.step()
        self.step += 1
        self.last_lr = lr
        return LossComponents(*map(float, sums))

    # -- checkpoints -------------------------------------------------------------
    def save(self, path) -> None:
        self.model.save(path, {"step": self.step}, self.optimizer.state_dict())

    def restore(self, path) -> None:
        from .params import load_checkpoint

        params, meta, state = load_checkpoint(path)
        if set(params) != set(self.model.params):
            raise ConfigError(f"{path}: checkpoint parameters do not match the model")
        for k, t in params.items():
            self.model.params[k].data[...] = t.data
        self.optimizer.load_state_dict(state)
        self.step = int(meta["step"])


@dataclass
class TrainResult:
    model: Summarizer
    history: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    seconds: float = 0.0


def build_tokenizer(examples: Sequence[SummarizationExample], num_merges: int) -> MergeTable:
    corpus = [ex.document for ex in examples] + [ex.summary for ex in examples if ex.summary]
    return train_bpe(corpus, num_merges)


def _write_log(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in LOG_COLUMNS})


def _read_log(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def train_loop(examples: Sequence[SummarizationExample], config: TrainConfig,
               out_dir=None, table: MergeTable | None = None, resume=None,
               stop_after: int | None = None,
               callback: Callable[[int, LossComponents], None] | None = None) -> TrainResult:
    """Train for ``config.total_steps`` optimizer steps.

    With ``out_dir`` the run writes ``metrics.csv``, periodic
    ``step-XXXXXX.npz`` checkpoints and ``final.npz``.  ``resume`` names a
    checkpoint to continue from; ``stop_after`` ends the run early after that
    many steps (the schedule still assumes ``total_steps``).
    """
    if not examples:
        raise ConfigError("training corpus is empty")
    started = time.perf_counter()
    table = table or build_tokenizer(examples, config.bpe_merges)
    model = Summarizer.create(config, table)
    prepared = prepare(examples, model)
    trainer = Trainer(model, prepared)
    out = Path(out_dir) if out_dir is not None else None
    history: list[dict] = []
    if resume is not None:
        trainer.restore(resume)
        if out is not None:
            history = [r for r in _read_log(out / "metrics.csv") if r["step"] < trainer.step]
        log.info("resumed at step %d", trainer.step)
    result = TrainResult(model, history)
    end = config.total_steps if stop_after is None else min(config.total_steps, stop_after)
    while trainer.step < end:
        step = trainer.step
        delta = trainer.delta_at(step)
        parts = trainer.train_step()
        row = dict(step=step, l_lm=parts.l_lm, l_tag=parts.l_tag, l_entropy=parts.l_entropy,
                   delta=delta, lr=trainer.last_lr, loss=parts.total)
        history.append(row)
        if callback is not None:
            callback(step, parts)
        if config.log_every and (step % config.log_every == 0 or step == config.total_steps - 1):
            log.info("step %d loss %.4f lm %.4f tag %.4f ent %.4f delta %.3f lr %.2e", step, parts.total,
                     parts.l_lm, parts.l_tag, parts.l_entropy, delta, trainer.last_lr)
        if out is not None and config.checkpoint_every and trainer.step % config.checkpoint_every == 0:
            path = out / f"step-{trainer.step:06d}.npz"
            trainer.save(path)
            _write_log(out / "metrics.csv", history)
            result.checkpoints.append(path)
    if out is not None:
        trainer.save(out / "final.npz")
        _write_log(out / "metrics.csv", history)
        result.checkpoints.append(out / "final.npz")
    result.seconds = time.perf_counter() - started
    return result
