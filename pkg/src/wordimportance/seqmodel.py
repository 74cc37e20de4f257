"""Micro encoder-decoder translation model.

A bidirectional-GRU encoder feeds a GRU decoder through one additive attention
head (RNN-Search style). Everything runs in float64 on CPU so gradients can be
checked against finite differences and runs are bit-reproducible.

Source word embeddings are the differentiation point: every public entry point
has a variant taking an ``(M, embed_dim)`` matrix of embedded rows instead of
token indices, and rows equal to the embedding table reproduce the by-index
computation exactly.
"""

from __future__ import annotations

import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .data import BOS_ID, EOS_ID, PAD_ID, SentencePair, SubwordSplitter, Vocab

log = logging.getLogger(__name__)

DTYPE = torch.float64


class TrainingError(RuntimeError):
    pass


class UnsupportedOperation(RuntimeError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim < 1 or self.hidden_dim < 2 or self.hidden_dim % 2:
            raise ValueError("embed_dim must be positive and hidden_dim even and >= 2")


@dataclass
class TrainConfig:
    """Minibatch training settings; ``optimizer`` is "adam" or "sgd" (plain, no momentum)."""

    steps: int = 1500
    batch_size: int = 32
    lr: float = 0.003
    clip_norm: float = 5.0
    embed_dim: int = 32
    hidden_dim: int = 64
    seed: int = 0
    optimizer: str = "adam"
    log_every: int = 0


class Seq2SeqBase(nn.Module):
    """Interface shared by the trainable model and the analytic test models.

    Subclasses provide ``embedding_table``, ``initial_state`` and ``step``; the
    generic ``output_scores`` runs teacher forcing on top of them.
    """

    kind = "base"
    vocab: Vocab | None = None
    splitter: SubwordSplitter | None = None

    @property
    def embed_dim(self) -> int:
        return self.embedding_table.shape[1]

    @property
    def embedding_table(self) -> torch.Tensor:
        raise NotImplementedError

    def embed(self, source: Sequence[int]) -> torch.Tensor:
        """Detached copy of the source embedding rows for ``source``."""
        idx = torch.as_tensor(list(source), dtype=torch.long)
        return self.embedding_table.detach()[idx].clone()

    def initial_state(self, embedded: torch.Tensor):
        raise NotImplementedError

    def step(self, state, tokens: torch.Tensor):
        """Advance one decoder step. Returns ``(log_probs (B, V), state, attention (B, M) or None)``."""
        raise NotImplementedError

    def teacher_force(self, embedded: torch.Tensor, prefix: torch.Tensor):
        """Log-probabilities ``(B, T, V)`` and attention ``(B, T, M)`` for every prefix position."""
        state = self.initial_state(embedded)
        outs, attns = [], []
        for t in range(prefix.shape[1]):
            logp, state, attn = self.step(state, prefix[:, t])
            outs.append(logp)
            attns.append(attn)
        attn = torch.stack(attns, 1) if attns and attns[0] is not None else None
        return torch.stack(outs, 1), attn

    def output_scores(self, embedded: torch.Tensor, target: Sequence[int]) -> torch.Tensor:
        """F(x)_n for a batch of embedded sources: ``(B, M, d) -> (B, N)``.

        For the translation model this is P(y_n | y_<n, x).
        """
        tgt = torch.as_tensor(list(target), dtype=torch.long)
        prefix = torch.cat([torch.tensor([BOS_ID]), tgt[:-1]]).expand(embedded.shape[0], -1)
        logp, _ = self.teacher_force(embedded, prefix)
        idx = tgt.view(1, -1, 1).expand(embedded.shape[0], -1, 1)
        return logp.gather(2, idx).squeeze(2).exp()

    def meta(self) -> dict:
        raise NotImplementedError


class ToyModel(Seq2SeqBase):
    """GRU encoder-decoder with single-head additive attention."""

    kind = "gru_attention"

    def __init__(self, config: ModelConfig, vocab: Vocab | None = None,
                 splitter: SubwordSplitter | None = None):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.splitter = splitter
        V, d, h = config.vocab_size, config.embed_dim, config.hidden_dim
        g = torch.Generator().manual_seed(config.seed)

        self.src_embed = nn.Parameter(torch.empty(V, d, dtype=DTYPE))
        self.tgt_embed = nn.Parameter(torch.empty(V, d, dtype=DTYPE))
        self.encoder = nn.GRU(d, h // 2, batch_first=True, bidirectional=True, dtype=DTYPE)
        self.init_proj = nn.Linear(h, h, dtype=DTYPE)
        self.cell = nn.GRUCell(d + h, h, dtype=DTYPE)
        self.attn_key = nn.Linear(h, h, bias=False, dtype=DTYPE)
        self.attn_query = nn.Linear(h, h, dtype=DTYPE)
        self.attn_v = nn.Parameter(torch.empty(h, dtype=DTYPE))
        self.readout = nn.Linear(2 * h + d, h, dtype=DTYPE)
        self.out = nn.Linear(h, V, dtype=DTYPE)

        for name, p in self.named_parameters():
            if p.dim() == 1 and name != "attn_v":
                nn.init.zeros_(p)
            else:
                bound = 1.0 / math.sqrt(p.shape[-1])
                with torch.no_grad():
                    p.uniform_(-bound, bound, generator=g)
        with torch.no_grad():
            self.src_embed.normal_(0.0, 1.0 / math.sqrt(d), generator=g)
            self.tgt_embed.normal_(0.0, 1.0 / math.sqrt(d), generator=g)

    @property
    def embedding_table(self) -> torch.Tensor:
        return self.src_embed

    def encode(self, embedded: torch.Tensor, lengths: torch.Tensor | None = None):
        """Annotations ``(B, M, hidden)`` and a validity mask ``(B, M)``."""
        B, M, _ = embedded.shape
        if M == 0:
            return embedded.new_zeros(B, 0, self.config.hidden_dim), torch.zeros(B, 0, dtype=torch.bool)
        if lengths is None:
            ann, _ = self.encoder(embedded)
            return ann, torch.ones(B, M, dtype=torch.bool)
        packed = pack_padded_sequence(embedded, lengths, batch_first=True, enforce_sorted=False)
        ann, _ = self.encoder(packed)
        ann, _ = pad_packed_sequence(ann, batch_first=True, total_length=M)
        mask = torch.arange(M).unsqueeze(0) < lengths.unsqueeze(1)
        return ann, mask

    def initial_state(self, embedded: torch.Tensor, lengths: torch.Tensor | None = None):
        ann, mask = self.encode(embedded, lengths)
        B = embedded.shape[0]
        denom = mask.sum(1, keepdim=True).clamp(min=1).to(DTYPE)
        mean = (ann * mask.unsqueeze(2)).sum(1) / denom
        s = torch.tanh(self.init_proj(mean))
        keys = self.attn_key(ann)
        ctx = embedded.new_zeros(B, self.config.hidden_dim)
        return (s, ctx, ann, keys, mask)

    def step(self, state, tokens: torch.Tensor):
        s, ctx, ann, keys, mask = state
        emb = self.tgt_embed[tokens]
        s = self.cell(torch.cat([emb, ctx], 1), s)
        if ann.shape[1] == 0:
            attn = ann.new_zeros(ann.shape[0], 0)
            ctx = torch.zeros_like(ctx)
        else:
            energy = torch.tanh(keys + self.attn_query(s).unsqueeze(1)) @ self.attn_v
            energy = energy.masked_fill(~mask, float("-inf"))
            attn = torch.softmax(energy, dim=1)
            ctx = (attn.unsqueeze(2) * ann).sum(1)
        hid = torch.tanh(self.readout(torch.cat([s, ctx, emb], 1)))
        logp = torch.log_softmax(self.out(hid), dim=1)
        return logp, (s, ctx, ann, keys, mask), attn

    def meta(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config)}


class LinearTestModel(Seq2SeqBase):
    """Analytic test model with F(x)_n = readout[y_n] . sum_m x_m + bias[y_n].

    F is linear in the embedded source, so integrated gradients are exact at any
    step count. Greedy decoding emits ``M`` argmax tokens then EOS. It has no
    attention.
    """

    kind = "linear"

    def __init__(self, vocab_size: int, embed_dim: int = 8, seed: int = 0, vocab: Vocab | None = None):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.vocab_size = vocab_size
        self.seed = seed
        self.vocab = vocab
        self.src_embed = nn.Parameter(torch.randn(vocab_size, embed_dim, generator=g, dtype=DTYPE))
        self.readout_w = nn.Parameter(torch.randn(vocab_size, embed_dim, generator=g, dtype=DTYPE))
        self.bias = nn.Parameter(torch.randn(vocab_size, generator=g, dtype=DTYPE))

    @property
    def embedding_table(self) -> torch.Tensor:
        return self.src_embed

    def output_scores(self, embedded, target):
        tgt = torch.as_tensor(list(target), dtype=torch.long)
        total = embedded.sum(1)
        return total @ self.readout_w[tgt].T + self.bias[tgt]

    def initial_state(self, embedded):
        return (embedded.sum(1), 0, embedded.shape[1])

    def step(self, state, tokens):
        total, t, M = state
        scores = total @ self.readout_w.T + self.bias
        scores[:, [BOS_ID, PAD_ID]] = float("-inf")
        if t >= M:
            scores = torch.full_like(scores, float("-inf"))
            scores[:, EOS_ID] = 0.0
        else:
            scores[:, EOS_ID] = float("-inf")
        return torch.log_softmax(scores, 1), (total, t + 1, M), None

    def meta(self) -> dict:
        return {"kind": self.kind, "config": {"vocab_size": self.vocab_size,
                                              "embed_dim": self.embed_dim, "seed": self.seed}}


# ---------------------------------------------------------------- operations


def _as_rows(model: Seq2SeqBase, embedded) -> torch.Tensor:
    emb = torch.as_tensor(embedded, dtype=DTYPE)
    if emb.dim() != 2 or emb.shape[1] != model.embed_dim:
        raise ValueError(f"embedded rows must have shape (M, {model.embed_dim}), got {tuple(emb.shape)}")
    return emb


def forward(model: Seq2SeqBase, embedded, target_prefix: Sequence[int]) -> np.ndarray:
    """Next-token distribution P(. | prefix, x) for one embedded source."""
    emb = _as_rows(model, embedded)
    if emb.shape[0] < 1:
        raise ValueError("embedded source must have at least one row")
    if not target_prefix or target_prefix[0] != BOS_ID:
        raise ValueError("target prefix must begin with BOS")
    prefix = torch.as_tensor([list(target_prefix)], dtype=torch.long)
    with torch.no_grad():
        logp, _ = model.teacher_force(emb.unsqueeze(0), prefix)
    return logp[0, -1].exp().numpy()


def forward_tokens(model: Seq2SeqBase, source: Sequence[int], target_prefix: Sequence[int]) -> np.ndarray:
    return forward(model, model.embed(source), target_prefix)


def grad_input(model: Seq2SeqBase, embedded, target: Sequence[int], n: int) -> np.ndarray:
    """Gradient of F(x)_n with respect to the embedded rows; ``n`` is 1-based."""
    if not 1 <= n <= len(target):
        raise IndexError(f"output position {n} outside 1..{len(target)}")
    emb = _as_rows(model, embedded).clone().requires_grad_(True)
    score = model.output_scores(emb.unsqueeze(0), list(target)[:n])[0, n - 1]
    grad = None
    if score.requires_grad:
        (grad,) = torch.autograd.grad(score, emb, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(emb)
    out = grad.numpy()
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite gradient at output position {n}")
    return out


def attention_scores(model: Seq2SeqBase, source: Sequence[int], target: Sequence[int],
                     embedded=None) -> np.ndarray:
    """Encoder-decoder attention, ``M x N``; column n is the distribution used to emit y_n."""
    if not isinstance(model, ToyModel):
        raise UnsupportedOperation(f"{type(model).__name__} has no encoder-decoder attention")
    emb = model.embed(source) if embedded is None else _as_rows(model, embedded)
    tgt = list(target)
    prefix = torch.as_tensor([[BOS_ID] + tgt[:-1]], dtype=torch.long)
    with torch.no_grad():
        _, attn = model.teacher_force(emb.unsqueeze(0), prefix)
    return attn[0].T.numpy().copy()


def sequence_logprob(model: Seq2SeqBase, source: Sequence[int], output: Sequence[int], embedded=None) -> float:
    """log P(output | source) under teacher forcing; ``output`` excludes BOS."""
    emb = model.embed(source) if embedded is None else _as_rows(model, embedded)
    out = list(output)
    prefix = torch.as_tensor([[BOS_ID] + out[:-1]], dtype=torch.long)
    with torch.no_grad():
        logp, _ = model.teacher_force(emb.unsqueeze(0), prefix)
    return float(logp[0, torch.arange(len(out)), torch.as_tensor(out)].sum())


def _select_state(state, idx: torch.Tensor):
    return tuple(s[idx] if isinstance(s, torch.Tensor) else s for s in state)


def decode_embedded(model: Seq2SeqBase, embedded, beam: int = 1, max_len: int = 50) -> list[int]:
    """Beam search over an embedded source. Output excludes BOS and ends with EOS or hits ``max_len``.

    Hypotheses are ranked by total log-probability; beam=1 is the greedy argmax chain.
    """
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be positive")
    emb = torch.as_tensor(embedded, dtype=DTYPE)
    if emb.dim() != 2:
        raise ValueError("embedded source must be a matrix")
    with torch.no_grad():
        state = model.initial_state(emb.unsqueeze(0))
        hyps: list[list[int]] = [[]]
        scores = torch.zeros(1, dtype=DTYPE)
        tokens = torch.tensor([BOS_ID])
        finished: list[tuple[float, list[int]]] = []
        for t in range(max_len):
            logp, state, _ = model.step(state, tokens)
            logp = logp.clone()
            logp[:, [BOS_ID, PAD_ID]] = float("-inf")
            cand = (scores.unsqueeze(1) + logp).view(-1)
            order = torch.sort(cand, descending=True, stable=True).indices[:beam]
            V = logp.shape[1]
            next_hyps, keep, next_scores = [], [], []
            for flat in order.tolist():
                score = float(cand[flat])
                if score == float("-inf"):
                    break
                h, tok = divmod(flat, V)
                seq = hyps[h] + [tok]
                if tok == EOS_ID or t == max_len - 1:
                    finished.append((score, seq))
                else:
                    next_hyps.append(seq)
                    keep.append(h)
                    next_scores.append(score)
            if not next_hyps:
                break
            best_done = max((s for s, _ in finished), default=float("-inf"))
            if len(finished) >= beam or best_done >= max(next_scores):
                break
            hyps = next_hyps
            scores = torch.tensor(next_scores, dtype=DTYPE)
            idx = torch.tensor(keep)
            state = _select_state(state, idx)
            tokens = torch.tensor([h[-1] for h in hyps])
        if not finished:
            finished = [(float(s), h) for s, h in zip(scores.tolist(), hyps)]
    best = max(finished, key=lambda x: x[0])
    return best[1]


def decode(model: Seq2SeqBase, source: Sequence[int], beam: int = 1, max_len: int = 50) -> list[int]:
    if len(source) == 0:
        raise ValueError("source must be non-empty")
    return decode_embedded(model, model.embed(source), beam, max_len)


def greedy_batch(model: Seq2SeqBase, embedded: Sequence[torch.Tensor], max_len: int = 50) -> list[list[int]]:
    """Greedy decoding of many embedded sources at once (same result as beam=1 per sentence)."""
    if not isinstance(model, ToyModel):
        return [decode_embedded(model, e, 1, max_len) for e in embedded]
    outs: list[list[int]] = [None] * len(embedded)  # type: ignore[list-item]
    nonempty = [i for i, e in enumerate(embedded) if e.shape[0] > 0]
    for i, e in enumerate(embedded):
        if e.shape[0] == 0:
            outs[i] = decode_embedded(model, e, 1, max_len)
    if not nonempty:
        return outs
    lengths = torch.tensor([embedded[i].shape[0] for i in nonempty])
    M = int(lengths.max())
    batch = torch.zeros(len(nonempty), M, model.embed_dim, dtype=DTYPE)
    for row, i in enumerate(nonempty):
        batch[row, : lengths[row]] = torch.as_tensor(embedded[i], dtype=DTYPE)
    with torch.no_grad():
        state = model.initial_state(batch, lengths)
        tokens = torch.full((len(nonempty),), BOS_ID)
        seqs = [[] for _ in nonempty]
        alive = torch.ones(len(nonempty), dtype=torch.bool)
        for _ in range(max_len):
            logp, state, _ = model.step(state, tokens)
            logp[:, [BOS_ID, PAD_ID]] = float("-inf")
            tokens = logp.argmax(1)
            for row in torch.nonzero(alive).flatten().tolist():
                tok = int(tokens[row])
                seqs[row].append(tok)
                if tok == EOS_ID:
                    alive[row] = False
            if not alive.any():
                break
    for row, i in enumerate(nonempty):
        outs[i] = seqs[row]
    return outs


# ------------------------------------------------------------------ training


def _batch(pairs: Sequence[SentencePair]):
    B = len(pairs)
    lengths = torch.tensor([p.M for p in pairs])
    M = int(lengths.max())
    src = torch.full((B, M), PAD_ID, dtype=torch.long)
    T = max(p.N for p in pairs) + 1
    prefix = torch.full((B, T), PAD_ID, dtype=torch.long)
    gold = torch.full((B, T), PAD_ID, dtype=torch.long)
    for i, p in enumerate(pairs):
        src[i, : p.M] = torch.tensor(p.source)
        tgt = [t for t in p.target if t != EOS_ID] + [EOS_ID]
        prefix[i, : len(tgt)] = torch.tensor([BOS_ID] + tgt[:-1])
        gold[i, : len(tgt)] = torch.tensor(tgt)
    return src, lengths, prefix, gold


def batch_nll(model: ToyModel, pairs: Sequence[SentencePair]) -> torch.Tensor:
    """Mean per-token negative log-likelihood (EOS included) over a batch."""
    src, lengths, prefix, gold = _batch(pairs)
    emb = model.src_embed[src]
    state = model.initial_state(emb, lengths)
    total = emb.new_zeros(())
    for t in range(prefix.shape[1]):
        logp, state, _ = model.step(state, prefix[:, t])
        valid = gold[:, t] != PAD_ID
        total = total - logp[valid, gold[valid, t]].sum()
    return total / (gold != PAD_ID).sum()


def heldout_nll(model: ToyModel, pairs: Sequence[SentencePair], batch_size: int = 64) -> float:
    with torch.no_grad():
        tot, count = 0.0, 0
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i:i + batch_size]
            n_tok = sum(len([t for t in p.target if t != EOS_ID]) + 1 for p in chunk)
            tot += float(batch_nll(model, chunk)) * n_tok
            count += n_tok
    return tot / count


def token_accuracy(model: Seq2SeqBase, pairs: Sequence[SentencePair], max_len: int | None = None) -> float:
    """Fraction of reference positions (EOS included) matched by the greedy hypothesis."""
    embs = [model.embed(p.source) for p in pairs]
    hyps = greedy_batch(model, embs, max_len or max(p.N for p in pairs) + 5)
    hit = tot = 0
    for p, h in zip(pairs, hyps):
        ref = [t for t in p.target if t != EOS_ID] + [EOS_ID]
        tot += len(ref)
        hit += sum(int(i < len(h) and h[i] == r) for i, r in enumerate(ref))
    return hit / tot


def train(corpus: Sequence[SentencePair], config: TrainConfig, vocab: Vocab,
          splitter: SubwordSplitter | None = None) -> ToyModel:
    """Minibatch training with global-norm gradient clipping; deterministic given ``config.seed``."""
    if not corpus:
        raise ValueError("training corpus is empty")
    V = len(vocab)
    for i, p in enumerate(corpus):
        if max(p.source + p.target) >= V:
            raise ValueError(f"pair {i} has a token index outside the vocabulary of size {V}")
    model = ToyModel(ModelConfig(V, config.embed_dim, config.hidden_dim, config.seed), vocab, splitter)
    if config.optimizer == "sgd":
        opt = torch.optim.SGD(model.parameters(), lr=config.lr)
    elif config.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    else:
        raise ValueError(f"unknown optimizer {config.optimizer!r}")
    g = torch.Generator().manual_seed(config.seed + 1)
    bs = min(config.batch_size, len(corpus))
    for step in range(1, config.steps + 1):
        idx = torch.randint(len(corpus), (bs,), generator=g).tolist()
        loss = batch_nll(model, [corpus[i] for i in idx])
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss.item()} at step {step}")
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
        opt.step()
        if config.log_every and step % config.log_every == 0:
            log.info("step %d loss %.4f", step, loss.item())
    model.eval()
    return model


# ---------------------------------------------------------------- checkpoint


def save_checkpoint(model: Seq2SeqBase, path: str | Path) -> None:
    """Write config, vocab and parameter tensors to one ``.npz`` file."""
    meta = model.meta()
    meta["vocab"] = model.vocab.to_dict() if model.vocab is not None else None
    meta["splitter"] = model.splitter.to_dict() if model.splitter is not None else None
    meta["shapes"] = {k: list(v.shape) for k, v in model.state_dict().items()}
    arrays = {f"param/{k}": v.detach().numpy() for k, v in model.state_dict().items()}
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    # np.savez stamps the current time into the archive; a fixed date keeps checkpoints byte-reproducible
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr).copy(order="C"), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path: str | Path) -> Seq2SeqBase:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        state = {k[len("param/"):]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith("param/")}
    for k, shape in meta["shapes"].items():
        if list(state[k].shape) != shape:
            raise ValueError(f"checkpoint tensor {k} has shape {list(state[k].shape)}, header says {shape}")
    vocab = Vocab.from_dict(meta["vocab"]) if meta.get("vocab") else None
    splitter = SubwordSplitter.from_dict(meta["splitter"]) if meta.get("splitter") else None
    cfg = meta["config"]
    if meta["kind"] == ToyModel.kind:
        model: Seq2SeqBase = ToyModel(ModelConfig(**cfg), vocab, splitter)
    elif meta["kind"] == LinearTestModel.kind:
        model = LinearTestModel(cfg["vocab_size"], cfg["embed_dim"], cfg["seed"], vocab)
        model.splitter = splitter
    else:
        raise ValueError(f"unknown model kind {meta['kind']!r}")
    model.load_state_dict(state)
    model.eval()
    return model
