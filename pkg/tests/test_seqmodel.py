import numpy as np
import pytest
import torch

from wordimportance.data import BOS_ID, EOS_ID, SentencePair, Vocab, make_pair
from wordimportance.seqmodel import (LinearTestModel, ModelConfig, Seq2SeqBase, ToyModel, TrainConfig, TrainingError,
                                     UnsupportedOperation, attention_scores, decode, decode_embedded, forward,
                                     forward_tokens, grad_input, greedy_batch, heldout_nll, load_checkpoint,
                                     save_checkpoint, sequence_logprob, token_accuracy, train)


def _pairs(vocab, n=40, seed=0):
    rng = np.random.default_rng(seed)
    words = vocab.tokens[4:]
    out = []
    for _ in range(n):
        src = [words[i] for i in rng.integers(0, len(words), size=int(rng.integers(2, 5)))]
        out.append(make_pair(src, src, vocab))
    return out


def test_forward_is_distribution(untrained_model):
    emb = untrained_model.embed([4, 5, 6])
    for prefix in ([BOS_ID], [BOS_ID, 7], [BOS_ID, 7, 8, 9]):
        p = forward(untrained_model, emb, prefix)
        assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, abs=1e-6)


def test_substitution_identity(untrained_model):
    src = [4, 9, 5]
    assert np.array_equal(forward(untrained_model, untrained_model.embedding_table.detach()[src], [BOS_ID, 6]),
                          forward_tokens(untrained_model, src, [BOS_ID, 6]))


def test_zero_embedding_is_valid(untrained_model):
    p = forward(untrained_model, torch.zeros(3, untrained_model.embed_dim, dtype=torch.float64), [BOS_ID])
    assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0, abs=1e-6)


def test_forward_errors(untrained_model):
    with pytest.raises(ValueError):
        forward(untrained_model, torch.zeros(3, untrained_model.embed_dim + 1), [BOS_ID])
    with pytest.raises(ValueError):
        forward(untrained_model, untrained_model.embed([4]), [5])


def _finite_difference(model, emb, target, n, h=1e-4):
    num = np.zeros(emb.shape)
    for i in range(emb.shape[0]):
        for j in range(emb.shape[1]):
            up, down = emb.clone(), emb.clone()
            up[i, j] += h
            down[i, j] -= h
            with torch.no_grad():
                fu = model.output_scores(up.unsqueeze(0), target)[0, n - 1].item()
                fd = model.output_scores(down.unsqueeze(0), target)[0, n - 1].item()
            num[i, j] = (fu - fd) / (2 * h)
    return num


def test_grad_matches_finite_difference(untrained_model):
    emb = untrained_model.embed([4, 8, 6])
    target = [5, 9, EOS_ID]
    for n in (1, 3):
        g = grad_input(untrained_model, emb, target, n)
        num = _finite_difference(untrained_model, emb, target, n)
        assert np.all(np.abs(g - num) <= 1e-3 * np.abs(num) + 1e-6)


def test_grad_of_linear_model_is_readout(linear_model):
    target = [5, 7]
    for emb in (linear_model.embed([4, 6]), torch.randn(2, linear_model.embed_dim, dtype=torch.float64)):
        g = grad_input(linear_model, emb, target, 2)
        assert np.allclose(g, np.tile(linear_model.readout_w[7].detach().numpy(), (2, 1)))


def test_grad_position_range(untrained_model):
    with pytest.raises(IndexError):
        grad_input(untrained_model, untrained_model.embed([4]), [5], 2)
    with pytest.raises(IndexError):
        grad_input(untrained_model, untrained_model.embed([4]), [5], 0)


class ConstantModel(Seq2SeqBase):
    """Ignores its input; always emits EOS."""

    kind = "constant"

    def __init__(self, vocab_size=8, dim=3):
        super().__init__()
        self.table = torch.nn.Parameter(torch.randn(vocab_size, dim, dtype=torch.float64))
        self.V = vocab_size

    @property
    def embedding_table(self):
        return self.table

    def initial_state(self, embedded):
        return (torch.zeros(embedded.shape[0], dtype=torch.float64),)

    def step(self, state, tokens):
        logits = torch.full((tokens.shape[0], self.V), -5.0, dtype=torch.float64)
        logits[:, EOS_ID] = 5.0
        return torch.log_softmax(logits, 1), state, None


def test_constant_model_zero_gradient_and_eos():
    m = ConstantModel()
    assert np.all(grad_input(m, m.embed([4, 5]), [EOS_ID], 1) == 0)
    assert decode(m, [4, 5], beam=1, max_len=10) == [EOS_ID]
    assert decode(m, [4, 5], beam=3, max_len=10) == [EOS_ID]


def test_decode_respects_max_len(untrained_model):
    for beam in (1, 3):
        out = decode(untrained_model, [4, 5, 6], beam=beam, max_len=5)
        assert len(out) <= 5
        assert out[-1] == EOS_ID or len(out) == 5
        assert BOS_ID not in out


def test_greedy_equals_beam_one(untrained_model):
    srcs = [[4, 5, 6], [7], [8, 9, 10, 11]]
    batch = greedy_batch(untrained_model, [untrained_model.embed(s) for s in srcs], 12)
    assert batch == [decode(untrained_model, s, 1, 12) for s in srcs]


def test_beam_never_worse_than_greedy(untrained_model):
    rng = np.random.default_rng(0)
    for _ in range(10):
        src = [int(t) for t in rng.integers(4, 16, size=int(rng.integers(1, 6)))]
        g, b = decode(untrained_model, src, 1, 8), decode(untrained_model, src, 4, 8)
        assert sequence_logprob(untrained_model, src, b) >= sequence_logprob(untrained_model, src, g) - 1e-9


def test_decode_rejects_empty_source(untrained_model):
    with pytest.raises(ValueError):
        decode(untrained_model, [], 1, 5)


def test_decode_empty_embedded_runs(untrained_model):
    out = decode_embedded(untrained_model, torch.zeros(0, untrained_model.embed_dim, dtype=torch.float64), 1, 6)
    assert 1 <= len(out) <= 6


def test_attention_columns_are_distributions(untrained_model):
    a = attention_scores(untrained_model, [4, 5, 6, 7], [8, 9, EOS_ID])
    assert a.shape == (4, 3)
    assert np.all(a >= 0) and np.allclose(a.sum(0), 1.0, atol=1e-6)
    one = attention_scores(untrained_model, [4], [8, 9])
    assert np.allclose(one, 1.0)


def test_attention_unsupported(linear_model):
    with pytest.raises(UnsupportedOperation):
        attention_scores(linear_model, [4, 5], [6])


def test_training_is_deterministic_and_learns(vocab12):
    pairs = _pairs(vocab12)
    cfg = TrainConfig(steps=30, batch_size=8, embed_dim=6, hidden_dim=8, seed=4)
    a, b = train(pairs, cfg, vocab12), train(pairs, cfg, vocab12)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    fresh = ToyModel(ModelConfig(len(vocab12), 6, 8, 4), vocab12)
    held = _pairs(vocab12, 20, seed=1)
    assert heldout_nll(a, held) < heldout_nll(fresh, held)


def test_training_errors(vocab12):
    with pytest.raises(ValueError):
        train([], TrainConfig(steps=1), vocab12)
    with pytest.raises(ValueError):
        train([SentencePair([99], [4])], TrainConfig(steps=1), vocab12)
    with pytest.raises(ValueError):
        train(_pairs(vocab12, 4), TrainConfig(steps=1, optimizer="rmsprop"), vocab12)


def test_non_finite_loss_reports_step(vocab12):
    pairs = _pairs(vocab12, 8)
    with pytest.raises(TrainingError, match=r"at step \d+"):
        train(pairs, TrainConfig(steps=3, lr=float("nan"), optimizer="sgd", embed_dim=4, hidden_dim=4), vocab12)


def test_checkpoint_round_trip(tmp_path, untrained_model, linear_model):
    for model in (untrained_model, linear_model):
        path = tmp_path / f"{model.kind}.npz"
        save_checkpoint(model, path)
        again = load_checkpoint(path)
        assert type(again) is type(model)
        assert again.vocab.tokens == model.vocab.tokens
        emb = model.embed([4, 5])
        assert np.array_equal(forward(model, emb, [BOS_ID, 6]), forward(again, emb, [BOS_ID, 6]))
        first = path.read_bytes()
        save_checkpoint(again, path)
        assert path.read_bytes() == first


@pytest.mark.slow
def test_copy_model_accuracy_and_diagonal_attention(copy_setup):
    model, vocab, _, pairs = copy_setup
    assert token_accuracy(model, pairs) > 0.9
    diagonal = 0
    for p in pairs[:100]:
        a = attention_scores(model, p.source, p.target)
        interior = range(1, p.M - 1)
        hits = sum(int(np.argmax(a[:, n]) == n) for n in interior)
        diagonal += hits == len(interior)
    assert diagonal >= 80
