import numpy as np
import pytest

from agents.agent_model import CellVariant, DecodeMode, TopicDistribution
from agents.agent_worker import WorkerDecoder, compose_weight, worker_mle_terms
from corpus.vocab import BOS, EOS, PAD
from diffcore import ops
from diffcore.errors import ConfigError, DimensionError
from diffcore.gradcheck import finite_difference_check
from diffcore.lstm import lstm_cell
from diffcore.rng import SeededRng
from diffcore.tensor import Parameter

V, CONTEXT, K, N_H, N_X, N_F = 9, 5, 3, 4, 3, 2


def _worker(cell=CellVariant.SCN_LSTM, seed=0, init_scale=0.5):
    return WorkerDecoder(V, CONTEXT, K, N_H, N_X, N_F, 5, SeededRng(seed), cell, init_scale)


def _context(B=1, seed=1):
    return SeededRng(seed).normal(0.0, 1.0, (B, CONTEXT))


def test_compose_weight_is_linear_in_topics():
    rng = SeededRng(3)
    Wa, Wb, Wc = rng.normal(size=(4, 2)), rng.normal(size=(2, 3)), rng.normal(size=(2, 5))
    g1, g2 = np.array([0.2, 0.5, 0.3]), np.array([0.9, 0.05, 0.05])
    a, b = 0.3, 1.7
    combined = compose_weight(Wa, Wb, Wc, a * g1 + b * g2).numpy()
    separate = a * compose_weight(Wa, Wb, Wc, g1).numpy() + b * compose_weight(Wa, Wb, Wc, g2).numpy()
    assert np.max(np.abs(combined - separate)) < 1e-12


def test_compose_weight_shapes():
    with pytest.raises(DimensionError):
        compose_weight(np.ones((4, 2)), np.ones((3, 3)), np.ones((2, 5)), np.ones(3))
    with pytest.raises(DimensionError):
        compose_weight(np.ones((4, 2)), np.ones((2, 3)), np.ones((2, 5)), np.ones(2))


def test_factored_mixture_matches_composed_matrices():
    worker = _worker()
    g = TopicDistribution.from_probs(np.array([0.6, 0.1, 0.3]))
    cond = worker.condition(g)
    x = SeededRng(4).normal(size=(1, N_X))
    factored = worker._mixture(worker.W3a, worker.W3c, cond.u_x, ops.as_tensor(x)).numpy()
    for gate in range(4):
        W = compose_weight(worker.W3a.data[gate], worker.W3b.data[gate], worker.W3c.data[gate], g.numpy()[0]).numpy()
        np.testing.assert_allclose(factored[0, gate], W @ x[0], atol=1e-12)


def _precomposed(worker, k):
    e = np.eye(K)[k]
    W_x = np.concatenate([
        compose_weight(worker.W3a.data[i], worker.W3b.data[i], worker.W3c.data[i], e).numpy() for i in range(4)
    ])
    W_h = np.concatenate([
        compose_weight(worker.W4a.data[i], worker.W4b.data[i], worker.W4c.data[i], e).numpy() for i in range(4)
    ])
    return W_x, W_h


@pytest.mark.parametrize("k", range(K))
def test_one_hot_topic_selects_a_precomposed_lstm(k):
    worker = _worker(seed=k)
    targets = np.array([[4, 7, 5, 8, EOS]])
    init = worker.init_state(_context())
    scored = worker.score(init, worker.condition(TopicDistribution.one_hot([k], K)), targets)

    W_x, W_h = _precomposed(worker, k)
    h, c = init.h, init.c
    prev = BOS
    expected = []
    for token in targets[0]:
        h, c = lstm_cell(worker.embed.data[[prev]], h, c, W_x, W_h, worker.b.data)
        expected.append(ops.log_softmax(worker.logits(h)).numpy()[0, token])
        prev = token
    assert np.max(np.abs(scored.log_probs.numpy()[0] - expected)) < 1e-10
    assert np.max(np.abs(scored.final_hidden.numpy() - h.numpy())) < 1e-10


def test_greedy_decode_bookkeeping():
    worker = _worker(seed=5)
    B, T_max = 3, 7
    g = TopicDistribution.one_hot([0, 1, 2], K)
    result = worker.decode(worker.init_state(_context(B)), worker.condition(g), T_max=T_max)
    assert result.tokens.shape[0] == B and result.tokens.shape[1] <= T_max
    for row, length, logp in zip(result.tokens, result.lengths, result.log_probs.numpy()):
        assert 1 <= length <= T_max
        assert np.all(row[length:] == PAD)
        assert np.all(logp[length:] == 0.0)
        assert np.all(logp[:length] <= 0.0)
        if length < T_max:
            assert row[length - 1] == EOS
        assert EOS not in row[:length - 1]
    for sentence, row, length in zip(result.sentences(), result.tokens, result.lengths):
        assert EOS not in sentence
        assert len(sentence) in (length, length - 1)


def test_rescoring_a_decode_reproduces_its_log_probs():
    worker = _worker(seed=6)
    init = worker.init_state(_context(2))
    cond = worker.condition(TopicDistribution.from_probs(np.array([[0.5, 0.25, 0.25], [0.1, 0.1, 0.8]])))
    sampled = worker.decode(init, cond, DecodeMode.SAMPLE, SeededRng(8), T_max=6)
    rescored = worker.score(init, cond, sampled.tokens, sampled.lengths)
    np.testing.assert_allclose(rescored.log_probs.numpy(), sampled.log_probs.numpy(), atol=1e-12)
    np.testing.assert_allclose(rescored.final_hidden.numpy(), sampled.final_hidden.numpy(), atol=1e-12)


def test_zero_parameters_emit_the_lowest_id_until_the_cap():
    worker = _worker()
    for p in worker.parameters():
        p.data = np.zeros_like(p.data)
    result = worker.decode(worker.init_state(_context()), worker.condition(TopicDistribution.one_hot([0], K)), T_max=4)
    assert result.lengths.tolist() == [4]
    assert result.sentences() == [[PAD] * 4]
    np.testing.assert_allclose(result.log_probs.numpy(), -np.log(V))


def test_score_infers_lengths_from_padding():
    worker = _worker()
    init = worker.init_state(_context(2))
    targets = np.array([[4, 5, EOS, PAD], [6, 7, 8, EOS]])
    scored = worker.score(init, worker.condition(TopicDistribution.one_hot([0, 1], K)), targets)
    assert scored.lengths.tolist() == [3, 4]
    assert scored.log_probs.numpy()[0, 3] == 0.0
    np.testing.assert_allclose(worker_mle_terms(scored).numpy(), -scored.log_probs.numpy().sum(axis=1))


def test_worker_mle_gradient():
    worker = WorkerDecoder(7, 3, 2, 2, 2, 2, 3, SeededRng(9), init_scale=0.5)
    init_context = _context()[:, :3]
    targets = np.array([[4, 5, EOS]])
    g = TopicDistribution.from_probs(np.array([0.3, 0.7]))

    def loss():
        scored = worker.score(worker.init_state(init_context), worker.condition(g), targets)
        return ops.total(worker_mle_terms(scored))

    assert finite_difference_check(loss, worker.parameters()) < 1e-4


@pytest.mark.parametrize("cell", [CellVariant.SCN_LSTM, CellVariant.SCN_VANILLA])
def test_worker_mle_gradient_wrt_topics(cell):
    worker = _worker(cell, seed=6)
    init_context = _context(seed=7)
    targets = np.array([[4, 5, 6, EOS]])
    g = TopicDistribution(Parameter(np.array([[0.2, 0.5, 0.3]]), "g"))

    def loss():
        scored = worker.score(worker.init_state(init_context), worker.condition(g), targets)
        return ops.total(worker_mle_terms(scored))

    assert finite_difference_check(loss, [g.probs]) < 1e-4


def test_vanilla_cell_with_zero_parameters_sits_at_one_half():
    worker = _worker(CellVariant.SCN_VANILLA)
    for p in worker.parameters():
        p.data = np.zeros_like(p.data)
    cond = worker.condition(TopicDistribution.one_hot([2], K))
    state = worker.init_state(_context())
    np.testing.assert_array_equal(state.h.numpy(), 0.0)
    for token in [BOS, 4, 5, 6]:
        state, _ = worker.step(state, ops.gather_rows(worker.embed, np.array([token])), cond)
        np.testing.assert_allclose(state.h.numpy(), 0.5, atol=1e-15)
    scored = worker.score(worker.init_state(_context()), cond, np.array([[4, 5, EOS]]))
    np.testing.assert_allclose(scored.final_hidden.numpy(), 0.5, atol=1e-15)


def test_decode_needs_a_positive_length_cap():
    worker = _worker()
    state = worker.init_state(_context())
    cond = worker.condition(TopicDistribution.one_hot([0], K))
    with pytest.raises(ConfigError, match="T_max"):
        worker.decode(state, cond, T_max=0)


def test_vanilla_cell_has_no_memory_and_bounded_state():
    worker = _worker(CellVariant.SCN_VANILLA)
    state = worker.init_state(_context())
    assert state.c is None
    result = worker.decode(state, worker.condition(TopicDistribution.one_hot([1], K)), T_max=3)
    assert np.all((result.final_hidden.numpy() > 0) & (result.final_hidden.numpy() < 1))


def test_plain_lstm_cell_ignores_topics():
    worker = _worker(CellVariant.LSTM)
    init = worker.init_state(_context())
    targets = np.array([[4, 5, EOS]])
    a = worker.score(init, worker.condition(TopicDistribution.one_hot([0], K)), targets)
    b = worker.score(init, worker.condition(TopicDistribution.one_hot([2], K)), targets)
    np.testing.assert_array_equal(a.log_probs.numpy(), b.log_probs.numpy())


def test_shape_errors():
    worker = _worker()
    with pytest.raises(DimensionError):
        worker.init_state(np.zeros((1, CONTEXT + 1)))
    with pytest.raises(DimensionError):
        worker.condition(TopicDistribution.one_hot([0], K + 1))
    with pytest.raises(ConfigError):
        worker.decode(worker.init_state(_context()), worker.condition(TopicDistribution.one_hot([0], K)), DecodeMode.SAMPLE)
