import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepevo import diffcore as dc
from deepevo.core import MAXIMIZE, MINIMIZE, EvalCounter, Individual
from deepevo.diffcore import Tape, no_grad
from deepevo.dnc import (
    CrossoverRecord,
    DncConfig,
    DncCrossover,
    DncModel,
    IncompleteRecordError,
    RewardBaseline,
    UnmatchedChildError,
    decode_child,
    deliver_reward,
    dnc_crossover,
    dnc_crossover_batch,
    encode_parents,
    reinforce_update,
    replay_log_probs,
)
from deepevo.ga import EquiprobableUniform, GaConfig, evolve
from deepevo.neuralops import CheckpointShapeError


def small(alphabet=4, length=6, m=2, seed=0):
    return DncModel(alphabet, length, m, embed_dim=8, hidden_dim=8, attn_dim=6, seed=seed)


def randomize_v(model, seed=0):
    model.pointer.v.data[...] = np.random.default_rng(seed).normal(size=model.pointer.v.shape)


def test_identical_parents_identical_states():
    model = small()
    g = np.array([0, 1, 2, 3, 0, 1])
    with no_grad():
        enc = encode_parents(model, [g, g])
    for h in enc.hidden:
        assert np.array_equal(h.data[0], h.data[1])


def test_parent_permutation_keeps_joint_mean():
    model = small(m=3)
    rng = np.random.default_rng(0)
    parents = [rng.integers(0, 4, 6) for _ in range(3)]
    with no_grad():
        a = encode_parents(model, parents)
        b = encode_parents(model, [parents[2], parents[0], parents[1]])
    assert np.allclose(a.joint[0].data, b.joint[0].data, atol=1e-14)
    assert np.array_equal(a.hidden[3].data[2], b.hidden[3].data[0])


def test_zero_weight_model_all_states_zero():
    model = DncModel(4, 5, 2, embed_dim=4, hidden_dim=4, attn_dim=4, seed=None)
    with no_grad():
        enc = encode_parents(model, [np.zeros(5, dtype=int), np.ones(5, dtype=int)])
    assert all((h.data == 0).all() for h in enc.hidden)
    assert (enc.joint[0].data == 0).all()


def test_encode_length_mismatch():
    with pytest.raises(ValueError):
        encode_parents(small(), [np.zeros(6, dtype=int), np.zeros(5, dtype=int)])


def test_identical_parents_give_clone_for_any_weights():
    model = small()
    randomize_v(model)
    g = np.array([3, 1, 2, 0, 0, 2])
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert np.array_equal(dnc_crossover(model, [g, g], rng).child, g)


def test_single_locus_log_prob_matches_softmax():
    model = small(alphabet=2, length=1)
    randomize_v(model, 3)
    parents = [np.array([0]), np.array([1])]
    trace = []
    with no_grad():
        enc = encode_parents(model, parents)
        rec = decode_child(model, enc, np.stack(parents), np.random.default_rng(1), trace)
    assert rec.child.tolist() in ([0], [1])
    assert abs(rec.log_prob - np.log(trace[0][rec.choices[0]])) < 1e-12
    assert abs(trace[0].sum() - 1.0) < 1e-9


def test_zero_pointer_choice_uniform():
    model = small(m=3)
    rng = np.random.default_rng(0)
    parents = [np.full(6, k) for k in range(3)]
    n = 2000
    kids = np.stack([dnc_crossover(model, parents, rng).child for _ in range(n)])
    for locus in range(6):
        for c in np.bincount(kids[:, locus], minlength=3):
            assert abs(c - n / 3) <= 3 * np.sqrt(n * (1 / 3) * (2 / 3))


def test_per_step_probabilities_sum_to_one():
    model = small(m=3)
    randomize_v(model)
    rng = np.random.default_rng(2)
    parents = np.stack([rng.integers(0, 4, 6) for _ in range(3)])
    trace = []
    with no_grad():
        decode_child(model, encode_parents(model, parents), parents, rng, trace)
    assert all(abs(p.sum() - 1.0) < 1e-9 for p in trace)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 4), st.integers(1, 7), st.integers(0, 10_000))
def test_closure_any_weights(m, length, seed):
    model = small(alphabet=5, length=length, m=m, seed=seed)
    randomize_v(model, seed)
    rng = np.random.default_rng(seed)
    parents = np.stack([rng.integers(0, 5, length) for _ in range(m)])
    child = dnc_crossover(model, list(parents), rng).child
    assert (parents == child).any(axis=0).all()


def test_replay_matches_sampled_log_prob():
    model = small(m=3)
    randomize_v(model, 1)
    rng = np.random.default_rng(5)
    recs = [dnc_crossover(model, [rng.integers(0, 4, 6) for _ in range(3)], rng) for _ in range(4)]
    with no_grad():
        lp = replay_log_probs(model, np.stack([r.parents for r in recs]),
                              np.stack([r.choices for r in recs])).data
    assert np.allclose(lp, [r.log_prob for r in recs], atol=1e-10)


def test_batch_sampler_matches_single_path_and_replay():
    model = small(m=3)
    randomize_v(model, 4)
    rng = np.random.default_rng(6)
    parents = np.stack([rng.integers(0, 4, 6) for _ in range(3)])
    one = dnc_crossover(model, list(parents), np.random.default_rng(8))
    (batched,) = dnc_crossover_batch(model, parents[None], np.random.default_rng(8))
    assert np.array_equal(one.child, batched.child) and one.log_prob == batched.log_prob
    many = dnc_crossover_batch(model, np.stack([parents, parents[::-1]] * 3), rng)
    with no_grad():
        lp = replay_log_probs(model, np.stack([r.parents for r in many]),
                              np.stack([r.choices for r in many])).data
    assert np.allclose(lp, [r.log_prob for r in many], atol=1e-10)
    assert all((r.parents == r.child).any(axis=0).all() for r in many)
    with pytest.raises(ValueError):
        dnc_crossover_batch(model, parents, rng)


def test_deliver_reward_signs_and_counter():
    counter = EvalCounter()
    rec = CrossoverRecord(np.zeros((2, 1), int), np.zeros(1, int), 0.0, np.zeros(1, int))
    for direction, want in ((MAXIMIZE, 5.0), (MINIMIZE, -5.0)):
        pending = {7: rec}
        out = deliver_reward(pending, Individual(np.zeros(1), 5.0, origin=7), direction)
        assert out.reward == want and not pending
    for i in range(1000):
        deliver_reward({i: rec}, Individual(np.zeros(1), 1.0, origin=i))
    assert counter.count == 0
    with pytest.raises(UnmatchedChildError):
        deliver_reward({}, Individual(np.zeros(1), 1.0, origin=3))


def _records(model, n, rng, reward=1.0):
    out = []
    for _ in range(n):
        r = dnc_crossover(model, [rng.integers(0, 4, 6) for _ in range(2)], rng)
        r.reward = reward
        out.append(r)
    return out


def test_equal_rewards_leave_params_unchanged():
    model = small()
    randomize_v(model)
    before = model.snapshot()
    opt = dc.Adam(model.parameters(), lr=1e-2)
    reinforce_update(model, _records(model, 8, np.random.default_rng(0)), RewardBaseline(), opt)
    after = model.snapshot()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_incomplete_records_rejected():
    model = small()
    recs = _records(model, 3, np.random.default_rng(0))
    recs[1].reward = None
    with pytest.raises(IncompleteRecordError):
        reinforce_update(model, recs, RewardBaseline(), dc.Adam(model.parameters()))


def test_frozen_operator_never_trains():
    cfg = DncConfig(embed_dim=8, hidden_dim=8, attn_dim=6, batch_size=4, frozen=True,
                    direction=MAXIMIZE)
    op = DncCrossover.for_problem(cfg, 2, 8)
    before = op.model.snapshot()
    gcfg = GaConfig(population_size=10, generations=3, direction=MAXIMIZE)
    evolve(gcfg, _OneMax(), op)
    assert op.optimizer_steps == 0
    assert all(np.array_equal(before[k], v) for k, v in op.model.snapshot().items())


def test_reinforce_estimator_direction_matches_analytic_gradient():
    model = small(alphabet=2, length=1)
    randomize_v(model, 2)
    parents = np.array([[0], [1]])
    params = model.parameters()
    # analytic gradient of expected reward E[r] = P(parent 0)
    for p in params:
        p.grad = None
    with Tape() as tape:
        lp0 = replay_log_probs(model, parents[None], np.array([[0]]))
        p0 = dc.exp(lp0)
        loss = dc.tsum(p0)
    tape.backward(loss)
    exact = np.concatenate([p.grad.ravel() for p in params])
    prob0 = float(p0.data[0])
    # Monte-Carlo estimator: mean of r * grad log p(choice)
    rng = np.random.default_rng(0)
    choices = (rng.random(1000) >= prob0).astype(int)
    reward = (choices == 0).astype(float)
    for p in params:
        p.grad = None
    with Tape() as tape:
        lp = replay_log_probs(model, np.repeat(parents[None], 1000, axis=0), choices[:, None])
        est_loss = dc.scale(dc.tsum(lp * reward), 1.0 / 1000)
    tape.backward(est_loss)
    est = np.concatenate([p.grad.ravel() for p in params])
    cos = exact @ est / (np.linalg.norm(exact) * np.linalg.norm(est))
    assert cos > 0.95


class _OneMax:
    genome_length, alphabet, direction = 8, 2, MAXIMIZE

    def fitness(self, genome):
        return float(genome.sum())


def test_eval_count_equals_uniform():
    gcfg = GaConfig(population_size=12, generations=6, direction=MAXIMIZE, seed=2)
    cfg = DncConfig(embed_dim=8, hidden_dim=8, attn_dim=6, batch_size=8, direction=MAXIMIZE)
    a = evolve(gcfg, _OneMax(), DncCrossover.for_problem(cfg, 2, 8))
    b = evolve(gcfg, _OneMax(), EquiprobableUniform())
    assert a.stats["evals"] == b.stats["evals"] == 12 + 6 * 11
    assert a.stats["optimizer_steps"] > 0


def test_learning_run_is_seed_deterministic():
    gcfg = GaConfig(population_size=10, generations=4, direction=MAXIMIZE, seed=2)
    cfg = DncConfig(embed_dim=8, hidden_dim=8, attn_dim=6, batch_size=8, direction=MAXIMIZE)
    a = evolve(gcfg, _OneMax(), DncCrossover.for_problem(cfg, 2, 8))
    b = evolve(gcfg, _OneMax(), DncCrossover.for_problem(cfg, 2, 8))
    assert a.signature() == b.signature()


def test_checkpoint_transfer_same_child_and_mismatch(tmp_path):
    cfg = DncConfig(embed_dim=8, hidden_dim=8, attn_dim=6, frozen=True)
    op = DncCrossover.for_problem(cfg, 4, 6)
    randomize_v(op.model, 9)
    path = tmp_path / "dnc.ckpt"
    op.save(path)
    back = DncCrossover.from_checkpoint(path, cfg, 4)
    parents = [np.array([0, 1, 2, 3, 0, 1]), np.array([3, 2, 1, 0, 3, 2])]
    a = dnc_crossover(op.model, parents, np.random.default_rng(4))
    b = dnc_crossover(back.model, parents, np.random.default_rng(4))
    assert np.array_equal(a.child, b.child) and a.log_prob == b.log_prob
    # a different genome length is fine, a different alphabet is not
    DncCrossover.from_checkpoint(path, cfg, 4).make_child(
        [Individual(np.zeros(9, int)), Individual(np.ones(9, int))], np.random.default_rng(0))
    with pytest.raises(CheckpointShapeError):
        DncCrossover.from_checkpoint(path, cfg, 5)
    with pytest.raises(CheckpointShapeError):
        DncCrossover.from_checkpoint(path, DncConfig(n_parents=3), 4)
