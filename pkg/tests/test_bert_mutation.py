import math

import numpy as np
import pytest
from scipy import stats

from deepevo import diffcore as dc
from deepevo.bert_mutation import (
    BertMutConfig,
    BertMutation,
    BertMutModel,
    MaskPlan,
    OversizedTreeError,
    bert_mutate,
    bert_reinforce_update,
    constrained_distribution,
    constrained_sample,
    deliver_reward,
    mask_tree,
    rebuild_tree,
    replace_masks,
    replay_log_probs,
    step_batches,
)
from deepevo.core import Individual
from deepevo.diffcore import no_grad
from deepevo.dnc import IncompleteRecordError, RewardBaseline, UnmatchedChildError
from deepevo.gp import (
    ADD,
    SIN,
    Const,
    GpConfig,
    Mask,
    PointMutation,
    PrimitiveSet,
    RegressionTask,
    TokenTable,
    default_pset,
    eval_tree,
    generate_tree,
    gp_evolve,
    is_valid,
    parse,
    parse_nodes,
    serialize,
    tokenize,
)
from deepevo.neuralops import CheckpointShapeError

FIG4 = "(2.2 - (x/11)) + (7*cos(y))"
FIG4_MASKED = "(# - (x/#)) + (7 # cos(y))"
PSET_XY = PrimitiveSet(default_pset(2).functions, 2, (-1.0, 1.0), ("x", "y"))
SMALL = dict(dim=16, blocks=2, heads=2, ffn=32, max_len=64)


def small_model(pset, seed=0, random_head=False):
    model = BertMutModel.for_pset(pset, BertMutConfig(seed=seed, **SMALL))
    if random_head:
        rng = np.random.default_rng(seed)
        model.net.p("head_W").data[...] = rng.normal(0, 1.0, model.net.p("head_W").shape)
    return model


def test_mask_all_and_forced_minimum():
    t = parse(FIG4, PSET_XY)
    table = TokenTable(PSET_XY)
    rng = np.random.default_rng(0)
    plan = mask_tree(t, 1.0, rng, table)
    assert plan.positions.tolist() == list(range(t.size))
    assert (plan.masked == TokenTable.MASK).all()
    for _ in range(50):
        plan = mask_tree(t, 0.0, rng, table)
        assert len(plan.positions) == 1
        assert plan.masked[plan.positions[0]] == TokenTable.MASK


def test_mask_positions_preorder_and_kinds():
    t = parse(FIG4, PSET_XY)
    table = TokenTable(PSET_XY)
    rng = np.random.default_rng(2)
    for _ in range(200):
        plan = mask_tree(t, 0.4, rng, table)
        assert np.all(np.diff(plan.positions) > 0)
        keep = np.setdiff1d(np.arange(t.size), plan.positions)
        assert np.array_equal(plan.masked[keep], plan.original[keep])
        assert plan.arities.tolist() == [t.shape()[i] for i in plan.positions]


def test_mask_count_distribution():
    n, p, trials = 14, 0.2, 10_000
    pset = default_pset(2)
    t = parse("((x0 + x1) * (x0 - x1)) + ((x1 / x0) - cos(x0))", pset)
    assert t.size == n
    rng = np.random.default_rng(0)
    table = TokenTable(pset)
    counts = np.bincount([len(mask_tree(t, p, rng, table).positions) for _ in range(trials)],
                         minlength=n + 1)
    probs = stats.binom.pmf(np.arange(n + 1), n, p)
    probs[1] += probs[0]
    probs[0] = 0.0
    # merge the sparse tail so every expected cell is at least 5
    cut = 6
    obs = np.append(counts[1:cut], counts[cut:].sum())
    exp = np.append(probs[1:cut], probs[cut:].sum()) * trials
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_oversized_tree_rejected():
    pset = default_pset(1)
    t = generate_tree(pset, 6, "full", np.random.default_rng(0))
    with pytest.raises(OversizedTreeError):
        mask_tree(t, 0.2, np.random.default_rng(0), TokenTable(pset), max_len=t.size - 1)


def test_constrained_sample_single_option():
    pset = PrimitiveSet([ADD, SIN], 1, (-1.0, 1.0))
    table = TokenTable(pset)
    logits = np.random.default_rng(0).normal(size=table.size)
    token, logp = constrained_sample(logits, 2, table, np.random.default_rng(0))
    assert table.node(token) is ADD and logp == 0.0


def test_constrained_sample_uniform_terminals_never_mask():
    table = TokenTable(default_pset(2))
    assert len(table.valid_ids(0)) == 3
    rng = np.random.default_rng(1)
    logits = np.zeros(table.size)
    logits[TokenTable.MASK] = 100.0
    draws = [constrained_sample(logits, 0, table, rng)[0] for _ in range(10_000)]
    assert TokenTable.MASK not in draws
    counts = np.array([draws.count(i) for i in table.valid_ids(0)])
    assert all(abs(c - 10_000 / 3) <= 3 * math.sqrt(10_000 * 2 / 9) for c in counts)


def test_constrained_distribution_errors_and_lengths():
    table = TokenTable(default_pset(1))
    with pytest.raises(ValueError):
        constrained_distribution(np.zeros(table.size), 3, table)
    p = constrained_distribution(np.arange(table.size, dtype=float), 1, table)
    assert abs(p.sum() - 1.0) < 1e-12 and p[TokenTable.MASK] == 0.0


def test_replace_masks_empty_plan():
    pset = default_pset(1)
    table = TokenTable(pset)
    tokens, _ = tokenize(parse("x0 + 1", pset), table)
    plan = MaskPlan(tokens, tokens.copy(), np.array([], dtype=np.int64),
                    np.array([], dtype=np.int64), {2: 1.0})
    out, logp, chosen, steps = replace_masks(small_model(pset), plan, np.random.default_rng(0), table)
    assert np.array_equal(out, tokens) and logp == 0.0 and chosen.size == 0


def test_second_step_sees_first_replacement():
    pset = default_pset(2)
    table = TokenTable(pset)
    t = parse("x0 + x1", pset)
    tokens, consts = tokenize(t, table)
    plan = MaskPlan(tokens, tokens.copy(), np.array([1, 2]), np.array([0, 0]), consts)
    plan.masked[[1, 2]] = TokenTable.MASK
    seen = []
    out, _, chosen, steps = replace_masks(small_model(pset, random_head=True), plan,
                                          np.random.default_rng(3), table, on_forward=seen.append)
    assert len(seen) == 2
    assert seen[0][1] == TokenTable.MASK and seen[0][2] == TokenTable.MASK
    assert seen[1][1] == chosen[0] and seen[1][2] == TokenTable.MASK
    assert np.array_equal(steps, np.stack(seen))


def test_masked_example_refills_to_valid_tree():
    table = TokenTable(PSET_XY)
    masked_nodes = parse_nodes(FIG4_MASKED, PSET_XY, allow_mask=True)
    positions = [i for i, n in enumerate(masked_nodes) if isinstance(n, Mask)]
    assert positions == [2, 5, 6]
    t = parse(FIG4, PSET_XY)
    tokens, consts = tokenize(t, table)
    masked = np.array([table.token(n) for n in masked_nodes])
    plan = MaskPlan(tokens, masked, np.array(positions), np.array(t.shape())[positions], consts)
    rng = np.random.default_rng(0)
    for seed in range(20):
        model = small_model(PSET_XY, seed=seed, random_head=True)
        out, _, _, _ = replace_masks(model, plan, rng, table)
        child = rebuild_tree(out, plan, table, PSET_XY.const_range, rng)
        again = parse(serialize(child), PSET_XY)
        assert again.shape() == t.shape()
        assert np.isfinite(eval_tree(again, np.array([[0.5, -0.5]]))).all()
        # the unmasked constant 7 keeps its value
        assert child.nodes[7] == Const(7.0)


def test_rebuild_draws_fresh_constants_in_bounds():
    pset = default_pset(1, const_range=(2.0, 3.0))
    table = TokenTable(pset)
    t = parse("x0 + 0.5", pset)
    tokens, consts = tokenize(t, table)
    plan = MaskPlan(tokens, tokens.copy(), np.array([1]), np.array([0]), consts)
    new = tokens.copy()
    new[1] = TokenTable.CONST
    child = rebuild_tree(new, plan, table, (2.0, 3.0), np.random.default_rng(0))
    assert 2.0 <= child.nodes[1].value <= 3.0 and child.nodes[2] == Const(0.5)


def _evaluated(tree, f=1.0):
    return Individual(tree, f)


def test_bert_mutate_paths():
    pset = default_pset(2)
    model = small_model(pset)
    table = TokenTable(pset)
    t = parse("(x0 + x1) * sin(x0)", pset)
    rng = np.random.default_rng(0)
    cfg = BertMutConfig(p_aux=0.0, **SMALL)
    for _ in range(50):
        out = bert_mutate(model, _evaluated(t), rng, table, cfg)
        assert out.path == "mlm" and out.tree.shape() == t.shape() and out.record is not None
    cfg = BertMutConfig(p_aux=1.0, **SMALL)
    paths = [bert_mutate(model, _evaluated(t), rng, table, cfg).path for _ in range(400)]
    assert set(paths) == {"hoist", "subtree"}
    assert abs(paths.count("hoist") - 200) <= 3 * math.sqrt(100)
    big = generate_tree(pset, 7, "full", rng)
    cfg = BertMutConfig(p_aux=0.0, **SMALL)
    assert big.size > cfg.max_len
    out = bert_mutate(model, _evaluated(big), rng, table, cfg)
    assert out.path == "fallback" and is_valid(out.tree) and out.record is None
    with pytest.raises(IncompleteRecordError):
        bert_mutate(model, Individual(t), rng, table, cfg)


def test_reward_is_improvement():
    pset = default_pset(1)
    model = small_model(pset)
    rec = bert_mutate(model, _evaluated(parse("x0", pset), 5.0), np.random.default_rng(0),
                      TokenTable(pset), BertMutConfig(p_aux=0.0, **SMALL)).record
    out = deliver_reward({4: rec}, Individual(parse("x0", pset), 3.0, origin=4))
    assert out.reward == 2.0 and out.f_post == 3.0
    with pytest.raises(UnmatchedChildError):
        deliver_reward({}, Individual(parse("x0", pset), 3.0, origin=4))


def _records(model, pset, n, seed=0, reward=None):
    table = TokenTable(pset)
    rng = np.random.default_rng(seed)
    cfg = BertMutConfig(p_aux=0.0, p_mask=0.5, **SMALL)
    out = []
    for k in range(n):
        t = generate_tree(pset, int(rng.integers(1, 4)), "grow", rng)
        rec = bert_mutate(model, _evaluated(t), rng, table, cfg).record
        rec.reward = float(rng.normal()) if reward is None else reward
        out.append(rec)
    return out


def test_replay_matches_sampling_log_probs_and_chunking():
    pset = default_pset(2)
    model = small_model(pset, random_head=True)
    recs = _records(model, pset, 12)
    with no_grad():
        lp = replay_log_probs(model, recs).data
    assert np.allclose(lp, [r.log_prob for r in recs], atol=1e-9)
    steps = sum(len(r.chosen) for r in recs)
    chunks = list(step_batches(recs, budget=1))
    assert sum(len(c[4]) for c in chunks) == steps


def test_chunked_update_equals_single_chunk():
    pset = default_pset(2)
    a, b = small_model(pset, random_head=True), small_model(pset, random_head=True)
    recs = _records(a, pset, 10)
    grads = []
    for model, budget in ((a, 10**9), (b, 1)):
        bert_reinforce_update(model, recs, RewardBaseline(), dc.SGD(model.parameters(), lr=0.0),
                              budget=budget)
        grads.append(np.concatenate([p.grad.ravel() for p in model.parameters()]))
    assert np.allclose(grads[0], grads[1], atol=1e-12)


def test_equal_rewards_no_change_and_incomplete_rejected():
    pset = default_pset(2)
    model = small_model(pset, random_head=True)
    recs = _records(model, pset, 6, reward=1.5)
    before = model.snapshot()
    bert_reinforce_update(model, recs, RewardBaseline(), dc.Adam(model.parameters(), lr=0.1))
    assert all(np.array_equal(before[k], v) for k, v in model.snapshot().items())
    recs[0].reward = None
    with pytest.raises(IncompleteRecordError):
        bert_reinforce_update(model, recs, RewardBaseline(), dc.Adam(model.parameters()))


def _task(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, (40, 2))
    y = X[:, 0] * X[:, 1] + 1.0
    return RegressionTask.from_arrays(X, y, np.arange(30), np.arange(30, 40))


def test_operator_in_gp_loop_trains_and_counts():
    task = _task()
    cfg = BertMutConfig(batch_size=8, **SMALL)
    op = BertMutation.for_pset(task.pset, cfg)
    gcfg = GpConfig(population_size=16, generations=6, init_depth=(2, 4), mutation_prob=0.4,
                    max_size=64)
    hist = gp_evolve(gcfg, task, op)
    ref = gp_evolve(gcfg, task, PointMutation())
    assert hist.stats["evals"] == ref.stats["evals"] == 16 + 6 * 15
    assert hist.stats["optimizer_steps"] == hist.stats["updates"] > 0
    assert not op.pending
    again = gp_evolve(gcfg, task, BertMutation.for_pset(task.pset, cfg))
    assert again.signature() == hist.signature()


def test_non_finite_rewards_dropped():
    task = _task()
    op = BertMutation.for_pset(task.pset, BertMutConfig(p_aux=0.0, **SMALL))
    parent = _evaluated(parse("x0", task.pset), 2.0)
    tree, origin = op.make_mutant(parent, np.random.default_rng(0))
    op.offspring_evaluated(Individual(tree, math.inf, origin=origin))
    assert op.counts["dropped"] == 1 and not op.cache


def test_frozen_checkpoint_transfer(tmp_path):
    task = _task()
    cfg = BertMutConfig(batch_size=4, **SMALL)
    op = BertMutation.for_pset(task.pset, cfg)
    path = tmp_path / "bert.ckpt"
    op.save(path)
    frozen = BertMutation.from_checkpoint(path, task.pset, BertMutConfig(frozen=True, **SMALL))
    before = frozen.model.snapshot()
    gcfg = GpConfig(population_size=16, generations=4, init_depth=(2, 4), crossover_prob=0.4, mutation_prob=0.5,
                    max_size=64)
    gp_evolve(gcfg, task, frozen)
    assert frozen.optimizer_steps == 0
    assert all(np.array_equal(before[k], v) for k, v in frozen.model.snapshot().items())
    with pytest.raises(CheckpointShapeError):
        BertMutation.from_checkpoint(path, default_pset(3), cfg)
    with pytest.raises(ValueError):
        BertMutation(op.model, default_pset(3), cfg)


def test_instantiate_constant_bounds_and_mean():
    from deepevo.gp import instantiate_constant
    rng = np.random.default_rng(0)
    assert instantiate_constant((0.0, 0.0), rng) == 0.0
    draws = np.array([instantiate_constant((-2.0, 4.0), rng) for _ in range(10_000)])
    assert draws.min() >= -2.0 and draws.max() <= 4.0
    sigma = 6.0 / math.sqrt(12) / math.sqrt(10_000)
    assert abs(draws.mean() - 1.0) <= 3 * sigma
    with pytest.raises(ValueError):
        instantiate_constant((1.0, 0.0), rng)


def test_training_leaves_eval_counter_alone():
    from deepevo.core import EvalCounter
    pset = default_pset(1)
    model = small_model(pset, random_head=True)
    counter = EvalCounter()
    recs = _records(model, pset, 4)
    opt = dc.Adam(model.parameters(), lr=1e-4)
    base = RewardBaseline()
    for _ in range(1000):
        bert_reinforce_update(model, recs, base, opt)
    assert counter.count == 0 and opt.steps == 1000


def test_no_alternatives_only_constants_change():
    pset = PrimitiveSet([ADD], 1, (-1.0, 1.0))
    model = small_model(pset, random_head=True)
    table = TokenTable(pset)
    t = parse("x0 + 0.5", pset)
    rng = np.random.default_rng(0)
    cfg = BertMutConfig(p_aux=0.0, p_mask=1.0, **SMALL)
    for _ in range(100):
        out = bert_mutate(model, _evaluated(t), rng, table, cfg).tree
        assert out.nodes[0] is ADD
        assert all(n == t.nodes[i] or isinstance(n, Const) or isinstance(t.nodes[i], Const)
                   for i, n in enumerate(out.nodes))
