"""BERT mutation: mask tree nodes and refill them with a transformer policy.

A tree is tokenized in pre-order; each node is masked independently with
probability ``p_mask`` (at least one mask is forced). Masks are then filled
one at a time in pre-order: the current sequence, with earlier fills already
substituted, goes through the encoder and the MLM head, and a token of the
right kind (terminal or function of the same arity) is sampled. The tree
shape never changes on this path. Rewards are the fitness improvement
``f_pre - f_post`` and the policy is trained by REINFORCE on cached batches.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .core import Individual, sample_index
from .diffcore import Tape, Tensor
from .dnc import IncompleteRecordError, RewardBaseline, UnmatchedChildError
from .gp.evolve import Mutation
from .gp.operators import hoist_mutation, instantiate_constant, point_mutation_gp, subtree_mutation
from .gp.primitives import PrimitiveSet
from .gp.tree import GpTree, TokenTable, detokenize, tokenize
from .neuralops import (
    Model,
    TransformerParams,
    load_checkpoint,
    mlm_logits,
    mlm_logits_at,
    register_model,
    save_checkpoint,
    transformer_encode,
)

NEG = -1e30  # additive logit mask for invalid tokens; finite so log_softmax accepts it


class OversizedTreeError(ValueError):
    """The tree does not fit the model's positional table."""


@dataclass
class BertMutConfig:
    p_mask: float = 0.2
    batch_size: int = 64
    lr: float = 1e-3
    const_range: tuple[float, float] | None = None  # None: use the primitive set's bounds
    p_aux: float = 0.1
    baseline_decay: float = 0.9
    dim: int = 64
    blocks: int = 2
    heads: int = 4
    ffn: int = 128
    max_len: int = 256
    frozen: bool = False
    optimizer: str = "adam"
    point_rate: float = 0.05
    donor_depth: tuple[int, int] = (1, 4)
    seed: int = 0

    def __post_init__(self):
        for name in ("p_mask", "p_aux"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError("baseline decay must lie in [0, 1)")
        if self.const_range is not None:
            self.const_range = tuple(self.const_range)
            if self.const_range[0] > self.const_range[1]:
                raise ValueError(f"constant bounds inverted: {self.const_range}")


@register_model("bert")
class BertMutModel(Model):
    """Transformer policy over the token vocabulary of one primitive set."""

    def __init__(self, functions: Sequence[str], arities: Sequence[int], n_vars: int,
                 has_constants: bool, dim: int = 64, blocks: int = 2, heads: int = 4,
                 ffn: int = 128, max_len: int = 256, seed: int | None = 0):
        self.functions, self.arities = list(functions), [int(a) for a in arities]
        if len(self.functions) != len(self.arities):
            raise ValueError("one arity per function required")
        self.n_vars, self.has_constants = n_vars, bool(has_constants)
        self.dim, self.blocks, self.heads, self.ffn, self.max_len = dim, blocks, heads, ffn, max_len
        self.vocab = 2 + len(self.functions) + n_vars
        rng = np.random.default_rng(seed) if seed is not None else None
        self.net = TransformerParams(self.vocab, dim, blocks, heads, ffn, max_len, rng,
                                     zero_head=True)

    @classmethod
    def for_pset(cls, pset: PrimitiveSet, config: BertMutConfig | None = None) -> "BertMutModel":
        c = config or BertMutConfig()
        hp = cls.pset_hparams(pset)
        return cls(hp["functions"], hp["arities"], hp["n_vars"], hp["has_constants"], c.dim,
                   c.blocks, c.heads, c.ffn, c.max_len, c.seed)

    def hparams(self) -> dict:
        return {"functions": self.functions, "arities": self.arities, "n_vars": self.n_vars,
                "has_constants": self.has_constants, "dim": self.dim, "blocks": self.blocks,
                "heads": self.heads, "ffn": self.ffn, "max_len": self.max_len}

    @classmethod
    def from_hparams(cls, hp: dict) -> "BertMutModel":
        return cls(hp["functions"], hp["arities"], hp["n_vars"], hp["has_constants"], hp["dim"],
                   hp["blocks"], hp["heads"], hp["ffn"], hp["max_len"], seed=None)

    def named_parameters(self) -> dict[str, Tensor]:
        return self.net.named_parameters("net.")

    @staticmethod
    def pset_hparams(pset: PrimitiveSet) -> dict:
        return {"functions": [f.name for f in pset.functions],
                "arities": [f.arity for f in pset.functions], "n_vars": pset.n_vars,
                "has_constants": pset.has_constants}


# -- masking and sampling ----------------------------------------------------------

@dataclass
class MaskPlan:
    original: np.ndarray  # pre-order token ids
    masked: np.ndarray  # same, MASK at ``positions``
    positions: np.ndarray  # ascending, i.e. pre-order
    arities: np.ndarray  # node kind at each masked position (0 = terminal)
    constants: dict[int, float] = field(default_factory=dict)


def mask_tree(tree: GpTree, p_mask: float, rng: np.random.Generator, table: TokenTable,
              max_len: int = 256) -> MaskPlan:
    """Mask each node with probability ``p_mask``; one random node if none was hit."""
    if tree.size > max_len:
        raise OversizedTreeError(f"tree has {tree.size} nodes, model handles at most {max_len}")
    tokens, consts = tokenize(tree, table)
    positions = np.flatnonzero(rng.random(tree.size) < p_mask)
    if positions.size == 0:
        positions = np.array([int(rng.integers(tree.size))])
    masked = tokens.copy()
    masked[positions] = TokenTable.MASK
    arities = np.array(tree.shape(), dtype=np.int64)[positions]
    return MaskPlan(tokens, masked, positions, arities, consts)


def constrained_distribution(logits: np.ndarray, arity: int, table: TokenTable) -> np.ndarray:
    """Softmax restricted to tokens valid for ``arity``; zeros elsewhere."""
    ids = table.valid_ids(arity)
    if not ids:
        raise ValueError(f"no valid tokens for a node of arity {arity}")
    z = np.asarray(logits, dtype=np.float64)[ids]
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    full = np.zeros(table.size)
    full[ids] = p
    return full


def constrained_sample(logits: np.ndarray, arity: int, table: TokenTable,
                       rng: np.random.Generator) -> tuple[int, float]:
    """Sample a token valid for ``arity``; returns it with its log-probability."""
    probs = constrained_distribution(logits, arity, table)
    token = sample_index(probs, rng)
    return token, float(np.log(probs[token]))


@dataclass
class MutationRecord:
    steps: np.ndarray  # (k, n) sequence fed at each replacement step
    positions: np.ndarray  # (k,)
    arities: np.ndarray  # (k,)
    chosen: np.ndarray  # (k,)
    log_prob: float
    f_pre: float
    f_post: float | None = None
    reward: float | None = None
    record_id: int = -1

    @property
    def complete(self) -> bool:
        return self.reward is not None


def replace_masks(model: BertMutModel, plan: MaskPlan, rng: np.random.Generator,
                  table: TokenTable, on_forward: Callable[[np.ndarray], None] | None = None):
    """Fill masks in pre-order.

    Returns ``(tokens, log_prob, chosen, steps)`` where ``steps[s]`` is the
    sequence fed to the encoder at step ``s``. ``on_forward`` sees each input.
    """
    tokens = plan.masked.copy()
    k = len(plan.positions)
    chosen = np.empty(k, dtype=np.int64)
    steps = np.empty((k, len(tokens)), dtype=np.int64)
    total = 0.0
    for s, (pos, arity) in enumerate(zip(plan.positions, plan.arities)):
        steps[s] = tokens
        if on_forward is not None:
            on_forward(tokens.copy())
        logits = mlm_logits_at(tokens, pos, model.net)[0]
        token, logp = constrained_sample(logits, int(arity), table, rng)
        tokens[pos] = token
        chosen[s] = token
        total += logp
    return tokens, total, chosen, steps


def rebuild_tree(tokens: np.ndarray, plan: MaskPlan, table: TokenTable,
                 bounds: tuple[float, float] | None, rng: np.random.Generator) -> GpTree:
    """Detokenize, drawing fresh constants wherever a constant token was sampled."""
    constants = {i: v for i, v in plan.constants.items()}
    for pos in plan.positions:
        pos = int(pos)
        if tokens[pos] == TokenTable.CONST:
            constants[pos] = instantiate_constant(bounds, rng)
        else:
            constants.pop(pos, None)
    return detokenize(tokens, table, constants)


@dataclass
class BertOutcome:
    tree: GpTree
    path: str  # "mlm", "hoist", "subtree" or "fallback"
    record: MutationRecord | None = None


def bert_mutate(model: BertMutModel, individual: Individual, rng: np.random.Generator,
                table: TokenTable, config: BertMutConfig) -> BertOutcome:
    """One mutation of an evaluated individual."""
    if not individual.evaluated:
        raise IncompleteRecordError("BERT mutation needs the parent's fitness")
    tree: GpTree = individual.genome
    if config.p_aux > 0 and rng.random() < config.p_aux:
        if rng.random() < 0.5:
            return BertOutcome(hoist_mutation(tree, rng), "hoist")
        return BertOutcome(subtree_mutation(tree, rng, config.donor_depth, config.max_len), "subtree")
    try:
        plan = mask_tree(tree, config.p_mask, rng, table, config.max_len)
    except OversizedTreeError:
        return BertOutcome(point_mutation_gp(tree, rng, config.point_rate), "fallback")
    tokens, logp, chosen, steps = replace_masks(model, plan, rng, table)
    bounds = config.const_range or tree.pset.const_range
    child = rebuild_tree(tokens, plan, table, bounds, rng)
    record = MutationRecord(steps, plan.positions.copy(), plan.arities.copy(), chosen, logp,
                            float(individual.fitness))
    return BertOutcome(child, "mlm", record)


def deliver_reward(pending: dict[int, MutationRecord], child: Individual) -> MutationRecord:
    """Complete the child's pending record with ``f_pre - f_post`` and return it."""
    if child.origin not in pending:
        raise UnmatchedChildError(f"no pending mutation record for child origin {child.origin!r}")
    if not child.evaluated:
        raise IncompleteRecordError("child has not been evaluated yet")
    record = pending.pop(child.origin)
    record.f_post = float(child.fitness)
    with np.errstate(invalid="ignore"):
        record.reward = record.f_pre - record.f_post
    return record


# attention-score entries (steps * n * n) per replay chunk; small chunks stay cache-resident
REPLAY_BUDGET = 131_072


def step_batches(records: Sequence[MutationRecord], budget: int = REPLAY_BUDGET):
    """Group every replacement step of ``records`` into equal-length batches.

    Yields ``(seqs, positions, arities, chosen, owner)`` where ``owner`` maps
    each step back to its record index. A batch holds at most ``budget``
    attention entries (but always at least one step).
    """
    by_len: dict[int, list[tuple[int, int]]] = {}
    for i, r in enumerate(records):
        for s in range(len(r.chosen)):
            by_len.setdefault(r.steps.shape[1], []).append((i, s))
    for n, items in sorted(by_len.items()):
        per = max(1, budget // (n * n))
        for start in range(0, len(items), per):
            chunk = items[start:start + per]
            owner = np.array([i for i, _ in chunk])
            yield (np.stack([records[i].steps[s] for i, s in chunk]),
                   np.array([records[i].positions[s] for i, s in chunk]),
                   np.array([records[i].arities[s] for i, s in chunk]),
                   np.array([records[i].chosen[s] for i, s in chunk]),
                   owner)


def step_log_probs(model: BertMutModel, seqs: np.ndarray, positions: np.ndarray,
                   arities: np.ndarray, chosen: np.ndarray) -> Tensor:
    """Differentiable constrained log-probability of ``chosen`` at each step, ``(S,)``."""
    rows = transformer_encode(seqs, model.net, query_rows=positions)  # (S, d)
    logits = mlm_logits(rows, model.net)
    masks = {int(a): _arity_mask(model, int(a)) for a in np.unique(arities)}
    masked = logits + np.stack([masks[int(a)] for a in arities])
    onehot = np.zeros((len(seqs), model.vocab))
    onehot[np.arange(len(seqs)), chosen] = 1.0
    return dc.tsum(dc.log_softmax(masked) * onehot, axis=-1)


def replay_log_probs(model: BertMutModel, records: Sequence[MutationRecord]) -> Tensor:
    """Differentiable summed log-probability of each record's choices, ``(N,)``."""
    parts, owners = [], []
    for seqs, pos, ar, chosen, owner in step_batches(records):
        parts.append(step_log_probs(model, seqs, pos, ar, chosen))
        owners.append(owner)
    step_logp = dc.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    owner = np.concatenate(owners)
    scatter = np.zeros((len(owner), len(records)))
    scatter[np.arange(len(owner)), owner] = 1.0
    return dc.matmul(step_logp, scatter)


def _arity_mask(model: BertMutModel, arity: int) -> np.ndarray:
    # valid ids follow the TokenTable layout: MASK, CONST, functions, variables
    out = np.full(model.vocab, NEG)
    if arity == 0:
        if model.has_constants:
            out[TokenTable.CONST] = 0.0
        out[2 + len(model.functions):] = 0.0
    else:
        for k, fa in enumerate(model.arities):
            if fa == arity:
                out[2 + k] = 0.0
    return out


def bert_reinforce_update(model: BertMutModel, records: Sequence[MutationRecord],
                          baseline: RewardBaseline, optimizer, budget: int = REPLAY_BUDGET) -> float:
    """One REINFORCE step: ``loss = -(1/N) sum (r - b) log p``; returns the loss."""
    if not records:
        raise IncompleteRecordError("no records to train on")
    if any(not r.complete for r in records):
        raise IncompleteRecordError("training batch contains records without a reward")
    rewards = np.array([r.reward for r in records], dtype=np.float64)
    adv = baseline.advantages(rewards)
    for p in model.parameters():
        p.grad = None
    # the loss is a sum over steps, so chunks can be backpropagated one at a
    # time; gradients accumulate on the parameters
    total = 0.0
    for seqs, pos, ar, chosen, owner in step_batches(records, budget):
        with Tape() as tape:
            logp = step_log_probs(model, seqs, pos, ar, chosen)
            loss = dc.scale(dc.tsum(logp * adv[owner]), -1.0 / len(records))
        tape.backward(loss)
        total += float(loss.data)
    optimizer.step()
    baseline.update(rewards)
    return total


class BertMutation(Mutation):
    """GP mutation operator backed by a :class:`BertMutModel` trained online."""

    name = "bert"

    def __init__(self, model: BertMutModel, pset: PrimitiveSet, config: BertMutConfig):
        expect = BertMutModel.pset_hparams(pset)
        got = {k: model.hparams()[k] for k in expect}
        if got != expect:
            raise ValueError(f"model vocabulary {got} does not match primitive set {expect}")
        self.model, self.pset, self.config = model, pset, config
        self.table = TokenTable(pset)
        self.baseline = RewardBaseline(config.baseline_decay)
        self.optimizer = dc.make_optimizer(config.optimizer, model.parameters(), config.lr)
        self.pending: dict[int, MutationRecord] = {}
        self.cache: list[MutationRecord] = []
        self.updates = 0
        self.losses: list[float] = []
        self.counts = {"mlm": 0, "hoist": 0, "subtree": 0, "fallback": 0, "dropped": 0}
        self._ids = itertools.count()

    @classmethod
    def for_pset(cls, pset: PrimitiveSet, config: BertMutConfig | None = None) -> "BertMutation":
        config = config or BertMutConfig()
        return cls(BertMutModel.for_pset(pset, config), pset, config)

    @classmethod
    def from_checkpoint(cls, path, pset: PrimitiveSet, config: BertMutConfig) -> "BertMutation":
        model = load_checkpoint(path, expect=BertMutModel.pset_hparams(pset))
        return cls(model, pset, config)

    def save(self, path) -> None:
        save_checkpoint(self.model, path)

    @property
    def optimizer_steps(self) -> int:
        return self.optimizer.steps

    def make_mutant(self, parent: Individual, rng: np.random.Generator):
        out = bert_mutate(self.model, parent, rng, self.table, self.config)
        self.counts[out.path] += 1
        if out.record is None or self.config.frozen:
            return out.tree, None
        out.record.record_id = next(self._ids)
        self.pending[out.record.record_id] = out.record
        return out.tree, out.record.record_id

    def offspring_evaluated(self, child: Individual) -> None:
        if child.origin is None or self.config.frozen:
            return
        record = deliver_reward(self.pending, child)
        if math.isfinite(record.reward):
            self.cache.append(record)
        else:
            self.counts["dropped"] += 1

    def end_generation(self) -> None:
        if self.config.frozen or len(self.cache) < self.config.batch_size:
            return
        self.losses.append(bert_reinforce_update(self.model, self.cache, self.baseline,
                                                 self.optimizer))
        self.updates += 1
        self.cache.clear()

    def stats(self) -> dict[str, float]:
        out = {f"bert_{k}": v for k, v in self.counts.items()}
        out.update(optimizer_steps=self.optimizer_steps, updates=self.updates)
        return out
