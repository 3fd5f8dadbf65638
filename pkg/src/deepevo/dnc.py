"""Deep Neural Crossover: pointer-network gene selection trained by REINFORCE.

Parents are embedded gene by gene through a shared table and run through a
shared encoder LSTM. The decoder LSTM starts from the mean of the parents'
final states and, at each locus, points at one parent using that parent's
encoder hidden state at the same locus. The chosen gene's embedding is the
next decoder input.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .core import MAXIMIZE, MINIMIZE, Individual, check_direction, sample_rows
from .diffcore import Tape, Tensor, no_grad
from .ga import Crossover
from .neuralops import (
    EmbeddingTable,
    LstmParams,
    Model,
    PointerParams,
    embed,
    load_checkpoint,
    lstm_encode,
    lstm_step,
    pointer_scores,
    register_model,
    save_checkpoint,
)

logger = logging.getLogger(__name__)


class UnmatchedChildError(KeyError):
    pass


class IncompleteRecordError(ValueError):
    pass


@dataclass
class DncConfig:
    n_parents: int = 2
    embed_dim: int = 64
    hidden_dim: int = 64
    attn_dim: int = 64
    lr: float = 1e-3
    baseline_decay: float = 0.9
    batch_size: int = 64
    direction: str = MINIMIZE
    frozen: bool = False
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        check_direction(self.direction)
        if self.n_parents < 2:
            raise ValueError("DNC needs at least two parents")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError("baseline decay must lie in [0, 1)")


@register_model("dnc")
class DncModel(Model):
    def __init__(self, alphabet: int, genome_length: int, n_parents: int = 2, embed_dim: int = 64,
                 hidden_dim: int = 64, attn_dim: int = 64, seed: int | None = 0):
        self.alphabet, self.genome_length, self.n_parents = alphabet, genome_length, n_parents
        self.embed_dim, self.hidden_dim, self.attn_dim = embed_dim, hidden_dim, attn_dim
        self.seed = seed
        rng = np.random.default_rng(seed) if seed is not None else None
        self.genes = EmbeddingTable(alphabet, embed_dim, rng)
        self.encoder = LstmParams(embed_dim, hidden_dim, rng)
        self.decoder = LstmParams(embed_dim, hidden_dim, rng)
        self.pointer = PointerParams(hidden_dim, hidden_dim, attn_dim, rng, zero_v=True)
        start = rng.normal(0, 1 / np.sqrt(embed_dim), embed_dim) if rng is not None else np.zeros(embed_dim)
        self.start = dc.parameter(start, name="start")

    @classmethod
    def from_config(cls, config: DncConfig, alphabet: int, genome_length: int) -> "DncModel":
        return cls(alphabet, genome_length, config.n_parents, config.embed_dim,
                   config.hidden_dim, config.attn_dim, config.seed)

    def hparams(self) -> dict:
        return {"alphabet": self.alphabet, "genome_length": self.genome_length,
                "n_parents": self.n_parents, "embed_dim": self.embed_dim,
                "hidden_dim": self.hidden_dim, "attn_dim": self.attn_dim}

    @classmethod
    def from_hparams(cls, hp: dict) -> "DncModel":
        return cls(hp["alphabet"], hp["genome_length"], hp["n_parents"], hp["embed_dim"],
                   hp["hidden_dim"], hp["attn_dim"], seed=None)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.genes.named_parameters("genes."))
        out.update(self.encoder.named_parameters("encoder."))
        out.update(self.decoder.named_parameters("decoder."))
        out.update(self.pointer.named_parameters("pointer."))
        out["start"] = self.start
        return out


@dataclass
class Encoded:
    hidden: list[Tensor]  # per locus, shape (..., m, H)
    projected: list[Tensor]  # W_ref applied to each locus' hidden states, (..., m, a)
    joint: tuple[Tensor, Tensor]  # (..., H) each


def _as_parent_array(parents) -> np.ndarray:
    arrs = [np.asarray(p.genome if isinstance(p, Individual) else p, dtype=np.int64) for p in parents]
    if len({a.shape for a in arrs}) != 1:
        raise ValueError(f"parent genomes differ in length: {sorted({len(a) for a in arrs})}")
    return np.stack(arrs)


def encode_parents(model: DncModel, parents) -> Encoded:
    """Encode an ``(..., m, L)`` integer array (or a list of m genomes)."""
    arr = parents if isinstance(parents, np.ndarray) and parents.ndim >= 2 else _as_parent_array(parents)
    if arr.size and (arr.min() < 0 or arr.max() >= model.alphabet):
        raise ValueError(f"gene values must lie in [0, {model.alphabet})")
    x = embed(model.genes, arr)  # (..., m, L, d)
    hs, (h, c) = lstm_encode(x, model.encoder)
    projected = [dc.matmul(t, model.pointer.W_ref) for t in hs]
    joint = (dc.mean(h, axis=-2), dc.mean(c, axis=-2))
    return Encoded(hs, projected, joint)


@dataclass
class CrossoverRecord:
    parents: np.ndarray  # (m, L)
    choices: np.ndarray  # (L,) parent index per locus
    log_prob: float
    child: np.ndarray
    reward: float | None = None
    record_id: int = -1

    @property
    def complete(self) -> bool:
        return self.reward is not None


def decode_child(model: DncModel, encoded: Encoded, parents, rng: np.random.Generator,
                 trace: list | None = None) -> CrossoverRecord:
    """Sample a child left to right; ``trace`` (if given) collects per-locus probabilities."""
    arr = _as_parent_array(parents) if not isinstance(parents, np.ndarray) else parents
    lift = lambda t: dc.reshape(t, (1,) + t.shape)
    batched = Encoded([lift(t) for t in encoded.hidden], [lift(t) for t in encoded.projected],
                      (lift(encoded.joint[0]), lift(encoded.joint[1])))
    steps: list | None = [] if trace is not None else None
    (record,) = decode_children(model, batched, arr[None], rng, steps)
    if trace is not None:
        trace.extend(p[0] for p in steps)
    return record


def decode_children(model: DncModel, encoded: Encoded, parents: np.ndarray,
                    rng: np.random.Generator, trace: list | None = None) -> list[CrossoverRecord]:
    """Sample one child per parent set of an ``(N, m, L)`` batch, all loci in lockstep.

    Uses one uniform draw per child per locus, so N = 1 reproduces the
    single-child stream exactly.
    """
    n, m, length = parents.shape
    h, c = encoded.joint
    x = dc.reshape(model.start, (1, model.embed_dim)) + np.zeros((n, model.embed_dim))
    fused = model.decoder.fused()
    rows = np.arange(n)
    choices = np.empty((n, length), dtype=np.int64)
    children = np.empty((n, length), dtype=np.int64)
    total = np.zeros(n)
    for i in range(length):
        h, c = lstm_step(x, h, c, model.decoder, fused)
        logits = pointer_scores(h, encoded.hidden[i], model.pointer, encoded.projected[i])
        probs = dc.softmax(logits).data  # (N, m)
        if trace is not None:
            trace.append(probs)
        k = sample_rows(probs, rng)
        choices[:, i] = k
        children[:, i] = parents[rows, k, i]
        total += np.log(probs[rows, k])
        x = embed(model.genes, children[:, i])
    return [CrossoverRecord(parents[j].copy(), choices[j], float(total[j]), children[j])
            for j in range(n)]


def replay_log_probs(model: DncModel, parents: np.ndarray, choices: np.ndarray) -> Tensor:
    """Differentiable log-probabilities of stored choices, batched: ``(N, m, L)`` -> ``(N,)``."""
    n, m, length = parents.shape
    enc = encode_parents(model, parents)
    h, c = enc.joint
    x = dc.reshape(model.start, (1, model.embed_dim)) + np.zeros((n, model.embed_dim))
    fused = model.decoder.fused()
    children = parents[np.arange(n)[:, None], choices, np.arange(length)[None, :]]
    onehot = np.zeros((length, n, m))
    onehot[np.arange(length)[:, None], np.arange(n)[None, :], choices.T] = 1.0
    total = None
    for i in range(length):
        h, c = lstm_step(x, h, c, model.decoder, fused)
        logits = pointer_scores(h, enc.hidden[i], model.pointer, enc.projected[i])
        picked = dc.tsum(dc.log_softmax(logits) * onehot[i], axis=-1)
        total = picked if total is None else total + picked
        x = embed(model.genes, children[:, i])
    return total


@dataclass
class RewardBaseline:
    decay: float = 0.9
    value: float = 0.0
    initialized: bool = False

    def advantages(self, rewards: np.ndarray) -> np.ndarray:
        if not self.initialized:
            # seed with the first batch mean so early advantages are centred
            self.value = float(np.mean(rewards))
            self.initialized = True
        return rewards - self.value

    def update(self, rewards: np.ndarray) -> None:
        self.value = self.decay * self.value + (1.0 - self.decay) * float(np.mean(rewards))


def reward_from_fitness(fitness: float, direction: str) -> float:
    return float(fitness) if direction == MAXIMIZE else -float(fitness)


def reinforce_update(model: DncModel, records: Sequence[CrossoverRecord], baseline: RewardBaseline,
                     optimizer) -> float:
    """One policy-gradient step on ``records``; returns the surrogate loss."""
    if not records:
        raise IncompleteRecordError("no records to train on")
    if any(not r.complete for r in records):
        raise IncompleteRecordError("training batch contains records without a reward")
    rewards = np.array([r.reward for r in records])
    adv = baseline.advantages(rewards)
    parents = np.stack([r.parents for r in records])
    choices = np.stack([r.choices for r in records])
    params = model.parameters()
    for p in params:
        p.grad = None
    with Tape() as tape:
        logp = replay_log_probs(model, parents, choices)
        loss = dc.scale(dc.tsum(logp * adv), -1.0 / len(records))
    tape.backward(loss)
    optimizer.step()
    baseline.update(rewards)
    return float(loss.data)


class DncCrossover(Crossover):
    """GA crossover operator wrapping a :class:`DncModel` with online training."""

    name = "dnc"

    def __init__(self, model: DncModel, config: DncConfig):
        self.model = model
        self.config = config
        self.n_parents = config.n_parents
        self.baseline = RewardBaseline(config.baseline_decay)
        self.optimizer = dc.make_optimizer(config.optimizer, model.parameters(), config.lr)
        self.pending: dict[int, CrossoverRecord] = {}
        self.cache: list[CrossoverRecord] = []
        self.updates = 0
        self.losses: list[float] = []
        self._ids = itertools.count()

    @classmethod
    def for_problem(cls, config: DncConfig, alphabet: int, genome_length: int) -> "DncCrossover":
        return cls(DncModel.from_config(config, alphabet, genome_length), config)

    @classmethod
    def from_checkpoint(cls, path, config: DncConfig, alphabet: int) -> "DncCrossover":
        """Load a trained model; any genome length works, alphabet and parent count must match."""
        model = load_checkpoint(path, expect={"alphabet": alphabet, "n_parents": config.n_parents})
        return cls(model, config)

    def save(self, path) -> None:
        save_checkpoint(self.model, path)

    @property
    def optimizer_steps(self) -> int:
        return self.optimizer.steps

    def make_child(self, parents: Sequence[Individual], rng: np.random.Generator):
        record = dnc_crossover(self.model, parents, rng)
        if self.config.frozen:
            return record.child, None
        record.record_id = next(self._ids)
        self.pending[record.record_id] = record
        return record.child, record.record_id

    def offspring_evaluated(self, child: Individual) -> None:
        if child.origin is None or self.config.frozen:
            return
        record = deliver_reward(self.pending, child, self.config.direction)
        self.cache.append(record)

    def end_generation(self) -> None:
        if self.config.frozen or len(self.cache) < self.config.batch_size:
            return
        loss = reinforce_update(self.model, self.cache, self.baseline, self.optimizer)
        self.losses.append(loss)
        self.updates += 1
        self.cache.clear()

    def stats(self) -> dict[str, float]:
        return {"optimizer_steps": self.optimizer_steps, "updates": self.updates}


def dnc_crossover(model: DncModel, parents, rng: np.random.Generator) -> CrossoverRecord:
    arr = _as_parent_array(parents)
    with no_grad():
        enc = encode_parents(model, arr)
        return decode_child(model, enc, arr, rng)


def dnc_crossover_batch(model: DncModel, parents: np.ndarray,
                        rng: np.random.Generator) -> list[CrossoverRecord]:
    """Inference-only sampling of many children at once from ``(N, m, L)`` parents."""
    arr = np.asarray(parents, dtype=np.int64)
    if arr.ndim != 3:
        raise ValueError(f"expected an (N, m, L) parent array, got shape {arr.shape}")
    with no_grad():
        return decode_children(model, encode_parents(model, arr), arr, rng)


def deliver_reward(pending: dict[int, CrossoverRecord], child: Individual,
                   direction: str = MINIMIZE) -> CrossoverRecord:
    """Attach the evaluated child's reward to its pending record and return it."""
    if child.origin not in pending:
        raise UnmatchedChildError(f"no pending crossover record for child origin {child.origin!r}")
    if not child.evaluated:
        raise IncompleteRecordError("child has not been evaluated yet")
    record = pending.pop(child.origin)
    record.reward = reward_from_fitness(child.fitness, direction)
    return record
