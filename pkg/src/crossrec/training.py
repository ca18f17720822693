"""End-to-end optimization with exact hand-derived reverse-mode gradients.

The compute graph is fixed: two graph convolutions feed the merge, the gate
network, the relaxed Bernoulli draw, and the noise mixing; the mixed
representation feeds both domains' ranking losses, the information bound,
and the contrastive term.  Every step's gradients are the exact adjoints of
that composition (verified against central finite differences), and
parameters are updated with Adagrad.

Randomness is consumed from counter-based streams derived from the run seed,
so identical configurations reproduce bit-identical trajectories and the
stochastic draws of any step can be replayed for gradient checking.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import compression, transfer
from .compression import GateNetwork
from .data import DatasetBundle
from .encoder import EmbeddingState, backprop_propagate, propagate
from .evaluation import LeaveOneOutSplit, metrics_at, rank_of_held_out
from .graph import (
    SOURCE,
    TARGET,
    InteractionGraph,
    KnowledgeLinkage,
    SparseGraph,
    assemble_adjacency,
    normalize_symmetric,
)

ADAGRAD_EPS = 1e-10

# sub-stream tags hung off the run seed
_STREAM_INIT = 0
_STREAM_EPOCH = 1
_STREAM_DRAWS = 2

CROSS = "cross"
TARGET_ONLY = "target_only"

CHECKPOINT_MAGIC = b"XRCK"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """A training step produced a non-finite loss; the step was aborted."""


@dataclass(frozen=True)
class TrainConfig:
    embedding_dim: int = 32
    batch_size: int = 4096
    max_epochs: int = 100
    learning_rate: float = 1e-3
    layers: int = 2
    gate_hidden: int = 32
    gumbel_temperature: float = 0.5
    contrastive_temperature: float = 0.2
    alphas: tuple[float, float, float] = (0.01, 1.0, 1.0)
    seed: int = 0
    patience: int = 10
    prediction_loss: str = "bpr"
    weight_decay: float = 0.0
    sigma_floor: float = compression.SIGMA_FLOOR
    m_floor: float = compression.M_FLOOR
    norm_floor: float = compression.NORM_FLOOR
    init_std: float = 0.1
    use_kg: bool = True
    model: str = CROSS
    validation_k: int = 100

    def __post_init__(self):
        if self.embedding_dim <= 0 or self.batch_size <= 0:
            raise ValueError("embedding_dim and batch_size must be positive")
        if self.max_epochs < 0 or self.layers < 0 or self.patience < 0:
            raise ValueError("max_epochs, layers and patience must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.gumbel_temperature <= 0 or self.contrastive_temperature <= 0:
            raise ValueError("temperatures must be positive")
        if min(self.alphas) < 0:
            raise ValueError(f"loss weights must be non-negative: {self.alphas}")
        if self.prediction_loss not in ("bpr", "ce"):
            raise ValueError(f"unknown prediction loss {self.prediction_loss!r}")
        if self.model not in (CROSS, TARGET_ONLY):
            raise ValueError(f"unknown model kind {self.model!r}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class DomainGraphs:
    """Normalized training adjacencies (built from training edges only)."""

    source: SparseGraph | None
    target: SparseGraph
    use_kg: bool

    @classmethod
    def from_training_edges(
        cls,
        bundle: DatasetBundle,
        train_source: np.ndarray,
        train_target: np.ndarray,
        use_kg: bool,
        include_source: bool = True,
    ) -> "DomainGraphs":
        kg = bundle.kg if use_kg else KnowledgeLinkage.empty()
        target_graph = InteractionGraph(
            TARGET, bundle.user_count, bundle.target.item_count, train_target
        )
        normalized_target = normalize_symmetric(assemble_adjacency(target_graph, kg))
        normalized_source = None
        if include_source:
            source_graph = InteractionGraph(
                SOURCE, bundle.user_count, bundle.source.item_count, train_source
            )
            normalized_source = normalize_symmetric(assemble_adjacency(source_graph, kg))
        return cls(normalized_source, normalized_target, use_kg)


@dataclass
class ModelParameters:
    """Named parameter arrays plus their Adagrad squared-gradient state."""

    kind: str
    arrays: dict[str, np.ndarray]
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.accumulators:
            self.accumulators = {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            self.kind,
            {k: v.copy() for k, v in self.arrays.items()},
            {k: v.copy() for k, v in self.accumulators.items()},
        )

    def gate(self) -> GateNetwork:
        return GateNetwork(
            self.arrays["gate_w1"],
            self.arrays["gate_b1"],
            self.arrays["gate_w2"],
            self.arrays["gate_b2"],
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())


def init_parameters(
    config: TrainConfig, bundle: DatasetBundle, rng: np.random.Generator | None = None
) -> ModelParameters:
    """Draw fresh parameters; tables are iid normal with a small std."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_INIT]))
    d = config.embedding_dim
    std = config.init_std
    arrays: dict[str, np.ndarray] = {}
    if config.model == TARGET_ONLY:
        arrays["user_t"] = rng.normal(0.0, std, size=(bundle.user_count, d))
        arrays["item_t"] = rng.normal(0.0, std, size=(bundle.target.item_count, d))
        return ModelParameters(TARGET_ONLY, arrays)

    arrays["user_s"] = rng.normal(0.0, std, size=(bundle.user_count, d))
    arrays["user_t"] = rng.normal(0.0, std, size=(bundle.user_count, d))
    if config.use_kg:
        arrays["entity"] = rng.normal(0.0, std, size=(bundle.kg.entity_count, d))
    else:
        arrays["item_s"] = rng.normal(0.0, std, size=(bundle.source.item_count, d))
        arrays["item_t_init"] = rng.normal(0.0, std, size=(bundle.target.item_count, d))
    gate = GateNetwork.initialize(d, config.gate_hidden, rng)
    arrays["gate_w1"] = gate.w1
    arrays["gate_b1"] = gate.b1
    arrays["gate_w2"] = gate.w2
    arrays["gate_b2"] = np.asarray(gate.b2, dtype=np.float64)
    return ModelParameters(CROSS, arrays)


@dataclass(frozen=True)
class Batch:
    users: np.ndarray
    pos_source: np.ndarray | None
    neg_source: np.ndarray | None
    pos_target: np.ndarray
    neg_target: np.ndarray


@dataclass(frozen=True)
class StepDraws:
    """Stochastic inputs of one step, replayable from (seed, epoch, step)."""

    uniform: np.ndarray
    noise: np.ndarray

    @classmethod
    def for_step(
        cls, seed: int, epoch: int, step: int, batch_size: int, dim: int
    ) -> "StepDraws":
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, _STREAM_DRAWS, epoch, step])
        )
        uniform = np.clip(
            rng.random(batch_size), compression.UNIFORM_EPS, 1.0 - compression.UNIFORM_EPS
        )
        return cls(uniform=uniform, noise=rng.normal(size=(batch_size, dim)))


def _initial_embeddings(
    params: ModelParameters, graph: SparseGraph, domain: str, config: TrainConfig
) -> np.ndarray:
    d = config.embedding_dim
    e0 = np.zeros((graph.node_count, d))
    if params.kind == TARGET_ONLY:
        e0[: graph.user_count] = params.arrays["user_t"]
        e0[graph.user_count :] = params.arrays["item_t"]
        return e0
    e0[: graph.user_count] = params.arrays["user_s" if domain == SOURCE else "user_t"]
    if config.use_kg:
        e0[graph.user_count + graph.item_count :] = params.arrays["entity"]
    else:
        key = "item_s" if domain == SOURCE else "item_t_init"
        e0[graph.user_count : graph.user_count + graph.item_count] = params.arrays[key]
    return e0


@dataclass
class _ForwardCache:
    batch: Batch
    drawn: StepDraws
    config: TrainConfig
    params: ModelParameters
    graphs: DomainGraphs
    state_s: EmbeddingState | None
    state_t: EmbeddingState
    eu_s: np.ndarray | None
    eu_t: np.ndarray
    merged: np.ndarray | None
    hidden: np.ndarray | None
    logits: np.ndarray | None
    gate: np.ndarray | None
    eps: np.ndarray | None
    mixed: np.ndarray | None
    mu: np.ndarray | None
    sigma: np.ndarray | None
    fused: np.ndarray
    scores: dict[str, np.ndarray]
    gate_override: float | None


def _pred_loss(config: TrainConfig):
    if config.prediction_loss == "bpr":
        return transfer.bpr_loss, transfer.bpr_loss_backward
    return transfer.cross_entropy_loss, transfer.cross_entropy_loss_backward


def forward_losses(
    params: ModelParameters,
    graphs: DomainGraphs,
    batch: Batch,
    draws: StepDraws,
    config: TrainConfig,
    frozen_stats: tuple[np.ndarray, np.ndarray] | None = None,
    gate_override: float | None = None,
) -> tuple[transfer.LossBundle, _ForwardCache]:
    """One full forward pass over the fixed compute graph.

    ``frozen_stats`` pins the noise-prior mean/std to externally supplied
    values (the gradient checker uses this to make the objective a pure
    function of the parameters).  ``gate_override`` bypasses the gate network
    and fixes every gate to a constant, which turns the graph into the
    linear-plus-ranking-loss path used by diagnostics.
    """
    loss_fn, _ = _pred_loss(config)

    if params.kind == TARGET_ONLY:
        state_t = propagate(graphs.target, _initial_embeddings(params, graphs.target, TARGET, config), config.layers)
        eu_t = state_t.users[batch.users]
        fused = eu_t
        pos_vec = state_t.items[batch.pos_target]
        neg_vec = state_t.items[batch.neg_target]
        scores = {
            "pos_t": np.sum(fused * pos_vec, axis=1),
            "neg_t": np.sum(fused * neg_vec, axis=1),
        }
        pred_t = loss_fn(scores["pos_t"], scores["neg_t"])
        bundle = transfer.LossBundle(pred_t, 0.0, 0.0, 0.0, config.alphas, pred_t)
        cache = _ForwardCache(
            batch, draws, config, params, graphs, None, state_t, None, eu_t,
            None, None, None, None, None, None, None, None, fused, scores, None,
        )
        return bundle, cache

    state_s = propagate(graphs.source, _initial_embeddings(params, graphs.source, SOURCE, config), config.layers)
    state_t = propagate(graphs.target, _initial_embeddings(params, graphs.target, TARGET, config), config.layers)
    eu_s = state_s.users[batch.users]
    eu_t = state_t.users[batch.users]

    merged = compression.merge_representations(eu_s, eu_t)
    if gate_override is None:
        logits, hidden = params.gate().forward(merged)
        gate = compression.gumbel_sigmoid(logits, draws.uniform, config.gumbel_temperature)
    else:
        logits, hidden = None, None
        gate = np.full(merged.shape[0], float(gate_override))
    if frozen_stats is None:
        mu, sigma = compression.batch_statistics(merged, config.sigma_floor)
    else:
        mu, sigma = frozen_stats
    mixed, eps = compression.mix_noise(merged, gate, mu, sigma, draws.noise)
    fused = mixed + eu_t

    scores = {
        "pos_s": np.sum(fused * state_s.items[batch.pos_source], axis=1),
        "neg_s": np.sum(fused * state_s.items[batch.neg_source], axis=1),
        "pos_t": np.sum(fused * state_t.items[batch.pos_target], axis=1),
        "neg_t": np.sum(fused * state_t.items[batch.neg_target], axis=1),
    }
    pred_t = loss_fn(scores["pos_t"], scores["neg_t"])
    pred_s = loss_fn(scores["pos_s"], scores["neg_s"])
    kl = compression.kl_upper_bound(gate, merged, mu, sigma, config.m_floor)
    contrastive = compression.info_nce(
        eu_t, mixed, config.contrastive_temperature, config.norm_floor
    )
    bundle = transfer.total_loss(pred_t, pred_s, kl, contrastive, config.alphas)
    cache = _ForwardCache(
        batch, draws, config, params, graphs, state_s, state_t, eu_s, eu_t,
        merged, hidden, logits, gate, eps, mixed, mu, sigma, fused, scores,
        gate_override,
    )
    return bundle, cache


def backward_losses(cache: _ForwardCache) -> dict[str, np.ndarray]:
    """Exact adjoint of :func:`forward_losses` w.r.t. every parameter array."""
    config, batch = cache.config, cache.batch
    _, loss_backward = _pred_loss(config)
    params = cache.params

    if params.kind == TARGET_ONLY:
        g_pos, g_neg = loss_backward(cache.scores["pos_t"], cache.scores["neg_t"])
        state_t = cache.state_t
        pos_vec = state_t.items[batch.pos_target]
        neg_vec = state_t.items[batch.neg_target]
        g_fused = g_pos[:, None] * pos_vec + g_neg[:, None] * neg_vec
        g_z = np.zeros((state_t.user_count + state_t.item_count, config.embedding_dim))
        np.add.at(g_z, batch.users, g_fused)
        offset = state_t.user_count
        np.add.at(g_z, offset + batch.pos_target, g_pos[:, None] * cache.fused)
        np.add.at(g_z, offset + batch.neg_target, g_neg[:, None] * cache.fused)
        g_e0 = backprop_propagate(g_z, state_t, cache.graphs.target)
        return {
            "user_t": g_e0[: state_t.user_count],
            "item_t": g_e0[state_t.user_count :],
        }

    a1, a2, a3 = config.alphas
    state_s, state_t = cache.state_s, cache.state_t
    n_u = state_t.user_count
    d = config.embedding_dim

    g_fused = np.zeros_like(cache.fused)
    g_z_s = np.zeros((state_s.user_count + state_s.item_count, d))
    g_z_t = np.zeros((n_u + state_t.item_count, d))

    for domain, weight, g_z_dom, state, pos_idx, neg_idx in (
        ("t", 1.0, g_z_t, state_t, batch.pos_target, batch.neg_target),
        ("s", a1, g_z_s, state_s, batch.pos_source, batch.neg_source),
    ):
        if weight == 0.0:
            continue
        g_pos, g_neg = loss_backward(cache.scores[f"pos_{domain}"], cache.scores[f"neg_{domain}"])
        g_pos = g_pos * weight
        g_neg = g_neg * weight
        pos_vec = state.items[pos_idx]
        neg_vec = state.items[neg_idx]
        g_fused += g_pos[:, None] * pos_vec + g_neg[:, None] * neg_vec
        offset = state.user_count
        np.add.at(g_z_dom, offset + pos_idx, g_pos[:, None] * cache.fused)
        np.add.at(g_z_dom, offset + neg_idx, g_neg[:, None] * cache.fused)

    g_mixed = g_fused.copy()
    g_eu_t = g_fused.copy()

    if a3 != 0.0:
        g_t_cl, g_mixed_cl = compression.info_nce_backward(
            cache.eu_t, cache.mixed, config.contrastive_temperature, config.norm_floor
        )
        g_mixed += a3 * g_mixed_cl
        g_eu_t += a3 * g_t_cl

    g_gate = np.sum(g_mixed * (cache.merged - cache.eps), axis=1)
    g_merged = g_mixed * cache.gate[:, None]

    if a2 != 0.0:
        g_gate_kl, g_merged_kl = compression.kl_upper_bound_backward(
            cache.gate, cache.merged, cache.mu, cache.sigma, config.m_floor
        )
        g_gate += a2 * g_gate_kl
        g_merged += a2 * g_merged_kl

    grads: dict[str, np.ndarray] = {}
    if cache.gate_override is None:
        g_logits = g_gate * cache.gate * (1.0 - cache.gate) / config.gumbel_temperature
        gate_grads, g_merged_net = params.gate().backward(cache.merged, cache.hidden, g_logits)
        g_merged += g_merged_net
        for key, value in gate_grads.items():
            grads[f"gate_{key}"] = value
    else:
        for key in ("gate_w1", "gate_b1", "gate_w2", "gate_b2"):
            grads[key] = np.zeros_like(params.arrays[key])

    g_eu_s = g_merged
    g_eu_t = g_eu_t + g_merged

    np.add.at(g_z_s, batch.users, g_eu_s)
    np.add.at(g_z_t, batch.users, g_eu_t)

    g_e0_s = backprop_propagate(g_z_s, state_s, cache.graphs.source)
    g_e0_t = backprop_propagate(g_z_t, state_t, cache.graphs.target)

    grads["user_s"] = g_e0_s[: state_s.user_count]
    grads["user_t"] = g_e0_t[:n_u]
    if config.use_kg:
        grads["entity"] = (
            g_e0_s[state_s.user_count + state_s.item_count :]
            + g_e0_t[n_u + state_t.item_count :]
        )
    else:
        grads["item_s"] = g_e0_s[state_s.user_count : state_s.user_count + state_s.item_count]
        grads["item_t_init"] = g_e0_t[n_u : n_u + state_t.item_count]
    return grads


def adagrad_update(
    params: ModelParameters, grads: dict[str, np.ndarray], learning_rate: float
) -> None:
    """In-place Adagrad: accumulate the squared gradient, then step.

    Because accumulation happens first, the very first step on a coordinate
    moves by at most the learning rate, and so does every later one.
    """
    for name, grad in grads.items():
        acc = params.accumulators[name]
        acc += grad * grad
        params.arrays[name] -= learning_rate * grad / (np.sqrt(acc) + ADAGRAD_EPS)


def train_step(
    params: ModelParameters,
    graphs: DomainGraphs,
    batch: Batch,
    draws: StepDraws,
    config: TrainConfig,
) -> transfer.LossBundle:
    """Forward, exact backward, and an Adagrad update; aborts on non-finite loss."""
    bundle, cache = forward_losses(params, graphs, batch, draws, config)
    if not np.isfinite(bundle.total):
        raise NonFiniteLossError(
            f"aborted step: non-finite loss {bundle.as_dict()} "
            f"(batch of {batch.users.size} users)"
        )
    grads = backward_losses(cache)
    if config.weight_decay > 0.0:
        for name in grads:
            grads[name] = grads[name] + config.weight_decay * params.arrays[name]
    adagrad_update(params, grads, config.learning_rate)
    if not params.all_finite():
        raise NonFiniteLossError("aborted step: parameters became non-finite")
    return bundle


# ---------------------------------------------------------------------------
# Scoring for evaluation (deterministic serving path)
# ---------------------------------------------------------------------------


def build_scorer(params: ModelParameters, graphs: DomainGraphs, config: TrainConfig):
    """Return score_fn(user) -> scores over all target items.

    Serving is deterministic: the gate is its expectation sigmoid(logit) and
    the noise collapses to the population mean of the merged representations.
    """
    state_t = propagate(graphs.target, _initial_embeddings(params, graphs.target, TARGET, config), config.layers)
    item_matrix = state_t.items
    if params.kind == TARGET_ONLY:
        fused_all = state_t.users
    else:
        state_s = propagate(graphs.source, _initial_embeddings(params, graphs.source, SOURCE, config), config.layers)
        merged = compression.merge_representations(state_s.users, state_t.users)
        logits, _ = params.gate().forward(merged)
        mu, _ = compression.batch_statistics(merged, config.sigma_floor)
        mixed = compression.compress_deterministic(merged, logits, mu)
        fused_all = mixed + state_t.users

    def score_fn(user: int) -> np.ndarray:
        return item_matrix @ fused_all[user]

    return score_fn


# ---------------------------------------------------------------------------
# The training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    losses: transfer.LossBundle
    validation_metric: float


@dataclass
class FitResult:
    params: ModelParameters
    best_epoch: int
    best_validation: float
    log: list[EpochRecord]
    graphs: DomainGraphs


def _sample_batches(
    rng: np.random.Generator,
    users: np.ndarray,
    batch_size: int,
    items_by_user: dict[str, list[np.ndarray]],
    item_counts: dict[str, int],
    domains: tuple[str, ...],
) -> list[Batch]:
    """Shuffle users and draw one positive and one uniform negative per domain."""
    order = rng.permutation(users)
    batches = []
    sets = {
        domain: [set(arr.tolist()) for arr in items_by_user[domain]] for domain in domains
    }
    for start in range(0, order.size, batch_size):
        chunk = order[start : start + batch_size]
        sampled: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for domain in domains:
            pos = np.empty(chunk.size, dtype=np.int64)
            neg = np.empty(chunk.size, dtype=np.int64)
            n_items = item_counts[domain]
            for row, user in enumerate(chunk):
                owned = items_by_user[domain][user]
                pos[row] = owned[rng.integers(owned.size)]
                candidate = int(rng.integers(n_items))
                while candidate in sets[domain][user]:
                    candidate = int(rng.integers(n_items))
                neg[row] = candidate
            sampled[domain] = (pos, neg)
        if SOURCE in domains:
            batches.append(
                Batch(chunk, *sampled[SOURCE], *sampled[TARGET])
            )
        else:
            batches.append(Batch(chunk, None, None, *sampled[TARGET]))
    return batches


def _validation_metric(
    params: ModelParameters,
    graphs: DomainGraphs,
    config: TrainConfig,
    split: LeaveOneOutSplit,
    excluded_by_user: list[np.ndarray],
) -> float:
    score_fn = build_scorer(params, graphs, config)
    k = config.validation_k
    total = 0.0
    for user, held in zip(split.users, split.validation_items):
        scores = score_fn(int(user))
        rank = rank_of_held_out(scores, int(held), excluded_by_user[int(user)])
        total += metrics_at(rank, (k,))[("ndcg", k)]
    return 100.0 * total / split.users.size


def fit(config: TrainConfig, bundle: DatasetBundle, split: LeaveOneOutSplit) -> FitResult:
    """Train with early stopping on validation ranking quality.

    Returns the parameters of the best validation epoch together with the
    per-epoch loss and metric log.  ``max_epochs == 0`` returns the freshly
    initialized parameters untouched.
    """
    if split.train_target.size == 0:
        raise ValueError("training set is empty")
    if config.model == CROSS and split.train_source.size == 0:
        raise ValueError("training set is empty")

    graphs = DomainGraphs.from_training_edges(
        bundle,
        split.train_source,
        split.train_target,
        use_kg=config.use_kg and config.model == CROSS,
        include_source=config.model == CROSS,
    )
    params = init_parameters(config, bundle)
    excluded_by_user = split.train_target_items_by_user(bundle.user_count)

    domains = (SOURCE, TARGET) if config.model == CROSS else (TARGET,)
    items_by_user = {
        TARGET: split.train_target_items_by_user(bundle.user_count),
    }
    if config.model == CROSS:
        items_by_user[SOURCE] = split.train_source_items_by_user(bundle.user_count)
    item_counts = {SOURCE: bundle.source.item_count, TARGET: bundle.target.item_count}

    best = params.copy()
    best_metric = -np.inf
    best_epoch = 0
    log: list[EpochRecord] = []
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_EPOCH, epoch]))
        batches = _sample_batches(
            rng, split.users, config.batch_size, items_by_user, item_counts, domains
        )
        sums = np.zeros(5)
        weight = 0
        for step, batch in enumerate(batches):
            draws = StepDraws.for_step(
                config.seed, epoch, step, batch.users.size, config.embedding_dim
            )
            losses = train_step(params, graphs, batch, draws, config)
            sums += batch.users.size * np.array(
                [losses.pred_target, losses.pred_source, losses.kl, losses.contrastive, losses.total]
            )
            weight += batch.users.size
        mean = sums / weight
        epoch_losses = transfer.LossBundle(*mean[:4], config.alphas, mean[4])
        metric = _validation_metric(params, graphs, config, split, excluded_by_user)
        log.append(EpochRecord(epoch, epoch_losses, metric))
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                break
    return FitResult(best, best_epoch, float(best_metric), log, graphs)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradientCheckResult:
    max_relative_error: float
    worst_parameter: str
    non_smooth: bool
    reasons: list[str]

    def __str__(self) -> str:
        status = "non-smooth point" if self.non_smooth else "smooth"
        return (
            f"max rel err {self.max_relative_error:.3e} at {self.worst_parameter} ({status})"
        )


def _detect_non_smooth(cache: _ForwardCache, config: TrainConfig) -> list[str]:
    reasons = []
    if cache.gate is not None and cache.gate_override is None:
        m_total = float(np.sum((1.0 - cache.gate) ** 2))
        if m_total <= 2.0 * config.m_floor:
            reasons.append(f"KL mass floor active (M={m_total:.2e})")
        if np.any(cache.gate >= 1.0 - 1e-12) or np.any(cache.gate <= 1e-12):
            reasons.append("gate saturated to 0/1 at float precision")
    if cache.mixed is not None:
        norms = np.linalg.norm(cache.mixed, axis=1)
        if np.any(norms <= 10.0 * config.norm_floor):
            reasons.append("cosine norm floor active")
    return reasons


def gradient_check(
    params: ModelParameters,
    graphs: DomainGraphs,
    batch: Batch,
    draws: StepDraws,
    config: TrainConfig,
    epsilon: float = 1e-5,
    gate_override: float | None = None,
    order: int = 2,
) -> GradientCheckResult:
    """Compare the analytic gradient of the total loss with central differences.

    The stochastic draws and the noise-prior statistics are held fixed across
    all evaluations, so the objective is a deterministic function of the
    parameters.  Points where a floor or saturation is active are reported as
    non-smooth instead of trusted.  ``order`` selects the central stencil:
    2 is the classic two-point difference, 4 the five-point fourth-order one
    (same roundoff behavior, curvature error ~epsilon^4 instead of ^2).
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    base_bundle, base_cache = forward_losses(
        params, graphs, batch, draws, config, gate_override=gate_override
    )
    frozen = (base_cache.mu, base_cache.sigma) if params.kind == CROSS else None
    reasons = _detect_non_smooth(base_cache, config)

    _, cache = forward_losses(
        params, graphs, batch, draws, config, frozen_stats=frozen, gate_override=gate_override
    )
    analytic = backward_losses(cache)

    def objective() -> float:
        bundle, _ = forward_losses(
            params, graphs, batch, draws, config, frozen_stats=frozen, gate_override=gate_override
        )
        return bundle.total

    def central_difference(flat: np.ndarray, index: int) -> float:
        saved = flat[index]
        values = {}
        steps = (-1, 1) if order == 2 else (-2, -1, 1, 2)
        for step in steps:
            flat[index] = saved + step * epsilon
            values[step] = objective()
        flat[index] = saved
        if order == 2:
            return (values[1] - values[-1]) / (2.0 * epsilon)
        return (values[-2] - 8 * values[-1] + 8 * values[1] - values[2]) / (12.0 * epsilon)

    worst = 0.0
    worst_name = "(none)"
    for name, grad in analytic.items():
        flat_param = params.arrays[name].reshape(-1)
        flat_grad = grad.reshape(-1)
        for index in range(flat_param.size):
            numeric = central_difference(flat_param, index)
            denom = max(abs(flat_grad[index]), abs(numeric), 1e-8)
            rel = abs(flat_grad[index] - numeric) / denom
            if rel > worst:
                worst = rel
                worst_name = f"{name}[{index}]"
    return GradientCheckResult(worst, worst_name, bool(reasons), reasons)


# ---------------------------------------------------------------------------
# Checkpoints: versioned binary container of named float64 matrices
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: ModelParameters, meta: dict | None = None) -> None:
    """Write parameters to a self-describing binary container.

    Layout: magic, version, JSON metadata block, then each array as
    (name, shape header, raw little-endian float64 data).  The format contains
    no timestamps, so identical parameters produce identical bytes.
    """
    meta = dict(meta or {})
    meta["kind"] = params.kind
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<II", CHECKPOINT_VERSION, len(meta_bytes)))
        handle.write(meta_bytes)
        handle.write(struct.pack("<I", len(params.arrays)))
        for name, array in params.arrays.items():
            data = np.asarray(array, dtype="<f8")
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<B", data.ndim))
            handle.write(struct.pack(f"<{max(data.ndim, 1)}Q", *(data.shape or (1,))))
            handle.write(data.tobytes(order="C"))


def load_checkpoint(path) -> tuple[ModelParameters, dict]:
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        version, meta_len = struct.unpack("<II", handle.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(handle.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", handle.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", handle.read(2))
            name = handle.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", handle.read(1))
            shape = struct.unpack(f"<{max(ndim, 1)}Q", handle.read(8 * max(ndim, 1)))
            if ndim == 0:
                shape = ()
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(handle.read(8 * size), dtype="<f8").copy()
            arrays[name] = data.reshape(shape)
    return ModelParameters(meta["kind"], arrays), meta
