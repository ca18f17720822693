"""Dataset ingestion and synthetic cross-domain data generation.

File boundary uses arbitrary string IDs; everything downstream runs on dense
indices assigned in first-seen order.  Users must appear in both domains
(the shared-user setting), item index spaces are disjoint per domain, and a
single entity index space is shared by both domains.

The synthetic generator plants a known latent structure: users and items get
latent vectors, items cluster around shared entity anchors, and a chosen
fraction of source interactions is drawn uniformly at random instead of from
the user's preference ("irrelevant" edges).  Ground-truth per-edge flags are
emitted for diagnostics only and never reach the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import (
    SOURCE,
    TARGET,
    InteractionGraph,
    KnowledgeLinkage,
    scope_entity_edges,
)


@dataclass(frozen=True)
class DataPaths:
    source: Path
    target: Path
    kg: Path
    map_source: Path
    map_target: Path

    def all(self) -> list[Path]:
        return [self.source, self.target, self.kg, self.map_source, self.map_target]


@dataclass
class LoadReport:
    """Accounting of everything the loader dropped, with line provenance."""

    malformed: list[tuple[str, int, str]] = field(default_factory=list)
    raw_edges: dict[str, int] = field(default_factory=dict)
    kept_edges: dict[str, int] = field(default_factory=dict)
    duplicate_edges: dict[str, int] = field(default_factory=dict)
    single_domain_users: int = 0
    single_domain_edges: dict[str, int] = field(default_factory=dict)
    scoped_out_kg_edges: int = 0

    def dropped(self, domain: str) -> int:
        return self.duplicate_edges.get(domain, 0) + self.single_domain_edges.get(domain, 0)


@dataclass
class DatasetBundle:
    """A loaded cross-domain dataset with its ID dictionaries."""

    source: InteractionGraph
    target: InteractionGraph
    kg: KnowledgeLinkage
    user_ids: list[str]
    source_item_ids: list[str]
    target_item_ids: list[str]
    entity_ids: list[str]

    @property
    def user_count(self) -> int:
        return len(self.user_ids)


def _read_rows(
    path: Path, report: LoadReport, columns: int, middle_optional: bool = False
) -> list[tuple[str, ...]]:
    """Parse a TSV into tuples, collecting malformed lines into the report.

    Lines starting with ``#`` are provenance headers and are skipped.  With
    ``middle_optional`` a three-column line is accepted and its middle field
    (a relation label) discarded.
    """
    rows: list[tuple[str, ...]] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) == columns and all(fields):
                rows.append(tuple(fields))
            elif middle_optional and len(fields) == columns + 1 and all(fields):
                rows.append((fields[0], fields[-1]))
            else:
                report.malformed.append((str(path), line_no, line))
    return rows


class _Indexer:
    """First-seen-order string-to-dense-index assignment.

    A frozen indexer (loaded from a persisted ID map) hands out only the
    indices it was built with; unknown IDs come back as None and the caller
    accounts for the dropped row.
    """

    def __init__(self, ids: list[str] | None = None, frozen: bool = False) -> None:
        self.ids: list[str] = list(ids or [])
        self.to_index: dict[str, int] = {key: i for i, key in enumerate(self.ids)}
        self.frozen = frozen

    def index(self, key: str) -> int | None:
        idx = self.to_index.get(key)
        if idx is None and not self.frozen:
            idx = len(self.ids)
            self.to_index[key] = idx
            self.ids.append(key)
        return idx

    def __len__(self) -> int:
        return len(self.ids)


def _read_id_map(path: Path) -> _Indexer:
    pairs: list[tuple[str, int]] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        raw_id, index = line.split("\t")
        pairs.append((raw_id, int(index)))
    pairs.sort(key=lambda pair: pair[1])
    if [index for _, index in pairs] != list(range(len(pairs))):
        raise ValueError(f"{path}: indices must be a dense 0..n-1 range")
    return _Indexer([raw_id for raw_id, _ in pairs], frozen=True)


def _dedupe(edges: list[tuple[int, int]]) -> tuple[np.ndarray, int]:
    seen: set[tuple[int, int]] = set()
    unique: list[tuple[int, int]] = []
    for edge in edges:
        if edge not in seen:
            seen.add(edge)
            unique.append(edge)
    arr = np.asarray(unique, dtype=np.int64).reshape(len(unique), 2)
    return arr, len(edges) - len(unique)


def load_bundle(
    paths: DataPaths, hop_radius: int = 1, id_dir: Path | None = None
) -> tuple[DatasetBundle, LoadReport]:
    """Load and index a full cross-domain dataset.

    Users present in only one domain are dropped (counted in the report);
    no well-formed line disappears without being counted.  Entity edges
    beyond ``hop_radius`` hops from any item-linked entity are trimmed.

    By default IDs are indexed in first-seen order.  Passing ``id_dir`` (a
    directory holding the ``ids_*.tsv`` maps that :func:`save_bundle` writes)
    pins the index assignment to the persisted mapping instead, which makes a
    save/load round trip the identity.
    """
    report = LoadReport()
    raw_source = _read_rows(paths.source, report, 2)
    raw_target = _read_rows(paths.target, report, 2)
    report.raw_edges[SOURCE] = len(raw_source)
    report.raw_edges[TARGET] = len(raw_target)

    users_source = {u for u, _ in raw_source}
    users_target = {u for u, _ in raw_target}
    shared = users_source & users_target
    report.single_domain_users = len((users_source | users_target) - shared)

    if id_dir is not None:
        id_dir = Path(id_dir)
        users = _read_id_map(id_dir / "ids_users.tsv")
        items = {
            SOURCE: _read_id_map(id_dir / "ids_items_source.tsv"),
            TARGET: _read_id_map(id_dir / "ids_items_target.tsv"),
        }
        entities = _read_id_map(id_dir / "ids_entities.tsv")
    else:
        users = _Indexer()
        items = {SOURCE: _Indexer(), TARGET: _Indexer()}
        entities = _Indexer()

    kept: dict[str, list[tuple[int, int]]] = {SOURCE: [], TARGET: []}
    for domain, raw in ((SOURCE, raw_source), (TARGET, raw_target)):
        dropped = 0
        for user_id, item_id in raw:
            user = users.index(user_id) if user_id in shared else None
            item = items[domain].index(item_id) if user is not None else None
            if user is None or item is None:
                dropped += 1
                continue
            kept[domain].append((user, item))
        report.single_domain_edges[domain] = dropped

    if not kept[SOURCE] or not kept[TARGET]:
        raise ValueError(
            "no interactions left after requiring users to appear in both domains"
        )

    maps: dict[str, list[tuple[int, int]]] = {SOURCE: [], TARGET: []}
    for domain, path in ((SOURCE, paths.map_source), (TARGET, paths.map_target)):
        for item_id, entity_id in _read_rows(path, report, 2):
            item = items[domain].index(item_id)
            entity = entities.index(entity_id)
            if item is not None and entity is not None:
                maps[domain].append((item, entity))

    kg_edges = []
    for head, tail in _read_rows(paths.kg, report, 2, middle_optional=True):
        head_idx, tail_idx = entities.index(head), entities.index(tail)
        if head_idx is not None and tail_idx is not None:
            kg_edges.append((head_idx, tail_idx))

    edges = {}
    for domain in (SOURCE, TARGET):
        edges[domain], dupes = _dedupe(kept[domain])
        report.duplicate_edges[domain] = dupes
        report.kept_edges[domain] = edges[domain].shape[0]

    linkage = KnowledgeLinkage(
        entity_count=len(entities),
        entity_edges=np.asarray(kg_edges, dtype=np.int64).reshape(len(kg_edges), 2),
        item_entity_source=np.asarray(maps[SOURCE], dtype=np.int64).reshape(len(maps[SOURCE]), 2),
        item_entity_target=np.asarray(maps[TARGET], dtype=np.int64).reshape(len(maps[TARGET]), 2),
    )
    linkage, report.scoped_out_kg_edges = scope_entity_edges(linkage, hop_radius)

    bundle = DatasetBundle(
        source=InteractionGraph(SOURCE, len(users), len(items[SOURCE]), edges[SOURCE]),
        target=InteractionGraph(TARGET, len(users), len(items[TARGET]), edges[TARGET]),
        kg=linkage,
        user_ids=users.ids,
        source_item_ids=items[SOURCE].ids,
        target_item_ids=items[TARGET].ids,
        entity_ids=entities.ids,
    )
    return bundle, report


def load_interactions(path: Path, domain_tag: str = SOURCE) -> tuple[InteractionGraph, list[str], list[str]]:
    """Load a single interactions file on its own (used by noise injection)."""
    report = LoadReport()
    rows = _read_rows(path, report, 2)
    users, items = _Indexer(), _Indexer()
    edges = [(users.index(u), items.index(i)) for u, i in rows]
    arr, _ = _dedupe(edges)
    if not len(arr):
        raise ValueError(f"no interactions found in {path}")
    return InteractionGraph(domain_tag, len(users), len(items), arr), users.ids, items.ids


def write_interactions(path: Path, edges: np.ndarray, user_ids: list[str], item_ids: list[str], header: str | None = None) -> None:
    lines = []
    if header:
        lines.append(f"# {header}")
    for u, i in edges:
        lines.append(f"{user_ids[u]}\t{item_ids[i]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_bundle(bundle: DatasetBundle, out_dir: Path) -> dict[str, Path]:
    """Write a bundle back to the on-disk TSV formats, plus the ID maps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "source": out_dir / "source.tsv",
        "target": out_dir / "target.tsv",
        "kg": out_dir / "kg.tsv",
        "map_source": out_dir / "map_source.tsv",
        "map_target": out_dir / "map_target.tsv",
    }
    write_interactions(paths["source"], bundle.source.edges, bundle.user_ids, bundle.source_item_ids)
    write_interactions(paths["target"], bundle.target.edges, bundle.user_ids, bundle.target_item_ids)
    with open(paths["kg"], "w", encoding="utf-8") as handle:
        for head, tail in bundle.kg.entity_edges:
            handle.write(f"{bundle.entity_ids[head]}\t{bundle.entity_ids[tail]}\n")
    for key, item_ids, mapping in (
        ("map_source", bundle.source_item_ids, bundle.kg.item_entity_source),
        ("map_target", bundle.target_item_ids, bundle.kg.item_entity_target),
    ):
        with open(paths[key], "w", encoding="utf-8") as handle:
            for item, entity in mapping:
                handle.write(f"{item_ids[item]}\t{bundle.entity_ids[entity]}\n")
    for name, ids in (
        ("users", bundle.user_ids),
        ("items_source", bundle.source_item_ids),
        ("items_target", bundle.target_item_ids),
        ("entities", bundle.entity_ids),
    ):
        path = out_dir / f"ids_{name}.tsv"
        with open(path, "w", encoding="utf-8") as handle:
            for index, raw_id in enumerate(ids):
                handle.write(f"{raw_id}\t{index}\n")
        paths[f"ids_{name}"] = path
    return paths


@dataclass(frozen=True)
class SynthSpec:
    """Shape and noise level of a generated cross-domain dataset."""

    user_count: int = 500
    source_items: int = 300
    target_items: int = 300
    latent_dim: int = 8
    entity_clusters: int = 16
    entity_neighbors: int = 4
    # data-rich source, sparse target: the setting transfer is meant for
    source_interactions: int = 12
    target_interactions: int = 6
    irrelevant_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.user_count,
            self.source_items,
            self.target_items,
            self.latent_dim,
            self.entity_clusters,
            self.entity_neighbors,
            self.source_interactions,
            self.target_interactions,
        )
        if min(counts) <= 0:
            raise ValueError(f"all counts must be positive: {self}")
        if not 0.0 <= self.irrelevant_fraction <= 1.0:
            raise ValueError(f"irrelevant_fraction must lie in [0, 1]: {self.irrelevant_fraction}")
        if self.source_interactions > self.source_items or self.target_interactions > self.target_items:
            raise ValueError(
                f"cannot draw {self.source_interactions}/{self.target_interactions} distinct "
                f"items per user from catalogs of {self.source_items}/{self.target_items}"
            )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def generate_synthetic(spec: SynthSpec) -> tuple[DatasetBundle, np.ndarray]:
    """Generate a bundle with planted preferences and a known noise fraction.

    Users and items carry latent vectors; item latents cluster around shared
    anchor directions.  Every item links to its own entity, and entities are
    wired to their nearest neighbors in latent space across both domains, so
    the entity graph is a cross-domain item-similarity graph (the knowledge
    bridge).  A ``irrelevant_fraction`` share of source interactions is drawn
    uniformly at random instead of from the user's preference distribution;
    the returned boolean array marks those edges, aligned with
    ``bundle.source.edges``.  Target-domain edges are always preference
    driven, so any leave-one-out holdout is a genuine signal.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    k, n_clusters = spec.latent_dim, spec.entity_clusters

    centers = rng.normal(size=(n_clusters, k))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)

    item_latents: dict[str, np.ndarray] = {}
    for domain, n_items in ((SOURCE, spec.source_items), (TARGET, spec.target_items)):
        clusters = rng.integers(0, n_clusters, size=n_items)
        item_latents[domain] = centers[clusters] + 0.3 * rng.normal(size=(n_items, k))

    user_latents = rng.normal(size=(spec.user_count, k))

    edges: dict[str, list[tuple[int, int]]] = {SOURCE: [], TARGET: []}
    irrelevant_flags: list[bool] = []
    per_domain = {SOURCE: spec.source_interactions, TARGET: spec.target_interactions}
    for user in range(spec.user_count):
        for domain in (SOURCE, TARGET):
            n_per = per_domain[domain]
            latents = item_latents[domain]
            probabilities = _softmax(latents @ user_latents[user])
            if domain == SOURCE:
                uniform = rng.random(n_per) < spec.irrelevant_fraction
            else:
                uniform = np.zeros(n_per, dtype=bool)
            n_preferred = int((~uniform).sum())
            chosen = list(
                rng.choice(latents.shape[0], size=n_preferred, replace=False, p=probabilities)
            )
            if n_per - n_preferred:
                pool = np.setdiff1d(np.arange(latents.shape[0]), np.asarray(chosen, dtype=np.int64))
                chosen.extend(rng.choice(pool, size=n_per - n_preferred, replace=False))
            for position, item in enumerate(chosen):
                edges[domain].append((user, int(item)))
                if domain == SOURCE:
                    irrelevant_flags.append(position >= n_preferred)

    # one entity per item; entity edges = nearest neighbors in latent space
    # over the union of both catalogs, which ties similar items together
    # within and across domains
    all_latents = np.concatenate([item_latents[SOURCE], item_latents[TARGET]], axis=0)
    unit = all_latents / np.linalg.norm(all_latents, axis=1, keepdims=True)
    similarity = unit @ unit.T
    np.fill_diagonal(similarity, -np.inf)
    n_entities = all_latents.shape[0]
    neighbor_count = min(spec.entity_neighbors, n_entities - 1)
    kg_edges = []
    for entity in range(n_entities):
        nearest = np.argpartition(-similarity[entity], neighbor_count)[:neighbor_count]
        kg_edges.extend((entity, int(other)) for other in nearest)

    map_source = np.stack(
        [np.arange(spec.source_items), np.arange(spec.source_items)], axis=1
    )
    map_target = np.stack(
        [np.arange(spec.target_items), spec.source_items + np.arange(spec.target_items)],
        axis=1,
    )

    bundle = DatasetBundle(
        source=InteractionGraph(SOURCE, spec.user_count, spec.source_items, edges[SOURCE]),
        target=InteractionGraph(TARGET, spec.user_count, spec.target_items, edges[TARGET]),
        kg=KnowledgeLinkage(
            entity_count=n_entities,
            entity_edges=np.asarray(kg_edges, dtype=np.int64),
            item_entity_source=map_source,
            item_entity_target=map_target,
        ),
        user_ids=[f"u{i:04d}" for i in range(spec.user_count)],
        source_item_ids=[f"s{i:04d}" for i in range(spec.source_items)],
        target_item_ids=[f"t{i:04d}" for i in range(spec.target_items)],
        entity_ids=[f"es{i:04d}" for i in range(spec.source_items)]
        + [f"et{i:04d}" for i in range(spec.target_items)],
    )
    return bundle, np.asarray(irrelevant_flags, dtype=bool)


def write_flags(path: Path, bundle: DatasetBundle, flags: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for (user, item), irrelevant in zip(bundle.source.edges, flags):
            label = "irrelevant" if irrelevant else "relevant"
            handle.write(
                f"{bundle.user_ids[user]}\t{bundle.source_item_ids[item]}\t{label}\n"
            )
