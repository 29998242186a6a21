"""Seeded synthetic temporal KG + mention corpus with controlled drift.

Entities belong to topics; a topic provides the token pool for descriptions
and mention contexts.  Each year a seeded subset of entities drifts to a new
topic and a budget of ceil(rho * E) edges is rewired toward the drifted
topics.  Descriptions are frozen at creation time while mention contexts
follow the entity's current topic, so models trained on older years degrade
on newer test years by construction.  A held-out "new entities" subset only
activates (gains edges and mentions) from a chosen year onward.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class SynthError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_entities: int = 200
    years: tuple[int, ...] = (2019, 2020, 2021, 2022)
    topics: int = 8
    edges_per_entity: int = 4
    drift_rate: float = 0.15
    mentions_per_entity: int = 1
    vocab_size: int = 240
    seed: int = 0
    new_fraction: float = 0.1
    new_entity_year_index: int = 1  # years[index] activates the new subset
    name_group_size: int = 4
    desc_len: int = 20
    ctx_len: int = 12
    drift_degree_bias: bool = True  # low-degree entities drift preferentially
    predrift_rounds: int = 1  # drift applied before the first snapshot
    growth: bool = False  # reserved; activation of new entities always grows E

    def __post_init__(self):
        if not (0.0 <= self.drift_rate <= 1.0):
            raise SynthError("drift rate must be in [0, 1]")
        if not (2 <= self.topics <= self.n_entities):
            raise SynthError("need n >= topics >= 2")
        if self.name_group_size > self.topics:
            raise SynthError("name groups larger than the topic count cannot "
                             "start on distinct topics")
        if self.edges_per_entity >= self.n_entities - 1:
            raise SynthError("infeasible edge budget: edges_per_entity too large")


def _topic_tokens(cfg: SynthConfig) -> list[list[str]]:
    per_topic = max(4, cfg.vocab_size // cfg.topics)
    return [[f"t{t}w{i}" for i in range(per_topic)] for t in range(cfg.topics)]


class _GraphState:
    def __init__(self, n: int):
        self.adj: list[set[int]] = [set() for _ in range(n)]
        self.edges: set[tuple[int, int]] = set()

    def add(self, u: int, v: int) -> bool:
        if u == v:
            return False
        key = (min(u, v), max(u, v))
        if key in self.edges:
            return False
        self.edges.add(key)
        self.adj[u].add(v)
        self.adj[v].add(u)
        return True

    def remove(self, u: int, v: int):
        key = (min(u, v), max(u, v))
        self.edges.discard(key)
        self.adj[u].discard(v)
        self.adj[v].discard(u)

    def degree(self, u: int) -> int:
        return len(self.adj[u])


def _pick_partner(rng, anchor: int, topic: int, topic_members: list[list[int]],
                  active: np.ndarray, graph: _GraphState) -> int | None:
    pool = [j for j in topic_members[topic]
            if j != anchor and active[j] and j not in graph.adj[anchor]]
    if not pool:
        pool = [j for j in np.nonzero(active)[0]
                if j != anchor and j not in graph.adj[anchor]]
    if not pool:
        return None
    return int(pool[rng.integers(len(pool))])


def generate(cfg: SynthConfig, out_dir: str | Path) -> dict:
    """Write entities.jsonl, mentions.jsonl, and edges_<year>.tsv; returns a
    small manifest of what was generated."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([cfg.seed, 0x5E])
    n = cfg.n_entities
    years = list(cfg.years)
    tokens = _topic_tokens(cfg)

    n_new = int(round(cfg.new_fraction * n))
    new_subset = set(range(n - n_new, n))
    activation_year = years[min(cfg.new_entity_year_index, len(years) - 1)]

    # name-group members start on distinct topics, so a name plus a topical
    # context identifies an entity at creation time
    topic_now = np.empty(n, dtype=np.int64)
    for start in range(0, n, cfg.name_group_size):
        size = min(cfg.name_group_size, n - start)
        topic_now[start: start + size] = rng.permutation(cfg.topics)[:size]
    creation_topic = topic_now.copy()
    topic_members = [sorted(np.nonzero(topic_now == t)[0].tolist())
                     for t in range(cfg.topics)]

    # frozen registry: description tokens come from the creation-time topic
    entities = []
    for i in range(n):
        group = i // cfg.name_group_size
        pool = tokens[creation_topic[i]]
        desc = [pool[int(k)] for k in rng.integers(0, len(pool), size=cfg.desc_len)]
        entities.append({
            "qid": f"Q{i}",
            "title": f"name{group}",
            "description": " ".join(desc),
        })

    active = np.array([i not in new_subset for i in range(n)])
    graph = _GraphState(n)

    def seed_edges(ids):
        for i in sorted(ids):
            attempts = 0
            while graph.degree(i) < cfg.edges_per_entity and attempts < 20 * cfg.edges_per_entity:
                attempts += 1
                partner = _pick_partner(rng, i, int(topic_now[i]), topic_members,
                                        active, graph)
                if partner is None:
                    break
                graph.add(i, partner)

    seed_edges(np.nonzero(active)[0])

    edges_by_year: dict[int, list[tuple[int, int]]] = {}
    mentions: list[dict] = []
    drift_counts: dict[int, int] = {}

    def drift_once() -> int:
        nonlocal topic_members
        active_ids = np.nonzero(active)[0]
        num_drift = int(round(cfg.drift_rate * active_ids.size))
        if num_drift == 0:
            return 0
        if cfg.drift_degree_bias:
            weights = 1.0 / (1.0 + np.array([graph.degree(i) for i in active_ids]))
            weights /= weights.sum()
        else:
            weights = None
        drifters = rng.choice(active_ids, size=num_drift, replace=False, p=weights)
        drifters = set(int(d) for d in drifters)
        for i in sorted(drifters):
            old = int(topic_now[i])
            new_topic = int(rng.integers(0, cfg.topics - 1))
            if new_topic >= old:
                new_topic += 1
            topic_now[i] = new_topic
        topic_members = [sorted(np.nonzero(topic_now == t)[0].tolist())
                         for t in range(cfg.topics)]

        budget = math.ceil(cfg.drift_rate * len(graph.edges))
        all_edges = sorted(graph.edges)
        incident = [e for e in all_edges if e[0] in drifters or e[1] in drifters]
        incident_set = set(incident)
        rest = [e for e in all_edges if e not in incident_set]
        rng.shuffle(incident)
        rng.shuffle(rest)
        chosen = (incident + rest)[:budget]
        rewired = 0
        for u, v in chosen:
            if u in drifters and v in drifters:
                anchor = u if rng.integers(2) == 0 else v
            elif u in drifters:
                anchor = u
            elif v in drifters:
                anchor = v
            else:
                anchor = u if rng.integers(2) == 0 else v
            partner = _pick_partner(rng, anchor, int(topic_now[anchor]),
                                    topic_members, active, graph)
            if partner is None:
                continue
            graph.remove(u, v)
            graph.add(anchor, partner)
            rewired += 1
        return rewired

    # descriptions were written before the observed window starts, so drift
    # applied here leaves stale descriptions visible from the first snapshot on
    if cfg.drift_rate > 0:
        for _ in range(cfg.predrift_rounds):
            drift_once()

    for step, year in enumerate(years):
        if year >= activation_year and not active.all():
            newly = sorted(i for i in new_subset if not active[i])
            active[newly] = True
            seed_edges(newly)

        if step > 0 and cfg.drift_rate > 0:
            drift_counts[year] = drift_once()

        edges_by_year[year] = sorted(graph.edges)

        for i in sorted(np.nonzero(active)[0]):
            pool = tokens[int(topic_now[i])]
            group = i // cfg.name_group_size
            for _ in range(cfg.mentions_per_entity):
                left = [pool[int(k)] for k in rng.integers(0, len(pool), size=cfg.ctx_len)]
                right = [pool[int(k)] for k in rng.integers(0, len(pool), size=cfg.ctx_len)]
                mentions.append({
                    "context_left": left,
                    "mention": [f"name{group}"],
                    "context_right": right,
                    "label_qid": f"Q{i}",
                    "category": "new" if i in new_subset else "continual",
                    "year": year,
                })

    with (out_dir / "entities.jsonl").open("w") as fh:
        for ent in entities:
            fh.write(json.dumps(ent, sort_keys=True) + "\n")
    with (out_dir / "mentions.jsonl").open("w") as fh:
        for m in mentions:
            fh.write(json.dumps(m, sort_keys=True) + "\n")
    for year in years:
        with (out_dir / f"edges_{year}.tsv").open("w") as fh:
            fh.write(f"# synthetic edges year={year} seed={cfg.seed}\n")
            for u, v in edges_by_year[year]:
                fh.write(f"Q{u}\tQ{v}\n")

    return {"n_entities": n, "years": years, "edge_counts":
            {str(y): len(edges_by_year[y]) for y in years},
            "mentions": len(mentions), "rewired": {str(y): c for y, c in drift_counts.items()},
            "new_subset_size": n_new, "activation_year": activation_year}
