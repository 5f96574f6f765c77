"""Pairwise graphical models and spanning-forest proposal bounds.

A model is a product of unary potentials psi_i(x_i) and pairwise potentials
phi_uv(x_u, x_v), all stored in log space.  The proposal bound for a subset
of conditioned nodes keeps unary factors and the pairwise factors on a
spanning forest of the free nodes exactly, and replaces every remaining
pairwise factor by its maximum entry, so q(x) >= p(x) pointwise and both
the sum and the max of q over a subspace are exact tree computations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class Disconnected(RuntimeError):
    """A spanning tree was requested for a graph that is not connected."""


@dataclass
class ModelEdge:
    u: int
    v: int
    log_phi: np.ndarray


class PairwiseModel:
    def __init__(self, domains: list[int], log_psi: list, edges: list):
        self.domains = [int(d) for d in domains]
        if any(d < 1 for d in self.domains):
            raise ValueError("domains must be positive")
        n = len(self.domains)
        if len(log_psi) != n:
            raise ValueError("one log_psi per node required")
        self.log_psi = []
        for i, psi in enumerate(log_psi):
            arr = np.asarray(psi, dtype=float)
            if arr.shape != (self.domains[i],):
                raise ValueError(f"log_psi[{i}] must have shape "
                                 f"({self.domains[i]},)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"log_psi[{i}] must be finite")
            self.log_psi.append(arr)
        self.edges: list[ModelEdge] = []
        seen = set()
        for u, v, log_phi in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u},{v}) out of range")
            if u >= v:
                raise ValueError(f"edge ({u},{v}) must satisfy u < v")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u},{v})")
            seen.add((u, v))
            arr = np.asarray(log_phi, dtype=float)
            if arr.shape != (self.domains[u], self.domains[v]):
                raise ValueError(f"log_phi for edge ({u},{v}) has wrong shape")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"log_phi for edge ({u},{v}) must be finite")
            self.edges.append(ModelEdge(u, v, arr))
        self.adjacency: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for eid, e in enumerate(self.edges):
            self.adjacency[e.u].append((eid, e.v))
            self.adjacency[e.v].append((eid, e.u))
        self.phi_max_log = [float(e.log_phi.max()) for e in self.edges]
        self.phi_range_log = [float(e.log_phi.max() - e.log_phi.min())
                              for e in self.edges]

    @property
    def n_nodes(self) -> int:
        return len(self.domains)

    def log_p(self, config) -> float:
        total = 0.0
        for i, psi in enumerate(self.log_psi):
            total += psi[config[i]]
        for e in self.edges:
            total += e.log_phi[config[e.u], config[e.v]]
        return float(total)

    def log_p_many(self, configs: np.ndarray) -> np.ndarray:
        configs = np.asarray(configs)
        total = np.zeros(len(configs))
        for i, psi in enumerate(self.log_psi):
            total += psi[configs[:, i]]
        for e in self.edges:
            total += e.log_phi[configs[:, e.u], configs[:, e.v]]
        return total

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": i, "domain": d, "log_psi": psi.tolist()}
                      for i, (d, psi) in enumerate(zip(self.domains,
                                                       self.log_psi))],
            "edges": [{"u": e.u, "v": e.v, "log_phi": e.log_phi.tolist()}
                      for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "PairwiseModel":
        nodes = sorted(data["nodes"], key=lambda n: n["id"])
        if [n["id"] for n in nodes] != list(range(len(nodes))):
            raise ValueError("node ids must be 0..n-1")
        return cls(domains=[n["domain"] for n in nodes],
                   log_psi=[n["log_psi"] for n in nodes],
                   edges=[(e["u"], e["v"], e["log_phi"])
                          for e in data["edges"]])

    @classmethod
    def from_json(cls, text: str) -> "PairwiseModel":
        return cls.from_dict(json.loads(text))


def ising_grid(rows: int, cols: int, sigma: float = 0.5,
               seed=0) -> PairwiseModel:
    """Random-field Ising model on a grid, spins encoded as {0, 1}.

    Fields h_i and couplings J_e are N(0, sigma^2); psi_i = (-h_i, +h_i)
    and phi_e = [[J, -J], [-J, J]].  Nodes are numbered row-major; edges
    are emitted right-then-down per cell, so one seed fixes the model.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid must be at least 1x1")
    rng = np.random.default_rng(seed)
    n = rows * cols
    h = rng.normal(0.0, sigma, size=n)
    pairs = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                pairs.append((i, i + 1))
            if r + 1 < rows:
                pairs.append((i, i + cols))
    J = rng.normal(0.0, sigma, size=len(pairs))
    edges = [(u, v, [[j, -j], [-j, j]]) for (u, v), j in zip(pairs, J)]
    return PairwiseModel(domains=[2] * n,
                         log_psi=[[-hi, hi] for hi in h],
                         edges=edges)


@dataclass
class Forest:
    """Rooted spanning forest over a set of free nodes."""

    roots: list[int]
    parent: dict[int, int | None]
    children: dict[int, list[int]]
    edge_of: dict[int, int]  # node -> model edge id linking it to its parent
    order: list[int] = field(default_factory=list)  # preorder, roots first

    @property
    def nodes(self) -> list[int]:
        return self.order

    @property
    def edge_ids(self) -> set[int]:
        return set(self.edge_of.values())

    def without(self, node: int) -> "Forest":
        """The forest after deleting one node: its children become roots."""
        if node not in self.parent:
            raise KeyError(f"node {node} not in forest")
        parent = {j: p for j, p in self.parent.items() if j != node}
        children = {j: [c for c in cs if c != node]
                    for j, cs in self.children.items() if j != node}
        edge_of = {j: e for j, e in self.edge_of.items() if j != node}
        roots = [r for r in self.roots if r != node]
        for c in self.children[node]:
            parent[c] = None
            edge_of.pop(c, None)
            roots.append(c)
        return _rooted(sorted(roots), parent, children, edge_of)


def _rooted(roots, parent, children, edge_of) -> Forest:
    order = []
    for r in roots:
        stack = [r]
        while stack:
            j = stack.pop()
            order.append(j)
            stack.extend(sorted(children[j], reverse=True))
    return Forest(roots=roots, parent=parent, children=children,
                  edge_of=edge_of, order=order)


def _prim_component(model: PairwiseModel, free: set, start: int):
    """Maximum spanning tree of start's component by phi range, greedy.

    Ties between crossing edges go to the smallest edge id.
    """
    in_tree = {start}
    chosen: list[tuple[int, int, int]] = []  # (edge_id, inside, outside)
    while True:
        best = None
        for j in in_tree:
            for eid, other in model.adjacency[j]:
                if other in in_tree or other not in free:
                    continue
                key = (model.phi_range_log[eid], -eid)
                if best is None or key > best[0]:
                    best = (key, eid, j, other)
        if best is None:
            return in_tree, chosen
        _, eid, inside, outside = best
        in_tree.add(outside)
        chosen.append((eid, inside, outside))


def _forest_from(components) -> Forest:
    roots, parent, children, edge_of = [], {}, {}, {}
    for start, nodes, chosen in components:
        roots.append(start)
        parent[start] = None
        for j in nodes:
            children.setdefault(j, [])
        for eid, inside, outside in chosen:
            parent[outside] = inside
            children[inside].append(outside)
            edge_of[outside] = eid
    return _rooted(sorted(roots), parent, children, edge_of)


def max_spanning_forest(model: PairwiseModel, free) -> Forest:
    """Per-component maximum spanning trees over the free nodes."""
    free = set(free)
    seen: set[int] = set()
    components = []
    for start in sorted(free):
        if start in seen:
            continue
        nodes, chosen = _prim_component(model, free, start)
        seen |= nodes
        components.append((start, nodes, chosen))
    return _forest_from(components)


def prim_max_tree(model: PairwiseModel) -> Forest:
    """Maximum spanning tree of the whole model graph.

    Edge weight is the log range max phi / min phi, so the tree keeps the
    potentials whose neglect would cost the most.  Raises Disconnected if
    the graph has more than one component.
    """
    forest = max_spanning_forest(model, range(model.n_nodes))
    if len(forest.roots) > 1 and model.n_nodes > 1:
        raise Disconnected(
            f"graph has {len(forest.roots)} components")
    return forest


class SubspaceProposal:
    """Tree-exact upper bound on p restricted to one assignment subspace.

    Factors with both ends assigned fold into a constant, factors with one
    assigned end fold into the free end's unary, forest factors stay exact,
    and every other factor is replaced by its max entry (also a constant).
    """

    def __init__(self, model: PairwiseModel, assigned: dict[int, int],
                 forest: Forest | None = None):
        self.model = model
        self.assigned = dict(assigned)
        self.free = sorted(i for i in range(model.n_nodes)
                           if i not in self.assigned)
        if forest is None:
            forest = max_spanning_forest(model, self.free)
        self.forest = forest
        const = 0.0
        for i in sorted(self.assigned):
            const += model.log_psi[i][self.assigned[i]]
        eff = {j: model.log_psi[j].copy() for j in self.free}
        tree_ids = forest.edge_ids
        self.offtree_ids: list[int] = []
        for eid, e in enumerate(model.edges):
            au, av = e.u in self.assigned, e.v in self.assigned
            if au and av:
                const += e.log_phi[self.assigned[e.u], self.assigned[e.v]]
            elif au:
                eff[e.v] = eff[e.v] + e.log_phi[self.assigned[e.u], :]
            elif av:
                eff[e.u] = eff[e.u] + e.log_phi[:, self.assigned[e.v]]
            elif eid in tree_ids:
                pass
            else:
                self.offtree_ids.append(eid)
                const += model.phi_max_log[eid]
        self.const = float(const)
        self.eff = eff
        self._beta: dict[str, dict[int, np.ndarray] | None] = {
            "sum": None, "max": None}

    # -- tree passes ---------------------------------------------------------

    def _edge_to_parent(self, child: int) -> np.ndarray:
        """phi matrix oriented (child value, parent value)."""
        e = self.model.edges[self.forest.edge_of[child]]
        return e.log_phi if e.u == child else e.log_phi.T

    def beta(self, semiring: str) -> dict[int, np.ndarray]:
        cached = self._beta[semiring]
        if cached is not None:
            return cached
        beta: dict[int, np.ndarray] = {}
        for j in reversed(self.forest.order):
            b = self.eff[j]
            for c in self.forest.children[j]:
                m = beta[c][:, None] + self._edge_to_parent(c)
                if semiring == "sum":
                    b = b + np.logaddexp.reduce(m, axis=0)
                else:
                    b = b + m.max(axis=0)
            beta[j] = b
        self._beta[semiring] = beta
        return beta

    def mass_log(self) -> float:
        beta = self.beta("sum")
        total = self.const
        for r in self.forest.roots:
            total += float(np.logaddexp.reduce(beta[r]))
        return total

    def max_log(self) -> float:
        beta = self.beta("max")
        total = self.const
        for r in self.forest.roots:
            total += float(beta[r].max())
        return total

    # -- scoring -------------------------------------------------------------

    def score(self, config) -> float:
        """log q(config) for a full configuration in this subspace."""
        total = self.const
        for j in self.free:
            total += self.eff[j][config[j]]
        for child, eid in self.forest.edge_of.items():
            e = self.model.edges[eid]
            total += e.log_phi[config[e.u], config[e.v]]
        return float(total)

    def score_many(self, configs: np.ndarray) -> np.ndarray:
        configs = np.asarray(configs)
        total = np.full(len(configs), self.const)
        for j in self.free:
            total += self.eff[j][configs[:, j]]
        for eid in sorted(self.forest.edge_ids):
            e = self.model.edges[eid]
            total += e.log_phi[configs[:, e.u], configs[:, e.v]]
        return total

    # -- draws ---------------------------------------------------------------

    def _full(self, values: dict[int, int]) -> tuple:
        return tuple(self.assigned.get(i, values.get(i))
                     for i in range(self.model.n_nodes))

    def sample(self, rng: np.random.Generator):
        """Exact draw from q restricted to this subspace."""
        beta = self.beta("sum")
        values: dict[int, int] = {}
        for j in self.forest.order:
            p = self.forest.parent[j]
            logits = beta[j] if p is None else \
                beta[j] + self._edge_to_parent(j)[:, values[p]]
            probs = np.exp(logits - logits.max())
            r = rng.random() * probs.sum()
            values[j] = int(np.searchsorted(np.cumsum(probs), r,
                                            side="right"))
        config = self._full(values)
        return config, self.score(config)

    def sample_many(self, rng: np.random.Generator, n: int):
        """Vectorized draws: one uniform block per free node, fixed order."""
        beta = self.beta("sum")
        out = np.empty((n, self.model.n_nodes), dtype=np.int64)
        for i, v in self.assigned.items():
            out[:, i] = v
        for j in self.forest.order:
            p = self.forest.parent[j]
            if p is None:
                logits = np.broadcast_to(beta[j], (n, len(beta[j])))
            else:
                logits = beta[j][None, :] + \
                    self._edge_to_parent(j).T[out[:, p], :]
            probs = np.exp(logits - logits.max(axis=1, keepdims=True))
            cdf = np.cumsum(probs, axis=1)
            r = rng.random(n) * cdf[:, -1]
            out[:, j] = (r[:, None] >= cdf).sum(axis=1)
        return out, self.score_many(out)

    def _max_log_clamped(self, clamps: dict[int, int]) -> float:
        """Forest max with some free nodes pinned to fixed values.

        Masking only removes candidates from max reductions, so any
        surviving assignment accumulates exactly the same floats as in the
        unclamped pass; equality against the unclamped max is exact.
        """
        beta: dict[int, np.ndarray] = {}
        for j in reversed(self.forest.order):
            b = self.eff[j]
            if j in clamps:
                mask = np.full(len(b), -np.inf)
                mask[clamps[j]] = 0.0
                b = b + mask
            for c in self.forest.children[j]:
                m = beta[c][:, None] + self._edge_to_parent(c)
                b = b + m.max(axis=0)
            beta[j] = b
        total = self.const
        for r in self.forest.roots:
            total += float(beta[r].max())
        return total

    def argmax(self):
        """Maximizing configuration; exact ties take the lexicographically
        smallest configuration (node index order, then value order)."""
        target = self._max_log_clamped({})
        values: dict[int, int] = {}
        for j in self.free:
            for v in range(self.model.domains[j]):
                values[j] = v
                if self._max_log_clamped(values) == target:
                    break
        config = self._full(values)
        return config, self.score(config)

    def draw(self, rng: np.random.Generator):
        return self.sample(rng)


def tree_bound(model: PairwiseModel, assigned: dict[int, int] | None = None,
               forest: Forest | None = None) -> SubspaceProposal:
    return SubspaceProposal(model, assigned or {}, forest)


def tree_sample(proposal: SubspaceProposal, rng: np.random.Generator):
    return proposal.sample(rng)


def tree_max(proposal: SubspaceProposal):
    return proposal.argmax()
