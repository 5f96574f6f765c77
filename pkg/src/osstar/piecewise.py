"""Piecewise proposal over a partition of assignment subspaces.

The proposal starts as one spanning-forest bound over the whole space.  A
refinement conditions one free node inside one subspace, replacing that
leaf by a child per value.  Children inherit the parent forest minus the
conditioned node, and every pairwise factor the node touched becomes exact
in the children, so the bound can only tighten: q_child(x) <= q_parent(x)
pointwise on each child subspace.

With retree=True each child also tries a freshly computed spanning forest
of its own free nodes and keeps whichever bound has the smaller total mass.
That preserves mass monotonicity but not the pointwise guarantee, so it is
off by default.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass

import numpy as np

from .graphical import (Forest, PairwiseModel, SubspaceProposal,
                        max_spanning_forest)

Subspace = SubspaceProposal


class AlreadyConditioned(ValueError):
    """The node is already assigned in that subspace."""


class NoUnassignedNode(RuntimeError):
    """No refinement is possible: every relevant subspace is fully assigned."""


class Policy(enum.Enum):
    """Refinement-site selection policies.

    I    random free node in the rejected configuration's leaf
    II   free node with the largest pointwise slack at the rejection
    III  random free node in the largest-mass refinable leaf
    IV   best (leaf, node) from a priority queue of exact mass improvements
    """

    RANDOM_NODE = "i"
    MAX_SLACK = "ii"
    MASS_LEAF = "iii"
    QUEUE = "iv"


class PiecewiseProposal:
    def __init__(self, model: PairwiseModel, retree: bool = False):
        self.model = model
        self.retree = retree
        root = SubspaceProposal(model, {})
        self.leaves: dict[int, SubspaceProposal] = {0: root}
        self._next_id = 1
        self.bound_builds = 1
        self.conditionings = 0
        self._tables_cache = None

    # -- bookkeeping ---------------------------------------------------------

    def _tables(self):
        if self._tables_cache is None:
            ids = sorted(self.leaves)
            masses = np.array([self.leaves[i].mass_log() for i in ids])
            maxes = np.array([self.leaves[i].max_log() for i in ids])
            total = float(np.logaddexp.reduce(masses))
            probs = np.exp(masses - total)
            self._tables_cache = (ids, masses, maxes, total,
                                  np.cumsum(probs))
        return self._tables_cache

    def mass_log(self) -> float:
        return self._tables()[3]

    def max_log(self) -> float:
        return float(self._tables()[2].max())

    def leaf_of(self, config) -> int:
        for lid in sorted(self.leaves):
            leaf = self.leaves[lid]
            if all(config[j] == v for j, v in leaf.assigned.items()):
                return lid
        raise KeyError(f"no leaf contains {config!r}")

    def score(self, config) -> float:
        return self.leaves[self.leaf_of(config)].score(config)

    def score_all(self, configs: np.ndarray) -> np.ndarray:
        """q over many configs at once; verifies the partition en passant."""
        configs = np.asarray(configs)
        out = np.full(len(configs), np.nan)
        for lid in sorted(self.leaves):
            leaf = self.leaves[lid]
            mask = np.ones(len(configs), dtype=bool)
            for j, v in leaf.assigned.items():
                mask &= configs[:, j] == v
            mask &= np.isnan(out)
            if mask.any():
                out[mask] = leaf.score_many(configs[mask])
        if np.isnan(out).any():
            raise AssertionError("subspaces do not cover the space")
        return out

    # -- proposal interface --------------------------------------------------

    def draw(self, rng: np.random.Generator):
        ids, _, _, total, cdf = self._tables()
        r = rng.random() * cdf[-1]
        lid = ids[int(np.searchsorted(cdf, r, side="right"))]
        return self.leaves[lid].sample(rng)

    def sample_many(self, rng: np.random.Generator, n: int):
        ids, _, _, _, cdf = self._tables()
        r = rng.random(n) * cdf[-1]
        pick = np.searchsorted(cdf, r, side="right")
        out = np.empty((n, self.model.n_nodes), dtype=np.int64)
        log_q = np.empty(n)
        for li in np.unique(pick):
            mask = pick == li
            cfgs, lqs = self.leaves[ids[int(li)]].sample_many(
                rng, int(mask.sum()))
            out[mask] = cfgs
            log_q[mask] = lqs
        return out, log_q

    def argmax(self):
        """Global maximizer; exact cross-leaf ties resolve to the
        lexicographically smallest configuration."""
        ids, _, maxes, _, _ = self._tables()
        top = float(maxes.max())
        best = None
        for k, lid in enumerate(ids):
            if maxes[k] == top:
                cand = self.leaves[lid].argmax()
                if best is None or cand[0] < best[0]:
                    best = cand
        return best

    # -- refinement ----------------------------------------------------------

    def condition(self, leaf_id: int, node: int) -> list[int]:
        """Split one leaf on one node; returns the new leaf ids."""
        leaf = self.leaves.get(leaf_id)
        if leaf is None:
            raise KeyError(f"no active subspace {leaf_id}")
        if node in leaf.assigned:
            raise AlreadyConditioned(f"node {node} already set in "
                                     f"subspace {leaf_id}")
        inherited = leaf.forest.without(node)
        child_ids = []
        for v in range(self.model.domains[node]):
            child = SubspaceProposal(
                self.model, {**leaf.assigned, node: v}, inherited)
            self.bound_builds += 1
            if self.retree:
                fresh = SubspaceProposal(
                    self.model, child.assigned,
                    max_spanning_forest(self.model, child.free))
                self.bound_builds += 1
                if fresh.mass_log() < child.mass_log():
                    child = fresh
            self.leaves[self._next_id] = child
            child_ids.append(self._next_id)
            self._next_id += 1
        del self.leaves[leaf_id]
        self.conditionings += 1
        self._tables_cache = None
        return child_ids


class ImprovementQueue:
    """Eagerly scored (leaf, node) candidates for the queue policy.

    On every new leaf the exact mass drop of conditioning each free node is
    computed by building the would-be children, so this policy pays its
    lookahead in bound builds.  Entries for dead leaves are skipped on pop.
    """

    def __init__(self, proposal: PiecewiseProposal):
        self.proposal = proposal
        self.heap: list[tuple[float, int, int]] = []
        for lid in sorted(proposal.leaves):
            self.add_leaf(lid)

    def _improvement_log(self, leaf: SubspaceProposal, node: int) -> float:
        inherited = leaf.forest.without(node)
        masses = []
        for v in range(self.proposal.model.domains[node]):
            child = SubspaceProposal(
                self.proposal.model, {**leaf.assigned, node: v}, inherited)
            self.proposal.bound_builds += 1
            masses.append(child.mass_log())
        diff = float(np.logaddexp.reduce(masses)) - leaf.mass_log()
        if diff >= -1e-15:
            return -math.inf
        return leaf.mass_log() + math.log1p(-math.exp(diff))

    def add_leaf(self, leaf_id: int) -> None:
        leaf = self.proposal.leaves[leaf_id]
        for node in leaf.free:
            imp = self._improvement_log(leaf, node)
            heapq.heappush(self.heap, (-imp, leaf_id, node))

    def pop(self) -> tuple[int, int]:
        while self.heap:
            neg_imp, lid, node = heapq.heappop(self.heap)
            leaf = self.proposal.leaves.get(lid)
            if leaf is not None and node not in leaf.assigned:
                return lid, node
        raise NoUnassignedNode("improvement queue is empty")

    def active_triples(self) -> list[tuple[float, int, int]]:
        return sorted((-neg, lid, node) for neg, lid, node in self.heap
                      if lid in self.proposal.leaves
                      and node not in self.proposal.leaves[lid].assigned)


def select_refinement(proposal: PiecewiseProposal, policy: Policy,
                      reject_config, rng: np.random.Generator,
                      queue: ImprovementQueue | None = None):
    """Pick the (leaf, node) to condition next under the given policy."""
    policy = Policy(policy)
    if policy is Policy.QUEUE:
        if queue is None:
            raise ValueError("queue policy needs an ImprovementQueue")
        return queue.pop()
    if policy is Policy.MASS_LEAF:
        best_lid, best_mass = None, -math.inf
        for lid in sorted(proposal.leaves):
            leaf = proposal.leaves[lid]
            if leaf.free and leaf.mass_log() > best_mass:
                best_lid, best_mass = lid, leaf.mass_log()
        if best_lid is None:
            raise NoUnassignedNode("every subspace is fully assigned")
        free = proposal.leaves[best_lid].free
        return best_lid, free[int(rng.integers(len(free)))]
    lid = proposal.leaf_of(reject_config)
    leaf = proposal.leaves[lid]
    if not leaf.free:
        raise NoUnassignedNode(f"subspace {lid} is fully assigned")
    if policy is Policy.RANDOM_NODE:
        return lid, leaf.free[int(rng.integers(len(leaf.free)))]
    # MAX_SLACK: where does the bound overshoot this configuration most
    slack = {j: 0.0 for j in leaf.free}
    for eid in leaf.offtree_ids:
        e = proposal.model.edges[eid]
        gap = proposal.model.phi_max_log[eid] - \
            float(e.log_phi[reject_config[e.u], reject_config[e.v]])
        for j in (e.u, e.v):
            if j in slack:
                slack[j] += gap
    node, best = None, -1.0
    for j in leaf.free:
        if slack[j] > best:
            node, best = j, slack[j]
    return lid, node


def min_norm_refinement(proposal: PiecewiseProposal, reject_config,
                        norm: str) -> tuple[int, int]:
    """Exhaustive split selection in the rejected subspace.

    Conditions each free node in turn on scratch children and keeps the
    split minimizing the resulting total mass ("sum") or global max
    ("max"); smallest node id on exact ties.  Lookahead builds are charged
    to bound_builds like the queue policy's.
    """
    if norm not in ("sum", "max"):
        raise ValueError(f"norm must be 'sum' or 'max', got {norm!r}")
    lid = proposal.leaf_of(reject_config)
    leaf = proposal.leaves[lid]
    if not leaf.free:
        raise NoUnassignedNode(f"subspace {lid} is fully assigned")
    ids, masses, maxes, _, _ = proposal._tables()
    rest_mass = [masses[k] for k, i in enumerate(ids) if i != lid]
    rest_max = [maxes[k] for k, i in enumerate(ids) if i != lid]
    best_node, best_val = None, math.inf
    for j in leaf.free:
        inherited = leaf.forest.without(j)
        vals = []
        for v in range(proposal.model.domains[j]):
            child = SubspaceProposal(proposal.model,
                                     {**leaf.assigned, j: v}, inherited)
            proposal.bound_builds += 1
            vals.append(child.mass_log() if norm == "sum"
                        else child.max_log())
        if norm == "sum":
            total = float(np.logaddexp.reduce(rest_mass + vals))
        else:
            total = max(rest_max + vals)
        if total < best_val:
            best_node, best_val = j, total
    return lid, best_node


class PolicyRefiner:
    """Engine adapter: one conditioning per rejected trial.

    norm=None follows the configured policy; "sum" or "max" overrides it
    with the exhaustive minimum-norm split of the rejected subspace.
    """

    def __init__(self, proposal: PiecewiseProposal, policy: Policy, seed=0,
                 norm: str | None = None):
        self.policy = Policy(policy)
        self.norm = norm
        self.rng = np.random.default_rng(seed)
        self.queue = (ImprovementQueue(proposal)
                      if self.policy is Policy.QUEUE and norm is None
                      else None)

    def refine(self, proposal: PiecewiseProposal, config, log_p, log_q):
        if self.norm is not None:
            lid, node = min_norm_refinement(proposal, config, self.norm)
        else:
            lid, node = select_refinement(proposal, self.policy, config,
                                          self.rng, queue=self.queue)
        children = proposal.condition(lid, node)
        if self.queue is not None:
            for cid in children:
                self.queue.add_leaf(cid)
        return proposal


@dataclass
class BenchRow:
    refinement_index: int
    trials: int
    ar_hat: float
    z_hat_log: float
    pi_hat: float
    q_mass_log: float
    tau_samp: float
    tau_ref: float
    tau_tot_est: float


BENCH_COLUMNS = ["refinement_index", "ar_hat", "z_hat_log", "q_mass_log",
                 "tau_ref", "tau_samp", "tau_tot_est"]


def policy_bench(model: PairwiseModel, policy: Policy, *,
                 refinements: int = 40, trials_per_round: int = 200,
                 seed=0, retree: bool = False, n_target: int = 1):
    """Refine under one policy, measuring estimators after each step.

    Each round draws a block of trials from the frozen proposal, logs one
    row, then applies one conditioning.  Policies I and II refine at the
    round's first rejected trial; III and IV ignore the rejections.  Costs
    are deterministic units: every trial costs 1, refinement cost is the
    number of bound builds beyond the root, which charges the queue policy
    for its lookahead.  Returns (rows, proposal).
    """
    ss = np.random.SeedSequence(seed)
    trial_seed, policy_seed = ss.spawn(2)
    rng = np.random.default_rng(trial_seed)
    prng = np.random.default_rng(policy_seed)
    policy = Policy(policy)
    pw = PiecewiseProposal(model, retree=retree)
    queue = ImprovementQueue(pw) if policy is Policy.QUEUE else None

    rows: list[BenchRow] = []
    acc_z = -math.inf
    total_trials = 0
    for k in range(refinements + 1):
        configs, log_qs = pw.sample_many(rng, trials_per_round)
        log_ps = model.log_p_many(configs)
        log_r = np.minimum(0.0, log_ps - log_qs)
        accepts = rng.random(trials_per_round) < np.exp(log_r)
        mass = pw.mass_log()
        acc_z = float(np.logaddexp(acc_z,
                                   np.logaddexp.reduce(log_r) + mass))
        total_trials += trials_per_round
        z_hat_log = acc_z - math.log(total_trials)
        pi_hat = math.exp(z_hat_log - mass)
        tau_ref = float(pw.bound_builds - 1)
        tau_tot = (n_target / pi_hat + tau_ref) if pi_hat > 0 else math.inf
        rows.append(BenchRow(
            refinement_index=k, trials=total_trials,
            ar_hat=float(accepts.mean()), z_hat_log=z_hat_log,
            pi_hat=pi_hat, q_mass_log=mass, tau_samp=1.0,
            tau_ref=tau_ref, tau_tot_est=tau_tot))
        if k == refinements:
            break
        reject = None
        if policy in (Policy.RANDOM_NODE, Policy.MAX_SLACK):
            bad = np.flatnonzero(~accepts)
            if len(bad):
                reject = tuple(int(v) for v in configs[bad[0]])
            else:
                break  # acceptance is saturated; refining is pointless
        try:
            lid, node = select_refinement(pw, policy, reject, prng, queue)
        except NoUnassignedNode:
            break
        children = pw.condition(lid, node)
        if queue is not None:
            for cid in children:
                queue.add_leaf(cid)
    return rows, pw


def write_bench_csv(rows: list[BenchRow], path) -> None:
    """One CSV row per given bench row; `trials` and `pi_hat` stay API-only."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_COLUMNS)
        for r in rows:
            writer.writerow([
                r.refinement_index, repr(r.ar_hat), repr(r.z_hat_log),
                repr(r.q_mass_log), repr(r.tau_ref), repr(r.tau_samp),
                repr(r.tau_tot_est)])
