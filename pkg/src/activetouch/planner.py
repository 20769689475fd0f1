"""Monte Carlo tree search over relative wrist motions.

A tree node holds the histogram accumulated along its path and the single
observation ``z`` that conditions the next transition. Edges are quantized
actions; each edge keeps the running mean reward ``Q`` of every simulation
that passed through it. A simulation descends by UCT, samples the next
observation from the learned transition model, creates exactly one new node,
finishes with a random rollout to the horizon and backs the reward up.

Rewards mirror the planning objective: every edge contributes
``(lam / T) * (1 - movement_cost)`` and the horizon contributes
``(1 - lam) * max_y p(y | h_T)``, so a full path scores ``1 - C_T``.

Actions are tied to the pooled training poses ("nominal poses") superimposed
on the test object. An action is admissible at a node when it is in the
library vocabulary and lands on a nominal pose not yet visited on that path;
a pose is executed at most once per episode.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .contact_sim import Mesh, guarded_enclosure
from .descriptor import BinIndex, observe
from .geometry import (
    ROT_NORM,
    TRANS_NORM,
    Action,
    ActionKey,
    Pose,
    discretize_action,
    movement_cost,
    relative_action,
)
from .model import (
    ClassPosterior,
    Library,
    class_distances,
    posterior_from_distances,
    sample_next_observation,
)

POLICIES = ("tree", "greedy", "random")


class ExhaustedError(RuntimeError):
    """No admissible action remains."""


class EpisodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 5
    simulations: int = 20
    c: float = 1.0
    lam: float = 0.5
    seed: int = 0
    trans_norm: float = TRANS_NORM
    rot_norm: float = ROT_NORM
    rollout_movement_cost: bool = True
    max_iterations: int | None = None
    metric: str = "cosine"
    require_support: bool = False
    init_retries: int = 50

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.simulations < 1:
            raise ValueError("simulations must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.c < 0:
            raise ValueError("exploration weight must be non-negative")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# ---------------------------------------------------------------------------
# Nominal pose graph

class PoseGraph:
    """Pooled nominal poses and the quantized action between every pair."""

    def __init__(self, lib: Library, trans_norm: float = TRANS_NORM, rot_norm: float = ROT_NORM):
        self.lib = lib
        self.poses: list[Pose] = []
        self.origin: list[tuple[str, int]] = []
        for o in lib.objects:
            for n, p in enumerate(o.poses):
                self.poses.append(p)
                self.origin.append((o.label, n))
        n = len(self.poses)
        self.cost = np.zeros((n, n))
        self.keys: list[list[ActionKey]] = []
        self._moves: list[list[tuple[ActionKey, tuple[int, ...]]]] = []
        for i, pi in enumerate(self.poses):
            inv = pi.inverse()
            row_keys = []
            groups: dict[ActionKey, list[int]] = {}
            for j, pj in enumerate(self.poses):
                a = inv.compose(pj)
                k = discretize_action(a, lib.trans_res, lib.quat_res)
                row_keys.append(k)
                self.cost[i, j] = movement_cost(a, trans_norm, rot_norm)
                if j != i and lib.in_vocabulary(k):
                    groups.setdefault(k, []).append(j)
            self.keys.append(row_keys)
            self._moves.append(sorted((k, tuple(js)) for k, js in groups.items()))

    def __len__(self):
        return len(self.poses)

    def action(self, i: int, j: int) -> Action:
        return relative_action(self.poses[i], self.poses[j])

    def admissible(self, i: int, visited) -> list[tuple[ActionKey, int]]:
        """``(key, landing pose)`` pairs in key order; the landing pose is the
        lowest-numbered unvisited pose reached by that key."""
        out = []
        for k, js in self._moves[i]:
            for j in js:
                if j not in visited:
                    out.append((k, j))
                    break
        return out


# ---------------------------------------------------------------------------
# Tree

@dataclass
class EdgeStats:
    action: ActionKey
    target: int = -1
    cost: float = 0.0
    Q: float = 0.0
    N_a: int = 0
    children: dict = field(default_factory=dict)


def update_reward(edge: EdgeStats, r: float) -> None:
    """Incremental mean; ``edge.N_a`` must already count this visit."""
    edge.Q += (r - edge.Q) / edge.N_a


class TreeNode:
    __slots__ = ("depth", "z", "h", "pose", "visited", "N", "edges", "candidates", "_posterior")

    def __init__(self, depth: int, z: BinIndex, h: np.ndarray, pose: int = -1,
                 visited: frozenset = frozenset(), candidates=None):
        self.depth = depth
        self.z = z
        self.h = h
        self.pose = pose
        self.visited = visited
        self.N = 0
        self.edges: dict[ActionKey, EdgeStats] = {}
        self.candidates: list[tuple[ActionKey, int]] = candidates or []
        self._posterior = None

    def count(self) -> int:
        """Nodes in this subtree, including self."""
        return 1 + sum(ch.count() for e in self.edges.values() for ch in e.children.values())


def uct_select(node: TreeNode, c: float) -> ActionKey:
    """UCB over the node's admissible actions.

    Untried actions have an infinite bound; ties go to the lowest key.
    """
    if not node.candidates:
        raise ExhaustedError("no admissible action at node")
    log_n = math.log(node.N) if node.N > 0 else 0.0
    best_key, best_val = None, -math.inf
    for key, _ in node.candidates:  # candidates are in key order
        e = node.edges.get(key)
        if e is None or e.N_a == 0:
            return key
        val = e.Q + c * math.sqrt(2.0 * log_n / e.N_a)
        if val > best_val:
            best_key, best_val = key, val
    return best_key


class Planner:
    """One tree search per call to :meth:`search`; holds no state across searches."""

    def __init__(self, lib: Library, graph: PoseGraph, cfg: PlannerConfig):
        self.lib = lib
        self.graph = graph
        self.cfg = cfg
        self.nodes_created = 0

    # posterior with the metric the library was queried by
    def posterior(self, h: np.ndarray) -> ClassPosterior:
        return posterior_from_distances(self.lib.labels, class_distances(h, self.lib, self.cfg.metric))

    def node_posterior(self, node: TreeNode) -> ClassPosterior:
        if node._posterior is None:
            node._posterior = self.posterior(node.h)
        return node._posterior

    def terminal_reward(self, h: np.ndarray) -> float:
        return (1.0 - self.cfg.lam) * float(np.max(self.posterior(h).probs))

    def edge_reward(self, cost: float) -> float:
        return self.cfg.lam / self.cfg.horizon * (1.0 - cost)

    def admissible(self, pose: int, z: BinIndex, visited) -> list[tuple[ActionKey, int]]:
        cands = self.graph.admissible(pose, visited)
        if self.cfg.require_support:
            known = self.lib.support(z)
            # An observation no class has a row for would leave nothing to try.
            cands = [c for c in cands if c[0] in known] or cands
        return cands

    def make_root(self, h: np.ndarray, z: BinIndex, pose: int, visited) -> TreeNode:
        visited = frozenset(visited)
        return TreeNode(0, z, h.copy(), pose, visited, self.admissible(pose, z, visited))

    def tree_policy(self, node: TreeNode, rng) -> tuple[ActionKey, BinIndex]:
        key = uct_select(node, self.cfg.c)
        z_next = sample_next_observation(node.z, key, self.node_posterior(node), self.lib, rng)
        return key, z_next

    def rollout(self, h: np.ndarray, z: BinIndex, t: int, pose: int, visited, rng) -> float:
        """Random admissible actions down to the horizon on scratch state."""
        T = self.cfg.horizon
        reward = 0.0
        if t < T:
            h = h.copy()
            visited = set(visited)
        while t < T:
            cands = self.admissible(pose, z, visited)
            if not cands:
                break
            key, j = cands[int(rng.integers(len(cands)))]
            post = self.posterior(h)
            z = sample_next_observation(z, key, post, self.lib, rng)
            h[self.lib.binning.flat(z)] += 1
            if self.cfg.rollout_movement_cost:
                reward += self.edge_reward(self.graph.cost[pose, j])
            visited.add(j)
            pose = j
            t += 1
        return reward + self.terminal_reward(h)

    def tree_search(self, node: TreeNode, rng) -> float:
        if node.depth >= self.cfg.horizon:
            return self.terminal_reward(node.h)
        if not node.candidates:
            if node.depth == 0:
                return 0.0
            return self.terminal_reward(node.h)
        key, z_next = self.tree_policy(node, rng)
        edge = node.edges.get(key)
        if edge is None:
            target = next(j for k, j in node.candidates if k == key)
            edge = EdgeStats(key, target, float(self.graph.cost[node.pose, target]))
            node.edges[key] = edge
        child = edge.children.get(z_next)
        if child is None:
            h = node.h.copy()
            h[self.lib.binning.flat(z_next)] += 1
            visited = node.visited | {edge.target}
            child = TreeNode(node.depth + 1, z_next, h, edge.target, visited,
                             self.admissible(edge.target, z_next, visited))
            edge.children[z_next] = child
            self.nodes_created += 1
            sub = self.rollout(child.h, child.z, child.depth, child.pose, child.visited, rng)
        else:
            sub = self.tree_search(child, rng)
        r = self.edge_reward(edge.cost) + sub
        node.N += 1
        edge.N_a += 1
        update_reward(edge, r)
        return r

    def search(self, root: TreeNode, rng) -> list[float]:
        return [self.tree_search(root, rng) for _ in range(self.cfg.simulations)]


def extract_best_path(root: TreeNode) -> list[EdgeStats]:
    """Follow the max-``Q`` edge (lowest key on ties) into its most visited child."""
    path = []
    node = root
    while node is not None and node.edges:
        best = None
        for key in sorted(node.edges):
            e = node.edges[key]
            if best is None or e.Q > best.Q:
                best = e
        path.append(best)
        node = None
        if best.children:
            node = max(sorted(best.children.items()), key=lambda kv: kv[1].N)[1]
    return path


def random_policy(graph: PoseGraph, current: int, visited, rng) -> tuple[int, Action]:
    options = [j for j in range(len(graph)) if j not in visited]
    if not options:
        raise ExhaustedError("every nominal pose has been visited")
    j = options[int(rng.integers(len(options)))]
    return j, graph.action(current, j)


# ---------------------------------------------------------------------------
# Episodes

class GraspWorld:
    """The test object with the nominal poses superimposed; grasps are cached
    because the simulator is deterministic."""

    def __init__(self, mesh: Mesh, graph: PoseGraph, lib: Library):
        self.mesh = mesh
        self.graph = graph
        self.lib = lib
        self._cache: dict[int, tuple[int, list[BinIndex]]] = {}

    def grasp(self, pose_id: int) -> tuple[int, list[BinIndex]]:
        hit = self._cache.get(pose_id)
        if hit is None:
            c = guarded_enclosure(self.mesh, self.graph.poses[pose_id], self.lib.hand)
            hit = (len(c), observe(c, self.lib.binning))
            self._cache[pose_id] = hit
        return hit


@dataclass
class IterationRecord:
    iteration: int
    poses: list[int]
    actions: list[ActionKey]
    moves: int
    contacts: int
    total_moves: int
    total_contacts: int
    distances: list[float]
    posterior: list[float]
    predicted: str
    correct: bool | None
    sim_rewards: list[float]
    wall_time: float = 0.0


@dataclass
class EpisodeLog:
    label: str | None
    policy: str
    seed: int
    config: dict
    labels: list[str]
    initial_poses: list[int] = field(default_factory=list)
    initial_contacts: int = 0
    iterations: list[IterationRecord] = field(default_factory=list)
    terminated_by: str = ""

    def first_correct_moves(self) -> int | None:
        for rec in self.iterations:
            if rec.correct:
                return rec.total_moves
        return None

    def first_correct_iteration(self) -> int | None:
        for rec in self.iterations:
            if rec.correct:
                return rec.iteration
        return None

    def consecutive_correct_iteration(self, run: int = 3) -> int | None:
        streak = 0
        for rec in self.iterations:
            streak = streak + 1 if rec.correct else 0
            if streak >= run:
                return rec.iteration
        return None

    def to_dict(self, timing: bool = False) -> dict:
        its = []
        for r in self.iterations:
            d = {
                "iteration": r.iteration,
                "poses": r.poses,
                "actions": [[list(k.translation), list(k.rotation)] for k in r.actions],
                "moves": r.moves,
                "contacts": r.contacts,
                "total_moves": r.total_moves,
                "total_contacts": r.total_contacts,
                "distances": r.distances,
                "posterior": r.posterior,
                "predicted": r.predicted,
                "correct": r.correct,
                "sim_rewards": r.sim_rewards,
            }
            if timing:
                d["wall_time"] = r.wall_time
            its.append(d)
        return {
            "label": self.label,
            "policy": self.policy,
            "seed": self.seed,
            "config": self.config,
            "labels": self.labels,
            "initial_poses": self.initial_poses,
            "initial_contacts": self.initial_contacts,
            "terminated_by": self.terminated_by,
            "iterations": its,
        }


def run_episode(world: GraspWorld, lib: Library, cfg: PlannerConfig, policy: str = "tree",
                label: str | None = None, seed: int | None = None) -> EpisodeLog:
    """Recognize the object in ``world`` by alternating planning and execution.

    ``policy`` is ``tree`` (horizon ``cfg.horizon``), ``greedy`` (the same
    search with horizon 1) or ``random``. The episode ends when the root has
    no admissible action (every simulation returns 0) or at
    ``cfg.max_iterations``.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
    if policy == "greedy" and cfg.horizon != 1:
        cfg = PlannerConfig(**{**cfg.to_dict(), "horizon": 1})
    seed = cfg.seed if seed is None else seed
    init_rng = np.random.default_rng([seed, 0])
    plan_rng = np.random.default_rng([seed, 1])
    graph = world.graph
    binning = lib.binning
    log = EpisodeLog(label, policy, seed, cfg.to_dict(), lib.labels)

    h = np.zeros(binning.size, dtype=np.int64)
    visited: set[int] = set()
    z = None
    current = -1
    for _ in range(cfg.init_retries):
        options = [j for j in range(len(graph)) if j not in visited]
        if not options:
            break
        current = options[int(init_rng.integers(len(options)))]
        visited.add(current)
        log.initial_poses.append(current)
        n_contacts, zs = world.grasp(current)
        log.initial_contacts += n_contacts
        for zz in zs:
            h[binning.flat(zz)] += 1
        if zs:
            z = zs[-1]
            break
    if z is None:
        raise EpisodeError(f"no initial grasp produced an observation after {len(log.initial_poses)} tries")

    total_moves = len(log.initial_poses)
    total_contacts = log.initial_contacts
    planner = Planner(lib, graph, cfg)
    iteration = 0
    while True:
        iteration += 1
        t0 = time.perf_counter()
        targets: list[int] = []
        keys: list[ActionKey] = []
        if policy == "random":
            rewards: list[float] = []
            try:
                j, _ = random_policy(graph, current, visited, plan_rng)
                targets = [j]
                keys = [graph.keys[current][j]]
            except ExhaustedError:
                pass
        else:
            root = planner.make_root(h, z, current, visited)
            rewards = planner.search(root, plan_rng)
            for e in extract_best_path(root):
                targets.append(e.target)
                keys.append(e.action)
        moves = contacts = 0
        for j in targets:
            n_contacts, zs = world.grasp(j)
            for zz in zs:
                h[binning.flat(zz)] += 1
            if zs:
                z = zs[-1]
            visited.add(j)
            current = j
            moves += 1
            contacts += n_contacts
        total_moves += moves
        total_contacts += contacts
        dist = class_distances(h, lib, cfg.metric)
        post = posterior_from_distances(lib.labels, dist)
        log.iterations.append(IterationRecord(
            iteration, targets, keys, moves, contacts, total_moves, total_contacts,
            [float(d) for d in dist], [float(p) for p in post.probs], post.predicted,
            None if label is None else post.predicted == label,
            [float(r) for r in rewards], time.perf_counter() - t0))
        if not targets:
            log.terminated_by = "depletion"
            break
        if cfg.max_iterations is not None and iteration >= cfg.max_iterations:
            log.terminated_by = "cap"
            break
    return log
