"""Training stage: per-object descriptors, pose grids, observation tallies and
the observation-transition tables ``p(z' | z, a, y)``.

Also hosts the nearest-neighbour class posterior, the misclassification
cost, observation sampling for the planner, and the model file format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .contact_sim import HandParams, Mesh, guarded_enclosure
from .descriptor import (
    METRICS,
    BinIndex,
    Binning,
    HistogramDescriptor,
    accumulate,
    observe,
)
from .geometry import QUAT_RES, TRANS_RES, ActionKey, Pose, discretize_action, relative_action

FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class ModelFileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Pose grid

def _look_at_axis(approach, up) -> np.ndarray:
    """Rotation whose z column is ``approach`` and x column is ``up`` projected orthogonal to it."""
    z = np.asarray(approach, dtype=float)
    z = z / np.linalg.norm(z)
    x = np.asarray(up, dtype=float) - np.dot(up, z) * z
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def _pose_from_frame(origin, rot) -> Pose:
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = origin
    return Pose.from_matrix(m)


def generate_training_grid(mesh: Mesh, spacing: float, standoff: float = 0.04,
                           min_ring: int = 8) -> list[Pose]:
    """Wrist poses on a cylinder-plus-cap lattice around the mesh.

    Side poses sit on a vertical cylinder ``standoff`` outside the mesh's
    radial extent, approach axis horizontal toward the vertical axis, wrist x
    pointing up. Cap poses sit ``standoff`` above the top, approaching
    straight down. Poses are in the object frame.
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    if standoff < 0:
        raise ValueError("standoff must be non-negative")
    lo, hi = mesh.bounds
    cx, cy = 0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])
    radial = float(np.max(np.hypot(mesh.vertices[:, 0] - cx, mesh.vertices[:, 1] - cy)))
    height = float(hi[2] - lo[2])

    poses = []
    r_wrist = radial + standoff
    n_rows = int(math.floor(height / spacing + 1e-9)) + 1
    if n_rows == 1:
        zs = [0.5 * (lo[2] + hi[2])]
    else:
        used = (n_rows - 1) * spacing
        z0 = 0.5 * (lo[2] + hi[2]) - used / 2
        zs = [z0 + r * spacing for r in range(n_rows)]
    per_ring = max(min_ring, int(math.ceil(2 * math.pi * r_wrist / spacing - 1e-9)))
    up = np.array([0.0, 0.0, 1.0])
    for row, z in enumerate(zs):
        phase = (math.pi / per_ring) * (row % 2)
        for k in range(per_ring):
            ang = phase + 2 * math.pi * k / per_ring
            radial_dir = np.array([math.cos(ang), math.sin(ang), 0.0])
            origin = np.array([cx, cy, z]) + r_wrist * radial_dir
            poses.append(_pose_from_frame(origin, _look_at_axis(-radial_dir, up)))

    top = hi[2] + standoff
    down = np.array([0.0, 0.0, -1.0])
    poses.append(_pose_from_frame([cx, cy, top], _look_at_axis(down, [1.0, 0.0, 0.0])))
    ring = 1
    while ring * spacing <= radial + 1e-9:
        rr = ring * spacing
        n = max(6, int(math.ceil(2 * math.pi * rr / spacing - 1e-9)))
        for k in range(n):
            ang = 2 * math.pi * k / n
            radial_dir = np.array([math.cos(ang), math.sin(ang), 0.0])
            origin = np.array([cx, cy, top]) + rr * radial_dir
            poses.append(_pose_from_frame(origin, _look_at_axis(down, radial_dir)))
        ring += 1
    return poses


# ---------------------------------------------------------------------------
# Transition tables

class TransitionTable:
    """Sparse ``(z, action key) -> {z': count}``; rows are normalized on read."""

    def __init__(self, counts: dict | None = None):
        self.counts: dict[tuple[BinIndex, ActionKey], dict[BinIndex, int]] = counts or {}
        self._rows: dict = {}

    def __len__(self):
        return len(self.counts)

    def __contains__(self, za):
        return za in self.counts

    def keys(self):
        return self.counts.keys()

    def row(self, z: BinIndex, a: ActionKey):
        """``(outcomes, probabilities, cdf)`` for a stored row, else ``None``."""
        key = (z, a)
        cached = self._rows.get(key)
        if cached is not None:
            return cached
        raw = self.counts.get(key)
        if raw is None:
            return None
        outcomes = tuple(sorted(raw))
        c = np.array([raw[o] for o in outcomes], dtype=float)
        p = c / c.sum()
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        cached = (outcomes, p, cdf)
        self._rows[key] = cached
        return cached

    def distribution(self, z: BinIndex, a: ActionKey) -> dict[BinIndex, float]:
        r = self.row(z, a)
        if r is None:
            return {}
        return {o: float(p) for o, p in zip(r[0], r[1])}


def pair_keys(poses: list[Pose], trans_res: float = TRANS_RES, quat_res: float = QUAT_RES):
    """Action key for every ordered pose pair, ``keys[i][j]``."""
    return [[discretize_action(relative_action(pi, pj), trans_res, quat_res) for pj in poses] for pi in poses]


def build_transition_table(tallies, poses, trans_res: float = TRANS_RES,
                           quat_res: float = QUAT_RES) -> TransitionTable:
    if len(tallies) != len(poses):
        raise ValueError("tallies and poses must align")
    keys = pair_keys(poses, trans_res, quat_res)
    counts: dict = {}
    for i, zi in enumerate(tallies):
        if not zi:
            continue
        for j, zj in enumerate(tallies):
            if not zj:
                continue
            k = keys[i][j]
            for z in zi:
                row = counts.setdefault((z, k), {})
                for z2 in zj:
                    row[z2] = row.get(z2, 0) + 1
    return TransitionTable(counts)


# ---------------------------------------------------------------------------
# Trained objects and library

@dataclass
class TrainedObject:
    label: str
    descriptor: HistogramDescriptor
    poses: list[Pose]
    tallies: list[list[BinIndex]]
    transitions: TransitionTable
    contact_counts: list[int] = field(default_factory=list)

    @cached_property
    def observed_bins(self) -> list[BinIndex]:
        return self.descriptor.nonzero_bins()

    def rebuild_descriptor(self) -> HistogramDescriptor:
        h = HistogramDescriptor.empty(Binning(self.descriptor.counts.shape))
        for zs in self.tallies:
            h = accumulate(h, zs)
        return h


def train_object(label: str, mesh: Mesh, poses: list[Pose], hand: HandParams = HandParams(),
                 binning: Binning = Binning(), trans_res: float = TRANS_RES,
                 quat_res: float = QUAT_RES) -> TrainedObject:
    if not poses:
        raise TrainingError("training needs at least one pose")
    tallies, n_contacts = [], []
    h = HistogramDescriptor.empty(binning)
    for p in poses:
        c = guarded_enclosure(mesh, p, hand)
        zs = observe(c, binning)
        tallies.append(zs)
        n_contacts.append(len(c))
        h = accumulate(h, zs)
    if h.total == 0:
        raise TrainingError(f"object {label!r}: no pose produced a triangle observation")
    table = build_transition_table(tallies, poses, trans_res, quat_res)
    return TrainedObject(label, h, list(poses), tallies, table, n_contacts)


class Library:
    def __init__(self, objects: list[TrainedObject], binning: Binning = Binning(),
                 hand: HandParams = HandParams(), trans_res: float = TRANS_RES,
                 quat_res: float = QUAT_RES):
        labels = [o.label for o in objects]
        if len(set(labels)) != len(labels):
            raise ValueError(f"class labels must be unique: {labels}")
        self.objects = list(objects)
        self.binning = binning
        self.hand = hand
        self.trans_res = trans_res
        self.quat_res = quat_res
        vocab = set()
        for o in self.objects:
            for z, k in o.transitions.keys():
                vocab.add(k)
            for i, pi in enumerate(o.poses):
                for pj in o.poses:
                    vocab.add(discretize_action(relative_action(pi, pj), trans_res, quat_res))
        self.vocabulary: list[ActionKey] = sorted(vocab)
        self._vocab_set = frozenset(vocab)

    def __len__(self):
        return len(self.objects)

    @property
    def labels(self) -> list[str]:
        return [o.label for o in self.objects]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown object {label!r}; known: {self.labels}") from None

    def in_vocabulary(self, key: ActionKey) -> bool:
        return key in self._vocab_set

    def support(self, z: BinIndex) -> frozenset:
        """Action keys with a stored transition row from ``z`` in at least one class."""
        return self._support.get(z, frozenset())

    @cached_property
    def _support(self) -> dict:
        out: dict = {}
        for o in self.objects:
            for z, k in o.transitions.keys():
                out.setdefault(z, set()).add(k)
        return {z: frozenset(ks) for z, ks in out.items()}

    @cached_property
    def descriptor_matrix(self) -> np.ndarray:
        return np.stack([o.descriptor.flat().astype(float) for o in self.objects])

    @cached_property
    def _unit_descriptors(self) -> np.ndarray:
        d = self.descriptor_matrix
        return d / np.linalg.norm(d, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Posterior and sampling

@dataclass(frozen=True)
class ClassPosterior:
    labels: tuple[str, ...]
    probs: np.ndarray
    distances: np.ndarray

    @property
    def predicted(self) -> str:
        return self.labels[self.predicted_index]

    @property
    def predicted_index(self) -> int:
        return int(np.argmax(self.probs))

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c


def posterior_from_distances(labels, distances) -> ClassPosterior:
    d = np.asarray(distances, dtype=float)
    if not len(d):
        raise ValueError("empty library")
    sim = 1.0 - d
    total = sim.sum()
    if total <= 0:
        p = np.full(len(d), 1.0 / len(d))
    else:
        p = sim / total
    return ClassPosterior(tuple(labels), p, d)


def class_distances(h, lib: Library, metric: str = "cosine") -> np.ndarray:
    if not len(lib):
        raise ValueError("empty library")
    vec = h.flat().astype(float) if isinstance(h, HistogramDescriptor) else np.asarray(h, dtype=float).reshape(-1)
    if metric == "cosine":
        n = np.linalg.norm(vec)
        if n == 0:
            raise ValueError("cosine distance undefined for an all-zero histogram")
        d = 1.0 - lib._unit_descriptors @ (vec / n)
        return np.clip(d, 0.0, 1.0)
    fn = METRICS[metric]
    return np.array([fn(vec, o.descriptor) for o in lib.objects])


def class_posterior(h, lib: Library, metric: str = "cosine") -> ClassPosterior:
    return posterior_from_distances(lib.labels, class_distances(h, lib, metric))


def misclassification_cost(post: ClassPosterior) -> float:
    return float(1.0 - np.max(post.probs))


def sample_next_observation(z: BinIndex, a: ActionKey, post: ClassPosterior, lib: Library,
                            rng: np.random.Generator) -> BinIndex:
    y = int(np.searchsorted(post.cdf, rng.random(), side="right"))
    y = min(y, len(lib.objects) - 1)
    obj = lib.objects[y]
    row = obj.transitions.row(z, a)
    if row is None:
        bins = obj.observed_bins
        return bins[int(rng.integers(len(bins)))]
    outcomes, _, cdf = row
    n = int(np.searchsorted(cdf, rng.random(), side="right"))
    return outcomes[min(n, len(outcomes) - 1)]


def mixture_distribution(z: BinIndex, a: ActionKey, post: ClassPosterior, lib: Library) -> dict[BinIndex, float]:
    """Analytic ``sum_y p(z'|z,a,y) p(y|h)`` including the per-class fallback."""
    out: dict[BinIndex, float] = {}
    for py, obj in zip(post.probs, lib.objects):
        dist = obj.transitions.distribution(z, a)
        if not dist:
            bins = obj.observed_bins
            dist = {b: 1.0 / len(bins) for b in bins}
        for o, p in dist.items():
            out[o] = out.get(o, 0.0) + float(py) * p
    return out


# ---------------------------------------------------------------------------
# Model file

def library_to_dict(lib: Library, config: dict | None = None) -> dict:
    objs = []
    for o in lib.objects:
        table = []
        for (z, k) in sorted(o.transitions.counts):
            row = o.transitions.counts[(z, k)]
            table.append({
                "z": list(z),
                "a": [list(k.translation), list(k.rotation)],
                "next": [[*zz, row[zz]] for zz in sorted(row)],
            })
        objs.append({
            "label": o.label,
            "descriptor": [[*map(int, ijk), int(o.descriptor.counts[tuple(ijk)])]
                           for ijk in np.argwhere(o.descriptor.counts > 0)],
            "poses": [p.as_list() for p in o.poses],
            "tallies": [[list(z) for z in zs] for zs in o.tallies],
            "contact_counts": list(o.contact_counts),
            "transitions": table,
        })
    return {
        "format_version": FORMAT_VERSION,
        "binning": lib.binning.to_dict(),
        "hand": lib.hand.to_dict(),
        "discretization": {"trans_res": lib.trans_res, "quat_res": lib.quat_res},
        "config": config or {},
        "objects": objs,
    }


def save_library(lib: Library, path, config: dict | None = None) -> None:
    text = json.dumps(library_to_dict(lib, config), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n")


def library_from_dict(doc: dict) -> Library:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format_version {doc.get('format_version')!r} "
                             f"(expected {FORMAT_VERSION})")
    try:
        b = doc["binning"]
        binning = Binning(tuple(b["bins"]), float(b["l_max"]))
        hand = HandParams(**doc["hand"])
        disc = doc["discretization"]
        trans_res, quat_res = float(disc["trans_res"]), float(disc["quat_res"])
        objects = []
        for od in doc["objects"]:
            h = HistogramDescriptor.empty(binning)
            for i, j, k, c in od["descriptor"]:
                h.counts[i, j, k] = c
            poses = [Pose.from_list(p) for p in od["poses"]]
            tallies = [[BinIndex(*z) for z in zs] for zs in od["tallies"]]
            counts = {}
            for row in od["transitions"]:
                key = (BinIndex(*row["z"]), ActionKey(tuple(row["a"][0]), tuple(row["a"][1])))
                counts[key] = {BinIndex(i, j, k): int(c) for i, j, k, c in row["next"]}
            obj = TrainedObject(od["label"], h, poses, tallies, TransitionTable(counts),
                                list(od.get("contact_counts", [])))
            if len(obj.tallies) != len(obj.poses):
                raise ModelFileError(f"object {obj.label!r}: {len(tallies)} tallies for {len(poses)} poses")
            if obj.rebuild_descriptor() != h:
                raise ModelFileError(f"object {obj.label!r}: descriptor does not match its tallies")
            objects.append(obj)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFileError):
            raise
        raise ModelFileError(f"malformed model file: {exc}") from exc
    return Library(objects, binning, hand, trans_res, quat_res)


def load_library(path) -> Library:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    return library_from_dict(doc)
