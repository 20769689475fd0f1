"""Experiment orchestration: train a library, run recognition episodes and
compare policies, writing CSV tables and SVG plots.

Every output embeds the experiment config (and the seed where one applies).
Nothing time-dependent is written unless ``timing`` is requested, so reruns
with the same config and seeds are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .contact_sim import PRIMITIVE_KINDS, HandParams, Mesh, load_mesh, make_primitive
from .descriptor import Binning
from .geometry import QUAT_RES, TRANS_RES
from .model import Library, generate_training_grid, library_to_dict, load_library, save_library, train_object
from .planner import POLICIES, EpisodeLog, GraspWorld, PlannerConfig, PoseGraph, run_episode

log = logging.getLogger(__name__)

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


class UnknownObjectError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown object"


# ---------------------------------------------------------------------------
# Config

@dataclass(frozen=True)
class ObjectSpec:
    """A library object: a built-in primitive (``kind`` and optional ``dims``)
    or a triangle mesh read from an OBJ file (``mesh``)."""

    label: str
    kind: str | None = None
    dims: tuple[float, ...] | None = None
    mesh: str | None = None

    def __post_init__(self):
        if not self.label:
            raise ConfigError("object label must be non-empty")
        if (self.kind is None) == (self.mesh is None):
            raise ConfigError(f"object {self.label!r}: give exactly one of 'kind' or 'mesh'")
        if self.kind is not None and self.kind not in PRIMITIVE_KINDS:
            raise ConfigError(f"object {self.label!r}: unknown primitive {self.kind!r}")
        if self.dims is not None:
            object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))

    def load(self) -> Mesh:
        if self.mesh is not None:
            return load_mesh(self.mesh)
        return make_primitive(self.kind, self.dims)

    def to_dict(self) -> dict:
        d = {"label": self.label}
        if self.kind is not None:
            d["kind"] = self.kind
        if self.dims is not None:
            d["dims"] = list(self.dims)
        if self.mesh is not None:
            d["mesh"] = self.mesh
        return d


DEFAULT_OBJECTS = (
    ObjectSpec("sphere", "sphere", (0.045,)),
    ObjectSpec("box", "box", (0.06, 0.06, 0.12)),
    ObjectSpec("cylinder", "cylinder", (0.035, 0.15)),
    ObjectSpec("open_cup", "open_cup", (0.045, 0.10, 0.008)),
    ObjectSpec("bowl", "bowl", (0.075, 0.055, 0.008)),
)

_PLANNER_KEYS = ("horizon", "simulations", "c", "lam", "trans_norm", "rot_norm",
                 "rollout_movement_cost", "max_iterations", "metric", "require_support", "init_retries")


@dataclass(frozen=True)
class ExperimentConfig:
    objects: tuple[ObjectSpec, ...] = DEFAULT_OBJECTS
    grid_spacing: float = 0.045
    grid_standoff: float = 0.05
    min_ring: int = 8
    binning: Binning = Binning()
    hand: HandParams = HandParams()
    trans_res: float = TRANS_RES
    quat_res: float = QUAT_RES
    planner: PlannerConfig = PlannerConfig(max_iterations=20)
    policy: str = "tree"
    policies: tuple[str, ...] = POLICIES
    seeds: tuple[int, ...] = tuple(range(20))
    out: str = "out"
    workers: int = 1

    def __post_init__(self):
        labels = [o.label for o in self.objects]
        if not labels:
            raise ConfigError("at least one object is required")
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate object labels in {labels}")
        if not self.grid_spacing > 0:
            raise ConfigError("grid_spacing must be positive")
        if self.grid_standoff < 0:
            raise ConfigError("grid_standoff must be non-negative")
        if self.min_ring < 1:
            raise ConfigError("min_ring must be >= 1")
        if not (self.trans_res > 0 and self.quat_res > 0):
            raise ConfigError("discretization resolutions must be positive")
        for p in (self.policy, *self.policies):
            if p not in POLICIES:
                raise ConfigError(f"unknown policy {p!r}; choose from {POLICIES}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        planner = self.planner.to_dict()
        planner.pop("seed")
        return {
            "format_version": CONFIG_VERSION,
            "objects": [o.to_dict() for o in self.objects],
            "grid": {"spacing": self.grid_spacing, "standoff": self.grid_standoff, "min_ring": self.min_ring},
            "binning": self.binning.to_dict(),
            "hand": self.hand.to_dict(),
            "discretization": {"trans_res": self.trans_res, "quat_res": self.quat_res},
            "planner": planner,
            "policy": self.policy,
            "policies": list(self.policies),
            "seeds": list(self.seeds),
            "out": self.out,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if doc.get("format_version") != CONFIG_VERSION:
            raise ConfigError(f"unsupported config format_version {doc.get('format_version')!r} "
                              f"(expected {CONFIG_VERSION})")
        known = {"format_version", "objects", "grid", "binning", "hand", "discretization",
                 "planner", "policy", "policies", "seeds", "out", "workers"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kw = {}
        try:
            if "objects" in doc:
                kw["objects"] = tuple(_object_from_dict(o) for o in doc["objects"])
            if "grid" in doc:
                g = _only(doc["grid"], {"spacing", "standoff", "min_ring"}, "grid")
                if "spacing" in g:
                    kw["grid_spacing"] = float(g["spacing"])
                if "standoff" in g:
                    kw["grid_standoff"] = float(g["standoff"])
                if "min_ring" in g:
                    kw["min_ring"] = int(g["min_ring"])
            if "binning" in doc:
                b = _only(doc["binning"], {"bins", "l_max"}, "binning")
                kw["binning"] = Binning(tuple(b.get("bins", (10, 10, 10))), float(b.get("l_max", 0.25)))
            if "hand" in doc:
                names = {f.name for f in fields(HandParams)}
                kw["hand"] = HandParams(**_only(doc["hand"], names, "hand"))
            if "discretization" in doc:
                d = _only(doc["discretization"], {"trans_res", "quat_res"}, "discretization")
                if "trans_res" in d:
                    kw["trans_res"] = float(d["trans_res"])
                if "quat_res" in d:
                    kw["quat_res"] = float(d["quat_res"])
            if "planner" in doc:
                p = _only(doc["planner"], set(_PLANNER_KEYS), "planner")
                kw["planner"] = PlannerConfig(**{**ExperimentConfig.planner.to_dict(), **p})
            for key in ("policy", "out"):
                if key in doc:
                    kw[key] = str(doc[key])
            if "policies" in doc:
                kw["policies"] = tuple(str(p) for p in doc["policies"])
            if "seeds" in doc:
                kw["seeds"] = tuple(_as_int(s, "seed") for s in doc["seeds"])
            if "workers" in doc:
                kw["workers"] = _as_int(doc["workers"], "workers")
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def replace(self, **changes) -> "ExperimentConfig":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        planner_changes = {k: changes.pop(k) for k in list(changes) if k in _PLANNER_KEYS}
        if planner_changes:
            kw["planner"] = PlannerConfig(**{**self.planner.to_dict(), **planner_changes})
        kw.update(changes)
        return ExperimentConfig(**kw)

    def object_spec(self, label: str) -> ObjectSpec:
        for o in self.objects:
            if o.label == label:
                return o
        raise UnknownObjectError(f"unknown object id {label!r}; known: {[o.label for o in self.objects]}")


def _only(d, allowed: set, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"'{where}' must be an object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in '{where}': {sorted(extra)}")
    return dict(d)


def _as_int(v, what: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{what} must be an integer, got {v!r}")
    return v


def _object_from_dict(d) -> ObjectSpec:
    d = _only(d, {"label", "kind", "dims", "mesh"}, "objects[]")
    if "label" not in d:
        raise ConfigError("every object needs a 'label'")
    return ObjectSpec(str(d["label"]), d.get("kind"), d.get("dims"), d.get("mesh"))


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def _provenance(cfg: ExperimentConfig, **extra) -> str:
    return json.dumps({"config": cfg.to_dict(), **extra}, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Train

def train_library(cfg: ExperimentConfig) -> Library:
    objects = []
    for spec in cfg.objects:
        mesh = spec.load()
        poses = generate_training_grid(mesh, cfg.grid_spacing, cfg.grid_standoff, cfg.min_ring)
        objects.append(train_object(spec.label, mesh, poses, cfg.hand, cfg.binning, cfg.trans_res, cfg.quat_res))
    return Library(objects, cfg.binning, cfg.hand, cfg.trans_res, cfg.quat_res)


def library_stats(lib: Library) -> list[str]:
    lines = []
    for o in lib.objects:
        productive = sum(1 for t in o.tallies if t)
        lines.append(f"{o.label}: {len(o.poses)} poses ({productive} with triangles), "
                     f"{o.descriptor.total} triangles, {len(o.observed_bins)} bins, "
                     f"{len(o.transitions)} transition rows")
    lines.append(f"pooled action vocabulary: {len(lib.vocabulary)} keys")
    return lines


def cmd_train(cfg: ExperimentConfig, model_path=None) -> Path:
    lib = train_library(cfg)
    path = Path(model_path) if model_path else Path(cfg.out) / "model.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_library(lib, path, cfg.to_dict())
    for line in library_stats(lib):
        print(line)
    print(f"wrote {path}")
    return path


# ---------------------------------------------------------------------------
# Recognize

@dataclass
class RunRecord:
    """One iteration of one episode, flattened for tables."""

    object: str
    policy: str
    seed: int
    iteration: int
    moves: int
    contacts: int
    total_moves: int
    total_contacts: int
    distances: list[float]
    predicted: str
    correct: bool | None
    sim_rewards: list[float] = field(default_factory=list)
    wall_time: float = 0.0


def run_records(ep: EpisodeLog, name: str | None = None) -> list[RunRecord]:
    name = name if name is not None else (ep.label or "")
    return [RunRecord(name, ep.policy, ep.seed, r.iteration, r.moves, r.contacts, r.total_moves,
                      r.total_contacts, r.distances, r.predicted, r.correct, r.sim_rewards, r.wall_time)
            for r in ep.iterations]


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _correct_cell(c: bool | None) -> str:
    return "" if c is None else str(int(c))


def ranked_neighbours(distances, labels) -> list[tuple[str, float]]:
    order = sorted(range(len(labels)), key=lambda i: (distances[i], i))
    return [(labels[i], distances[i]) for i in order]


def recognition_csv(records: list[RunRecord], labels: list[str], provenance: str) -> str:
    """``iter, moves, contacts, correct`` then ranked ``nn_r, dist_r`` pairs."""
    buf = io.StringIO()
    buf.write(f"# {provenance}\n")
    w = csv.writer(buf, lineterminator="\n")
    header = ["iter", "moves", "contacts", "correct"]
    for r in range(1, len(labels) + 1):
        header += [f"nn_{r}", f"dist_{r}"]
    w.writerow(header)
    for rec in records:
        row = [rec.iteration, rec.moves, rec.contacts, _correct_cell(rec.correct)]
        for name, d in ranked_neighbours(rec.distances, labels):
            row += [name, _fmt(d)]
        w.writerow(row)
    return buf.getvalue()


class _Session:
    """Library, pose graph and per-object grasp worlds for one model file."""

    def __init__(self, lib: Library, cfg: ExperimentConfig):
        self.lib = lib
        self.cfg = cfg
        self.graph = PoseGraph(lib, cfg.planner.trans_norm, cfg.planner.rot_norm)
        self._worlds: dict[str, GraspWorld] = {}

    def world(self, label: str, mesh: Mesh | None = None) -> GraspWorld:
        if label not in self._worlds:
            if mesh is None:
                mesh = self.cfg.object_spec(label).load()
            self._worlds[label] = GraspWorld(mesh, self.graph, self.lib)
        return self._worlds[label]

    def episode(self, label: str | None, policy: str, seed: int, mesh: Mesh | None = None,
                key: str | None = None) -> EpisodeLog:
        world = self.world(key or label, mesh)
        return run_episode(world, self.lib, self.cfg.planner, policy, label=label, seed=seed)


def _model_config(model_path) -> ExperimentConfig | None:
    try:
        doc = json.loads(Path(model_path).read_text())
        embedded = doc.get("config") or None
    except (OSError, json.JSONDecodeError, AttributeError):
        return None
    return ExperimentConfig.from_dict(embedded) if embedded else None


def resolve_config(cfg: ExperimentConfig | None, model_path) -> ExperimentConfig:
    """An explicit config wins; otherwise the one embedded at training time."""
    if cfg is not None:
        return cfg
    embedded = _model_config(model_path)
    return embedded if embedded is not None else ExperimentConfig()


def cmd_recognize(cfg: ExperimentConfig, model_path, object_id: str | None = None, mesh_path=None,
                  policy: str | None = None, seed: int | None = None, timing: bool = False):
    """One episode on a library object (``object_id``) or a held-out OBJ mesh.

    Writes ``recognize_<name>_<policy>_s<seed>.csv`` and the matching episode
    log as JSON; returns both paths.
    """
    lib = load_library(model_path)
    policy = policy or cfg.policy
    seed = cfg.seeds[0] if seed is None else seed
    session = _Session(lib, cfg)
    if mesh_path is not None:
        mesh = load_mesh(mesh_path)
        name = Path(mesh_path).stem
        label = object_id if object_id in lib.labels else None
        ep = session.episode(label, policy, seed, mesh=mesh, key=f"mesh:{mesh_path}")
    else:
        if object_id is None:
            raise UnknownObjectError("an object id or a mesh path is required")
        if object_id not in lib.labels:
            raise UnknownObjectError(f"unknown object id {object_id!r}; model has {lib.labels}")
        name = label = object_id
        ep = session.episode(label, policy, seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"recognize_{name}_{policy}_s{seed}"
    prov = _provenance(cfg, seed=seed, policy=policy, object=name)
    csv_path = out / f"{stem}.csv"
    csv_path.write_text(recognition_csv(run_records(ep, name), lib.labels, prov))
    json_path = out / f"{stem}.json"
    doc = {"provenance": json.loads(prov), "episode": ep.to_dict(timing)}
    json_path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    last = ep.iterations[-1] if ep.iterations else None
    if last is not None:
        print(f"{name}: {len(ep.iterations)} iterations ({ep.terminated_by}), "
              f"predicted {last.predicted}, first correct after {ep.first_correct_moves()} grasps")
    print(f"wrote {csv_path} and {json_path}")
    return csv_path, json_path


# ---------------------------------------------------------------------------
# Compare

_WORKER: _Session | None = None


def _init_worker(model_doc: dict, cfg_doc: dict):
    global _WORKER
    from .model import library_from_dict
    _WORKER = _Session(library_from_dict(model_doc), ExperimentConfig.from_dict(cfg_doc))


def _run_cell(cell):
    label, policy, seed = cell
    return _WORKER.episode(label, policy, seed)


def run_grid(lib: Library, cfg: ExperimentConfig, policies, labels=None) -> dict:
    """Episodes for every (policy, object, seed) cell, keyed by that triple."""
    labels = list(labels or lib.labels)
    cells = [(lab, pol, s) for pol in policies for lab in labels for s in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker,
                                 initargs=(library_to_dict(lib), cfg.to_dict())) as pool:
            eps = list(pool.map(_run_cell, cells, chunksize=max(1, len(cells) // (4 * cfg.workers))))
    else:
        session = _Session(lib, cfg)
        eps = [session.episode(lab, pol, s) for lab, pol, s in cells]
    return {(pol, lab, s): ep for (lab, pol, s), ep in zip(cells, eps)}


def _median_or_never(vals, never: float) -> float:
    """Median with unreached episodes counted as ``never`` (beyond any reached value)."""
    return float(np.median([never if v is None else v for v in vals]))


@dataclass
class PolicySummary:
    policy: str
    object: str
    episodes: int
    median_first_correct_moves: float
    median_first_correct_iter: float
    median_consecutive3_iter: float
    first_correct_rate: float
    final_hits: int
    mean_iterations: float


def summarize(episodes: dict, cfg: ExperimentConfig, policies, labels) -> list[PolicySummary]:
    """Unreached events count as ``inf`` inside the median."""
    out = []
    for pol in policies:
        for lab in labels:
            eps = [episodes[(pol, lab, s)] for s in cfg.seeds]
            fcm = [e.first_correct_moves() for e in eps]
            out.append(PolicySummary(
                pol, lab, len(eps),
                _median_or_never(fcm, np.inf),
                _median_or_never([e.first_correct_iteration() for e in eps], np.inf),
                _median_or_never([e.consecutive_correct_iteration() for e in eps], np.inf),
                sum(v is not None for v in fcm) / len(eps),
                sum(bool(e.iterations and e.iterations[-1].correct) for e in eps),
                float(np.mean([len(e.iterations) for e in eps])),
            ))
    return out


def _num(x: float) -> str:
    return "inf" if np.isinf(x) else f"{x:g}"


def summary_csv(rows: list[PolicySummary], provenance: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {provenance}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "object", "episodes", "median_first_correct_moves", "median_first_correct_iter",
                "median_consecutive3_iter", "first_correct_rate", "final_hits", "mean_iterations"])
    for r in rows:
        w.writerow([r.policy, r.object, r.episodes, _num(r.median_first_correct_moves),
                    _num(r.median_first_correct_iter), _num(r.median_consecutive3_iter),
                    f"{r.first_correct_rate:.4f}", r.final_hits, f"{r.mean_iterations:.4f}"])
    return buf.getvalue()


def iterations_csv(episodes: dict, lib: Library, provenance: str, timing: bool = False) -> str:
    buf = io.StringIO()
    buf.write(f"# {provenance}\n")
    w = csv.writer(buf, lineterminator="\n")
    header = ["policy", "object", "seed", "iter", "moves", "contacts", "total_moves", "total_contacts",
              "dist_true", "predicted", "correct"]
    if timing:
        header.append("wall_time")
    w.writerow(header)
    for (pol, lab, s), ep in episodes.items():
        t = lib.index(lab)
        for r in run_records(ep, lab):
            row = [pol, lab, s, r.iteration, r.moves, r.contacts, r.total_moves, r.total_contacts,
                   _fmt(r.distances[t]), r.predicted, _correct_cell(r.correct)]
            if timing:
                row.append(f"{r.wall_time:.6f}")
            w.writerow(row)
    return buf.getvalue()


def rewards_csv(episodes: dict, provenance: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {provenance}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "object", "seed", "iter", "simulation", "reward"])
    for (pol, lab, s), ep in episodes.items():
        for r in ep.iterations:
            for k, rew in enumerate(r.sim_rewards, 1):
                w.writerow([pol, lab, s, r.iteration, k, _fmt(rew)])
    return buf.getvalue()


def distance_curves(episodes: dict, lib: Library, policies, labels, seeds) -> dict:
    """Median distance to the true class per iteration, over seeds.

    Episodes shorter than the longest carry their last value forward.
    """
    curves = {}
    for pol in policies:
        for lab in labels:
            t = lib.index(lab)
            tracks = [[r.distances[t] for r in episodes[(pol, lab, s)].iterations] for s in seeds]
            n = max((len(tr) for tr in tracks), default=0)
            if n == 0:
                curves[(pol, lab)] = []
                continue
            padded = np.array([tr + [tr[-1]] * (n - len(tr)) for tr in tracks if tr])
            curves[(pol, lab)] = [float(v) for v in np.median(padded, axis=0)]
    return curves


# ---------------------------------------------------------------------------
# SVG

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
_DASHES = ("", "6,4", "2,3", "8,3,2,3")


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def svg_line_plot(series, title: str, xlabel: str, ylabel: str, provenance: str = "",
                  width: int = 720, height: int = 440) -> str:
    """Static line plot. ``series`` holds ``(name, xs, ys, color, dash)`` tuples."""
    ml, mr, mt, mb = 60, 170, 36, 48
    pw, ph = width - ml - mr, height - mt - mb
    xs_all = [x for s in series for x in s[1]] or [0.0, 1.0]
    ys_all = [y for s in series for y in s[2]] or [0.0, 1.0]
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(0.0, min(ys_all)), max(ys_all)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">']
    if provenance:
        out.append(f"<metadata>{_esc(provenance)}</metadata>")
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    out.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for k in range(6):
        yv = y0 + (y1 - y0) * k / 5
        xv = x0 + (x1 - x0) * k / 5
        out.append(f'<line x1="{ml - 4}" y1="{py(yv):.2f}" x2="{ml}" y2="{py(yv):.2f}" stroke="#444"/>')
        out.append(f'<text x="{ml - 6}" y="{py(yv) + 4:.2f}" text-anchor="end">{yv:.3g}</text>')
        out.append(f'<line x1="{px(xv):.2f}" y1="{mt + ph}" x2="{px(xv):.2f}" y2="{mt + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{px(xv):.2f}" y="{mt + ph + 16}" text-anchor="middle">{xv:.3g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for n, (name, xs, ys, color, dash) in enumerate(series):
        if not xs:
            continue
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"{dash_attr}/>')
        ly = mt + 12 + 15 * n
        lx = ml + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="1.6"{dash_attr}/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def distance_plot(curves: dict, policies, labels, provenance: str = "") -> str:
    series = []
    for oi, lab in enumerate(labels):
        for pi, pol in enumerate(policies):
            ys = curves[(pol, lab)]
            series.append((f"{lab} ({pol})", list(range(1, len(ys) + 1)), ys,
                           _COLORS[oi % len(_COLORS)], _DASHES[pi % len(_DASHES)]))
    return svg_line_plot(series, "Distance to true class vs. iteration (median over seeds)",
                         "iteration", "distance to true class", provenance)


def reward_plot(ep: EpisodeLog, provenance: str = "") -> str:
    series = []
    for n, r in enumerate(ep.iterations):
        if r.sim_rewards:
            series.append((f"iteration {r.iteration}", list(range(1, len(r.sim_rewards) + 1)),
                           r.sim_rewards, _COLORS[n % len(_COLORS)], _DASHES[(n // len(_COLORS)) % len(_DASHES)]))
    return svg_line_plot(series, f"Rewards vs. simulation: {ep.label} ({ep.policy}, seed {ep.seed})",
                         "simulation", "reward", provenance)


def cmd_compare(cfg: ExperimentConfig, model_path, policies=None, timing: bool = False) -> dict:
    """Run every (policy, object, seed) cell and write tables and plots.

    Returns the written paths keyed by artifact name.
    """
    policies = tuple(policies or cfg.policies)
    if len(policies) < 2:
        raise ConfigError("compare needs >=2 policies")
    if len(set(policies)) != len(policies):
        raise ConfigError(f"duplicate policies in {list(policies)}")
    lib = load_library(model_path)
    labels = lib.labels
    missing = [lab for lab in labels if lab not in {o.label for o in cfg.objects}]
    if missing:
        raise UnknownObjectError(f"model objects {missing} have no mesh in the config")
    episodes = run_grid(lib, cfg, policies, labels)
    prov = _provenance(cfg, policies=list(policies), seeds=list(cfg.seeds))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "summary": out / "compare_summary.csv",
        "iterations": out / "compare_iterations.csv",
        "rewards": out / "compare_rewards.csv",
        "distance_svg": out / "compare_distance.svg",
        "reward_svg": out / "compare_rewards.svg",
    }
    rows = summarize(episodes, cfg, policies, labels)
    paths["summary"].write_text(summary_csv(rows, prov))
    paths["iterations"].write_text(iterations_csv(episodes, lib, prov, timing))
    paths["rewards"].write_text(rewards_csv(episodes, prov))
    curves = distance_curves(episodes, lib, policies, labels, cfg.seeds)
    paths["distance_svg"].write_text(distance_plot(curves, policies, labels, prov))
    planned = [p for p in policies if p != "random"]
    ep = episodes[(planned[0], labels[0], cfg.seeds[0])] if planned else None
    paths["reward_svg"].write_text(reward_plot(ep, prov) if ep else svg_line_plot([], "Rewards vs. simulation",
                                                                              "simulation", "reward", prov))
    for r in rows:
        print(f"{r.policy:7s} {r.object:12s} median first-correct grasps {_num(r.median_first_correct_moves):>5s}  "
              f"3-in-a-row iter {_num(r.median_consecutive3_iter):>5s}  final hits {r.final_hits}/{r.episodes}")
    for p in paths.values():
        print(f"wrote {p}")
    return paths
