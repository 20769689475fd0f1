import json

import numpy as np
import pytest

from _fixtures import (
    KEY,
    desk_library,
    five_pose_fixture,
    line_poses,
    random_library,
    synthetic_object,
    tallied_object,
)
from activetouch.contact_sim import make_primitive
from activetouch.descriptor import BinIndex, HistogramDescriptor
from activetouch.geometry import Pose, discretize_action, relative_action
from activetouch.model import (
    Library,
    ModelFileError,
    TrainingError,
    build_transition_table,
    class_posterior,
    generate_training_grid,
    library_from_dict,
    library_to_dict,
    load_library,
    misclassification_cost,
    mixture_distribution,
    posterior_from_distances,
    sample_next_observation,
    save_library,
    train_object,
)

A, B, C = BinIndex(1, 1, 1), BinIndex(2, 2, 2), BinIndex(3, 3, 3)


# --- training grid ----------------------------------------------------------

def side_poses(poses):
    return [p for p in poses if abs(p.rotation_matrix[2, 2]) < 0.5]


def test_grid_minimum_ring():
    tiny = make_primitive("sphere", (0.005,))
    poses = generate_training_grid(tiny, spacing=1.0, standoff=0.01)
    assert len(poses) >= 8


def test_grid_halving_spacing_roughly_quadruples_side_count():
    m = make_primitive("cylinder", (0.05, 0.4))
    n1 = len(side_poses(generate_training_grid(m, 0.08, 0.05)))
    n2 = len(side_poses(generate_training_grid(m, 0.04, 0.05)))
    assert 3.0 <= n2 / n1 <= 5.0


def test_grid_rejects_bad_spacing():
    with pytest.raises(ValueError):
        generate_training_grid(make_primitive("box"), 0.0)


def test_grid_approach_axis_points_at_vertical_axis():
    m = make_primitive("box")
    for p in generate_training_grid(m, 0.05, 0.04):
        approach = p.rotation_matrix[:, 2]
        if abs(approach[2]) > 0.99:
            assert approach[2] < 0      # cap poses look down
            continue
        to_axis = -np.array([p.translation[0], p.translation[1], 0.0])
        assert np.allclose(approach, to_axis / np.linalg.norm(to_axis), atol=1e-9)


def test_desk_grids_in_reference_range():
    for o in desk_library().objects:
        assert 30 <= len(o.poses) <= 60, o.label


def test_pose_pairs_collapse_to_fewer_keys():
    for o in desk_library().objects:
        n = len(o.poses)
        keys = {discretize_action(relative_action(pi, pj)) for pi in o.poses for pj in o.poses}
        assert len(keys) < n * n


# --- training -----------------------------------------------------------------

def test_single_three_contact_pose_gives_one_triangle():
    m = make_primitive("sphere", (0.03,)).transformed(Pose([0, 0, 0.08], [1, 0, 0, 0]))
    o = train_object("s", m, [Pose.identity()])
    assert o.contact_counts == [3]
    assert o.descriptor.total == 1


def test_descriptor_is_sum_of_tallies_and_rebuilds_exactly():
    for o in desk_library().objects:
        assert o.descriptor.total == sum(len(t) for t in o.tallies)
        assert o.rebuild_descriptor() == o.descriptor


def test_all_empty_training_fails():
    with pytest.raises(TrainingError):
        train_object("far", make_primitive("sphere"), [Pose([5, 0, 0], [1, 0, 0, 0])])
    with pytest.raises(TrainingError):
        train_object("none", make_primitive("sphere"), [])


def test_empty_contact_poses_retained():
    m = make_primitive("sphere", (0.03,)).transformed(Pose([0, 0, 0.08], [1, 0, 0, 0]))
    o = train_object("s", m, [Pose.identity(), Pose([5, 0, 0], [1, 0, 0, 0])])
    assert len(o.poses) == 2 and o.tallies[1] == []


def test_training_deterministic():
    m = make_primitive("open_cup")
    poses = generate_training_grid(m, 0.05, 0.05)
    a, b = train_object("c", m, poses), train_object("c", m, poses)
    assert a.descriptor == b.descriptor and a.transitions.counts == b.transitions.counts


# --- transition tables ---------------------------------------------------------

def test_single_pose_single_observation():
    t = build_transition_table([[A]], [Pose.identity()])
    assert dict(t.counts) == {(A, KEY): {A: 1}}
    assert t.distribution(A, KEY) == {A: 1.0}


def test_two_poses_disjoint_observations():
    poses = line_poses(2)
    t = build_transition_table([[A], [B]], poses)
    assert len(t) == 4
    for (z, k), row in t.counts.items():
        assert len(row) == 1 and sum(t.distribution(z, k).values()) == 1.0


def brute_force_counts(tallies, poses):
    counts = {}
    n = len(poses)
    for i in range(n):
        for j in range(n):
            k = discretize_action(relative_action(poses[i], poses[j]))
            for z in tallies[i]:
                for z2 in tallies[j]:
                    counts[(z, k, z2)] = counts.get((z, k, z2), 0) + 1
    return counts


def test_transition_counts_match_brute_force():
    poses, tallies = five_pose_fixture()
    t = build_transition_table(tallies, poses)
    flat = {(z, k, z2): c for (z, k), row in t.counts.items() for z2, c in row.items()}
    assert flat == brute_force_counts(tallies, poses)
    for z, k in t.keys():
        assert abs(sum(t.distribution(z, k).values()) - 1.0) < 1e-9


def test_transition_table_requires_aligned_input():
    with pytest.raises(ValueError):
        build_transition_table([[A]], line_poses(2))


# --- library and posterior ---------------------------------------------------------

def test_library_unique_labels_and_index():
    o = synthetic_object("a", {}, [A])
    with pytest.raises(ValueError):
        Library([o, synthetic_object("a", {}, [B])])
    lib = Library([o])
    assert lib.index("a") == 0
    with pytest.raises(KeyError):
        lib.index("zzz")


def test_vocabulary_is_union_of_object_keys():
    lib = random_library(3, 4, seed=0)
    expected = set()
    for o in lib.objects:
        for pi in o.poses:
            for pj in o.poses:
                expected.add(discretize_action(relative_action(pi, pj)))
    assert set(lib.vocabulary) == expected
    assert lib.vocabulary == sorted(lib.vocabulary)


def test_posterior_examples():
    p = posterior_from_distances(["a", "b"], [0.1, 0.3])
    assert np.allclose(p.probs, [0.5625, 0.4375], atol=1e-12)
    assert p.predicted == "a"
    assert np.allclose(posterior_from_distances(["a"], [0.4]).probs, [1.0])
    assert np.allclose(posterior_from_distances("abc", [0.2, 0.2, 0.2]).probs, 1 / 3)
    assert np.allclose(posterior_from_distances("abcd", [1.0] * 4).probs, 0.25)
    with pytest.raises(ValueError):
        posterior_from_distances([], [])


def test_misclassification_cost_examples():
    assert misclassification_cost(posterior_from_distances(["a"], [0.5])) == 0.0
    assert misclassification_cost(posterior_from_distances("abcd", [0.3] * 4)) == pytest.approx(0.75)
    assert misclassification_cost(posterior_from_distances(["a", "b"], [0.1, 0.3])) == pytest.approx(0.4375)


def test_posterior_scale_invariant():
    lib = desk_library()
    h = lib.objects[2].descriptor.counts + lib.objects[0].descriptor.counts
    p1 = class_posterior(HistogramDescriptor(h), lib)
    p2 = class_posterior(HistogramDescriptor(7 * h), lib)
    assert np.allclose(p1.probs, p2.probs, atol=1e-12) and p1.predicted == p2.predicted
    assert abs(p1.probs.sum() - 1) < 1e-9 and (p1.probs >= 0).all()


def test_posterior_metrics_agree_on_self():
    lib = desk_library()
    for metric in ("cosine", "intersection"):
        for o in lib.objects:
            assert class_posterior(o.descriptor, lib, metric).predicted == o.label


# --- sampling ---------------------------------------------------------------------

def test_sample_deterministic_row():
    lib = Library([synthetic_object("a", {(A, KEY): {B: 3}}, [A, B])])
    post = posterior_from_distances(lib.labels, [0.0])
    rng = np.random.default_rng(0)
    assert {sample_next_observation(A, KEY, post, lib, rng) for _ in range(100)} == {B}


def test_sample_two_class_mixture_frequency():
    lib = Library([synthetic_object("a", {(A, KEY): {B: 1}}, [A, B]),
                   synthetic_object("b", {(A, KEY): {C: 1}}, [A, C])])
    post = posterior_from_distances(lib.labels, [1 - 0.75, 1 - 0.25])
    assert np.allclose(post.probs, [0.75, 0.25])
    rng = np.random.default_rng(1)
    draws = [sample_next_observation(A, KEY, post, lib, rng) for _ in range(100_000)]
    assert abs(draws.count(B) / len(draws) - 0.75) < 0.01


def test_sample_fallback_uses_observed_bins():
    lib = Library([synthetic_object("a", {}, [A, B]), synthetic_object("b", {}, [C])])
    post = posterior_from_distances(lib.labels, [0.5, 0.5])
    rng = np.random.default_rng(2)
    draws = {sample_next_observation(BinIndex(9, 9, 9), KEY, post, lib, rng) for _ in range(500)}
    assert draws == {A, B, C}


def test_sample_reproducible():
    lib = random_library(3, 4, seed=3)
    post = posterior_from_distances(lib.labels, [0.2, 0.5, 0.4])
    z, k = next(iter(lib.objects[0].transitions.keys()))
    a = [sample_next_observation(z, k, post, lib, np.random.default_rng(9)) for _ in range(5)]
    b = [sample_next_observation(z, k, post, lib, np.random.default_rng(9)) for _ in range(5)]
    assert a == b


def test_mixture_distribution_sums_to_one():
    lib = random_library(3, 5, seed=4)
    post = posterior_from_distances(lib.labels, [0.1, 0.6, 0.3])
    for o in lib.objects:
        for z, k in list(o.transitions.keys())[:20]:
            assert sum(mixture_distribution(z, k, post, lib).values()) == pytest.approx(1.0, abs=1e-12)


# --- model file ---------------------------------------------------------------------

def test_model_file_round_trip(tmp_path):
    poses, tallies = five_pose_fixture()
    lib = Library([tallied_object("x", tallies, poses), tallied_object("y", tallies[::-1], poses)])
    path = tmp_path / "m.json"
    save_library(lib, path, {"note": 1})
    lib2 = load_library(path)
    assert lib2.labels == lib.labels and lib2.vocabulary == lib.vocabulary
    for a, b in zip(lib.objects, lib2.objects):
        assert a.descriptor == b.descriptor
        assert a.transitions.counts == b.transitions.counts
        assert a.tallies == b.tallies
        assert all(np.array_equal(p.matrix(), q.matrix()) for p, q in zip(a.poses, b.poses))
    save_library(lib2, tmp_path / "m2.json", {"note": 1})
    assert path.read_bytes() == (tmp_path / "m2.json").read_bytes()


def test_model_file_rejects_version_mismatch(tmp_path):
    doc = library_to_dict(random_library(1, 3, seed=5))
    doc["format_version"] = 99
    with pytest.raises(ModelFileError, match="format_version"):
        library_from_dict(doc)


def test_model_file_rejects_tampered_descriptor():
    doc = library_to_dict(random_library(1, 3, seed=6))
    doc["objects"][0]["descriptor"][0][3] += 1
    with pytest.raises(ModelFileError, match="descriptor"):
        library_from_dict(doc)


def test_model_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ModelFileError):
        load_library(p)
    p.write_text(json.dumps({"format_version": 1}))
    with pytest.raises(ModelFileError):
        load_library(p)
    with pytest.raises(ModelFileError):
        load_library(tmp_path / "missing.json")


def test_retrain_gives_identical_model_file(tmp_path):
    m = make_primitive("sphere", (0.045,))
    poses = generate_training_grid(m, 0.045, 0.05)
    for name in ("a.json", "b.json"):
        save_library(Library([train_object("s", m, poses)]), tmp_path / name)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
