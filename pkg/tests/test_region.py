import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from police.errors import ParseError, UnsupportedError, ValidationError
from police.region import (
    Region,
    box,
    can_test_membership,
    contains,
    from_vertices,
    load_region,
    region_from_dict,
    sample_barycentric,
    simplex,
)


def test_from_vertices_triangle():
    r = from_vertices([(0, 0), (1, 0), (0, 1)])
    assert (r.n_vertices, r.dim) == (3, 2)


def test_single_vertex_and_duplicates():
    r = from_vertices([(5, 5)])
    assert r.n_vertices == 1
    assert np.array_equal(sample_barycentric(r, 10, seed=0), np.full((10, 2), 5.0))
    assert from_vertices([(0, 0), (1, 1), (1, 1)]).n_vertices == 3


@pytest.mark.parametrize("vs", [[], [(0, 0), (1,)], [(0, np.inf)], [(0, np.nan)]])
def test_from_vertices_rejects(vs):
    with pytest.raises(ValidationError):
        from_vertices(vs)


def test_simplex():
    assert np.array_equal(simplex(2).vertices, [[0, 0], [1, 0], [0, 1]])
    assert simplex(784).n_vertices == 785
    assert np.array_equal(simplex(1).vertices, [[0], [1]])
    with pytest.raises(ValidationError):
        simplex(0)


def test_box():
    r = box([-1, -1], [1, 1])
    assert r.n_vertices == 4
    assert {tuple(v) for v in r.vertices} == {(-1, -1), (1, -1), (-1, 1), (1, 1)}
    assert sorted(box([0], [2]).vertices[:, 0]) == [0, 2]
    with pytest.raises(ValidationError):
        box(np.zeros(21), np.ones(21))
    with pytest.raises(ValidationError):
        box([0, 1], [1, 1])


def test_kind_invariants():
    with pytest.raises(ValidationError):
        Region(np.zeros((3, 2)), "box")
    with pytest.raises(ValidationError):
        Region(np.zeros((4, 2)), "simplex")


def test_vertices_read_only():
    r = simplex(2)
    with pytest.raises(ValueError):
        r.vertices[0, 0] = 3.0


def test_segment_samples_in_hull():
    X = sample_barycentric(box([0], [2]), 1000, seed=3)
    assert X.min() >= 0 and X.max() <= 2


def test_sample_mean_is_centroid():
    r = from_vertices([(0, 0), (4, 0), (0, 1), (3, 3)])
    X = sample_barycentric(r, 100_000, seed=0)
    assert np.abs(X.mean(axis=0) - r.centroid()).max() <= 0.02


def test_sampling_deterministic():
    r = simplex(3)
    assert np.array_equal(sample_barycentric(r, 50, 7), sample_barycentric(r, 50, 7))


def test_contains_examples():
    assert contains(box([-1, -1], [1, 1]), (0, 0))
    assert not contains(simplex(2), (0.6, 0.6))
    for v in simplex(3).vertices:
        assert contains(simplex(3), v)
    for v in box([0, 0, 0], [1, 2, 3]).vertices:
        assert contains(box([0, 0, 0], [1, 2, 3]), v)
    with pytest.raises(UnsupportedError):
        contains(from_vertices([(0, 0), (1, 0), (0, 1)]), (0.1, 0.1))
    assert not can_test_membership(from_vertices([(0, 0)]))


@pytest.mark.parametrize("seed", range(10))
def test_samples_pass_membership(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    regions = [simplex(d), box(-rng.uniform(0.1, 2, d), rng.uniform(0.1, 2, d))]
    for r in regions:
        X = sample_barycentric(r, 10_000, seed)
        assert all(contains(r, x) for x in X[::10])
        if r.kind == "box":
            assert np.all(X >= r.vertices.min(0) - 1e-12) and np.all(X <= r.vertices.max(0) + 1e-12)
        else:
            assert np.all(X >= -1e-12) and np.all(X.sum(1) <= 1 + 1e-12)


def test_diameter():
    assert box([-1, -1], [1, 1]).diameter() == pytest.approx(np.sqrt(8))
    assert simplex(2).diameter() == pytest.approx(np.sqrt(2))
    assert from_vertices([(1, 1)]).diameter() == 0.0


def test_affine_basis_rank():
    assert simplex(3).affine_basis().shape == (3, 3)
    flat = from_vertices([(0, 0, 0), (1, 0, 0), (0, 1, 0)])
    assert flat.affine_basis().shape == (2, 3)
    assert from_vertices([(2, 2)]).affine_basis().shape == (0, 2)


def test_json_roundtrip(tmp_path):
    r = box([-1, 0], [1, 2])
    p = tmp_path / "r.json"
    r.save(p)
    back = load_region(p)
    assert back.kind == "box" and np.array_equal(back.vertices, r.vertices)
    assert region_from_dict({"vertices": [[0, 0], [1, 0], [0, 1]]}).kind == "polygon"


@pytest.mark.parametrize(
    "obj,where",
    [
        ({}, "r"),
        ({"vertices": []}, "r.vertices"),
        ({"vertices": [[0, "a"]]}, "r.vertices[0]"),
        ({"vertices": [[0, 0], [1, 0], [0, 1]], "kind": "box"}, "r"),
    ],
)
def test_region_parse_errors(obj, where):
    with pytest.raises(ParseError) as exc:
        region_from_dict(obj, "r")
    assert exc.value.path == where


def test_load_region_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError, match="bad.json"):
        load_region(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_permuting_vertices_keeps_sample_law_support(d, p, seed):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((p, d))
    perm = rng.permutation(p)
    a, b = from_vertices(V), from_vertices(V[perm])
    assert np.allclose(a.centroid(), b.centroid())
    assert a.diameter() == pytest.approx(b.diameter())
