import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from equicalib.groups import (GroupSpecError, WeightedDataset, apply,
                              build_group, decompose_orbits, set_distance)
from equicalib.data import gen_circle20, gen_permutation24


@pytest.fixture(scope="module")
def c4():
    return build_group("cyclic:4")


class TestBuildGroup:
    def test_cyclic4_rotations(self, c4):
        assert c4.order == 4
        expected = np.array([[0.0, -1.0], [1.0, 0.0]])
        np.testing.assert_allclose(c4.input_reps[1].matrix, expected, atol=1e-15)

    def test_reflect_x(self):
        g = build_group("reflect-x")
        assert g.order == 2
        np.testing.assert_array_equal(g.input_reps[1].matrix, np.diag([1.0, -1.0]))

    def test_symmetric4(self):
        g = build_group("symmetric:4")
        assert g.order == 24

    def test_symmetric_rejects_large(self):
        with pytest.raises(GroupSpecError):
            build_group("symmetric:9")

    def test_unknown_family(self):
        with pytest.raises(GroupSpecError):
            build_group("bogus:3")

    def test_dihedral_order(self):
        assert build_group("dihedral:5").order == 10

    def test_zswap_is_involution(self):
        g = build_group("z-swap", ambient_dim=3)
        p = np.array([0.3, -0.2, 0.0])
        moved = apply(g, g.elements[1], p)
        np.testing.assert_allclose(moved, [0.3, -0.2, 1.0], atol=0)
        back = apply(g, g.elements[1], moved)
        np.testing.assert_array_equal(back, p)

    @pytest.mark.parametrize("spec,order", [("cyclic:1", 1), ("cyclic:7", 7),
                                            ("dihedral:3", 6), ("symmetric:3", 6)])
    def test_orders(self, spec, order):
        assert build_group(spec).order == order


class TestGroupStructure:
    @pytest.mark.parametrize("spec", ["cyclic:6", "dihedral:4", "symmetric:3",
                                      "reflect-x"])
    def test_closure_and_inverses(self, spec):
        g = build_group(spec)
        ident = g.identity
        for a in g.elements:
            inv = g.inverse(a)
            assert inv is not None
            assert g.compose(a, inv) == ident
            for b in g.elements:
                assert g.compose(a, b) in g.elements

    def test_identity_acts_trivially(self, c4):
        p = np.array([0.7, -1.3])
        np.testing.assert_array_equal(apply(c4, c4.identity, p), p)

    def test_rotation_applies(self, c4):
        np.testing.assert_allclose(apply(c4, c4.elements[1], np.array([1.0, 0.0])),
                                   [0.0, 1.0], atol=1e-15)

    def test_reflection_applies(self):
        g = build_group("reflect-x")
        np.testing.assert_allclose(apply(g, g.elements[1], np.array([0.5, 0.3])),
                                   [0.5, -0.3], atol=0)

    def test_permutation_applies(self):
        g = build_group("symmetric:4")
        swap = next(e for e, rep in zip(g.elements, g.input_reps)
                    if np.array_equal(rep.perm, [1, 0, 2, 3]))
        mat = np.arange(12, dtype=float).reshape(4, 3)
        moved = apply(g, swap, mat)
        np.testing.assert_array_equal(moved[0], mat[1])
        np.testing.assert_array_equal(moved[1], mat[0])

    def test_shape_mismatch_rejected(self, c4):
        with pytest.raises(ValueError):
            apply(c4, c4.elements[1], np.array([1.0, 2.0, 3.0]))

    def test_output_side_requires_rep(self, c4):
        with pytest.raises(ValueError):
            apply(c4, c4.elements[1], np.array([1.0, 0.0]), side="output")

    def test_output_side_same(self):
        g = build_group("cyclic:4", ambient_dim=3, output="same")
        v = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(apply(g, g.elements[1], v, side="output"),
                                   [0.0, 1.0, 0.0], atol=1e-15)


def brute_force_orbits(points, group, tol=1e-8):
    """Oracle: exhaustive pairing over all points and all group elements."""
    n = len(points)
    adj = {i: {i} for i in range(n)}
    for g in group.elements:
        for i in range(n):
            moved = apply(group, g, points[i])
            for j in range(n):
                if np.linalg.norm(moved - points[j]) <= tol:
                    adj[i].add(j)
    # transitive closure
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for j in list(adj[i]):
                if not adj[j] <= adj[i]:
                    adj[i] |= adj[j]
                    changed = True
    return sorted({tuple(sorted(v)) for v in adj.values()})


class TestOrbitDecomposition:
    def test_circle20_reflection_matches_oracle(self):
        ds = gen_circle20()
        group = build_group("reflect-x")
        dec = decompose_orbits(ds, group)
        assert len(dec) == 10
        assert all(len(o) == 2 for o in dec.orbits)
        assert list(dec.orbits) == brute_force_orbits(ds.points, group)

    def test_circle20_rotation_single_orbit(self):
        ds = gen_circle20()
        dec = decompose_orbits(ds, build_group("cyclic:20"))
        assert len(dec) == 1
        assert len(dec.orbits[0]) == 20

    def test_permutation24_single_orbit(self):
        ds = gen_permutation24()
        dec = decompose_orbits(ds, build_group("symmetric:4"))
        assert len(dec) == 1
        assert len(dec.orbits[0]) == 24

    def test_partition_and_mass(self):
        ds = gen_circle20()
        dec = decompose_orbits(ds, build_group("reflect-x"))
        flat = sorted(i for o in dec.orbits for i in o)
        assert flat == list(range(20))
        assert abs(dec.masses.sum() - 1.0) <= 1e-10
        assert dec.representatives == tuple(min(o) for o in dec.orbits)

    def test_singleton_orbits_are_legal(self):
        pts = np.array([[1.0, 2.0], [5.0, -1.0]])
        ds = WeightedDataset(points=pts, weights=np.array([0.5, 0.5]))
        dec = decompose_orbits(ds, build_group("reflect-x"))
        assert len(dec) == 2

    def test_action_consistency(self):
        ds = gen_circle20()
        group = build_group("cyclic:20")
        dec = decompose_orbits(ds, group)
        rng = np.random.default_rng(3)
        for _ in range(25):
            g = group.elements[rng.integers(group.order)]
            i = int(rng.integers(len(ds)))
            moved = apply(group, g, ds.points[i])
            dists = np.linalg.norm(ds.points - moved, axis=1)
            j = int(np.argmin(dists))
            assert dists[j] <= 1e-8
            assert dec.orbit_of(i) == dec.orbit_of(j)

    def test_tol_must_be_positive(self):
        ds = gen_circle20()
        with pytest.raises(ValueError):
            decompose_orbits(ds, build_group("reflect-x"), tol=0.0)


class TestSetDistance:
    def test_permuted_sets_have_zero_distance(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(5, 3))
        b = a[rng.permutation(5)]
        assert set_distance(a, b) <= 1e-12

    def test_distinct_sets_have_positive_distance(self):
        a = np.zeros((3, 2))
        b = np.ones((3, 2))
        assert set_distance(a, b) == pytest.approx(6.0)

    def test_greedy_never_beats_exact(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b = rng.normal(size=(2, 6, 2))
            exact = set_distance(a, b)
            # exact assignment is minimal over all matchings
            perm = rng.permutation(6)
            manual = float(((a - b[perm]) ** 2).sum())
            assert exact <= manual + 1e-12


class TestWeightedDataset:
    def test_weights_must_normalize(self):
        with pytest.raises(ValueError, match="not normalized"):
            WeightedDataset(points=np.zeros((2, 1)), weights=np.array([0.4, 0.4]))

    def test_labels_and_targets_exclusive(self):
        with pytest.raises(ValueError):
            WeightedDataset(points=np.zeros((2, 1)), weights=np.array([0.5, 0.5]),
                            labels=np.array([0, 1]), targets=np.zeros((2, 1)))

    def test_immutable_arrays(self):
        ds = gen_circle20()
        with pytest.raises(ValueError):
            ds.points[0, 0] = 7.0


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_random_rotations_of_closed_sets_share_orbits(n, seed):
    """Points closed under a cyclic action always decompose into full orbits."""
    rng = np.random.default_rng(seed)
    group = build_group(f"cyclic:{n}")
    base = rng.normal(size=2) + np.array([3.0, 0.0])
    pts = np.stack([apply(group, g, base) for g in group.elements])
    pts = np.unique(np.round(pts, 12), axis=0)
    m = len(pts)
    ds = WeightedDataset(points=pts, weights=np.full(m, 1.0 / m))
    dec = decompose_orbits(ds, group)
    assert len(dec) == 1
    assert abs(dec.masses.sum() - 1.0) <= 1e-10
