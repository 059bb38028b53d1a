import math

import numpy as np
import pytest

from equicalib.data import (DatasetFormatError, circle20_half_fibers,
                            gen_calibrated_gaussian, gen_circle20,
                            gen_permutation24, gen_pointcloud_gence,
                            gen_swiss_rolls, gen_vector_field, load_dataset,
                            save_dataset, vector_field_target)
from equicalib.groups import build_group, decompose_orbits
from equicalib.symmetry import (fiber_dissent, majority_dissent,
                                minority_dissent, orbit_target_stats)


class TestCircle20:
    def setup_method(self):
        self.ds = gen_circle20()
        self.group = build_group("reflect-x")
        self.orbits = decompose_orbits(self.ds, self.group)

    def test_no_point_on_axis(self):
        assert np.all(np.abs(self.ds.points[:, 1]) > 1e-6)

    def test_unit_circle(self):
        np.testing.assert_allclose(np.linalg.norm(self.ds.points, axis=1), 1.0,
                                   atol=1e-12)

    def test_right_half_fiber_dissent(self):
        right, _ = circle20_half_fibers(self.ds)
        assert fiber_dissent(self.ds, self.orbits, right) == pytest.approx(0.1, abs=1e-12)

    def test_left_half_fiber_dissent(self):
        _, left = circle20_half_fibers(self.ds)
        assert fiber_dissent(self.ds, self.orbits, left) == pytest.approx(0.5, abs=1e-12)

    def test_single_rotation_orbit_dissent(self):
        # exhaustive count oracle: minority label mass over the full circle
        counts = np.bincount(self.ds.labels)
        assert counts.min() == 6
        dec = decompose_orbits(self.ds, build_group("cyclic:20"))
        assert len(dec) == 1
        k = majority_dissent(dec.orbits[0], self.ds.labels, self.ds.weights)
        assert k == pytest.approx(counts.min() / 20.0, abs=1e-12)


class TestSwissRolls:
    def test_correct_ratio_one_pairs_agree(self):
        ds = gen_swiss_rolls(1.0, 40, seed=1)
        n = len(ds) // 2
        group = build_group("z-swap", ambient_dim=3)
        dec = decompose_orbits(ds, group)
        assert all(len(o) == 2 for o in dec.orbits)
        for o in dec.orbits:
            assert ds.labels[o[0]] == ds.labels[o[1]]

    def test_correct_ratio_zero_pairs_conflict(self):
        ds = gen_swiss_rolls(0.0, 40, seed=1)
        dec = decompose_orbits(ds, build_group("z-swap", ambient_dim=3))
        # enumeration oracle: every pair is mixed, per-orbit dissent 0.5 of pair mass
        for o in dec.orbits:
            assert ds.labels[o[0]] != ds.labels[o[1]]

    def test_zswap_maps_dataset_to_itself(self):
        ds = gen_swiss_rolls(0.5, 30, seed=2)
        group = build_group("z-swap", ambient_dim=3)
        moved = ds.points @ group.input_reps[1].matrix.T + group.input_reps[1].offset
        # every transformed point appears exactly in the dataset
        for p in moved:
            assert np.min(np.linalg.norm(ds.points - p, axis=1)) <= 1e-15

    def test_record_count(self):
        ds = gen_swiss_rolls(0.5, 500, seed=7)
        assert len(ds) == 2000

    def test_deterministic(self):
        a = gen_swiss_rolls(0.25, 20, seed=9)
        b = gen_swiss_rolls(0.25, 20, seed=9)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.labels, b.labels)


class TestPermutation24:
    def test_label_counts(self):
        ds = gen_permutation24()
        # enumeration oracle over all 24 permutations
        assert int((ds.labels == 0).sum()) == 6
        assert float(ds.weights[ds.labels == 1].sum()) == pytest.approx(0.75)

    def test_single_orbit_dissents(self):
        ds = gen_permutation24()
        dec = decompose_orbits(ds, build_group("symmetric:4"))
        orbit = dec.orbits[0]
        assert majority_dissent(orbit, ds.labels, ds.weights) == pytest.approx(0.25)
        assert minority_dissent(orbit, ds.labels, ds.weights) == pytest.approx(0.75)


class TestPointcloudGence:
    def setup_method(self):
        self.ds, self.fibers = gen_pointcloud_gence()
        self.group = build_group("cyclic:8")
        self.dec = decompose_orbits(self.ds, self.group)

    def test_weights(self):
        np.testing.assert_array_equal(self.ds.weights,
                                      [0.125, 0.125, 0.125, 0.125, 0.5])

    def test_orbit_structure(self):
        assert sorted(map(len, self.dec.orbits)) == [1, 2, 2]

    def test_fiber_renormalized_orbit_mass(self):
        fiber0 = np.flatnonzero(self.fibers == 0)
        fiber_mass = self.ds.weights[fiber0].sum()
        bc = next(o for o in self.dec.orbits if set(o) == {2, 3})
        orbit_mass = self.ds.weights[list(bc)].sum()
        assert orbit_mass / fiber_mass == pytest.approx(0.5)

    def test_minimized_fiber_errors(self):
        # per-orbit-mean predictor on fiber 0 attains mass-weighted variance
        fiber0 = np.flatnonzero(self.fibers == 0)
        fiber_mass = self.ds.weights[fiber0].sum()
        err = 0.0
        for o in self.dec.orbits:
            if o[0] in set(fiber0.tolist()):
                _, var, mass = orbit_target_stats(o, self.ds.targets, self.ds.weights)
                err += mass / fiber_mass * var
        assert err == pytest.approx(math.pi / 8, abs=1e-12)

    def test_second_fiber_error_is_zero(self):
        fiber1 = np.flatnonzero(self.fibers == 1)
        _, var, _ = orbit_target_stats(fiber1, self.ds.targets, self.ds.weights)
        assert var == 0.0

    def test_bc_orbit_variance(self):
        bc = next(o for o in self.dec.orbits if set(o) == {2, 3})
        _, var, _ = orbit_target_stats(bc, self.ds.targets, self.ds.weights)
        assert var == pytest.approx(math.pi / 4, abs=1e-12)


class TestVectorFields:
    def test_spiral_quarter_turn(self):
        f = vector_field_target("spiral", np.array([[1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(f, [[0.0, 1.0, 0.0]], atol=0)

    def test_sinusoidal_at_half_pi(self):
        f = vector_field_target("sinusoidal", np.array([[math.pi / 2, 0.0, 0.0]]))
        np.testing.assert_allclose(f, [[-math.pi / 2, 0.0, 0.0]], atol=1e-12)

    def test_sinusoidal_at_origin(self):
        f = vector_field_target("sinusoidal", np.array([[0.0, 0.0, 0.0]]))
        np.testing.assert_array_equal(f, [[0.0, 0.0, 0.0]])

    def test_spiral_perpendicularity(self):
        ds = gen_vector_field("spiral", 200, radius=2.0, seed=5)
        dots = (ds.points * ds.targets).sum(axis=1)
        np.testing.assert_allclose(dots, 0.0, atol=1e-12)

    def test_sinusoidal_equivariance_under_rotation(self):
        ds = gen_vector_field("sinusoidal", 50, radius=2.0, seed=5)
        group = build_group("cyclic:12", ambient_dim=3, output="same")
        for g in group.elements[:5]:
            rot = group.input_reps[g.index].matrix
            lhs = vector_field_target("sinusoidal", ds.points @ rot.T)
            rhs = ds.targets @ rot.T
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_inputs_in_disk_z_zero(self):
        ds = gen_vector_field("sinusoidal", 300, radius=1.5, seed=0)
        assert np.all(np.linalg.norm(ds.points[:, :2], axis=1) <= 1.5 + 1e-12)
        assert np.all(ds.points[:, 2] == 0.0)

    def test_deterministic(self):
        a = gen_vector_field("spiral", 64, radius=1.0, seed=11)
        b = gen_vector_field("spiral", 64, radius=1.0, seed=11)
        np.testing.assert_array_equal(a.points, b.points)


class TestCalibratedGaussian:
    def test_annotations_present(self):
        ds = gen_calibrated_gaussian(100, 2, (0.5, 1.5), seed=3)
        assert ds.annotations["mu"].shape == (100, 2)
        assert ds.annotations["s"].shape == (100, 2)
        assert np.all(ds.annotations["s"] >= 0.5)

    def test_residual_moments(self):
        # Monte-Carlo oracle: E eps^2 = s
        ds = gen_calibrated_gaussian(200_000, 1, (1.0, 1.0), seed=4)
        eps = ds.targets - ds.annotations["mu"]
        assert float((eps ** 2).mean()) == pytest.approx(1.0, abs=0.02)

    def test_rejects_bad_range(self):
        with pytest.raises(ValueError):
            gen_calibrated_gaussian(10, 1, (0.0, 1.0), seed=0)


class TestPersistence:
    def test_roundtrip_circle20(self, tmp_path):
        ds = gen_circle20()
        path = save_dataset(ds, tmp_path / "c.jsonl", provenance={"kind": "circle20"})
        back = load_dataset(path)
        np.testing.assert_array_equal(back.points, ds.points)
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(back.weights, ds.weights)

    def test_roundtrip_bit_exact_floats(self, tmp_path):
        ds = gen_vector_field("sinusoidal", 50, radius=math.pi, seed=13)
        back = load_dataset(save_dataset(ds, tmp_path / "v.jsonl"))
        assert back.points.tobytes() == ds.points.tobytes()
        assert back.targets.tobytes() == ds.targets.tobytes()

    def test_roundtrip_point_sets(self, tmp_path):
        ds = gen_permutation24()
        back = load_dataset(save_dataset(ds, tmp_path / "p.jsonl"))
        np.testing.assert_array_equal(back.points, ds.points)

    def test_missing_weight_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"point": [1.0, 2.0], "label": 0}\n')
        with pytest.raises(DatasetFormatError, match="weights absent"):
            load_dataset(path)

    def test_unnormalized_weights_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"point": [1.0], "weight": 0.5}\n'
                        '{"point": [2.0], "weight": 0.4}\n')
        with pytest.raises(DatasetFormatError, match="not normalized"):
            load_dataset(path)

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"point": [1.0], "weight": 1.0}\n{oops\n')
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_dataset(path)
