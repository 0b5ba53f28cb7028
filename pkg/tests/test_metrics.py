import math

import numpy as np
import pytest

from compseg.metrics import (
    ImageMetrics,
    aggregate,
    apply_largest_component,
    assd,
    boundary_pixels,
    dsc,
    format_table,
    largest_component,
    per_image_metrics,
    write_metrics_csv,
)

from .helpers import oracle_assd, oracle_dsc, random_mask_pair


class TestDsc:
    def test_identical_masks(self):
        m = np.zeros((8, 8), dtype=int)
        m[2:5, 2:5] = 1
        assert dsc(m, m, 1) == 100.0

    def test_disjoint_masks(self):
        a = np.zeros((8, 8), dtype=int)
        b = np.zeros((8, 8), dtype=int)
        a[:2, :2] = 1
        b[5:, 5:] = 1
        assert dsc(a, b, 1) == 0.0

    def test_half_overlap(self):
        a = np.zeros((4, 4), dtype=int)
        b = np.zeros((4, 4), dtype=int)
        a[0, 0:4] = 1
        b[0, 2:4] = 1
        b[1, 2:4] = 1
        assert dsc(a, b, 1) == 50.0

    def test_both_empty_convention(self):
        z = np.zeros((4, 4), dtype=int)
        assert dsc(z, z, 2) == 100.0

    def test_symmetry_and_permutation_invariance(self):
        rng = np.random.default_rng(0)
        a, b = random_mask_pair(rng)
        assert dsc(a, b, 1) == dsc(b, a, 1)
        perm = rng.permutation(a.size)
        ap = a.ravel()[perm].reshape(a.shape)
        bp = b.ravel()[perm].reshape(b.shape)
        assert dsc(ap, bp, 1) == dsc(a, b, 1)

    def test_unknown_class_error(self):
        z = np.zeros((4, 4), dtype=int)
        with pytest.raises(ValueError, match="class_id"):
            dsc(z, z, -1)
        with pytest.raises(ValueError, match="class_id"):
            dsc(z, z, 5, num_classes=3)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            dsc(np.zeros((3, 3), dtype=int), np.zeros((4, 4), dtype=int), 1)


class TestAssd:
    def test_identical_masks_zero(self):
        m = np.zeros((8, 8), dtype=int)
        m[2:6, 3:7] = 1
        assert assd(m, m, 1) == 0.0

    def test_single_pixels_three_apart(self):
        a = np.zeros((8, 8), dtype=int)
        b = np.zeros((8, 8), dtype=int)
        a[4, 1] = 1
        b[4, 4] = 1
        assert abs(assd(a, b, 1, spacing=(1.0, 1.0)) - 3.0) < 1e-12

    def test_empty_mask_undefined(self):
        a = np.zeros((5, 5), dtype=int)
        b = np.zeros((5, 5), dtype=int)
        b[2, 2] = 1
        assert math.isnan(assd(a, b, 1))
        assert math.isnan(assd(a, a, 1))

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = random_mask_pair(rng)
        if (a == 1).any() and (b == 1).any():
            assert assd(a, b, 1) == assd(b, a, 1)

    def test_translation_invariance(self):
        a = np.zeros((16, 16), dtype=int)
        b = np.zeros((16, 16), dtype=int)
        a[2:5, 2:5] = 1
        b[3:7, 4:6] = 1
        shifted_a = np.roll(a, (4, 3), axis=(0, 1))
        shifted_b = np.roll(b, (4, 3), axis=(0, 1))
        assert abs(assd(a, b, 1) - assd(shifted_a, shifted_b, 1)) < 1e-12

    def test_spacing_scaling(self):
        rng = np.random.default_rng(2)
        a, b = random_mask_pair(rng)
        base = assd(a, b, 1, spacing=(1.0, 1.0))
        if not math.isnan(base):
            scaled = assd(a, b, 1, spacing=(2.5, 2.5))
            assert abs(scaled - 2.5 * base) < 1e-9

    def test_bruteforce_oracle_equivalence(self):
        rng = np.random.default_rng(3)
        checked = 0
        for _ in range(200):
            a, b = random_mask_pair(rng)
            for class_id in (1, 2, 3):
                got = assd(a, b, class_id)
                want = oracle_assd(a, b, class_id)
                if math.isnan(want):
                    assert math.isnan(got)
                else:
                    assert abs(got - want) < 1e-9
                    checked += 1
        assert checked > 100

    def test_dsc_bruteforce_oracle_equivalence(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            a, b = random_mask_pair(rng)
            for class_id in (1, 2, 3):
                assert abs(dsc(a, b, class_id) - oracle_dsc(a, b, class_id)) < 1e-9


class TestBoundary:
    def test_interior_excluded_border_included(self):
        m = np.zeros((5, 5), dtype=bool)
        m[1:4, 1:4] = True
        pts = {tuple(p) for p in boundary_pixels(m)}
        assert (2, 2) not in pts  # interior
        assert (1, 1) in pts
        full = np.ones((3, 3), dtype=bool)
        # image border counts as background: the 8 edge pixels are boundary,
        # the center (all 4 neighbors foreground) is not
        assert len(boundary_pixels(full)) == 8
        assert (1, 1) not in {tuple(p) for p in boundary_pixels(full)}


class TestLargestComponent:
    def test_artifact_removed(self):
        m = np.zeros((12, 12), dtype=int)
        m[1:6, 1:5] = 1  # 20 px blob
        m[9:10, 9:12] = 1  # 3 px artifact
        out = largest_component(m, 1)
        assert (out == 1).sum() == 20
        assert out[9, 9] == 0

    def test_single_component_unchanged(self):
        m = np.zeros((8, 8), dtype=int)
        m[2:5, 2:5] = 1
        np.testing.assert_array_equal(largest_component(m, 1), m)

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        m, _ = random_mask_pair(rng)
        once = largest_component(m, 1)
        np.testing.assert_array_equal(largest_component(once, 1), once)

    def test_tie_broken_by_top_left(self):
        m = np.zeros((8, 8), dtype=int)
        m[0:2, 0:2] = 1  # 4 px, top-left first pixel (0, 0)
        m[5:7, 5:7] = 1  # 4 px, later in row-major order
        out = largest_component(m, 1)
        assert out[0, 0] == 1 and out[5, 5] == 0

    def test_other_classes_untouched(self):
        m = np.zeros((10, 10), dtype=int)
        m[0:2, 0:2] = 1
        m[6:8, 6:8] = 1
        m[4, 4] = 2
        out = largest_component(m, 1)
        assert out[4, 4] == 2

    def test_never_increases_foreground(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            m, _ = random_mask_pair(rng)
            out = apply_largest_component(m, 3)
            for c in (1, 2, 3):
                assert (out == c).sum() <= (m == c).sum()

    def test_dsc_never_drops_for_contained_target(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            pred, _ = random_mask_pair(rng)
            cleaned = largest_component(pred, 1)
            kept = cleaned == 1
            if not kept.any():
                continue
            target = np.zeros_like(pred)
            idx = np.argwhere(kept)
            sel = idx[rng.integers(0, len(idx), size=max(1, len(idx) // 2))]
            target[sel[:, 0], sel[:, 1]] = 1  # target inside the largest component
            assert dsc(cleaned, target, 1) >= dsc(pred, target, 1)

    def test_empty_class_unchanged(self):
        m = np.zeros((6, 6), dtype=int)
        np.testing.assert_array_equal(largest_component(m, 1), m)


class TestAggregate:
    def test_two_fold_population_std(self):
        rows = [
            ImageMetrics("a", fold=0, class_id=1, dsc=60.0, assd=1.0),
            ImageMetrics("b", fold=1, class_id=1, dsc=70.0, assd=3.0),
        ]
        report = aggregate(rows)
        summary = report.classes[0]
        assert summary.dsc_mean == 65.0
        assert summary.dsc_std == 5.0
        assert summary.assd_mean == 2.0

    def test_single_fold_zero_std(self):
        rows = [ImageMetrics("a", fold=0, class_id=1, dsc=80.0, assd=2.0)]
        report = aggregate(rows)
        assert report.classes[0].dsc_std == 0.0

    def test_undefined_assd_excluded_and_counted(self):
        rows = [
            ImageMetrics("a", fold=0, class_id=1, dsc=50.0, assd=math.nan),
            ImageMetrics("b", fold=0, class_id=1, dsc=60.0, assd=4.0),
        ]
        report = aggregate(rows)
        summary = report.classes[0]
        assert summary.assd_mean == 4.0
        assert summary.n_undefined_assd == 1

    def test_empty_error(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_mean_matches_recomputation(self):
        rng = np.random.default_rng(8)
        rows = [
            ImageMetrics(f"im{i}", fold=i % 3, class_id=1,
                         dsc=float(rng.uniform(0, 100)), assd=float(rng.uniform(0, 9)))
            for i in range(12)
        ]
        report = aggregate(rows)
        fold_means = [
            np.mean([r.dsc for r in rows if r.fold == f]) for f in (0, 1, 2)
        ]
        assert abs(report.classes[0].dsc_mean - np.mean(fold_means)) < 1e-12
        assert abs(report.classes[0].dsc_std - np.std(fold_means)) < 1e-12


class TestReporting:
    def test_csv_and_table(self, tmp_path):
        pred = np.zeros((8, 8), dtype=int)
        pred[2:4, 2:4] = 1
        target = pred.copy()
        rows = per_image_metrics(pred, target, num_classes=2, spacing=(1.0, 1.0),
                                 image_id="im0", fold=0)
        path = tmp_path / "metrics.csv"
        write_metrics_csv(rows, path)
        content = path.read_text()
        assert "fold,image_id,class_id,dsc_percent,assd_mm" in content
        assert "im0" in content
        table = format_table(aggregate(rows), class_names=["ring", "core"])
        assert "ring" in table and "DSC" in table
