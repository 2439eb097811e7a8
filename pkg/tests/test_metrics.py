import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canet.metrics import (aggregate, avd_mm, eval_dsc, evaluate_case, hausdorff_mm, read_report, surface_voxels,
                           write_report)
from canet.voxcore import LabelMap, Rng

from oracles import hausdorff_brute, surface_brute

ISO = (1.0, 1.0, 1.0)


def lm(data, spacing=ISO):
    return LabelMap(np.asarray(data), spacing)


def points(shape, *coords, label=1):
    a = np.zeros(shape, np.int8)
    for c in coords:
        a[c] = label
    return a


class TestDsc:
    def test_examples(self):
        a = np.zeros((10, 10, 10), np.int8)
        a.flat[:100] = 1
        assert eval_dsc(lm(a), lm(a), 1) == 1.0
        p, g = np.zeros(20, np.int8), np.zeros(20, np.int8)
        p[:10], g[5:15] = 1, 1
        assert eval_dsc(lm(p.reshape(1, 1, 20)), lm(g.reshape(1, 1, 20)), 1) == 0.5
        assert eval_dsc(lm(np.zeros((1, 1, 20))), lm(g.reshape(1, 1, 20)), 1) == 0.0

    def test_geometry_mismatch(self):
        with pytest.raises(ValueError, match="geometry"):
            eval_dsc(lm(np.zeros((2, 2, 2))), lm(np.zeros((2, 2, 2)), (1.0, 1.0, 2.0)), 1)


class TestSurface:
    def test_examples(self):
        assert surface_voxels(points((3, 3, 3), (1, 1, 1))) == {(1, 1, 1)}
        cube = np.zeros((5, 5, 5), np.int8)
        cube[1:4, 1:4, 1:4] = 1
        s = surface_voxels(cube)
        assert len(s) == 26 and (2, 2, 2) not in s
        assert surface_voxels(np.zeros((3, 3, 3))) == set()

    def test_grid_border_counts(self):
        assert len(surface_voxels(np.ones((3, 3, 3)))) == 26


class TestDistances:
    def test_three_four_five(self):
        a, b = points((1, 4, 5), (0, 0, 0)), points((1, 4, 5), (0, 3, 4))
        assert hausdorff_mm(lm(a), lm(b), 1) == 5.0
        assert avd_mm(lm(a), lm(b), 1) == 5.0
        assert hausdorff_mm(lm(a, (1, 2, 2)), lm(b, (1, 2, 2)), 1) == 10.0

    def test_identical(self):
        a = Rng(0).integers(0, 2, (6, 6, 6))
        assert hausdorff_mm(lm(a), lm(a), 1) == 0.0 and avd_mm(lm(a), lm(a), 1) == 0.0

    def test_empty_is_nan(self):
        assert math.isnan(hausdorff_mm(lm(np.zeros((3, 3, 3))), lm(points((3, 3, 3), (1, 1, 1))), 1))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_matches_brute_force(self, seed):
        rng = Rng(seed)
        dims = tuple(int(n) for n in rng.integers(1, 9, 3))
        spacing = tuple(float(s) for s in rng.uniform(3, low=0.5, high=2.5))
        a = rng.uniform(dims) < rng.uniform()
        b = rng.uniform(dims) < rng.uniform()
        if not a.any() or not b.any():
            return
        hd, avd = hausdorff_brute(a, b, spacing)
        A, B = lm(a.astype(np.int8), spacing), lm(b.astype(np.int8), spacing)
        assert hausdorff_mm(A, B, 1) == pytest.approx(hd, abs=1e-6)
        assert avd_mm(A, B, 1) == pytest.approx(avd, abs=1e-6)
        assert hausdorff_mm(B, A, 1) == pytest.approx(hd, abs=1e-6)
        assert hausdorff_mm(A, B, 1) >= avd_mm(A, B, 1) >= 0
        assert surface_voxels(a) == surface_brute(a)

    def test_flip_and_permutation_invariance(self):
        rng = Rng(5)
        a, b = rng.integers(0, 2, (5, 6, 7)), rng.integers(0, 2, (5, 6, 7))
        sp = (0.5, 1.0, 2.0)
        hd = hausdorff_mm(lm(a, sp), lm(b, sp), 1)
        perm = (2, 0, 1)
        ap, bp = np.transpose(a, perm)[::-1], np.transpose(b, perm)[::-1]
        sp2 = tuple(sp[i] for i in perm)
        assert hausdorff_mm(lm(ap.copy(), sp2), lm(bp.copy(), sp2), 1) == pytest.approx(hd)


class TestEvaluate:
    def test_identity(self):
        g = Rng(1).integers(0, 5, (8, 8, 8))
        rep = evaluate_case(lm(g), lm(g))
        for s in rep.scores.values():
            assert (s.dsc, s.hd_mm, s.avd_mm, s.flags) == (1.0, 0.0, 0.0, ())

    def test_missing_tumor_both(self):
        g = Rng(2).integers(0, 5, (6, 6, 6))
        g[g == 2] = 1
        s = evaluate_case(lm(g), lm(g)).scores[2]
        assert s.dsc == 1.0 and math.isnan(s.hd_mm) and "both_empty" in s.flags

    def test_random_case_against_oracle(self):
        rng = Rng(3)
        g = rng.integers(0, 5, (16, 16, 16))
        p = np.where(rng.uniform((16, 16, 16)) < 0.2, rng.integers(0, 5, (16, 16, 16)), g)
        rep = evaluate_case(lm(p), lm(g))
        for cid, s in rep.scores.items():
            pa, ga = p == cid, g == cid
            assert s.dsc == 2 * (pa & ga).sum() / (pa.sum() + ga.sum())
            hd, avd = hausdorff_brute(pa, ga, ISO)
            assert s.hd_mm == pytest.approx(hd, abs=1e-6) and s.avd_mm == pytest.approx(avd, abs=1e-6)

    def test_report_round_trip_and_aggregate(self, tmp_path):
        rng = Rng(4)
        g = rng.integers(0, 5, (6, 6, 6))
        g2 = g.copy()
        g2[g2 == 3] = 0
        reps = [evaluate_case(lm(rng.integers(0, 5, (6, 6, 6))), lm(g), "a"),
                evaluate_case(lm(g), lm(g2), "b")]
        write_report(tmp_path / "r.tsv", reps)
        header = (tmp_path / "r.tsv").read_text().splitlines()[0]
        assert header == "case\tclass\tdsc\thd_mm\tavd_mm\tflags"
        back = read_report(tmp_path / "r.tsv")
        assert [r.case for r in back] == ["a", "b"]
        for r0, r1 in zip(reps, back):
            for cid in r0.scores:
                a, b = r0.scores[cid], r1.scores[cid]
                assert a.dsc == b.dsc and a.flags == b.flags
                assert (math.isnan(a.hd_mm) and math.isnan(b.hd_mm)) or a.hd_mm == b.hd_mm
        agg = aggregate(back)
        assert agg["artery"]["n_distance"] == 1
        assert agg["artery"]["hd_mm"] == reps[0].scores[3].hd_mm
