import csv

import numpy as np
import pytest

from poseforge.errors import ConfigError, DataError
from poseforge.filtering import (FilterConfig, FilterReport, err3d,
                                 filter_batch, write_filter_csv)
from poseforge.geometry import Pose3D


def pose(pts):
    return Pose3D.all_visible(np.asarray(pts, dtype=float))


def rand_pose(rng, n=24):
    return Pose3D.all_visible(rng.normal(0.0, 0.3, (n, 3)))


class TestErr3d:
    def test_identical_zero(self):
        p = rand_pose(np.random.default_rng(0))
        assert err3d(p, p) == 0.0

    def test_rigid_translation_zero(self):
        rng = np.random.default_rng(1)
        p = rand_pose(rng)
        q = Pose3D(p.joints + np.array([0.4, -0.2, 1.0]), p.visibility)
        assert err3d(q, p) < 1e-12

    def test_single_joint_l1(self):
        # one joint off by (0.03, 0, 0.04) m -> 0.07 m summed L1
        base = np.zeros((24, 3))
        moved = base.copy()
        moved[4] = [0.03, 0.0, 0.04]
        assert abs(err3d(pose(moved), pose(base)) - 0.07) < 1e-12

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        a, b = rand_pose(rng), rand_pose(rng)
        assert err3d(a, b) == err3d(b, a)

    def test_joint_bridge_22_24(self):
        rng = np.random.default_rng(3)
        full = rand_pose(rng, 24)
        motion = Pose3D.all_visible(full.joints[:22].copy())
        assert err3d(full, motion) < 1e-12
        # a hand-tip-only difference is invisible across the bridge
        moved = full.joints.copy()
        moved[23] += 1.0
        assert err3d(Pose3D.all_visible(moved), motion) < 1e-12

    def test_incompatible_layouts(self):
        with pytest.raises(DataError):
            err3d(pose(np.zeros((5, 3))), pose(np.zeros((7, 3))))

    def test_l2_and_mean_variants(self):
        base = np.zeros((24, 3))
        moved = base.copy()
        moved[4] = [0.03, 0.0, 0.04]
        assert abs(err3d(pose(moved), pose(base), norm="l2") - 0.05) < 1e-12
        assert abs(err3d(pose(moved), pose(base), reduce="mean") - 0.07 / 23) < 1e-12
        with pytest.raises(ConfigError):
            err3d(pose(moved), pose(base), norm="l3")


class TestFilterBatch:
    def _batch(self, seed=0, n=40):
        rng = np.random.default_rng(seed)
        pairs = []
        for _ in range(n):
            gen = rand_pose(rng)
            pred = Pose3D(gen.joints + rng.normal(0.0, 0.02, (24, 3)),
                          gen.visibility)
            pairs.append((gen, pred))
        return pairs

    def test_huge_tau_passes_all(self):
        pairs = self._batch()
        errs = [err3d(p, g) for g, p in pairs]
        cfg = FilterConfig(tau=(max(errs) + 1.0), units="m")
        kept, report = filter_batch(pairs, cfg)
        assert len(kept) == len(pairs)
        assert report.pass_rate == 1.0

    def test_tiny_tau_passes_none(self):
        pairs = self._batch(1)
        errs = [err3d(p, g) for g, p in pairs]
        cfg = FilterConfig(tau=min(errs) / 2.0, units="m")
        kept, report = filter_batch(pairs, cfg)
        assert kept == [] and report.passed == 0

    def test_recount_oracle_over_sweep(self):
        pairs = self._batch(2)
        errs = [err3d(p, g) for g, p in pairs]
        for tau_m in np.linspace(min(errs), max(errs), 9):
            cfg = FilterConfig(tau=float(tau_m), units="m")
            kept, report = filter_batch(pairs, cfg)
            want = sum(1 for e in errs if e <= tau_m)
            assert report.passed == want == len(kept)

    def test_boundary_inclusive(self):
        base = np.zeros((24, 3))
        moved = base.copy()
        moved[4] = [0.03, 0.0, 0.04]
        pairs = [(pose(base), pose(moved))]
        kept, report = filter_batch(pairs, FilterConfig(tau=0.07, units="m"))
        assert report.passed == 1

    def test_order_preserved(self):
        pairs = self._batch(3, n=10)
        cfg = FilterConfig(tau=1e9, units="mm")
        kept, _ = filter_batch(pairs, cfg)
        assert [id(g) for g, _ in kept] == [id(g) for g, _ in pairs]

    def test_pass_rate_monotone_in_tau(self):
        pairs = self._batch(4)
        rates = []
        for tau in (40.0, 80.0, 120.0, 160.0, 200.0):
            _, report = filter_batch(pairs, FilterConfig(tau=tau, units="mm",
                                                         reduce="mean"))
            rates.append(report.pass_rate)
        assert rates == sorted(rates)

    def test_mm_units_conversion(self):
        base = np.zeros((24, 3))
        moved = base.copy()
        moved[4] = [0.05, 0.0, 0.05]  # 100 mm summed
        pairs = [(pose(base), pose(moved))]
        _, r1 = filter_batch(pairs, FilterConfig(tau=120.0, units="mm"))
        _, r2 = filter_batch(pairs, FilterConfig(tau=80.0, units="mm"))
        assert r1.passed == 1 and r2.passed == 0

    def test_report_invariants(self):
        with pytest.raises(DataError):
            FilterReport(total=2, passed=3, per_sample_err=(0.1, 0.2))
        with pytest.raises(ConfigError):
            FilterConfig(tau=0.0)
        with pytest.raises(ConfigError):
            FilterConfig(tau=1.0, units="furlongs")

    def test_csv_output(self, tmp_path):
        pairs = self._batch(5, n=6)
        cfg = FilterConfig(tau=120.0, units="mm", reduce="mean")
        _, report = filter_batch(pairs, cfg)
        path = tmp_path / "filter.csv"
        write_filter_csv(report, cfg, path, sample_ids=[f"p{i}" for i in range(6)])
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["sample_id", "err", "kept"]
        assert len(rows) == 7
        for row, e in zip(rows[1:], report.per_sample_err):
            assert float(row[1]) == e
            assert row[2] == ("1" if e <= cfg.tau_meters else "0")
