import numpy as np
import pytest

from poseforge import fixtures
from poseforge.errors import ConfigError, DataError
from poseforge.estimator import (CorruptionModel, ExemplarPoseEstimator,
                                 pose_descriptor)
from poseforge.geometry import CameraIntrinsics, Pose3D
from poseforge.metrics import mpjpe

CAM = CameraIntrinsics(np.array([5000.0, 5000.0]), np.array([100.0, 100.0]))


def cluster_pose(rng, center, spread=0.02, n=24, depth=5.0):
    pts = center + rng.normal(0.0, spread, (n, 3))
    pts[:, 2] += depth
    return Pose3D.all_visible(pts)


def two_cluster_fixture(seed=0, n_a=30):
    """Planted clusters: dense exemplars around A, none around B."""
    rng = np.random.default_rng(seed)
    center_a = np.zeros(3)
    center_b = np.array([0.0, 1.4, 0.0])  # far pose configuration
    a_samples = [(cluster_pose(rng, center_a), CAM) for _ in range(n_a)]
    return a_samples, center_a, center_b, rng


class TestPredict:
    def test_exact_exemplar_recovered(self):
        rng = np.random.default_rng(1)
        poses = [cluster_pose(rng, np.zeros(3)) for _ in range(5)]
        est = ExemplarPoseEstimator.fit([(p, CAM) for p in poses], k=1,
                                        noise_sigma_mm=0.0)
        query = poses[2]
        pred = est.predict(query, CAM)
        np.testing.assert_allclose(pred.joints, query.joints, atol=1e-12)

    def test_off_distribution_error_grows(self):
        a_samples, center_a, center_b, rng = two_cluster_fixture()
        est = ExemplarPoseEstimator.fit(a_samples, k=4, noise_sigma_mm=0.0)
        near = cluster_pose(rng, center_a)
        far = cluster_pose(rng, center_b)
        near_err = mpjpe(est.predict(near, CAM), near)
        far_err = mpjpe(est.predict(far, CAM), far)
        assert far_err > near_err

    def test_deterministic_per_seed(self):
        a_samples, center_a, _, rng = two_cluster_fixture(2)
        est = ExemplarPoseEstimator.fit(a_samples, k=4, noise_sigma_mm=10.0,
                                        seed=7)
        q = cluster_pose(rng, center_a)
        p1, p2 = est.predict(q, CAM), est.predict(q, CAM)
        assert np.array_equal(p1.joints, p2.joints)

    def test_noise_seed_changes_output(self):
        a_samples, center_a, _, rng = two_cluster_fixture(3)
        q = cluster_pose(rng, center_a)
        e1 = ExemplarPoseEstimator.fit(a_samples, k=4, noise_sigma_mm=10.0, seed=1)
        e2 = ExemplarPoseEstimator.fit(a_samples, k=4, noise_sigma_mm=10.0, seed=2)
        assert not np.array_equal(e1.predict(q, CAM).joints,
                                  e2.predict(q, CAM).joints)

    def test_descriptor_translation_invariant_exactly(self):
        rng = np.random.default_rng(4)
        pose = cluster_pose(rng, np.zeros(3))
        d1 = pose_descriptor(pose, CAM)
        shifted_cam = CameraIntrinsics(CAM.f, CAM.p + np.array([64.0, -32.0]))
        d2 = pose_descriptor(pose, shifted_cam)
        assert np.array_equal(d1, d2)

    def test_k_validation(self):
        with pytest.raises(ConfigError):
            ExemplarPoseEstimator(np.zeros((2, 4)), np.zeros((2, 3, 3)), k=0)
        with pytest.raises(DataError):
            ExemplarPoseEstimator(np.zeros((0, 4)), np.zeros((0, 3, 3)))


class TestAugmentation:
    def test_empty_addition_identical_behavior(self):
        a_samples, center_a, _, rng = two_cluster_fixture(5)
        est = ExemplarPoseEstimator.fit(a_samples, k=4, noise_sigma_mm=10.0,
                                        seed=3)
        est2 = est.with_added_exemplars([])
        q = cluster_pose(rng, center_a)
        assert np.array_equal(est.predict(q, CAM).joints,
                              est2.predict(q, CAM).joints)

    def test_original_unchanged(self):
        a_samples, _, center_b, rng = two_cluster_fixture(6)
        est = ExemplarPoseEstimator.fit(a_samples, k=1, noise_sigma_mm=0.0)
        n = est.exemplar_count
        est.with_added_exemplars([(cluster_pose(rng, center_b), CAM)])
        assert est.exemplar_count == n

    def test_adding_query_zeroes_its_error(self):
        a_samples, _, center_b, rng = two_cluster_fixture(7)
        est = ExemplarPoseEstimator.fit(a_samples, k=1, noise_sigma_mm=0.0)
        q = cluster_pose(rng, center_b)
        assert mpjpe(est.predict(q, CAM), q) > 0.0
        est2 = est.with_added_exemplars([(q, CAM)])
        assert mpjpe(est2.predict(q, CAM), q) < 1e-9

    def test_cluster_b_error_monotone_nonincreasing(self):
        a_samples, _, center_b, rng = two_cluster_fixture(8)
        est = ExemplarPoseEstimator.fit(a_samples, k=4, noise_sigma_mm=0.0)
        held_out = [cluster_pose(rng, center_b) for _ in range(10)]

        def mean_err(e):
            return float(np.mean([mpjpe(e.predict(q, CAM), q) for q in held_out]))

        errs = [mean_err(est)]
        for n_new in (4, 16, 64):
            added = [(cluster_pose(rng, center_b), CAM) for _ in range(n_new)]
            est = est.with_added_exemplars(added)
            errs.append(mean_err(est))
        assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))

    def test_checkpoint_round_trip(self, tmp_path):
        a_samples, center_a, _, rng = two_cluster_fixture(9)
        est = ExemplarPoseEstimator.fit(a_samples, k=3, noise_sigma_mm=5.0,
                                        seed=11)
        path = tmp_path / "est.ckpt"
        est.save(path)
        loaded = ExemplarPoseEstimator.load(path)
        q = cluster_pose(rng, center_a)
        np.testing.assert_allclose(loaded.predict(q, CAM).joints,
                                   est.predict(q, CAM).joints, atol=1e-6)


class TestCorruption:
    def test_zero_probability_identity(self):
        rng = np.random.default_rng(10)
        p = cluster_pose(rng, np.zeros(3))
        model = CorruptionModel(p_artifact=0.0, seed=1)
        assert model.corrupt(p) is p

    def test_vanishing_sigma_limit(self):
        rng = np.random.default_rng(11)
        p = cluster_pose(rng, np.zeros(3))
        model = CorruptionModel(p_artifact=1.0, sigma_artifact_mm=1e-12, seed=2)
        out = model.corrupt(p)
        assert np.abs(out.joints - p.joints).max() < 1e-9

    def test_empirical_frequency_within_binomial_bounds(self):
        rng = np.random.default_rng(12)
        model = CorruptionModel(p_artifact=0.3, sigma_artifact_mm=80.0, seed=3)
        n = 10000
        hits = 0
        for i in range(n):
            p = cluster_pose(rng, np.zeros(3))
            out = model.corrupt(p, salt=i)
            hits += int(not np.array_equal(out.joints, p.joints))
        sigma = np.sqrt(n * 0.3 * 0.7)
        assert abs(hits - 0.3 * n) <= 3.0 * sigma

    def test_deterministic_per_seed_and_salt(self):
        rng = np.random.default_rng(13)
        p = cluster_pose(rng, np.zeros(3))
        model = CorruptionModel(p_artifact=1.0, sigma_artifact_mm=50.0, seed=4)
        a = model.corrupt(p, salt=9)
        b = model.corrupt(p, salt=9)
        c = model.corrupt(p, salt=10)
        assert np.array_equal(a.joints, b.joints)
        assert not np.array_equal(a.joints, c.joints)

    def test_probability_validation(self):
        with pytest.raises(ConfigError):
            CorruptionModel(p_artifact=1.5)


class TestFixtures:
    def test_families_have_distinct_geometry(self):
        rng = np.random.default_rng(14)
        hs = fixtures.sample_family_pose("handstand", rng, in_camera=False)
        walk = fixtures.sample_family_pose("walk", rng, in_camera=False)
        # inverted: handstand head below root, walking head above
        assert hs.joints[15, 1] < hs.joints[0, 1]
        assert walk.joints[15, 1] > walk.joints[0, 1]

    def test_caption_matches_family(self):
        rng = np.random.default_rng(15)
        for family in fixtures.FAMILIES:
            caption = fixtures.caption_for(family, rng)
            assert isinstance(caption, str) and caption

    def test_unknown_family_rejected(self):
        rng = np.random.default_rng(16)
        with pytest.raises(ConfigError):
            fixtures.sample_family_params("cartwheel", rng)

    def test_corpus_deterministic(self):
        a = fixtures.build_motion_corpus(6, 12, seed=3)
        b = fixtures.build_motion_corpus(6, 12, seed=3)
        for (ma, ca), (mb, cb) in zip(a, b):
            assert ca == cb
            np.testing.assert_array_equal(ma.joints, mb.joints)
