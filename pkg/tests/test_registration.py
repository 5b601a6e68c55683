import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from goalstate.errors import DegenerateInput, SizeMismatch, WidthMismatch
from goalstate.geometry import PointCloud, RigidTransform, kabsch_fit
from goalstate.registration import CPDParams, cpd_nonrigid, huber_weights, robust_rigid_register

G1 = np.linspace(0.0, 0.1, 10)
GRID = np.array([[x, y, 0.0] for x in G1 for y in G1])


def oracle_cpd(Y, X, beta, lam, w, iters):
    """Loop-based CPD in the original (G + lam s2 dP1^-1) W = dP1^-1 P X - Y form."""
    M, N = len(Y), len(X)
    G = np.array([[np.exp(-np.sum((Y[i] - Y[j]) ** 2) / (2 * beta ** 2)) for j in range(M)]
                  for i in range(M)])
    W = np.zeros((M, 3))
    s2 = sum(np.sum((X[n] - Y[m]) ** 2) for n in range(N) for m in range(M)) / (3 * M * N)
    for _ in range(iters):
        T = Y + G @ W
        P = np.zeros((M, N))
        for n in range(N):
            num = np.array([np.exp(-np.sum((X[n] - T[m]) ** 2) / (2 * s2)) for m in range(M)])
            c = (2 * np.pi * s2) ** 1.5 * w / (1 - w) * M / N
            P[:, n] = num / (num.sum() + c)
        P1 = P.sum(1)
        W = np.linalg.solve(G + lam * s2 * np.diag(1.0 / P1), (P @ X) / P1[:, None] - Y)
        T = Y + G @ W
        s2 = sum(P[m, n] * np.sum((X[n] - T[m]) ** 2)
                 for m in range(M) for n in range(N)) / (3 * P.sum())
        if s2 < 1e-14:
            break
    return T - Y


class TestCPD:
    def test_aligned_input_stays_put(self):
        r = cpd_nonrigid(PointCloud(GRID), PointCloud(GRID))
        assert r.converged
        assert np.linalg.norm(r.displacement, axis=1).max() < 1e-6

    def test_translation_toward_target(self):
        src = PointCloud(GRID + [0.01, 0, 0])
        r = cpd_nonrigid(src, PointCloud(GRID))
        mean = r.displacement.mean(axis=0)
        assert np.linalg.norm(mean - [-0.01, 0, 0]) < 0.1 * 0.01

    def test_matches_loop_oracle(self):
        sub = GRID[::3] + [0.01, 0.005, 0]
        params = CPDParams(max_iter=15, tol=0.0)
        beta = 0.3 * np.linalg.norm(sub.max(0) - sub.min(0))
        ours = cpd_nonrigid(PointCloud(sub), PointCloud(GRID[::3]), params)
        ref = oracle_cpd(sub, GRID[::3], beta, params.lam, params.outlier_weight, ours.iterations_run)
        np.testing.assert_allclose(ours.displacement, ref, atol=1e-7)

    def test_exact_reconstruction(self):
        rng = np.random.default_rng(0)
        src = PointCloud(rng.normal(size=(60, 3)) * 0.05)
        tgt = PointCloud(rng.normal(size=(80, 3)) * 0.06)
        r = cpd_nonrigid(src, tgt)
        np.testing.assert_array_equal(r.deformed.points, src.points + r.displacement)
        assert len(r.deformed) == len(src)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_objective_monotone(self, seed):
        rng = np.random.default_rng(seed)
        src = rng.normal(size=(40, 3)) * 0.05
        tgt = src * rng.uniform(0.8, 1.3) + rng.normal(scale=0.005, size=src.shape)
        feats = rng.normal(size=(40, 2))
        r = cpd_nonrigid(PointCloud(src, feats), PointCloud(tgt, feats + 0.1),
                         CPDParams(max_iter=40))
        h = np.array(r.objective_history)
        assert np.all(np.diff(h) <= 1e-9 * np.maximum(1.0, np.abs(h[1:])))

    def test_feature_weight_zero_is_spatial_only(self):
        rng = np.random.default_rng(1)
        src, tgt = rng.normal(size=(30, 3)) * 0.05, rng.normal(size=(35, 3)) * 0.05
        with_f = cpd_nonrigid(PointCloud(src, rng.normal(size=(30, 4))),
                              PointCloud(tgt, rng.normal(size=(35, 4))),
                              CPDParams(feature_weight=0.0))
        without = cpd_nonrigid(PointCloud(src), PointCloud(tgt), CPDParams(feature_weight=0.0))
        np.testing.assert_array_equal(with_f.displacement, without.displacement)
        assert with_f.objective_history == without.objective_history

    def test_features_guide_matching(self):
        # two clusters swapped in space; features say which is which
        a = np.vstack([np.zeros((10, 3)), np.ones((10, 3)) * 0.1])
        a = a + np.random.default_rng(2).normal(scale=0.002, size=a.shape)
        fa = np.repeat([[1.0, 0.0], [0.0, 1.0]], 10, axis=0)
        r = cpd_nonrigid(PointCloud(a, fa * 10), PointCloud(a[::-1], fa[::-1] * 10),
                         CPDParams(feature_weight=1.0))
        assert np.linalg.norm(r.displacement, axis=1).max() < 1e-3

    def test_feature_width_mismatch(self):
        with pytest.raises(WidthMismatch):
            cpd_nonrigid(PointCloud(GRID, np.zeros((100, 2))), PointCloud(GRID, np.zeros((100, 3))))

    def test_nonconvergence_is_flagged(self):
        rng = np.random.default_rng(3)
        r = cpd_nonrigid(PointCloud(rng.normal(size=(30, 3))), PointCloud(rng.normal(size=(30, 3))),
                         CPDParams(max_iter=2))
        assert r.iterations_run == 2
        assert not r.converged


def mixture(rng, n=100, frac=0.8):
    src = rng.uniform(-0.05, 0.05, size=(n, 3))
    T1 = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3) * 0.2)
    T2 = RigidTransform(Rotation.random(random_state=rng).as_matrix(),
                        rng.normal(size=3) * 0.2 + [0.4, 0, 0])
    k = int(frac * n)
    return src, np.vstack([T1.apply(src[:k]), T2.apply(src[k:])]), T1, T2, k


def ransac_oracle(src, gen, labels, delta):
    """Fit each labelled cluster, keep the fit with the most points under 2*delta."""
    best = None
    for lab in np.unique(labels):
        T = kabsch_fit(src[labels == lab], gen[labels == lab])
        count = np.sum(np.linalg.norm(T.apply(src) - gen, axis=1) < 2 * delta)
        if best is None or count > best[0]:
            best = (count, T)
    return best[1]


class TestRobustRegister:
    def test_exact_rigid(self):
        rng = np.random.default_rng(4)
        src = rng.normal(size=(50, 3)) * 0.05
        T = RigidTransform(Rotation.random(random_state=rng).as_matrix(), [0.1, -0.2, 0.3])
        res = robust_rigid_register(src, T.apply(src))
        assert res.inlier_mask.all()
        assert np.abs(res.transform.rotation - T.rotation).max() < 1e-9
        assert np.all(res.residuals >= 0)

    @pytest.mark.parametrize("seed", range(10))
    def test_majority_mode(self, seed):
        rng = np.random.default_rng(seed)
        src, gen, T1, _, k = mixture(rng)
        res = robust_rigid_register(src, gen)
        oracle = ransac_oracle(src, gen, np.arange(len(src)) >= k, 0.01)
        assert np.abs(res.transform.rotation - oracle.rotation).max() < 1e-6
        assert np.abs(res.transform.translation - T1.translation).max() < 1e-6
        assert res.inlier_mask[:k].all() and not res.inlier_mask[k:].any()

    def test_infinite_delta_is_least_squares(self):
        rng = np.random.default_rng(5)
        src, gen, *_ = mixture(rng)
        res = robust_rigid_register(src, gen, huber_delta=np.inf)
        ls = kabsch_fit(src, gen)
        assert np.abs(res.transform.rotation - ls.rotation).max() < 1e-9
        assert np.abs(res.transform.translation - ls.translation).max() < 1e-9

    def test_no_outliers_equals_kabsch(self):
        rng = np.random.default_rng(6)
        src = rng.normal(size=(40, 3)) * 0.05
        T = RigidTransform(Rotation.random(random_state=rng).as_matrix(), [0.0, 0.1, 0.0])
        gen = T.apply(src) + rng.normal(scale=1e-3, size=src.shape)
        res = robust_rigid_register(src, gen)
        ls = kabsch_fit(src, gen)
        assert np.abs(res.transform.rotation - ls.rotation).max() < 1e-9

    def test_conjugation_invariance(self):
        rng = np.random.default_rng(7)
        src, gen, *_ = mixture(rng)
        Gx = RigidTransform(Rotation.random(random_state=rng).as_matrix(), [1.0, 2.0, -0.5])
        a = robust_rigid_register(src, gen).transform
        b = robust_rigid_register(Gx.apply(src), Gx.apply(gen)).transform
        expected = Gx @ a @ Gx.inverse()
        assert np.abs(b.rotation - expected.rotation).max() < 1e-9
        assert np.abs(b.translation - expected.translation).max() < 1e-9

    def test_collapse_raises(self):
        rng = np.random.default_rng(8)
        src = rng.normal(size=(10, 3))
        gen = rng.normal(size=(10, 3)) * 10
        with pytest.raises(DegenerateInput):
            robust_rigid_register(src, gen, huber_delta=1e-6)

    def test_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            robust_rigid_register(np.zeros((4, 3)), np.zeros((5, 3)))

    def test_huber_weights(self):
        np.testing.assert_array_equal(huber_weights([0.0, 0.5, 2.0], 1.0), [1.0, 1.0, 0.5])
