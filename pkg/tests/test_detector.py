import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssd import detector as det
from ssd import persist
from ssd.detector import ClusterGaussian, DetectorModel, FewShotModel
from conftest import random_spd


def manual_model(mus, covs, normalization=False):
    clusters = [ClusterGaussian.from_moments(mu, cov) for mu, cov in zip(mus, covs)]
    return DetectorModel(clusters, len(mus[0]), normalization=normalization)


def inverse_oracle(mus, covs, z):
    return min(float((z - mu) @ np.linalg.inv(cov) @ (z - mu)) for mu, cov in zip(mus, covs))


def seeded_model(seed, d=8, m=3):
    rng = np.random.default_rng(seed)
    mus = [rng.normal(size=d) for _ in range(m)]
    covs = [random_spd(rng, d, jitter=0.5) for _ in range(m)]
    return mus, covs, manual_model(mus, covs)


# -- fit ----------------------------------------------------------------------------


def test_fit_single_cluster_recovers_mean():
    rng = np.random.default_rng(0)
    center, sigma = np.array([2.0, -1.0, 0.5]), 0.7
    x = center + sigma * rng.normal(size=(100, 3))
    model = det.fit(x, m=1, normalize=False)
    assert np.linalg.norm(model.clusters[0].mu - center) < 3 * sigma / np.sqrt(100) * np.sqrt(3)
    assert model.clusters[0].weight == 1.0


def test_fit_two_blobs_per_cluster_means():
    rng = np.random.default_rng(1)
    centers = np.array([[8.0, 0.0], [-8.0, 0.0]])
    x = np.vstack([c + rng.normal(size=(100, 2)) for c in centers])
    model = det.fit(x, m=2, seed=4, normalize=False)
    mus = sorted((c.mu for c in model.clusters), key=lambda v: -v[0])
    for mu, c in zip(mus, centers):
        assert np.linalg.norm(mu - c) < 3 / np.sqrt(100) * np.sqrt(2)


def test_fit_single_point():
    model = det.fit([[0.3, 0.4]], m=1)
    g = model.clusters[0]
    np.testing.assert_allclose(g.covariance, 1e-18 * np.eye(2), rtol=1e-12)
    assert det.ssd_score(model, [0.3, 0.4]) == 0.0


def test_fit_normalizes_and_records_metadata(rng):
    x = rng.normal(size=(30, 4)) * 5
    model = det.fit(x, m=1, seed=9)
    assert model.normalization and model.fit_seed == 9
    assert abs(np.linalg.norm(model.clusters[0].mu)) <= 1.0
    assert model.source_hash == det.features_digest(x)


def test_m1_equals_no_clustering_path(rng):
    x = rng.normal(size=(80, 5))
    z = rng.normal(size=(20, 5))
    fitted = det.fit(x, m=1, normalize=False)
    from ssd.numerics import sample_mean_cov

    est = sample_mean_cov(x)
    direct = manual_model([est.mean], [est.covariance])
    assert det.ssd_scores(fitted, z).tobytes() == det.ssd_scores(direct, z).tobytes()


def test_fit_deterministic(rng):
    x = rng.normal(size=(200, 4))
    z = rng.normal(size=(50, 4))
    a, b = det.fit(x, m=3, seed=5), det.fit(x, m=3, seed=5)
    assert det.ssd_scores(a, z).tobytes() == det.ssd_scores(b, z).tobytes()


# -- ssd / euclid -------------------------------------------------------------------


def test_ssd_zero_at_mean():
    mus, covs, model = seeded_model(0)
    assert det.ssd_score(model, mus[0]) == 0.0


def test_ssd_identity_cov_is_squared_distance():
    mu = np.zeros(5)
    model = manual_model([mu], [np.eye(5)])
    assert det.ssd_score(model, [3.0, 4.0, 0, 0, 0]) == 25.0


@pytest.mark.parametrize("seed", range(5))
def test_ssd_matches_inverse_oracle(seed):
    mus, covs, model = seeded_model(seed)
    zs = np.random.default_rng(seed + 100).normal(size=(25, 8)) * 2
    got = det.ssd_scores(model, zs)
    want = np.array([inverse_oracle(mus, covs, z) for z in zs])
    np.testing.assert_allclose(got, want, rtol=1e-8)


def test_ssd_reports_lowest_index_on_tie():
    model = manual_model([np.array([-1.0, 0.0]), np.array([1.0, 0.0])], [np.eye(2)] * 2)
    score, j = det.ssd_score(model, [0.0, 2.0], return_cluster=True)
    assert score == 5.0 and j == 0


def test_ssd_dimension_mismatch():
    _, _, model = seeded_model(0)
    with pytest.raises(ValueError, match="expects d=8, got d=3"):
        det.ssd_score(model, np.zeros(3))
    with pytest.raises(ValueError, match="dimension mismatch"):
        det.euclid_score(model, np.zeros(3))


def test_euclid_trivial_cases():
    model = manual_model([np.array([1.0, 2.0])], [np.diag([4.0, 9.0])])
    assert det.euclid_score(model, [1.0, 2.0]) == 0.0
    assert det.euclid_score(model, [2.0, 3.0]) == 2.0


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 4), d=st.integers(1, 6))
def test_identity_cov_ssd_equals_euclid(seed, m, d):
    rng = np.random.default_rng(seed)
    model = manual_model([rng.normal(size=d) for _ in range(m)], [np.eye(d)] * m)
    z = rng.normal(size=(10, d))
    assert det.ssd_scores(model, z).tobytes() == det.euclid_scores(model, z).tobytes()


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 4))
def test_ssd_min_property_and_nonnegative(seed, m):
    mus, covs, model = seeded_model(seed % 1000, d=4, m=m)
    z = np.random.default_rng(seed).normal(size=(10, 4)) * 3
    scores = det.ssd_scores(model, z)
    assert np.all(scores >= 0)
    for g in model.clusters:
        assert np.all(scores <= g.mahalanobis(z))


@pytest.mark.parametrize("seed", range(5))
def test_eigen_route_equals_cholesky_route(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(200, 6)) * rng.uniform(0.2, 3, size=6)
    model = det.fit(x, m=1, normalize=seed % 2 == 0)
    z = rng.normal(size=(100, 6))
    np.testing.assert_allclose(det.eigen_scores(model, z), det.ssd_scores(model, z), rtol=1e-8)


# -- few-shot -----------------------------------------------------------------------


def fewshot_manual(mu_in, cov_in, mu_u, cov_u):
    in_model = manual_model([mu_in], [cov_in])
    return FewShotModel(in_model, np.asarray(mu_u, float), np.linalg.cholesky(cov_u), 1, 1)


def test_ssd_k_cancels_for_equal_statistics(rng):
    mu, cov = rng.normal(size=4), random_spd(rng, 4)
    model = fewshot_manual(mu, cov, mu, cov)
    np.testing.assert_allclose(det.ssd_k_scores(model, rng.normal(size=(10, 4))), 0.0, atol=1e-10)


def test_ssd_k_at_in_mean_is_negative_ood_distance(rng):
    mu_in, mu_u = rng.normal(size=3), rng.normal(size=3)
    cov_in, cov_u = random_spd(rng, 3), random_spd(rng, 3)
    model = fewshot_manual(mu_in, cov_in, mu_u, cov_u)
    expected = -float((mu_in - mu_u) @ np.linalg.inv(cov_u) @ (mu_in - mu_u))
    got = det.ssd_k_score(model, mu_in)
    assert got <= 0 and got == pytest.approx(expected, rel=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_ssd_k_matches_inverse_oracle(seed):
    rng = np.random.default_rng(seed)
    x_in, shots = rng.normal(size=(150, 6)), rng.normal(1.0, 1.0, size=(5, 6))
    model = det.fewshot_fit(x_in, shots, n_augment=10, seed=seed, normalize=False)
    mu_in, cov_in = model.in_model.clusters[0].mu, model.in_model.clusters[0].covariance
    cov_u = model.ood_chol @ model.ood_chol.T
    z = rng.normal(size=(30, 6))
    want = [
        (v - mu_in) @ np.linalg.inv(cov_in) @ (v - mu_in)
        - (v - model.ood_mean) @ np.linalg.inv(cov_u) @ (v - model.ood_mean)
        for v in z
    ]
    np.testing.assert_allclose(det.ssd_k_scores(model, z), want, rtol=1e-8, atol=1e-10)


@given(seed=st.integers(0, 2**32 - 1))
def test_ssd_k_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    mu_a, mu_b = rng.normal(size=3), rng.normal(size=3)
    cov_a, cov_b = random_spd(rng, 3), random_spd(rng, 3)
    z = rng.normal(size=(8, 3))
    fwd = det.ssd_k_scores(fewshot_manual(mu_a, cov_a, mu_b, cov_b), z)
    bwd = det.ssd_k_scores(fewshot_manual(mu_b, cov_b, mu_a, cov_a), z)
    np.testing.assert_allclose(fwd, -bwd, rtol=1e-10, atol=1e-10)


def test_fewshot_single_augment_uses_shots_exactly(rng):
    shots = rng.normal(size=(4, 3))
    model = det.fewshot_fit(rng.normal(size=(50, 3)), shots, n_augment=1, normalize=False)
    np.testing.assert_allclose(model.ood_mean, shots.mean(axis=0), rtol=1e-12)
    assert model.k == 4 and model.n_augment == 1


def test_fewshot_one_shot_degenerates_to_floor(rng):
    model = det.fewshot_fit(rng.normal(size=(50, 3)), rng.normal(size=(1, 3)), n_augment=1)
    s_u = model.ood_chol @ model.ood_chol.T
    np.testing.assert_allclose(s_u, 1e-18 * np.eye(3), rtol=1e-12)
    assert np.isfinite(det.ssd_k_score(model, rng.normal(size=3)))


def test_fewshot_amplified_row_count(rng):
    shots = rng.normal(size=(3, 4))
    u = det.amplify_shots(shots, 7, np.ones(4), np.random.default_rng(0))
    assert u.shape == (21, 4)
    np.testing.assert_array_equal(u[::7], shots)


def test_fewshot_errors(rng):
    x = rng.normal(size=(20, 3))
    with pytest.raises(ValueError, match="k >= 1"):
        det.fewshot_fit(x, np.zeros((0, 3)))
    with pytest.raises(ValueError):
        det.fewshot_fit(x, x[:2], n_augment=0)


@pytest.mark.parametrize("seed", range(5))
def test_fewshot_beats_plain_ssd_on_separated_ood(seed):
    from ssd.metrics import LabeledScores, auroc

    rng = np.random.default_rng(seed)
    offset = np.full(6, 2.0)
    shift = np.r_[np.zeros(4), 2.5, 2.5]
    x_in = rng.normal(size=(500, 6)) + offset
    shots = rng.normal(size=(5, 6)) + offset + shift
    test_in = rng.normal(size=(300, 6)) + offset
    test_ood = rng.normal(size=(300, 6)) + offset + shift
    model = det.fewshot_fit(x_in, shots, n_augment=10, seed=seed)
    a_ssd = auroc(LabeledScores.from_split(
        det.ssd_scores(model.in_model, test_in), det.ssd_scores(model.in_model, test_ood)))
    a_k = auroc(LabeledScores.from_split(
        det.ssd_k_scores(model, test_in), det.ssd_k_scores(model, test_ood)))
    assert a_k >= a_ssd


# -- calibration --------------------------------------------------------------------


def test_calibrate_one_to_hundred():
    cal = det.calibrate(np.arange(1, 101, dtype=float)[::-1], 0.95)
    assert cal.threshold == 95.0 and cal.cal_count == 100


def test_calibrate_full_tpr():
    s = np.array([3.0, 9.0, 1.0])
    cal = det.calibrate(s, 1.0)
    assert cal.threshold == 9.0 and not det.classify(s, cal).any()


def test_calibrate_twenty_scores():
    s = np.random.default_rng(2).normal(size=20)
    cal = det.calibrate(s, 0.95)
    assert cal.threshold == np.sort(s)[18]
    assert np.mean(s <= cal.threshold) >= 0.95


def test_classify_boundary():
    cal = det.Calibration(2.0, 0.95, 10)
    np.testing.assert_array_equal(det.classify([2.0, np.nextafter(2.0, 3.0)], cal), [False, True])


def test_calibrate_errors():
    with pytest.raises(ValueError):
        det.calibrate([], 0.95)
    with pytest.raises(ValueError):
        det.calibrate([1.0], 0.0)


@given(
    scores=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200),
    t=st.floats(0.01, 1.0),
)
def test_calibration_tpr_and_minimality(scores, t):
    s = np.array(scores)
    cal = det.calibrate(s, t)
    accepted = np.mean(~det.classify(s, cal))
    assert accepted >= t - 1e-12
    lower = s[s < cal.threshold]
    if lower.size:
        # the next distinct value down would accept too few
        assert np.mean(s <= lower.max()) < t


def test_end_to_end_calibration_tpr():
    rng = np.random.default_rng(8)
    from ssd.data import partition

    train, cal_x = partition(rng.normal(size=(1000, 5)), 0.8, seed=8)
    model = det.fit(train)
    cal_scores = det.ssd_scores(model, cal_x)
    cal = det.calibrate(cal_scores)
    assert np.mean(~det.classify(cal_scores, cal)) >= 0.95


# -- eigen report -------------------------------------------------------------------


def test_eigen_report_identity_cov(rng):
    model = manual_model([np.zeros(3)], [np.eye(3)])
    rep = det.eigen_discrimination_report(model, rng.normal(size=(50, 3)), rng.normal(1, 1, (50, 3)))
    assert rep.euclid_auroc == rep.mahalanobis_auroc


def test_eigen_report_anisotropic():
    rng = np.random.default_rng(0)
    scale = np.array([10.0, 1.0])
    train = rng.normal(size=(2000, 2)) * scale
    model = det.fit(train, normalize=False)
    in_test = rng.normal(size=(1000, 2)) * scale
    ood = rng.normal(size=(1000, 2)) * scale + [0.0, 3.0]
    rep = det.eigen_discrimination_report(model, in_test, ood)
    np.testing.assert_allclose(rep.eigenvalues, [100, 1], rtol=0.1)
    assert rep.component_auroc[1] > rep.component_auroc[0]
    assert rep.mahalanobis_auroc > rep.euclid_auroc
    assert rep.max_identity_error <= 1e-8
    assert rep.to_tsv().splitlines()[0] == "component\teigenvalue\tauroc"


def test_eigen_report_needs_single_cluster():
    _, _, model = seeded_model(0)
    with pytest.raises(ValueError, match="m=3"):
        det.eigen_discrimination_report(model, np.zeros((2, 8)), np.zeros((2, 8)))


# -- persistence --------------------------------------------------------------------


def test_model_round_trip(tmp_path, rng):
    model = det.fit(rng.normal(size=(300, 6)), m=3, seed=1)
    path = tmp_path / "model.json"
    persist.save(model, path)
    loaded = persist.load_model(path)
    z = rng.normal(size=(100, 6))
    assert np.max(np.abs(det.ssd_scores(model, z) - det.ssd_scores(loaded, z))) <= 1e-12
    assert (loaded.m, loaded.d, loaded.normalization) == (3, 6, True)


def test_fewshot_and_calibration_round_trip(tmp_path, rng):
    model = det.fewshot_fit(rng.normal(size=(100, 4)), rng.normal(size=(3, 4)), seed=2)
    persist.save(model, tmp_path / "fs.json")
    loaded = persist.load(tmp_path / "fs.json")
    z = rng.normal(size=(20, 4))
    assert np.max(np.abs(det.ssd_k_scores(model, z) - det.ssd_k_scores(loaded, z))) <= 1e-12
    cal = det.calibrate(rng.normal(size=30))
    persist.save(cal, tmp_path / "cal.json")
    assert persist.load(tmp_path / "cal.json") == cal


def test_schema_mismatch(tmp_path, rng):
    persist.save(det.calibrate([1.0, 2.0]), tmp_path / "cal.json")
    with pytest.raises(persist.SchemaError):
        persist.load_model(tmp_path / "cal.json")
    (tmp_path / "bad.json").write_text('{"schema": "ssd-model/9"}')
    with pytest.raises(persist.SchemaError):
        persist.load(tmp_path / "bad.json")


def test_thread_cap_does_not_change_scores(monkeypatch, rng):
    model = det.fit(rng.normal(size=(100, 3)), m=2)
    z = rng.normal(size=(10000, 3))
    monkeypatch.setenv("SSD_THREADS", "1")
    serial = det.ssd_scores(model, z)
    monkeypatch.setenv("SSD_THREADS", "4")
    assert det.ssd_scores(model, z).tobytes() == serial.tobytes()
