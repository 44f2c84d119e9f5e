import warnings

import numpy as np
import pytest

from ilalab import attacks as atk, guides as gd, models, regression as reg


@pytest.fixture(scope="module")
def setup():
    sm = models.split(models.build("cnn-small", 0), 5)
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(4, 1, 16, 16)).astype(np.float32)
    y = np.array([1, 2, 3, 4])
    cfg = atk.AttackConfig(iterations=20, sample_count=5, random_init=True, runs=3)
    return sm, x, y, atk.pgd_multirun(sm, x, y, cfg)


def cos(a, b):
    return a @ b / (np.linalg.norm(a) * np.linalg.norm(b))


def test_dataset_layout(setup):
    sm, x, _, runs = setup
    ds = gd.build_dataset(runs[0])
    assert ds.H.shape == (18, sm.m) and ds.r.shape == (18,)
    # row 0 of every run is the benign input, so its discrepancy is zero
    for j in (0, 6, 12):
        assert not ds.H[j].any()
    np.testing.assert_allclose(ds.anchor, sm.features(x[:1])[0])
    assert len(ds.sources) == 3


def test_dataset_rejects_mixed_inputs(setup):
    _, _, _, runs = setup
    with pytest.raises(ValueError):
        gd.build_dataset([runs[0][0], runs[1][0]])
    with pytest.raises(ValueError):
        gd.build_dataset([])


def test_rr_routes_agree(setup):
    _, _, _, runs = setup
    ds = gd.build_dataset(runs[1])
    a, b = gd.fit_rr(ds, 1e3), gd.fit_rr_woodbury(ds, 1e3)
    assert np.linalg.norm(a.w - b.w) / np.linalg.norm(a.w) < 1e-6
    via = gd.fit(ds, gd.GuideSpec(lam=1e3))
    np.testing.assert_allclose(via.w, b.w)
    assert via.provenance["method"] == "rr"


def test_approx_matches_strong_ridge(setup):
    _, _, _, runs = setup
    for r in runs:
        ds = gd.build_dataset(r)
        assert cos(gd.fit_rr(ds, 1e10).w, gd.fit_rr_approx(ds).w) > 0.999


def test_guide_carries_anchor_and_provenance(setup):
    _, _, _, runs = setup
    g = gd.fit(gd.build_dataset(runs[2]), gd.GuideSpec(method="svr"))
    np.testing.assert_array_equal(g.anchor, runs[2][0].anchor)
    assert g.provenance["method"] == "svr" and g.provenance["rows"] == 18
    assert g.provenance["trajectories"] == [gd.trajectory_hash(t) for t in runs[2]]


def test_elasticnet_floor_warns(setup):
    _, _, _, runs = setup
    ds = gd.build_dataset(runs[0])
    with pytest.warns(UserWarning):
        gd.fit_elasticnet(ds, lambda1=0.01)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gd.fit_elasticnet(ds, lambda1=0.05)


def test_normalize_rows(setup):
    _, _, _, runs = setup
    ds = gd.normalize_rows(gd.build_dataset(runs[0]))
    n = np.linalg.norm(ds.H, axis=1)
    np.testing.assert_allclose(n[n > 0], 1.0)
    assert (n == 0).sum() == 3


def test_ila_direction_is_last_discrepancy(setup):
    _, _, _, runs = setup
    tr = runs[0][0]
    np.testing.assert_allclose(gd.ila_direction(tr).w, tr.features[-1] - tr.anchor)


def test_degenerate_trajectory_is_rejected(setup):
    sm, x, y, _ = setup
    tr = atk.ifgsm(sm, x[:1], y[:1], atk.AttackConfig(epsilon=0.0, iterations=5, sample_count=5))
    ds = gd.build_dataset(tr)
    for method in gd.FIT_METHODS:
        with pytest.raises(reg.DegenerateDataset):
            gd.fit(ds, gd.GuideSpec(), method)
    with pytest.raises(reg.DegenerateDataset):
        gd.ila_direction(tr[0])


def test_random_guides_are_seeded_and_shaped(setup):
    sm, x, y, _ = setup
    a = gd.random_guide_input(sm, x, y, 10, 0.02, seed=5)
    b = gd.random_guide_input(sm, x, y, 10, 0.02, seed=5)
    c = gd.random_guide_input(sm, x, y, 10, 0.02, seed=6)
    assert all(g.m == sm.m for g in a)
    np.testing.assert_array_equal(a[0].w, b[0].w)
    assert not np.array_equal(a[0].w, c[0].w)
    f = gd.random_guide_feature(sm, x, y, 10, 0.05, seed=5)
    assert f[0].provenance["method"] == "rand_feature"
    np.testing.assert_allclose(f[1].anchor, sm.features(x[1:2])[0])
    with pytest.raises(ValueError):
        gd.random_guide_feature(sm, x, y, 10, 0.0, seed=5)


def test_calibrated_sigmas_match_baseline_scale(setup):
    sm, x, y, _ = setup
    trs = atk.ifgsm(sm, x, y, atk.AttackConfig(iterations=20, sample_count=5))
    s_in, s_feat = gd.calibrate_sigmas(trs, x)
    pert = np.mean([np.linalg.norm(t.final - x[b]) for b, t in enumerate(trs)])
    assert s_in * np.sqrt(x[0].size) == pytest.approx(pert, rel=1e-6)
    assert s_feat > 0


def test_spec_validation():
    with pytest.raises(ValueError):
        gd.GuideSpec(method="lasso")
    with pytest.raises(ValueError):
        gd.GuideSpec(lam=-1.0)
    assert gd.GuideSpec(method="rand_input", regressor="svr").label == "rand_input+svr"
