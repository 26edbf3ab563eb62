from dataclasses import replace

import numpy as np
import pytest

from ivimfit.model import DecayCurve, IvimParams, NoiseSpec, ParamBounds, evaluate_signal, signal_array, simulate
from ivimfit.pipeline import (
    FLAG_BITS,
    LITERAL_DSTAR_FIXED,
    FitConfig,
    InsufficientSplit,
    VoxelVolume,
    fit,
    fit_baseline_dstar_fixed,
    fit_baseline_msnlls,
    fit_curve,
    fit_volume,
    normalization_constant,
    split_mask,
    voxel_seed,
)
from ivimfit.suites import COMPACT_SCHEME, noisy_suite, random_truths

EXAMPLE = IvimParams(1.0, 0.235, 0.0146, 0.00087)


def test_example_curve_recovered(scheme):
    res = fit_curve(evaluate_signal(EXAMPLE, scheme))
    np.testing.assert_allclose(res.params.as_array(), EXAMPLE.as_array(), rtol=1e-4)
    assert [s.name for s in res.stages] == ["global_sh", "convex", "trr"]


def test_example_curve_recovered_with_de(scheme):
    res = fit_curve(evaluate_signal(EXAMPLE, scheme), FitConfig(optimizer="de"))
    np.testing.assert_allclose(res.params.as_array(), EXAMPLE.as_array(), rtol=1e-4)


def test_scaled_curve_scales_s0(scheme):
    res = fit_curve(evaluate_signal(replace(EXAMPLE, s0=350.0), scheme))
    assert res.params.s0 == pytest.approx(350.0, rel=1e-4)
    assert res.params.f == pytest.approx(EXAMPLE.f, rel=1e-4)


def test_single_exponential_curve(scheme):
    res = fit_curve(evaluate_signal(IvimParams(1.0, 0.0, 0.02, 0.0011), scheme))
    assert res.params.f < 1e-6
    assert res.params.d == pytest.approx(0.0011, rel=1e-6)


def test_rician_median_f_error():
    truths, curves = noisy_suite(200, snr=30, kind="rician", seed=7)
    err = [abs(fit_curve(c).params.f - t.f) for t, c in zip(truths, curves)]
    assert np.median(err) < 0.05


@pytest.mark.parametrize("optimizer", ["sh", "de"])
def test_stage_monotonicity(optimizer, scheme):
    truths, curves = noisy_suite(15, snr=20, kind="gaussian", seed=3, scheme=scheme)
    for c in curves:
        res = fit_curve(c, FitConfig(optimizer=optimizer))
        assert res.stage("trr").objective <= res.stage("convex").objective
        assert ParamBounds().contains(_normalized(res, c))


def _normalized(res, curve):
    x = res.params.as_array().copy()
    x[0] /= normalization_constant(curve)
    return IvimParams.from_array(x)


def test_fit_is_deterministic():
    _, curves = noisy_suite(3, seed=1)
    for method in ("varpro_sh", "varpro_de", "msnlls", "dstar_fixed"):
        for c in curves:
            assert fit(c, method, FitConfig(seed=5)) == fit(c, method, FitConfig(seed=5))


def test_ablation_toggles(scheme):
    c = evaluate_signal(EXAMPLE, scheme)
    res = fit_curve(c, FitConfig(use_trr=False))
    assert [s.name for s in res.stages] == ["global_sh", "convex"]
    res = fit_curve(c, FitConfig(use_global=False))
    assert res.stage("global_sh").nfev == 1


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        FitConfig(optimizer="nelder")
    with pytest.raises(ValueError):
        fit(DecayCurve([1, 0.8, 0.6, 0.5], [0, 100, 200, 300]), "bogus")


# --------------------------------------------------------------------------
# baselines


def test_split_on_compact_scheme_has_four_high_points():
    assert split_mask(COMPACT_SCHEME.bvalues).sum() == 4


def test_msnlls_single_exponential(scheme):
    res = fit_baseline_msnlls(evaluate_signal(IvimParams(1.0, 0.0, 0.02, 0.0013), scheme))
    assert res.params.d == pytest.approx(0.0013, rel=1e-8)
    assert res.params.f < 1e-6
    assert [s.name for s in res.stages] == ["loglinear", "trr"]


def test_msnlls_insufficient_split(scheme):
    with pytest.raises(InsufficientSplit):
        fit_baseline_msnlls(evaluate_signal(EXAMPLE, scheme), split_b=1000.0)
    with pytest.raises(InsufficientSplit):
        fit_baseline_msnlls(evaluate_signal(EXAMPLE, scheme), split_b=5.0)


def test_dstar_fixed_matching_model(scheme):
    truth = IvimParams(1.0, 0.2, 7e-3, 0.0012)
    res = fit_baseline_dstar_fixed(evaluate_signal(truth, scheme))
    np.testing.assert_allclose(res.params.as_array(), truth.as_array(), rtol=1e-6)


def test_dstar_fixed_mismatch_biases_f(scheme):
    truth = IvimParams(1.0, 0.2, 0.04, 0.0012)
    res = fit_baseline_dstar_fixed(evaluate_signal(truth, scheme))
    assert abs(res.params.f - truth.f) > 0.01


def test_dstar_fixed_literal_constant(scheme):
    res = fit(evaluate_signal(EXAMPLE, scheme), "dstar_fixed", FitConfig(d_star_fixed=LITERAL_DSTAR_FIXED))
    assert res.params.d_star == LITERAL_DSTAR_FIXED
    assert np.all(np.isfinite(res.params.as_array()))


# --------------------------------------------------------------------------
# volumes


def constant_volume(truth, dims=(4, 4, 1), scheme=COMPACT_SCHEME):
    y = evaluate_signal(truth, scheme).signal
    return VoxelVolume(np.broadcast_to(y, (*dims, len(scheme))).copy(), scheme)


def test_constant_volume_matches_single_fit():
    vol = constant_volume(EXAMPLE)
    maps = fit_volume(vol)
    single = fit_curve(vol.curve(0))
    for name, grid in maps.as_dict().items():
        assert np.all(grid == getattr(single.params, name))
    assert all(r == single for r in maps.results)


def test_masked_voxels_hold_sentinel():
    vol = constant_volume(EXAMPLE, dims=(2, 2, 1))
    mask = np.ones((2, 2, 1), dtype=bool)
    mask[1, 0, 0] = False
    maps = fit_volume(replace(vol, mask=mask))
    for grid in maps.as_dict().values():
        assert np.isnan(grid[1, 0, 0]) and np.isfinite(grid[mask]).all()
    assert maps.flags[1, 0, 0] == -1
    assert maps.results[2] is None


def test_failed_voxel_is_flagged_not_fatal():
    vol = constant_volume(EXAMPLE, dims=(2, 1, 1))
    data = vol.data.copy()
    data[1, 0, 0, 3] = np.nan
    maps = fit_volume(replace(vol, data=data), method="msnlls")
    assert maps.flags[1, 0, 0] == FLAG_BITS["failed"]
    assert np.isfinite(maps.s0[0, 0, 0])


def test_worker_count_does_not_change_maps():
    truths = random_truths(8, seed=2)
    data = np.array([simulate(t, COMPACT_SCHEME, NoiseSpec("rician", 25, i)).signal for i, t in enumerate(truths)])
    vol = VoxelVolume(data.reshape(2, 2, 2, -1), COMPACT_SCHEME)
    cfg = FitConfig(optimizer="de", seed=9)
    a = fit_volume(vol, cfg, "varpro_de", workers=1)
    b = fit_volume(vol, cfg, "varpro_de", workers=3)
    for k in a.as_dict():
        assert np.array_equal(getattr(a, k), getattr(b, k))
    assert np.array_equal(a.flags, b.flags)


def test_voxel_seed_depends_on_index_and_base():
    assert voxel_seed(0, 1) == voxel_seed(0, 1)
    assert len({voxel_seed(0, i) for i in range(100)}) == 100
    assert voxel_seed(0, 5) != voxel_seed(1, 5)


def test_volume_shape_checks():
    with pytest.raises(ValueError):
        VoxelVolume(np.zeros((2, 2, 11)), COMPACT_SCHEME)
    with pytest.raises(ValueError):
        VoxelVolume(np.zeros((2, 2, 1, 11)), COMPACT_SCHEME, mask=np.ones((2, 2)))


def test_empty_volume():
    maps = fit_volume(VoxelVolume(np.zeros((0, 3, 1, 11)), COMPACT_SCHEME))
    assert maps.s0.shape == (0, 3, 1) and maps.results == []


def test_predict_uses_fitted_params(scheme):
    res = fit_curve(evaluate_signal(EXAMPLE, scheme))
    np.testing.assert_allclose(res.predict(scheme), signal_array(res.params.as_array(), scheme.bvalues))
