import numpy as np
import pytest

from transition_rmt import ensemble
from transition_rmt.ensemble import EnsembleConfig, Moments, predict_case, run_ensemble
from transition_rmt.errors import InvalidArgument, NumericalFailure
from transition_rmt.model import ModelSpec, uniform_channels


def tun(n=60, v=0.3, k1=3, k2=2, t1=0.8, t2=0.5, **kw):
    return ModelSpec(kind="tunneling", n=n, v_tilde=v, channels1=uniform_channels(k1, t1),
                     channels2=uniform_channels(k2, t2), **kw)


def _fill(values, dtype=float):
    m = Moments(values.shape[1:], dtype)
    for v in values:
        m.add(v)
    return m


@pytest.mark.parametrize("dtype", [float, complex])
def test_moments_merge_matches_union(dtype):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((57, 3)) * 10 + 3
    if dtype is complex:
        x = x + 1j * rng.standard_normal((57, 3))
    whole = _fill(x, dtype)
    a, b, c = _fill(x[:10], dtype), _fill(x[10:31], dtype), _fill(x[31:], dtype)
    left = a.merge(b).merge(c)
    right = a.merge(b.merge(c))
    for m in (left, right):
        assert m.count == 57
        assert np.allclose(m.mean, whole.mean, rtol=1e-12, atol=0)
        assert np.allclose(m.variance, whole.variance, rtol=1e-12, atol=0)
    assert np.allclose(whole.mean, x.mean(axis=0), rtol=1e-12)
    expect = np.sum(np.abs(x - x.mean(axis=0)) ** 2, axis=0) / 56
    assert np.allclose(whole.variance, expect, rtol=1e-12)
    assert np.allclose(whole.se, np.sqrt(whole.variance / 57))
    empty = Moments((3,), dtype)
    assert np.array_equal(empty.merge(a).mean, a.mean)
    assert np.array_equal(a.merge(empty).m2, a.m2)


def test_single_realization():
    cfg = EnsembleConfig(tun(), 1, master_seed=3, estimators={"xi_stats", "pab"})
    st = run_ensemble(cfg)
    assert st.count == 1
    assert st.xi1.variance == 0
    assert np.all(st.pab.variance == 0)
    from transition_rmt.goe import stream
    from transition_rmt.model import build_realization
    from transition_rmt.scattering import smatrix_factorized
    ref = smatrix_factorized(build_realization(cfg.model, stream(3, 0)))
    assert st.xi1.mean == pytest.approx(ref.xi1, rel=1e-12)
    assert np.allclose(st.pab.mean, ref.p_ab, rtol=1e-12)


def test_determinism_and_worker_independence():
    est = {"xi_stats", "s_mean", "formation", "pab", "spectrum"}
    cfg = EnsembleConfig(tun(), 45, master_seed=11, estimators=est, batches=7)
    a = run_ensemble(cfg)
    b = run_ensemble(cfg)
    c = run_ensemble(EnsembleConfig(tun(), 45, master_seed=11, estimators=est, batches=7, workers=3))
    assert a.fingerprint() == b.fingerprint() == c.fingerprint()
    d = run_ensemble(EnsembleConfig(tun(), 45, master_seed=12, estimators=est, batches=7))
    assert d.fingerprint() != a.fingerprint()


def test_seed_defaults_to_model_seed():
    cfg = EnsembleConfig(tun(seed=99), 5)
    assert cfg.master_seed == 99


def test_config_validation():
    with pytest.raises(InvalidArgument):
        EnsembleConfig(tun(), 0)
    with pytest.raises(InvalidArgument):
        EnsembleConfig(tun(), 5, workers=0)
    with pytest.raises(InvalidArgument):
        EnsembleConfig(tun(), 5, estimators={"bogus"})
    with pytest.raises(InvalidArgument):
        EnsembleConfig(tun(), 5, estimators=set())
    with pytest.raises(InvalidArgument):
        EnsembleConfig(tun(k2=0), 5, estimators={"pab"})
    with pytest.raises(InvalidArgument):
        EnsembleConfig(tun(k1=0, k2=0), 5, estimators={"xi_stats"})


def test_full_s_rows_are_unitary_and_pab_nonnegative():
    cfg = EnsembleConfig(tun(), 30, master_seed=4, estimators={"full_s", "pab"})
    st = run_ensemble(cfg)
    assert st.unitarity_max <= 1e-10
    assert st.symmetry_max <= 1e-12
    assert np.allclose(st.full_s_abs2.mean.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(st.pab.mean >= 0)
    # cross block of the full S agrees with the factorized route on average
    assert np.allclose(st.full_s_abs2.mean[:3, 3:], st.pab.mean, rtol=1e-8)


def test_spectrum_counts():
    cfg = EnsembleConfig(tun(n=50, k1=0, k2=0, v=0.0), 12, master_seed=5, estimators={"spectrum"})
    st = run_ensemble(cfg)
    h = st.spectrum
    assert h.counts.sum() + h.underflow + h.overflow == 12 * 2 * 50
    assert np.sum(h.density * np.diff(h.edges)) == pytest.approx(2 * 50 - (h.underflow + h.overflow) / 12)


def test_one_sided_xi_stats_skip_closed_side():
    st = run_ensemble(EnsembleConfig(tun(k2=0), 10, master_seed=6, estimators={"xi_stats"}))
    assert st.xi1 is not None and st.xi2 is None


def _flaky(monkeypatch, failing_calls):
    real_solve = ensemble.solve_side
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] in failing_calls:
            raise NumericalFailure("injected")
        return real_solve(*args, **kw)

    monkeypatch.setattr(ensemble, "solve_side", flaky)


def test_failure_is_resampled_once(monkeypatch):
    _flaky(monkeypatch, {1})
    cfg = EnsembleConfig(tun(n=30, k2=0), 1000, master_seed=7, estimators={"xi_stats"})
    st = run_ensemble(cfg)
    assert (st.failures, st.dropped, st.count) == (1, 0, 1000)


def test_double_failure_drops_realization(monkeypatch):
    _flaky(monkeypatch, {1, 2})
    cfg = EnsembleConfig(tun(n=30, k2=0), 2000, master_seed=7, estimators={"xi_stats"})
    st = run_ensemble(cfg)
    assert (st.failures, st.dropped, st.count) == (2, 1, 1999)


def test_high_failure_rate_aborts(monkeypatch):
    def broken(*args, **kw):
        raise NumericalFailure("always")

    monkeypatch.setattr(ensemble, "solve_side", broken)
    cfg = EnsembleConfig(tun(k2=0), 5, master_seed=8, estimators={"xi_stats"})
    with pytest.raises(NumericalFailure, match="exceed"):
        run_ensemble(cfg)


def test_batch_means_give_variance_se():
    st = run_ensemble(EnsembleConfig(tun(k2=0), 60, master_seed=9, estimators={"xi_stats"}))
    assert st.xi1.variance_se is not None and st.xi1.variance_se > 0
    assert st.batch_means["xi1"].shape == (20,)


def test_predict_case_iii_uniform_example():
    cfg = EnsembleConfig(tun(n=400, v=1.0, k1=20, k2=20, t1=1.0, t2=1.0), 10)
    rec = predict_case(cfg, [1.0] * 20, [1.0] * 20, "iii")
    assert rec.pab.shape == (20, 20)
    assert np.allclose(rec.pab, 6.25e-4, rtol=1e-12)
    assert rec.a_factor == pytest.approx(0.5)


def test_predict_case_iii_transition_state():
    spec = ModelSpec(kind="transition_state", n=400, v1_tilde=0.2, v2_tilde=0.3, e0=0.05,
                     channels1=uniform_channels(20, 1.0), channels2=uniform_channels(20, 1.0))
    rec = predict_case(EnsembleConfig(spec, 10), [1.0] * 20, [1.0] * 20, "iii")
    g1, g2 = 2 * 0.2**2, 2 * 0.3**2
    a = 0.2 / (0.0 - 0.05 + 0.5j * (g1 + g2)) * 0.3
    assert rec.a_factor == pytest.approx(a)
    assert np.allclose(rec.pab, abs(a) ** 2 / 400)


def test_predict_case_i_ratio_and_warning():
    cfg = EnsembleConfig(tun(k1=2, k2=4, t1=0.5), 20, master_seed=10, estimators={"pab"})
    st = run_ensemble(cfg)
    t2 = [1.0, 0.5, 0.25, 1.0]
    with pytest.warns(UserWarning):
        rec = predict_case(cfg, [0.5, 0.5], t2, "i", stats=st)
    assert np.allclose(rec.pab[:, 0] / rec.pab[:, 1], 2.0)
    assert np.allclose(rec.pab[:, 0] / rec.pab[:, 2], 4.0)
    assert np.allclose(rec.pab.sum(axis=1), st.p_a.mean)
    with pytest.warns(UserWarning):
        rec2 = predict_case(cfg, [0.5, 0.5], t2, "ii", stats=st)
    assert np.allclose(rec2.pab.sum(axis=0), st.p_b.mean)


def test_predict_case_i_runs_ensemble_when_needed():
    cfg = EnsembleConfig(tun(k1=2, k2=2), 6, master_seed=10, estimators={"xi_stats"})
    with pytest.warns(UserWarning):
        rec = predict_case(cfg, [0.8, 0.8], [0.5, 0.5], "i")
    assert rec.p_a.shape == (2,) and np.all(rec.p_a > 0)


def test_predict_thick_scales_with_v_squared():
    t = [0.5, 0.5]
    a = predict_case(EnsembleConfig(tun(v=0.01, k1=2, k2=2, t1=0.5), 5), t, t, "thick")
    b = predict_case(EnsembleConfig(tun(v=0.005, k1=2, k2=2, t1=0.5), 5), t, t, "thick")
    assert np.allclose(b.pab / a.pab, 0.25, rtol=1e-12)
    # two channels with T = 0.5: each formation factor is 1 by the sum rule
    assert np.allclose(a.formation1, 1.0, rtol=1e-5)
    assert np.allclose(a.pab, 1e-4, rtol=1e-5)


def test_predict_case_errors():
    cfg = EnsembleConfig(tun(), 5)
    with pytest.raises(InvalidArgument):
        predict_case(cfg, [], [1.0], "iii")
    with pytest.raises(ValueError):
        predict_case(cfg, [1.0], [1.0], "iv")
    spec = ModelSpec(kind="transition_state", n=60, v1_tilde=0.1, v2_tilde=0.1,
                     channels1=uniform_channels(2, 0.5), channels2=uniform_channels(2, 0.5))
    with pytest.raises(InvalidArgument):
        predict_case(EnsembleConfig(spec, 5), [0.5, 0.5], [0.5, 0.5], "thick")
