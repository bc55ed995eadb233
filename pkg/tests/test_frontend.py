import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal as sps

from oracles import acf_direct, erb_rate
from sdbdetect.corpus import AudioClip
from sdbdetect.frontend import (
    FeatureMatrix,
    NormStats,
    acf,
    acf_frames,
    add_deltas,
    apply_norm,
    design_gammatone_bank,
    fit_norm,
    frame_signal,
    gammatone_sos,
    load_features,
    mfcc,
    rate_map,
    save_features,
)
from sdbdetect.frontend import erb_rate as lib_erb_rate

FS = 16000


def tone(freq, seconds=0.5, amp=0.3):
    t = np.arange(int(seconds * FS)) / FS
    return AudioClip(amp * np.sin(2 * np.pi * freq * t))


# --------------------------------------------------------------------------
# framing


def test_frame_counts():
    assert frame_signal(AudioClip(np.zeros(16000))).shape == (98, 400)
    assert frame_signal(AudioClip(np.zeros(400))).shape == (1, 400)
    with pytest.raises(ValueError):
        frame_signal(AudioClip(np.zeros(384)))


def test_frame_offsets(rng):
    x = rng.normal(size=5000)
    fr = frame_signal(AudioClip(x))
    assert len(fr) == (5000 - 400) // 160 + 1
    for t in (0, 7, len(fr) - 1):
        np.testing.assert_array_equal(fr[t], x[t * 160 : t * 160 + 400])


# --------------------------------------------------------------------------
# filterbank


def test_filterbank_layout():
    spec = design_gammatone_bank()
    cf = spec.center_freqs
    assert spec.n_channels == 64
    assert cf[0] == pytest.approx(80, rel=1e-6) and cf[-1] == pytest.approx(7500, rel=1e-6)
    assert np.all(np.diff(cf) > 0)
    e = np.array([erb_rate(f) for f in cf])
    steps = np.diff(e)
    assert np.ptp(steps) < 1e-9
    # high-precision evaluation of 21.4 log10(4.37 f / 1000 + 1)
    hp = lambda f: float(21.4 * mpmath.log10(mpmath.mpf("4.37") * f / 1000 + 1))
    assert lib_erb_rate(80.0) == pytest.approx(hp(80), abs=1e-12)
    assert lib_erb_rate(7500.0) == pytest.approx(hp(7500), abs=1e-12)
    assert steps.mean() == pytest.approx((hp(7500) - hp(80)) / 63, abs=1e-12)
    np.testing.assert_allclose(lib_erb_rate(cf), e, rtol=1e-12)


def test_filterbank_two_channels_and_errors():
    np.testing.assert_allclose(design_gammatone_bank(2).center_freqs, [80, 7500])
    with pytest.raises(ValueError):
        design_gammatone_bank(64, 7500, 80)
    with pytest.raises(ValueError):
        design_gammatone_bank(1)


def test_gammatone_unit_gain_at_centre():
    for cf in (100.0, 1000.0, 6000.0):
        sos = gammatone_sos(cf)
        w, h = sps.sosfreqz(sos, worN=[cf], fs=FS, whole=True)
        assert abs(h[0]) == pytest.approx(1.0, rel=1e-9)


# --------------------------------------------------------------------------
# rate map


def test_rate_map_zero():
    rm = rate_map(AudioClip(np.zeros(8000)))
    assert rm.data.shape == (48, 64) and not rm.data.any()


@pytest.mark.parametrize("freq", [200.0, 1000.0, 5000.0])
def test_rate_map_tone_peaks_at_nearest_channel(freq):
    spec = design_gammatone_bank()
    # magnitude response oracle: the channel passing the tone most strongly
    gains = [abs(sps.sosfreqz(gammatone_sos(cf), worN=[freq], fs=FS, whole=True)[1][0]) for cf in spec.center_freqs]
    expected = int(np.argmax(gains))
    assert expected == int(np.argmin(np.abs(spec.center_freqs - freq)))
    rm = rate_map(tone(freq), spec).data
    assert np.all(rm[5:].argmax(axis=1) == expected)


def test_rate_map_monotone_in_level(rng):
    x = AudioClip(rng.normal(0, 0.2, 4000))
    full, half = rate_map(x).data, rate_map(AudioClip(0.5 * x.samples)).data
    assert np.all(half <= full)


def test_rate_map_gain_validation():
    with pytest.raises(ValueError):
        rate_map(AudioClip(np.zeros(800)), gain=0.0)


def test_frame_counts_agree(rng):
    for n in (400, 401, 559, 560, 16000, 23457):
        clip = AudioClip(rng.normal(0, 0.1, n))
        T = len(frame_signal(clip))
        assert len(rate_map(clip)) == len(acf_frames(clip)) == len(mfcc(clip)) == T


# --------------------------------------------------------------------------
# autocorrelation


def test_acf_zero_frame():
    assert not acf(np.zeros((1, 400))).any()


def test_acf_hand_example():
    frame = np.zeros(400)
    frame[:2] = [1, 2]
    a = acf(frame)[0]
    assert a[0] == pytest.approx(2 / (5 + 1e-10), rel=1e-12)
    assert a[0] == pytest.approx(0.4, rel=1e-9)
    assert np.abs(a[1:]).max() < 1e-15  # FFT round-off only


def test_acf_matches_direct_sum(rng):
    frames = rng.normal(size=(10, 400))
    got = acf(frames)
    for f, g in zip(frames, got):
        ref = acf_direct(f)
        assert np.max(np.abs(g - ref)) <= 1e-9 * np.max(np.abs(ref))


def test_acf_sawtooth_peak_near_pitch_lag():
    t = np.arange(400) / FS
    saw = sps.sawtooth(2 * np.pi * 100 * t)
    ref = acf_direct(saw)
    got = acf(saw)[0]
    np.testing.assert_allclose(got, ref, atol=1e-12)
    lag = 150 + int(np.argmax(got[149:170]))  # lags 150..170
    assert abs(lag - 160) <= 2
    assert got[lag - 1] >= got[lag - 2] and got[lag - 1] >= got[lag]


def test_acf_bounded(rng):
    a = acf_frames(AudioClip(rng.uniform(-1, 1, 8000))).data
    assert a.shape[1] == 320 and np.all(np.abs(a) <= 1 + 1e-12)


# --------------------------------------------------------------------------
# MFCC


def test_mfcc_zero_signal_constant():
    m = mfcc(AudioClip(np.zeros(4000))).data
    assert m.shape[1] == 12
    assert np.all(m == m[0])


def test_mfcc_gain_invariance(rng):
    x = rng.normal(0, 0.1, 4000)
    a, b = mfcc(AudioClip(x)).data, mfcc(AudioClip(2 * x)).data
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_mfcc_drops_c0(rng):
    from scipy.fft import dct

    from sdbdetect.frontend import _HAMMING, _MEL

    x = rng.normal(0, 0.1, 400)
    spec = np.abs(np.fft.rfft(x * _HAMMING, 512)) ** 2
    full = dct(np.log(np.maximum(_MEL @ spec, 1e-10)), type=2, norm="ortho")
    np.testing.assert_allclose(mfcc(AudioClip(x)).data[0], full[1:13], rtol=1e-10, atol=1e-10)


# --------------------------------------------------------------------------
# deltas and normalisation


def _delta_oracle(x, K=2):
    T = len(x)
    out = np.zeros_like(x)
    for t in range(T):
        num = sum(k * (x[min(t + k, T - 1)] - x[max(t - k, 0)]) for k in range(1, K + 1))
        out[t] = num / (2 * sum(k * k for k in range(1, K + 1)))
    return out


def test_deltas_against_formula(rng):
    x = rng.normal(size=(9, 3))
    d = add_deltas(FeatureMatrix(x)).data
    np.testing.assert_allclose(d[:, :3], x)
    np.testing.assert_allclose(d[:, 3:6], _delta_oracle(x), atol=1e-12)
    np.testing.assert_allclose(d[:, 6:], _delta_oracle(_delta_oracle(x)), atol=1e-12)


def test_deltas_constant_and_shapes():
    c = add_deltas(FeatureMatrix(np.ones((7, 4)))).data
    assert not c[:, 4:].any()
    assert add_deltas(FeatureMatrix(np.zeros((5, 16)), kind="bottleneck")).data.shape == (5, 48)
    assert add_deltas(FeatureMatrix(np.zeros((5, 12)), kind="mfcc")).data.shape == (5, 36)
    assert add_deltas(FeatureMatrix(np.zeros((1, 2)))).data.shape == (1, 6)


@given(st.integers(12, 40), st.integers(12, 40), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_deltas_interior_commutes_with_concatenation(na, nb, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(na, 2)), r.normal(size=(nb, 2))
    whole = add_deltas(FeatureMatrix(np.vstack([a, b]))).data
    da = add_deltas(FeatureMatrix(a)).data
    db = add_deltas(FeatureMatrix(b)).data
    # accelerations reach 4 frames, so frames >= 4 away from any edge agree
    np.testing.assert_allclose(whole[4 : na - 4], da[4 : na - 4], atol=1e-12)
    np.testing.assert_allclose(whole[na + 4 : na + nb - 4], db[4 : nb - 4], atol=1e-12)


def test_norm_rules():
    train = FeatureMatrix(np.array([[0.0, 3.0], [10.0, 3.0], [5.0, 3.0]]))
    st_ = fit_norm(train)
    out = apply_norm(train, st_).data
    np.testing.assert_allclose(out[:, 0], [0.05, 0.95, 0.5])
    assert np.all(out[:, 1] == 0.5)
    test = apply_norm(FeatureMatrix(np.array([[20.0, 1.0], [-100.0, 9.0]])), st_).data
    assert test[0, 0] == 1.0 and test[1, 0] == 0.0
    multi = fit_norm([train, FeatureMatrix(np.array([[20.0, 3.0]]))])
    assert isinstance(multi, NormStats) and multi.hi[0] == 20.0


def test_feature_matrix_validation():
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([[np.inf]]))
    with pytest.raises(ValueError):
        FeatureMatrix(np.zeros((2, 2)), kind="spectrogram")


def test_feature_file_roundtrip(tmp_path, rng):
    f = FeatureMatrix(rng.normal(size=(17, 5)).astype(np.float32).astype(np.float64), kind="acf")
    save_features(tmp_path / "f.sdbf", f)
    g = load_features(tmp_path / "f.sdbf")
    assert g.kind == "acf" and g.frame_period == 0.010
    np.testing.assert_array_equal(g.data, f.data)
    raw = (tmp_path / "f.sdbf").read_bytes()
    (tmp_path / "t.sdbf").write_bytes(raw[:-3])
    with pytest.raises(ValueError, match="truncated"):
        load_features(tmp_path / "t.sdbf")
    (tmp_path / "m.sdbf").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="not a feature file"):
        load_features(tmp_path / "m.sdbf")


@given(st.integers(400, 1600), st.floats(1e-6, 1.0), st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_outputs_finite(n, amp, seed):
    x = np.clip(np.random.default_rng(seed).normal(0, amp, n), -1, 1)
    clip = AudioClip(x)
    for f in (rate_map(clip), acf_frames(clip), mfcc(clip)):
        assert np.all(np.isfinite(f.data))
