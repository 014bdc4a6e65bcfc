import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oransim import datagen
from oransim.datagen import CWI, SOI, IqFrame, JammerProfile, KpmSample


def test_iq_frame_size_and_bytes():
    f = datagen.synth_iq_frame(SOI, JammerProfile(), seed=1)
    data = f.to_bytes()
    assert len(data) == 614_400 and f.samples.size == 76_800
    assert np.array_equal(IqFrame.from_bytes(data).samples, f.samples)
    assert f.duration_s == pytest.approx(0.01)
    with pytest.raises(ValueError):
        IqFrame.from_bytes(data[:-8])


def test_label_must_agree_with_jammer():
    with pytest.raises(ValueError):
        datagen.synth_iq_frame(CWI, JammerProfile(), seed=0)
    with pytest.raises(ValueError):
        JammerProfile(gain_db=50.0, on=True)


def test_synthesis_is_seeded():
    a = datagen.synth_iq_frame(CWI, JammerProfile(gain_db=35, on=True), seed=9)
    b = datagen.synth_iq_frame(CWI, JammerProfile(gain_db=35, on=True), seed=9)
    assert a.to_bytes() == b.to_bytes()


def test_spectrogram_range_and_tone_ridge():
    soi = datagen.iq_to_spectrogram(datagen.synth_iq_frame(SOI, JammerProfile(), 3))
    cwi = datagen.iq_to_spectrogram(datagen.synth_iq_frame(CWI, JammerProfile(gain_db=30, on=True), 3))
    for s in (soi, cwi):
        assert s.shape == (128, 128, 1) and s.min() >= 0 and s.max() <= 1
    assert datagen.ridge_ratio(cwi) > 3 * datagen.ridge_ratio(soi)


def test_zero_energy_frame_gives_zero_image():
    img = datagen.iq_to_spectrogram(IqFrame(np.zeros(76_800, np.complex64)))
    assert img.shape == (128, 128, 1) and not img.any()


def test_random_jammer_gain_in_range(rng):
    for _ in range(100):
        j = datagen.random_jammer(rng)
        assert 30 <= j.gain_db <= 40 and j.on


@settings(max_examples=300)
@given(arrays(np.float64, (5, 4), elements=st.floats(0, 1)))
def test_kpm_normalization_round_trip(norm):
    raw = datagen.denormalize_kpms(norm)
    assert np.max(np.abs(datagen.normalize_kpms(raw) - norm)) < 1e-9


def test_kpm_window_layout():
    hist = [KpmSample(10.0 + i, 5.0, 0.1, i) for i in range(20)]
    w = datagen.gen_kpm_window(hist, 15)
    assert w.shape == (60,) and w.min() >= 0 and w.max() <= 1
    # newest report last, features interleaved per report
    assert w[-1] == pytest.approx(19 / 28)
    assert w[0] == pytest.approx((15.0 - -10.0) / 45.0)
    with pytest.raises(ValueError):
        datagen.gen_kpm_window(hist[:3], 15)


def test_kpm_sample_validation():
    with pytest.raises(ValueError):
        KpmSample(0, 0, 1.5, 3)
    with pytest.raises(ValueError):
        KpmSample(0, 0, 0.1, 29)


def test_kpm_arrays_shapes_and_classes():
    X, y = datagen.kpm_arrays(30, 20, seed=2)
    assert X.shape == (50, 60) and np.bincount(y).tolist() == [30, 20]
    assert X.min() >= 0 and X.max() <= 1
    # jammed windows carry lower SINR on average
    assert X[y == CWI, 0::4].mean() < X[y == SOI, 0::4].mean()


def test_dataset_files_round_trip(tmp_path):
    man = datagen.build_dataset("kpm", (12, 8), seed=4, out_dir=tmp_path / "k")
    X, y, back = datagen.load_dataset(tmp_path / "k")
    assert back == man and X.shape == (20, 60) and np.bincount(y).tolist() == [12, 8]
    raw = (tmp_path / "k" / "samples.f32").read_bytes()
    assert len(raw) == 20 * 60 * 4
    assert np.array_equal(np.frombuffer(raw, "<f4").reshape(20, 60), X.astype(np.float32))
    X2, _, _ = datagen.load_dataset(datagen.build_dataset("kpm", (12, 8), 4, tmp_path / "k2") and tmp_path / "k2")
    assert np.array_equal(X, X2)


def test_spectrogram_dataset_files(tmp_path):
    datagen.build_dataset("spectrogram", (2, 2), seed=1, out_dir=tmp_path / "s")
    X, y, man = datagen.load_dataset(tmp_path / "s")
    assert X.shape == (4, 128, 128, 1) and X.min() >= 0 and X.max() <= 1
    assert man.sample_shape == (128, 128, 1)


def test_dataset_errors(tmp_path):
    with pytest.raises(ValueError):
        datagen.build_dataset("audio", (1, 1), 0, tmp_path)
    with pytest.raises(ValueError):
        datagen.build_dataset("kpm", (0, 1), 0, tmp_path)
    with pytest.raises(OSError):
        datagen.load_dataset(tmp_path / "missing")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        datagen.build_dataset("kpm", (1, 1), 0, blocker / "sub")


def test_split_is_stratified_and_seeded():
    X = np.arange(100, dtype=float)[:, None]
    y = np.array([0] * 60 + [1] * 40)
    a = datagen.split_dataset(X, y, 0.2, seed=3)
    b = datagen.split_dataset(X, y, 0.2, seed=3)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    Xtr, ytr, Xte, yte = a
    assert np.bincount(yte).tolist() == [12, 8] and len(Xtr) == 80
    assert not set(Xtr[:, 0]) & set(Xte[:, 0])
