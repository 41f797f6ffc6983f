"""Synthetic corpus generation, augmentation, TCSM sample cache."""

import numpy as np
import pytest

from incepformer.data import (Sample, augment, contrast, flip_h, flip_v, gauss_blur,
                              gauss_noise, load_sample, make_sample, read_corpus,
                              rot90, save_sample, synth_corpus, write_corpus)
from incepformer.tensor import IntegrityError, make_rng


def test_corpus_deterministic_per_seed():
    a = synth_corpus(6, 32, 4, seed=7)
    b = synth_corpus(6, 32, 4, seed=7)
    c = synth_corpus(6, 32, 4, seed=8)
    for sa, sb in zip(a, b):
        assert sa.sample_id == sb.sample_id
        np.testing.assert_array_equal(sa.image, sb.image)
        np.testing.assert_array_equal(sa.mask, sb.mask)
    assert any(not np.array_equal(sa.mask, sc.mask) for sa, sc in zip(a, c))


def test_corpus_class_fractions_and_ranges():
    for s in synth_corpus(12, 32, 4, seed=0):
        assert s.image.shape == (3, 32, 32) and s.image.dtype == np.float32
        assert s.mask.shape == (32, 32) and s.mask.dtype == np.int64
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert set(np.unique(s.mask)) <= {0, 1, 2, 3}
        for cls in (1, 2, 3):
            frac = (s.mask == cls).mean()
            assert 0.02 <= frac <= 0.6, (s.sample_id, cls, frac)


def test_binary_corpus_supported():
    s = make_sample(make_rng(1), 32, 2, "bin")
    assert set(np.unique(s.mask)) <= {0, 1}


def test_flips_are_involutions():
    s = synth_corpus(1, 32, 4, seed=3)[0]
    for op in (flip_h, flip_v):
        twice = op(op(s))
        np.testing.assert_array_equal(twice.image, s.image)
        np.testing.assert_array_equal(twice.mask, s.mask)


def test_rot90_preserves_class_histogram():
    s = synth_corpus(1, 32, 4, seed=4)[0]
    base = np.bincount(s.mask.ravel(), minlength=4)
    r = s
    for _ in range(4):
        r = rot90(r)
        np.testing.assert_array_equal(np.bincount(r.mask.ravel(), minlength=4), base)
    np.testing.assert_array_equal(r.mask, s.mask)  # four quarter turns = identity


def test_photometric_ops_leave_mask_untouched():
    s = synth_corpus(1, 32, 4, seed=5)[0]
    rng = make_rng(6)
    for out in (contrast(s, 1.2), gauss_noise(s, rng, 0.05), gauss_blur(s, 0.8)):
        np.testing.assert_array_equal(out.mask, s.mask)
        assert out.image.shape == s.image.shape
        assert out.image.min() >= 0.0 and out.image.max() <= 1.0
        assert not np.array_equal(out.image, s.image)


def test_blur_reduces_noise_energy():
    s = synth_corpus(1, 32, 4, seed=7)[0]
    hp = s.image - gauss_blur(s, 1.0).image  # blur strips high-frequency content
    assert np.abs(hp).mean() > 0
    assert gauss_blur(s, 1.0).image.var() < s.image.var()


def test_augment_draws_one_to_four_ops():
    s = synth_corpus(1, 32, 4, seed=8)[0]
    for seed in range(12):
        out = augment(s, make_rng(seed))
        assert out.image.shape == s.image.shape
        assert out.mask.shape == s.mask.shape
        assert set(np.unique(out.mask)) <= set(np.unique(s.mask))


def test_tcsm_round_trip_and_stem_id(tmp_path):
    s = synth_corpus(1, 32, 4, seed=9)[0]
    path = tmp_path / "case_031.tcsm"
    save_sample(path, s)
    back = load_sample(path)
    assert back.sample_id == "case_031"  # id comes from the file stem
    np.testing.assert_array_equal(back.image, s.image)
    np.testing.assert_array_equal(back.mask, s.mask)
    assert back.mask.dtype == np.int64


def test_tcsm_bad_magic(tmp_path):
    path = tmp_path / "x.tcsm"
    save_sample(path, synth_corpus(1, 32, 2, seed=0)[0])
    blob = path.read_bytes()
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(IntegrityError, match="magic"):
        load_sample(path)


def test_corpus_directory_round_trip(tmp_path):
    samples = synth_corpus(5, 32, 4, seed=10)
    write_corpus(tmp_path / "corpus", samples)
    back = read_corpus(tmp_path / "corpus")
    assert [s.sample_id for s in back] == [s.sample_id for s in samples]
    for sa, sb in zip(samples, back):
        np.testing.assert_array_equal(sa.image, sb.image)
        np.testing.assert_array_equal(sa.mask, sb.mask)
    with pytest.raises(FileNotFoundError):
        read_corpus(tmp_path / "nowhere")
