from collections import Counter

import numpy as np
import pytest

from arnsal.datapipe import (
    MANIFEST_NAME,
    DatasetManifest,
    Sample,
    binarize_mask,
    hflip,
    hflip_array,
    load_manifest_samples,
    load_sample,
    preprocess,
    read_gray,
    resize_nearest,
    synth_generate,
    synth_sample,
    write_png,
)


def files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_generation_is_byte_identical(tmp_path):
    synth_generate(6, 32, 11, tmp_path / "a")
    synth_generate(6, 32, 11, tmp_path / "b")
    assert files(tmp_path / "a") == files(tmp_path / "b")
    synth_generate(6, 32, 12, tmp_path / "c")
    assert files(tmp_path / "a") != files(tmp_path / "c")


def test_generated_files_and_manifest(tmp_path):
    m = synth_generate(10, 48, 3, tmp_path)
    assert (tmp_path / MANIFEST_NAME).is_file()
    assert len(m.pairs) == 10
    back = DatasetManifest.read(tmp_path)
    assert back.pairs == m.pairs
    assert back.channel_means == pytest.approx(m.channel_means, abs=0)
    for img, msk in m.paths():
        gray = read_gray(msk)
        assert set(np.unique(gray)) <= {0, 255}
        assert 0.05 <= (gray == 255).mean() <= 0.60


def test_generator_rejects_bad_args(tmp_path):
    with pytest.raises(ValueError):
        synth_generate(0, 32, 0, tmp_path)
    with pytest.raises(ValueError):
        synth_generate(1, 8, 0, tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        synth_generate(1, 32, 0, blocker / "sub")


def test_sampling_statistics_over_1000():
    rng = np.random.default_rng(2024)
    fracs, kinds = [], Counter()
    for _ in range(1000):
        _, mask, k = synth_sample(rng, 32)
        fracs.append((mask == 255).mean())
        kinds.update(k)
    assert min(fracs) >= 0.05 and max(fracs) <= 0.60
    assert 0.05 <= np.mean(fracs) <= 0.60
    total = sum(kinds.values())
    for kind in ("ellipse", "rectangle", "triangle"):
        assert abs(kinds[kind] / total - 1 / 3) <= 0.05, kinds


def test_foreground_contrasts_with_background():
    rng = np.random.default_rng(5)
    for _ in range(20):
        img, mask, _ = synth_sample(rng, 32)
        fg = img[mask == 255].astype(float).mean(axis=0)
        bg = img[mask == 0].astype(float).mean(axis=0)
        assert np.linalg.norm(fg - bg) > 40


def test_binarization_rule():
    np.testing.assert_array_equal(binarize_mask(np.array([255, 0, 128, 127], dtype=np.uint8)), [1, 0, 1, 0])


def test_native_size_is_passthrough(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    mask = (rng.random((16, 16)) > 0.5).astype(np.uint8) * 255
    write_png(tmp_path / "i.png", img)
    write_png(tmp_path / "m.png", mask)
    s = load_sample(tmp_path / "i.png", tmp_path / "m.png", 16)
    np.testing.assert_array_equal(s.image, img.transpose(2, 0, 1).astype(np.float64))
    np.testing.assert_array_equal(s.mask[0], mask / 255)
    assert s.id == "i"


def test_resize_on_load(tmp_path):
    write_png(tmp_path / "i.png", np.full((8, 8, 3), 77, np.uint8))
    write_png(tmp_path / "m.png", np.kron(np.array([[0, 255], [255, 0]], np.uint8), np.ones((4, 4), np.uint8)))
    s = load_sample(tmp_path / "i.png", tmp_path / "m.png", 16)
    assert s.image.shape == (3, 16, 16) and s.mask.shape == (1, 16, 16)
    np.testing.assert_allclose(s.image, 77.0, rtol=1e-14)
    np.testing.assert_array_equal(s.mask[0], np.kron([[0, 1], [1, 0]], np.ones((8, 8))))


def test_checkerboard_nearest_neighbour():
    board = np.array([[1, 0], [0, 1]])
    want = np.array([[board[i // 2, j // 2] for j in range(4)] for i in range(4)])
    np.testing.assert_array_equal(resize_nearest(board, 4), want)


def test_load_errors(tmp_path):
    write_png(tmp_path / "i.png", np.zeros((8, 8, 3), np.uint8))
    write_png(tmp_path / "m.png", np.zeros((8, 9), np.uint8))
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(OSError, match="8x8"):
        load_sample(tmp_path / "i.png", tmp_path / "m.png", 8)
    with pytest.raises(OSError, match="decode"):
        load_sample(tmp_path / "bad.png", tmp_path / "m.png", 8)


def test_manifest_missing_file_and_derived_means(tmp_path):
    synth_generate(3, 32, 1, tmp_path)
    lines = (tmp_path / MANIFEST_NAME).read_text().splitlines()
    (tmp_path / MANIFEST_NAME).write_text("\n".join(lines[1:]) + "\n")
    m = DatasetManifest.read(tmp_path / MANIFEST_NAME)
    samples = load_manifest_samples(m, 32)
    want = np.mean([s.image.reshape(3, -1).mean(axis=1) for s in samples], axis=0)
    np.testing.assert_allclose(m.channel_means, want, rtol=1e-12)
    (tmp_path / MANIFEST_NAME).write_text(lines[0] + "\nimages/nope.png\tmasks/nope.png\n")
    with pytest.raises(FileNotFoundError):
        DatasetManifest.read(tmp_path)


def _sample(seed=0, h=4, w=4):
    rng = np.random.default_rng(seed)
    return Sample(rng.uniform(0, 255, (3, h, w)), (rng.random((1, h, w)) > 0.5).astype(float), "s")


def test_sample_invariants():
    with pytest.raises(ValueError, match="binary"):
        Sample(np.zeros((3, 2, 2)), np.full((1, 2, 2), 0.5))
    with pytest.raises(ValueError, match="match"):
        Sample(np.zeros((3, 2, 2)), np.zeros((1, 3, 2)))


def test_preprocess_with_own_means_is_zero_mean():
    s = _sample(1, 8, 8)
    out = preprocess(s, s.image.reshape(3, -1).mean(axis=1))
    assert np.all(np.abs(out.reshape(3, -1).mean(axis=1)) < 1e-9)
    np.testing.assert_array_equal(preprocess(s, (0, 0, 0)), s.image)


def test_hflip_involution_and_index_oracle():
    s = _sample(2, 2, 3)
    twice = hflip(hflip(s))
    assert twice.image.tobytes() == s.image.tobytes() and twice.mask.tobytes() == s.mask.tobytes()
    f = hflip(s)
    for c in range(3):
        for i in range(2):
            for j in range(3):
                assert f.image[c, i, j] == s.image[c, i, 2 - j]
    for i in range(2):
        for j in range(3):
            assert f.mask[0, i, j] == s.mask[0, i, 2 - j]
    assert set(np.unique(f.mask)) <= {0.0, 1.0}


def test_flip_and_preprocess_commute():
    s = _sample(3, 5, 6)
    means = (10.0, 120.5, 200.25)
    assert preprocess(hflip(s), means).tobytes() == hflip_array(preprocess(s, means)).tobytes()
