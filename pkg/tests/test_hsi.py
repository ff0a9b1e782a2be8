import numpy as np
import pytest

from lgest.errors import ConfigError, DataError, FormatError
from lgest.hsi import (
    HsiCube,
    LabelMap,
    extract_patches,
    load_cube,
    load_dataset,
    load_labels,
    normalize,
    save_cube,
    save_labels,
    split_train_test,
    synth_cube,
)
from lgest.rng import Rng


def small_cube(seed=80, shape=(3, 4, 5)):
    return HsiCube(data=Rng(seed).normal(shape).astype(np.float32))


def test_cube_round_trip_bitwise(tmp_path):
    cube = small_cube()
    path = str(tmp_path / "scene.hsic")
    save_cube(path, cube)
    back = load_cube(path)
    assert back.data.dtype == np.float32
    assert back.data.shape == (3, 4, 5)
    assert back.data.tobytes() == cube.data.tobytes()


def test_label_round_trip(tmp_path):
    labels = LabelMap(labels=np.array([[0, 1], [2, 2]], dtype=np.uint16), n_class=2)
    path = str(tmp_path / "scene.hsil")
    save_labels(path, labels)
    back = load_labels(path)
    assert back.n_class == 2
    assert np.array_equal(back.labels, labels.labels)


def test_cube_format_errors(tmp_path):
    path = str(tmp_path / "x.hsic")
    with open(path, "wb") as fh:
        fh.write(b"XXXX" + b"\x00" * 20)
    with pytest.raises(FormatError, match="magic"):
        load_cube(path)
    save_cube(path, small_cube())
    blob = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(blob[:-4])  # drop one pixel
    with pytest.raises(FormatError, match="size mismatch"):
        load_cube(path)
    with open(path, "wb") as fh:
        fh.write(blob[:4] + b"\x09" + blob[5:])
    with pytest.raises(FormatError, match="version"):
        load_cube(path)
    with open(path, "wb") as fh:
        fh.write(blob[:10])
    with pytest.raises(FormatError, match="truncated"):
        load_cube(path)


def test_label_format_errors(tmp_path):
    path = str(tmp_path / "x.hsil")
    bad = LabelMap(labels=np.array([[3]], dtype=np.uint16), n_class=2)
    save_labels(path, bad)
    with pytest.raises(FormatError, match="exceeds"):
        load_labels(path)
    good = LabelMap(labels=np.array([[1, 2]], dtype=np.uint16), n_class=2)
    save_labels(path, good)
    blob = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(blob + b"\x00\x00")
    with pytest.raises(FormatError, match="size mismatch"):
        load_labels(path)


def test_dataset_cross_check(tmp_path):
    cube_path = str(tmp_path / "a.hsic")
    label_path = str(tmp_path / "a.hsil")
    save_cube(cube_path, small_cube(shape=(2, 4, 5)))
    save_labels(label_path, LabelMap(np.ones((5, 4), dtype=np.uint16), 1))
    with pytest.raises(FormatError, match="does not match"):
        load_dataset(cube_path, label_path)
    save_labels(label_path, LabelMap(np.ones((4, 5), dtype=np.uint16), 1))
    cube, labels = load_dataset(cube_path, label_path)
    assert cube.data.shape == (2, 4, 5) and labels.labels.shape == (4, 5)


def test_normalize_oracle_and_idempotence():
    data = np.zeros((2, 2, 2), dtype=np.float32)
    data[0] = [[0.0, 2.0], [4.0, 8.0]]
    data[1] = 3.5  # constant band
    out = normalize(HsiCube(data))
    assert np.array_equal(out.data[0], [[0.0, 0.25], [0.5, 1.0]])
    assert np.all(out.data[1] == 0.0)
    again = normalize(out)
    assert again.data.tobytes() == out.data.tobytes()


def test_patch_mirror_oracle():
    grid = np.arange(1.0, 10.0, dtype=np.float32).reshape(1, 3, 3)
    labels = np.zeros((3, 3), dtype=np.uint16)
    labels[0, 0] = 1
    labels[1, 1] = 2
    batch = extract_patches(HsiCube(grid), LabelMap(labels, 2), size=3)
    assert batch.patches.shape == (2, 1, 3, 3)
    corner = [[5.0, 4.0, 5.0], [2.0, 1.0, 2.0], [5.0, 4.0, 5.0]]
    assert np.array_equal(batch.patches.data[0, 0], corner)
    assert np.array_equal(batch.patches.data[1, 0], grid[0])
    assert batch.labels.tolist() == [0, 1]
    assert batch.centers.tolist() == [[0, 0], [1, 1]]
    assert batch.patches.data.dtype == np.float64


def test_patch_size_one_is_pixel():
    cube = small_cube(shape=(2, 3, 3))
    labels = LabelMap(np.ones((3, 3), dtype=np.uint16), 1)
    batch = extract_patches(cube, labels, size=1)
    assert batch.patches.shape == (9, 2, 1, 1)
    assert np.allclose(batch.patches.data[4, :, 0, 0], cube.data[:, 1, 1])


def test_patch_rejections():
    cube = small_cube(shape=(1, 3, 3))
    labels = LabelMap(np.ones((3, 3), dtype=np.uint16), 1)
    with pytest.raises(ConfigError):
        extract_patches(cube, labels, size=2)
    with pytest.raises(ConfigError):
        extract_patches(cube, labels, size=7)  # pad would exceed scene extent
    with pytest.raises(DataError):
        extract_patches(cube, LabelMap(np.zeros((3, 3), dtype=np.uint16), 1), size=3)


def _synth_batch():
    cube, labels = synth_cube(n_class=3, width=12, height=6, bands=5, noise_sigma=0.0, seed=3)
    return extract_patches(cube, labels, size=3)


def test_split_is_exhaustive_and_stratified():
    batch = _synth_batch()
    train, test, warnings = split_train_test(batch, 0.3, seed=5)
    assert warnings == []
    all_idx = np.concatenate([train.centers, test.centers])
    assert len(all_idx) == len(batch.centers)
    merged = {tuple(rc) for rc in all_idx.tolist()}
    assert merged == {tuple(rc) for rc in batch.centers.tolist()}
    for c in range(3):
        m = int((batch.labels == c).sum())
        got = int((train.labels == c).sum())
        assert got == int(np.ceil(0.3 * m))
    # row-major (sorted index) order within each side
    key = train.centers[:, 0] * 1000 + train.centers[:, 1]
    assert np.all(np.diff(key) > 0)


def test_split_determinism_and_seed_sensitivity():
    batch = _synth_batch()
    a1, _, _ = split_train_test(batch, 0.3, seed=5)
    a2, _, _ = split_train_test(batch, 0.3, seed=5)
    b, _, _ = split_train_test(batch, 0.3, seed=6)
    assert a1.centers.tobytes() == a2.centers.tobytes()
    assert a1.centers.tobytes() != b.centers.tobytes()


def test_split_single_sample_class_lands_in_train():
    batch = _synth_batch()
    keep = np.concatenate([np.nonzero(batch.labels == 0)[0], np.nonzero(batch.labels == 1)[0][:1]])
    from lgest.hsi import _take

    small = _take(batch, np.sort(keep))
    train, test, _ = split_train_test(small, 0.1, seed=2)
    assert int((train.labels == 1).sum()) == 1
    assert int((test.labels == 1).sum()) == 0


def test_split_warnings_for_absent_classes():
    batch = _synth_batch()
    _, _, warnings = split_train_test(batch, 0.5, seed=1, n_class=5)
    assert len(warnings) == 2
    assert any("4" in w for w in warnings) and any("5" in w for w in warnings)


def test_split_fraction_edges():
    batch = _synth_batch()
    with pytest.raises(ConfigError):
        split_train_test(batch, 0.0, seed=1)
    with pytest.raises(ConfigError):
        split_train_test(batch, 1.5, seed=1)
    train, test, _ = split_train_test(batch, 1.0, seed=1)
    assert len(train.labels) == len(batch.labels)
    assert len(test.labels) == 0


def test_synth_zero_noise_strips_are_constant_and_separated():
    cube, labels = synth_cube(n_class=4, width=16, height=8, bands=6, noise_sigma=0.0, seed=9)
    # constant down each column
    assert np.all(cube.data == cube.data[:, :1, :])
    col_class = labels.labels[0] - 1
    sigs = []
    for c in range(4):
        cols = np.nonzero(col_class == c)[0]
        strip = cube.data[:, 0, cols]
        assert np.all(strip == strip[:, :1])  # constant across the strip
        sigs.append(strip[:, 0])
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.linalg.norm(sigs[i] - sigs[j]) >= 1.2


def test_synth_strip_balance_and_coverage():
    _, labels = synth_cube(n_class=3, width=10, height=4, bands=5, noise_sigma=0.0, seed=1)
    counts = np.bincount(labels.labels[0])[1:]
    assert counts.max() - counts.min() <= 1
    assert set(np.unique(labels.labels)) == {1, 2, 3}
    assert labels.n_class == 3


def test_synth_determinism_and_rejections():
    a, _ = synth_cube(seed=7)
    b, _ = synth_cube(seed=7)
    c, _ = synth_cube(seed=8)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.data.tobytes() != c.data.tobytes()
    with pytest.raises(ConfigError):
        synth_cube(n_class=1)
    with pytest.raises(ConfigError):
        synth_cube(n_class=20, bands=16)
    with pytest.raises(ConfigError):
        synth_cube(n_class=4, width=3)
    with pytest.raises(ConfigError):
        synth_cube(noise_sigma=-0.1)
