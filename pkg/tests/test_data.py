import gzip
import struct

import numpy as np
import pytest

from lpsphere.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from lpsphere.data import load_csv, load_idx, load_idx_images, load_idx_labels, synthetic_dataset
from lpsphere.errors import ConfigError, DataFormatError
from oracles import write_idx_images, write_idx_labels


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(4, 28, 28))
    labels = [3, 1, 4, 1]
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx_images(img, images)
    write_idx_labels(lab, labels)
    return img, lab, images, labels


def test_idx_roundtrip(idx_pair):
    img, lab, images, labels = idx_pair
    x = load_idx_images(img)
    assert x.shape == (4, 28, 28)
    np.testing.assert_array_equal(x, images / 255.0)
    assert load_idx_labels(lab).tolist() == labels
    ds = load_idx(img, lab, limit=3)
    assert ds.x.shape == (3, 1, 28, 28) and ds.y.tolist() == [3, 1, 4]
    assert ds.n_classes == 5


def test_idx_wrong_magic(idx_pair):
    img, _, _, _ = idx_pair
    with pytest.raises(DataFormatError, match="expected label magic.*byte offset 0"):
        load_idx_labels(img)


def test_idx_truncated(tmp_path, idx_pair):
    img, _, _, _ = idx_pair
    empty = tmp_path / "empty.idx"
    empty.write_bytes(b"")
    with pytest.raises(DataFormatError, match="truncated at byte offset 0"):
        load_idx_images(empty)
    short = tmp_path / "short.idx"
    short.write_bytes(img.read_bytes()[:500])
    with pytest.raises(DataFormatError, match="byte offset 500"):
        load_idx_images(short)
    hdr = tmp_path / "hdr.idx"
    hdr.write_bytes(img.read_bytes()[:9])
    with pytest.raises(DataFormatError, match="byte offset 9"):
        load_idx_images(hdr)


def test_idx_count_mismatch(tmp_path, idx_pair):
    img, _, _, _ = idx_pair
    lab = tmp_path / "lab3.idx"
    write_idx_labels(lab, [1, 2, 3])
    with pytest.raises(DataFormatError):
        load_idx(img, lab)


def test_csv_basic(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b,label\n1,2,cat\n3,4,dog\n5,6,cat\n")
    ds = load_csv(f, label="label")
    assert ds.x.shape == (3, 2)
    assert ds.y.tolist() == [0, 1, 0]
    ds = load_csv(f, label=2, scale=True)
    np.testing.assert_allclose(ds.x, [[0, 0], [0.5, 0.5], [1, 1]])


def test_csv_label_first_column_and_numeric_labels(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("y,x1\n10,0.5\n2,0.25\n10,1\n")
    ds = load_csv(f, label=0)
    assert ds.y.tolist() == [1, 0, 1]
    np.testing.assert_array_equal(ds.x[:, 0], [0.5, 0.25, 1.0])


def test_csv_errors(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("a,b,label\n1,2,0\n3,x,1\n")
    with pytest.raises(DataFormatError, match="line 3: non-numeric"):
        load_csv(f)
    f.write_text("a,b,label\n1,2,0\n3,1\n")
    with pytest.raises(DataFormatError, match="line 3: ragged"):
        load_csv(f)
    f.write_text("a,b,label\n1,2,0\n")
    with pytest.raises(DataFormatError, match="missing label column"):
        load_csv(f, label="class")
    with pytest.raises(DataFormatError, match="missing label column"):
        load_csv(f, label=7)
    f.write_text("")
    with pytest.raises(DataFormatError):
        load_csv(f)


@pytest.mark.parametrize("kind", ["two-gaussians", "xor-grid"])
def test_synthetic(kind):
    a = synthetic_dataset(kind, 500, 3)
    b = synthetic_dataset(kind, 500, 3)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert a.x.shape == (500, 2) and set(a.y.tolist()) == {0, 1}
    assert len(synthetic_dataset(kind, 0, 1)) == 0
    if kind == "xor-grid":
        assert np.mean((np.sign(a.x[:, 0]) != np.sign(a.x[:, 1])) == (a.y == 1)) > 0.99
    else:
        assert np.mean((a.x[:, 0] > 0) == (a.y == 1)) > 0.95


def test_synthetic_errors():
    with pytest.raises(ConfigError):
        synthetic_dataset("spirals", 10, 0)
    with pytest.raises(ConfigError):
        synthetic_dataset("xor-grid", -1, 0)


def sample_state():
    rng = np.random.default_rng(0)
    return {
        "layer00.weight": rng.normal(size=(3, 4)),
        "layer00.mask": rng.random((3, 4)) > 0.3,
        "counter": np.arange(5),
        "scalar": np.array(np.nan),
    }


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    arrays, meta = sample_state(), {"epoch": 3, "config": {"p": 1.5}, "z": [0.1, 1e-300]}
    a, b = tmp_path / "a.lpck", tmp_path / "b.lpck"
    save_checkpoint(a, arrays, meta)
    loaded, meta2 = load_checkpoint(a)
    assert meta2 == meta
    for k, v in arrays.items():
        assert loaded[k].dtype.kind == np.asarray(v).dtype.kind
        np.testing.assert_array_equal(loaded[k], v)
    save_checkpoint(b, loaded, meta2)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes()[:8] == MAGIC


def test_checkpoint_errors(tmp_path):
    good = tmp_path / "c.lpck"
    save_checkpoint(good, sample_state(), {})
    raw = good.read_bytes()
    bad = tmp_path / "bad.lpck"
    bad.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(DataFormatError, match="magic"):
        load_checkpoint(bad)
    bad.write_bytes(raw[:-7])
    with pytest.raises(DataFormatError, match=f"byte offset {len(raw) - 7}"):
        load_checkpoint(bad)
    bad.write_bytes(raw[:10])
    with pytest.raises(DataFormatError, match="truncated"):
        load_checkpoint(bad)
    bad.write_bytes(raw[:8] + struct.pack("<I", 99) + raw[12:])
    with pytest.raises(DataFormatError, match="version"):
        load_checkpoint(bad)
    bad.write_bytes(gzip.compress(raw))
    with pytest.raises(DataFormatError):
        load_checkpoint(bad)
