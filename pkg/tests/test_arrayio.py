import numpy as np
import pytest
from numpy.lib import format as npyfmt

from asymsplit import datasets
from asymsplit.arrayio import ArrayFormatError, load_array, save_array


def write_raw(path, header, payload, version=(1, 0)):
    import io

    buf = io.BytesIO()
    npyfmt._write_array_header(buf, header, version)
    path.write_bytes(buf.getvalue() + payload)


def test_roundtrip_bitwise(tmp_path, rng):
    x = rng.standard_normal((3, 32, 32))
    save_array(tmp_path / "a.npy", x)
    y = load_array(tmp_path / "a.npy")
    assert y.dtype == np.float64 and np.array_equal(x.view(np.uint64), y.view(np.uint64))
    assert np.array_equal(np.load(tmp_path / "a.npy"), x)


def test_layout_bytes(tmp_path):
    save_array(tmp_path / "a.npy", np.arange(3.0))
    raw = (tmp_path / "a.npy").read_bytes()
    assert raw[:8] == b"\x93NUMPY\x01\x00"
    hlen = int.from_bytes(raw[8:10], "little")
    assert (10 + hlen) % 64 == 0
    assert b"'descr': '<f8'" in raw[10 : 10 + hlen]
    assert raw[10 + hlen :] == np.arange(3.0).astype("<f8").tobytes()


def test_numpy_written_file_loads(tmp_path, rng):
    x = rng.standard_normal((2, 5))
    np.save(tmp_path / "n.npy", x)
    assert np.array_equal(load_array(tmp_path / "n.npy"), x)


def test_truncated_payload(tmp_path, rng):
    save_array(tmp_path / "a.npy", rng.standard_normal(10))
    raw = (tmp_path / "a.npy").read_bytes()
    (tmp_path / "a.npy").write_bytes(raw[:-3])
    with pytest.raises(ArrayFormatError, match="payload length mismatch"):
        load_array(tmp_path / "a.npy")


def test_f4_widening(tmp_path, rng):
    x = rng.standard_normal((4, 4)).astype("<f4")
    np.save(tmp_path / "f.npy", x)
    y = load_array(tmp_path / "f.npy")
    assert y.dtype == np.float64 and np.array_equal(y, x.astype(np.float64))


def test_bad_magic(tmp_path):
    (tmp_path / "x.npy").write_bytes(b"NOTNUMPY" + b"\x00" * 40)
    with pytest.raises(ArrayFormatError, match="bad magic"):
        load_array(tmp_path / "x.npy")


def test_fortran_order_rejected(tmp_path):
    hdr = {"descr": "<f8", "fortran_order": True, "shape": (2, 2)}
    write_raw(tmp_path / "f.npy", hdr, np.zeros(4).tobytes())
    with pytest.raises(ArrayFormatError, match="fortran_order"):
        load_array(tmp_path / "f.npy")


@pytest.mark.parametrize("descr", ["<i8", ">f8", "<c16", "<f2"])
def test_unsupported_dtype_named(tmp_path, descr):
    dt = np.dtype(descr)
    write_raw(tmp_path / "d.npy", {"descr": dt.str, "fortran_order": False, "shape": (2,)},
              np.zeros(2, dt).tobytes())
    with pytest.raises(ArrayFormatError, match=repr(dt.str).replace("'", ".")):
        load_array(tmp_path / "d.npy")


def test_version_two_rejected(tmp_path):
    write_raw(tmp_path / "v.npy", {"descr": "<f8", "fortran_order": False, "shape": (1,)},
              np.zeros(1).tobytes(), version=(2, 0))
    with pytest.raises(ArrayFormatError, match="version"):
        load_array(tmp_path / "v.npy")


def test_dataset_roundtrip(tmp_path):
    x, y = datasets.blobs(6, seed=2)
    datasets.save_dataset(tmp_path / "d", x, y)
    x2, y2 = datasets.load_dataset(tmp_path / "d")
    assert np.array_equal(x, x2) and np.array_equal(y, y2)
    with pytest.raises(FileNotFoundError):
        datasets.load_dataset(tmp_path / "missing")
