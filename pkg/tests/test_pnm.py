import numpy as np
import pytest

from errors import CorruptDatabaseError, InvalidArgumentError
from pnm import read_pfm, read_pgm, write_pfm, write_pgm


def test_pgm_8bit(tmp_path):
    image = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    path = tmp_path / 'a.pgm'
    write_pgm(path, image)
    assert path.read_bytes().startswith(b'P5\n4 3\n255\n')
    assert np.array_equal(read_pgm(path), image)


def test_pgm_16bit_is_big_endian(tmp_path):
    image = np.array([[0, 1], [256, 65535]], dtype=np.uint16)
    path = tmp_path / 'b.pgm'
    write_pgm(path, image, maxval=65535)
    assert path.read_bytes()[-8:] == b'\x00\x00\x00\x01\x01\x00\xff\xff'
    assert np.array_equal(read_pgm(path), image)


def test_pgm_scales_float_images(tmp_path):
    path = tmp_path / 'c.pgm'
    write_pgm(path, np.array([[0.0, 0.5], [1.0, 0.25]]), scale=255.0)
    assert read_pgm(path).tolist() == [[0, 128], [255, 64]]


def test_pgm_header_comments(tmp_path):
    path = tmp_path / 'd.pgm'
    path.write_bytes(b'P5\n# made by hand\n2 1\n255\n\x07\x09')
    assert read_pgm(path).tolist() == [[7, 9]]


def test_pgm_rejects_bad_maxval(tmp_path):
    with pytest.raises(InvalidArgumentError):
        write_pgm(tmp_path / 'e.pgm', np.zeros((2, 2)), maxval=1023)


def test_pfm_keeps_row_order_and_nan(tmp_path):
    image = np.array([[1.5, np.nan, -2.0], [0.0, 3.25, 7.0]], dtype=np.float32)
    path = tmp_path / 'a.pfm'
    write_pfm(path, image)
    data = path.read_bytes()
    assert data.startswith(b'Pf\n3 2\n-1.0\n')
    # bottom row is stored first
    assert np.frombuffer(data[-24:-12], dtype='<f4').tolist() == [0.0, 3.25, 7.0]
    np.testing.assert_array_equal(read_pfm(path), image)


def test_pfm_truncated_file(tmp_path):
    path = tmp_path / 'short.pfm'
    path.write_bytes(b'Pf\n4 4\n-1.0\n' + b'\x00' * 12)
    with pytest.raises(CorruptDatabaseError):
        read_pfm(path)


def test_pfm_bad_magic(tmp_path):
    path = tmp_path / 'bad.pfm'
    path.write_bytes(b'P6\n1 1\n255\n\x00\x00\x00')
    with pytest.raises(CorruptDatabaseError):
        read_pfm(path)
