# pnm.py
"""PGM (binary P5) and PFM image files."""
import re

import numpy as np

from errors import CorruptDatabaseError, InvalidArgumentError

_PGM_TOKEN = re.compile(rb'\s*(#[^\n]*\n\s*)*(\S+)')


def write_pgm(path, image, maxval=255, scale=None):
    """Write a grayscale image as binary PGM.

    Float images are mapped to [0, maxval] by scale (default: maxval / max).
    """
    if maxval not in (255, 65535):
        raise InvalidArgumentError('maxval must be 255 or 65535')
    img = np.asarray(image)
    if img.ndim != 2:
        raise InvalidArgumentError('PGM needs a 2-D image')
    if np.issubdtype(img.dtype, np.floating):
        peak = float(np.nanmax(img)) if img.size else 0.0
        if scale is None:
            scale = maxval / peak if peak > 0 else 1.0
        img = np.clip(np.rint(np.nan_to_num(img) * scale), 0, maxval)
    dtype = '>u2' if maxval > 255 else 'u1'
    height, width = img.shape
    with open(path, 'wb') as f:
        f.write(f'P5\n{width} {height}\n{maxval}\n'.encode('ascii'))
        f.write(img.astype(dtype).tobytes())


def read_pgm(path):
    with open(path, 'rb') as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(data, pos)
        if not m:
            raise CorruptDatabaseError(f'Malformed PGM header in {path}')
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b'P5':
        raise CorruptDatabaseError(f'Not a binary PGM file: {path}')
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace after maxval
    dtype = '>u2' if maxval > 255 else 'u1'
    pixels = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return pixels.reshape(height, width)


def write_pfm(path, image):
    """Single-channel little-endian PFM, rows stored bottom to top"""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2:
        raise InvalidArgumentError('PFM writer handles single-channel images only')
    height, width = img.shape
    with open(path, 'wb') as f:
        f.write(f'Pf\n{width} {height}\n-1.0\n'.encode('ascii'))
        f.write(np.flipud(img).astype('<f4').tobytes())


def read_pfm(path):
    with open(path, 'rb') as f:
        header = f.readline().decode('ascii').rstrip()
        if header == 'PF':
            channels = 3
        elif header == 'Pf':
            channels = 1
        else:
            raise CorruptDatabaseError(f'Not a PFM file: {path}')
        dim_match = re.match(r'^(\d+)\s+(\d+)\s*$', f.readline().decode('ascii'))
        if not dim_match:
            raise CorruptDatabaseError(f'Malformed PFM header: {path}')
        width, height = map(int, dim_match.groups())
        scale = float(f.readline().decode('ascii').rstrip())
        endian = '<' if scale < 0 else '>'
        data = np.fromfile(f, endian + 'f4')
    expected = width * height * channels
    if data.size != expected:
        raise CorruptDatabaseError(f'{path}: expected {expected} floats, found {data.size}')
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float32)
