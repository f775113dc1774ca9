"""Anomaly-map file output: PFM for bit-exact floats, PGM for previews."""

import numpy as np

from .errors import FormatError
from .head import AnomalyMap


def write_pfm(anomaly_map, path):
    """Grayscale PFM, little-endian (scale -1.0), rows bottom-to-top."""
    scores = anomaly_map.scores.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{scores.shape[1]} {scores.shape[0]}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(scores[::-1].tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        header_end = 0
        fields = []
        for _ in range(3):
            nl = data.index(b"\n", header_end)
            fields.append(data[header_end:nl])
            header_end = nl + 1
    except ValueError:
        raise FormatError(f"{path}: truncated PFM header")
    if fields[0] != b"Pf":
        raise FormatError(f"{path}: expected grayscale PFM magic 'Pf', got {fields[0]!r}")
    width, height = (int(v) for v in fields[1].split())
    scale = float(fields[2])
    dtype = "<f4" if scale < 0 else ">f4"
    pixels = np.frombuffer(data[header_end:], dtype=dtype, count=width * height)
    scores = pixels.reshape(height, width)[::-1].astype(np.float64)
    return AnomalyMap(scores=scores)


def write_pgm(anomaly_map, path):
    """8-bit PGM preview: linear quantization of [0, 1] to 0..255."""
    quantized = np.clip(
        np.rint(anomaly_map.scores * 255.0), 0, 255
    ).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{quantized.shape[1]} {quantized.shape[0]}\n255\n".encode())
        fh.write(quantized.tobytes())
