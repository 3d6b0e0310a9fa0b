"""File formats: binary PGM/PPM images, partition files and trace CSVs."""

import csv
import math
import re

import numpy as np

from .observation import (PixelPartition, bayer_partitions, boundary_partition,
                          decimation_partition)

_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


class FormatError(ValueError):
    pass


def read_pnm(path):
    """Read a binary PGM (P5) or PPM (P6) image, 8 or 16 bit, scaled to ``[0, 1]``.

    Returns ``(H, W)`` for PGM and ``(H, W, 3)`` for PPM.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise FormatError(f"{path}: truncated header")
        fields.append(m.group(2))
        pos = m.end()
    magic, width, height, maxval = fields
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported format {magic!r}")
    width, height, maxval = int(width), int(height), int(maxval)
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    img = raw.astype(np.float64) / maxval
    if channels == 1:
        return img.reshape(height, width)
    return img.reshape(height, width, 3)


def write_pnm(path, image, bits=16):
    """Write ``image`` (values in ``[0, 1]``, clipped) as PGM or PPM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] in (1, 3) and img.shape[2] not in (1, 3):
        img = np.moveaxis(img, 0, 2)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"cannot write image of shape {img.shape}")
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    q = q.astype(">u2" if bits == 16 else "u1")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"%s\n%d %d\n%d\n" % (magic, w, h, maxval))
        fh.write(q.tobytes())


def write_partition(path, partition):
    """Plain text: ``m n b kind [key=value ...]``, then unobserved indices for holes."""
    p = partition
    extra = " ".join(f"{k}={v}" for k, v in p.params.items() if k != "holes")
    header = f"{p.m} {p.n} {p.b} {p.kind}" + (f" {extra}" if extra else "")
    if p.kind == "custom":
        header += f" height={p.shape[0]} width={p.shape[1]}"
    with open(path, "w") as fh:
        fh.write(header.rstrip() + "\n")
        if p.kind in ("inpaint", "custom"):
            fh.write("\n".join(str(i) for i in p.unobserved_indices))
            fh.write("\n")


def read_partition(path):
    with open(path) as fh:
        lines = fh.read().split("\n")
    head = lines[0].split()
    if len(head) < 4:
        raise FormatError(f"{path}: header must be 'm n b kind'")
    m, n, b = (int(t) for t in head[:3])
    kind = head[3]
    params = dict(t.split("=", 1) for t in head[4:])
    if kind == "boundary":
        return boundary_partition(m, n, b)
    if kind == "decimate":
        return decimation_partition(m, n, b, int(params["r"]))
    if kind == "bayer":
        names = {"R": 0, "G": 1, "B": 2}
        return bayer_partitions(m, n, b)[names[params["channel"]]]
    if kind in ("inpaint", "custom"):
        if kind == "custom":
            shape = (int(params["height"]), int(params["width"]))
        else:
            shape = (m + 2 * b, n + 2 * b)
        mask = np.ones(shape, dtype=bool)
        idx = [int(t) for t in lines[1:] if t.strip()]
        mask.ravel()[idx] = False
        return PixelPartition(mask, kind, m, n, b)
    raise FormatError(f"{path}: unknown partition kind {kind!r}")


def _fmt(value):
    value = float(value)
    return "nan" if math.isnan(value) else repr(value)


def write_trace(path, trace, timing=True):
    """Trace CSV with header ``iter,elapsed_s,rmse,mu,primal_res,dual_res,g_dist``.

    With ``timing=False`` the elapsed column is written as 0 so the file is
    reproducible byte for byte.
    """
    from .partial_admm import TRACE_FIELDS

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for r in trace:
            w.writerow([r.iter, _fmt(r.elapsed if timing else 0.0), _fmt(r.rmse), _fmt(r.mu),
                        _fmt(r.primal_res), _fmt(r.dual_res), _fmt(r.g_dist)])


def read_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({k: (int(v) if k == "iter" else float(v)) for k, v in row.items()})
    return out
