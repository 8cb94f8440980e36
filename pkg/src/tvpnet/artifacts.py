"""Byte-reproducible ``.npz`` archives.

``numpy.savez`` stamps zip members with the wall clock, so two identical
runs produce different bytes. These helpers pin the member timestamps.
"""

from __future__ import annotations

import io
import json
import os
import zipfile

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_npz(path, arrays: dict, meta: dict = None):
    """Write ``arrays`` (plus optional JSON ``meta``) atomically to ``path``."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_EPOCH), buf.getvalue())
        if meta is not None:
            text = json.dumps(meta, sort_keys=True, indent=1)
            zf.writestr(zipfile.ZipInfo("meta.json", date_time=_EPOCH), text.encode())
    os.replace(tmp, path)


def load_npz(path):
    """Return ``(arrays, meta)`` from a file written by :func:`save_npz`."""
    arrays, meta = {}, None
    with zipfile.ZipFile(os.fspath(path)) as zf:
        for name in zf.namelist():
            data = zf.read(name)
            if name == "meta.json":
                meta = json.loads(data.decode())
            elif name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(data), allow_pickle=False)
    return arrays, meta
