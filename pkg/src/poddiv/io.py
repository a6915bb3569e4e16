"""Binary snapshot, basis and reduced-system files; CSV reports.

Every binary file is ``header | payload | crc32(payload)``, little-endian.
Snapshot header: magic ``PODDIV01``, version u32, n_vel u64, count u64,
spacing f64, t_start f64, centering u8. The centering flag records how
the set is meant to be used; the mean itself is recomputed on demand.
"""

from __future__ import annotations

import csv
import io as _io
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .assembly import ConvectionForm
from .errors import ChecksumError, DimensionError, FormatError, StorageError, VersionError
from .fespace import THSpace
from .fom import SnapshotSet
from .pod import PODBasis
from .rom import ReducedSystem

__all__ = [
    "FORMAT_VERSION",
    "write_snapshots",
    "read_snapshots",
    "write_basis",
    "read_basis",
    "write_reduced",
    "read_reduced",
    "write_csv",
    "atomic_write",
]

FORMAT_VERSION = 1
SNAP_MAGIC = b"PODDIV01"
BASIS_MAGIC = b"PODBAS01"
REDUCED_MAGIC = b"PODRED01"

_SNAP_HEADER = struct.Struct("<8sIQQddB")
_BASIS_HEADER = struct.Struct("<8sIQQQQB")
_REDUCED_HEADER = struct.Struct("<8sIQBQB")
_CRC = struct.Struct("<I")
_F64 = np.dtype("<f8")
_FORMS = {ConvectionForm.SKEW: 0, ConvectionForm.EMAC: 1}


def atomic_write(path, data: bytes):
    """Write ``data`` to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc


def _pack(header: bytes, arrays) -> bytes:
    payload = b"".join(np.ascontiguousarray(a, dtype=_F64).tobytes() for a in arrays)
    return header + payload + _CRC.pack(zlib.crc32(payload))


def _unpack(raw: bytes, magic: bytes, header: struct.Struct, path):
    if len(raw) < len(magic) or raw[:len(magic)] != magic:
        raise FormatError(f"{path}: not a {magic.decode()} file")
    if len(raw) < header.size + _CRC.size:
        raise FormatError(f"{path}: truncated header")
    fields = header.unpack_from(raw)
    if fields[1] != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {fields[1]}, reader supports {FORMAT_VERSION}")
    return fields, raw[header.size:-_CRC.size], _CRC.unpack(raw[-_CRC.size:])[0]


def _check(payload: bytes, crc: int, expected_len: int, path):
    if len(payload) != expected_len:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {expected_len}")
    if zlib.crc32(payload) != crc:
        raise ChecksumError(f"{path}: payload checksum mismatch")


class _Cursor:
    def __init__(self, payload: bytes):
        self.buf = payload
        self.pos = 0

    def take(self, *shape):
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(self.buf, dtype=_F64, count=n, offset=self.pos).astype(np.float64)
        self.pos += 8 * n
        return arr.reshape(shape) if shape else float(arr[0])


def write_snapshots(snaps: SnapshotSet, path):
    header = _SNAP_HEADER.pack(SNAP_MAGIC, FORMAT_VERSION, snaps.space.n_vel, len(snaps),
                               float(snaps.spacing), snaps.t_start, int(bool(snaps.centering)))
    atomic_write(path, _pack(header, [snaps.vectors]))


def read_snapshots(path, space: THSpace) -> SnapshotSet:
    """Read a snapshot file for ``space``.

    Raises
    ------
    FormatError, VersionError, ChecksumError, DimensionError
    """
    raw = _read(path)
    (_, _, n_vel, count, spacing, t_start, centering), payload, crc = _unpack(raw, SNAP_MAGIC, _SNAP_HEADER, path)
    _check(payload, crc, 8 * n_vel * count, path)
    if n_vel != space.n_vel:
        raise DimensionError(f"{path}: snapshots have {n_vel} velocity dofs, space has {space.n_vel}")
    vectors = np.frombuffer(payload, dtype=_F64).astype(np.float64).reshape(count, n_vel)
    times = t_start + spacing * np.arange(count)
    return SnapshotSet(space, times, vectors, spacing, bool(centering),
                       {"spacing": spacing, "t_start": t_start})


def write_basis(basis: PODBasis, path):
    modes = basis.all_modes if basis.all_modes is not None else basis.modes
    n_eig = len(basis.eigenvalues)
    header = _BASIS_HEADER.pack(BASIS_MAGIC, FORMAT_VERSION, basis.space.n_vel, basis.r,
                                modes.shape[1], n_eig, int(basis.centered))
    arrays = [basis.eigenvalues, basis.tails, np.array([basis.d_v, basis.n_snapshots], dtype=np.float64)]
    if basis.centered:
        arrays.append(basis.mean)
    arrays.append(modes.T)
    atomic_write(path, _pack(header, arrays))


def read_basis(path, space: THSpace) -> PODBasis:
    raw = _read(path)
    (_, _, n_vel, r, n_modes, n_eig, centered), payload, crc = _unpack(raw, BASIS_MAGIC, _BASIS_HEADER, path)
    expected = 8 * (n_eig + n_eig + 1 + 2 + (n_vel if centered else 0) + n_vel * n_modes)
    _check(payload, crc, expected, path)
    if n_vel != space.n_vel:
        raise DimensionError(f"{path}: basis has {n_vel} velocity dofs, space has {space.n_vel}")
    cur = _Cursor(payload)
    eig = cur.take(n_eig)
    tails = cur.take(n_eig + 1)
    d_v, m = (int(x) for x in cur.take(2))
    mean = cur.take(n_vel) if centered else None
    modes = np.ascontiguousarray(cur.take(n_modes, n_vel).T)
    return PODBasis(space, modes[:, :r], eig, d_v, tails, mean, m, modes)


_REDUCED_FIELDS = ("A", "G", "T", "forcing_vectors", "A_m", "G_m", "c_m", "L_u", "L_w",
                   "mean_mass", "mean_div")


def write_reduced(sys: ReducedSystem, path):
    header = _REDUCED_HEADER.pack(REDUCED_MAGIC, FORMAT_VERSION, sys.r, _FORMS[sys.form],
                                  len(sys.forcing_vectors), int(sys.centered))
    arrays = [getattr(sys, name) for name in _REDUCED_FIELDS]
    arrays.append(np.array([sys.mean_norm2, sys.mean_div2]))
    atomic_write(path, _pack(header, arrays))


def read_reduced(path, forcing=None) -> ReducedSystem:
    """Read a reduced system; ``forcing`` re-attaches the time factors."""
    raw = _read(path)
    (_, _, r, form, n_force, _), payload, crc = _unpack(raw, REDUCED_MAGIC, _REDUCED_HEADER, path)
    expected = 8 * (2 * r * r + r ** 3 + n_force * r + 3 * r + 2 * r * r + 2 * r + 2)
    _check(payload, crc, expected, path)
    if form not in (0, 1):
        raise FormatError(f"{path}: unknown convection form code {form}")
    if forcing is not None and len(forcing.terms) != n_force:
        raise DimensionError(f"{path}: stored {n_force} forcing terms, forcing has {len(forcing.terms)}")
    cur = _Cursor(payload)
    A, G, T = cur.take(r, r), cur.take(r, r), cur.take(r, r, r)
    F = cur.take(n_force, r)
    A_m, G_m, c_m = cur.take(r), cur.take(r), cur.take(r)
    L_u, L_w = cur.take(r, r), cur.take(r, r)
    mean_mass, mean_div = cur.take(r), cur.take(r)
    norm2, div2 = cur.take(2)
    forms = {v: k for k, v in _FORMS.items()}
    return ReducedSystem(r, forms[form], A, G, T, F, A_m, G_m, c_m, L_u, L_w, mean_mass,
                         float(norm2), mean_div, float(div2), forcing)


def _fmt(v) -> str:
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return "nan"
    return repr(v)


def write_csv(path, columns: dict):
    """Write equal-length columns with a header row, '.' decimals and LF endings."""
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise DimensionError(f"CSV columns differ in length: {sorted(lengths)}")
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in zip(*cols):
        w.writerow([_fmt(v) for v in row])
    atomic_write(path, buf.getvalue().encode("ascii"))
