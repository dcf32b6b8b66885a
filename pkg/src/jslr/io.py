"""File formats: the ``JSLR`` binary container, CSV tables and 8-bit PGM.

Binary layout (little-endian)::

    b"JSLR" | version u32 | n u64 | N u64 | flag u8 | n*N float64 (row-major,
    re/im interleaved when flag == 1)

Objects with more than one array append an optional section table after the
primary matrix::

    b"SECT" | count u32 | count * (name_len u16 | name utf-8 | kind u8 | body)

where ``kind`` 0 is a matrix body (``n u64 | N u64 | flag u8 | data``) and
kind 1 is UTF-8 text (``length u64 | bytes``). Readers that only know the
primary matrix simply stop before the table.
"""

from __future__ import annotations

import csv
import io as _io
import os
import re
import struct
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import FormatError
from .sampling import MeasurementSet
from .solver import RecoveryResult
from .subspace import SubspaceEstimate

MAGIC = b"JSLR"
SECTION_MAGIC = b"SECT"
VERSION = 1
_HEADER = struct.Struct("<4sIQQB")
_BODY = struct.Struct("<QQB")

PathLike = Union[str, os.PathLike]
Section = Union[np.ndarray, str]


# -- binary container -------------------------------------------------------


def _matrix_bytes(m: np.ndarray) -> tuple[int, int, int, bytes]:
    a = np.asarray(m)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise FormatError(f"only 2-D arrays can be stored, got shape {a.shape}")
    if np.iscomplexobj(a):
        data = np.ascontiguousarray(a, dtype="<c16").view("<f8")
        flag = 1
    else:
        data = np.ascontiguousarray(a, dtype="<f8")
        flag = 0
    return a.shape[0], a.shape[1], flag, data.tobytes()


def _read_exact(buf: _io.BufferedIOBase, size: int, what: str) -> bytes:
    b = buf.read(size)
    if len(b) != size:
        raise FormatError(f"truncated file while reading {what}")
    return b


def _read_body(buf, n: int, N: int, flag: int) -> np.ndarray:
    if flag not in (0, 1):
        raise FormatError(f"unknown element flag {flag}")
    count = n * N * (2 if flag else 1)
    raw = _read_exact(buf, 8 * count, "matrix data")
    data = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if flag:
        return data.view(np.complex128).reshape(n, N).copy()
    return data.reshape(n, N).copy()


def write_container(path: PathLike, primary: np.ndarray, sections: Optional[Mapping[str, Section]] = None) -> None:
    """Write ``primary`` and optional named sections to ``path``."""
    n, N, flag, body = _matrix_bytes(primary)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, N, flag))
        fh.write(body)
        if sections:
            fh.write(SECTION_MAGIC + struct.pack("<I", len(sections)))
            for name, value in sections.items():
                key = name.encode("utf-8")
                fh.write(struct.pack("<H", len(key)) + key)
                if isinstance(value, str):
                    text = value.encode("utf-8")
                    fh.write(struct.pack("<BQ", 1, len(text)) + text)
                else:
                    sn, sN, sflag, sbody = _matrix_bytes(value)
                    fh.write(struct.pack("<B", 0) + _BODY.pack(sn, sN, sflag) + sbody)


def read_container(path: PathLike) -> tuple[np.ndarray, dict[str, Section]]:
    """Inverse of :func:`write_container`."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError("file too short for a JSLR header")
        magic, version, n, N, flag = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        primary = _read_body(fh, n, N, flag)
        sections: dict[str, Section] = {}
        tag = fh.read(4)
        if not tag:
            return primary, sections
        if tag != SECTION_MAGIC:
            raise FormatError("trailing bytes after primary matrix")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "section count"))
        for _ in range(count):
            (klen,) = struct.unpack("<H", _read_exact(fh, 2, "section name"))
            name = _read_exact(fh, klen, "section name").decode("utf-8")
            (kind,) = struct.unpack("<B", _read_exact(fh, 1, "section kind"))
            if kind == 1:
                (length,) = struct.unpack("<Q", _read_exact(fh, 8, "text length"))
                sections[name] = _read_exact(fh, length, "text").decode("utf-8")
            elif kind == 0:
                sn, sN, sflag = _BODY.unpack(_read_exact(fh, _BODY.size, "section header"))
                sections[name] = _read_body(fh, sn, sN, sflag)
            else:
                raise FormatError(f"unknown section kind {kind}")
        if fh.read(1):
            raise FormatError("trailing bytes after section table")
    return primary, sections


def write_matrix(path: PathLike, m: np.ndarray) -> None:
    write_container(path, m)


def read_matrix(path: PathLike) -> np.ndarray:
    return read_container(path)[0]


def _meta(**kw) -> str:
    return "\n".join(f"{k}={'' if v is None else v}" for k, v in kw.items())


def _parse_meta(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def _opt_float(s: str) -> Optional[float]:
    return None if s in ("", "None") else float(s)


def _opt_int(s: str) -> Optional[int]:
    return None if s in ("", "None") else int(s)


def save_measurements(path: PathLike, m: MeasurementSet, config_text: Optional[str] = None) -> None:
    """Store ``Z`` as the primary matrix and every ``y_i`` as its own section."""
    sections: dict[str, Section] = {"meta": _meta(kind="measurements", N=m.N, snr_db=m.snr_db, seed=m.seed)}
    for i, yi in enumerate(m.y):
        sections[f"y/{i:06d}"] = np.asarray(yi, dtype=np.complex128)[:, None]
    if config_text is not None:
        sections["config"] = config_text
    write_container(path, np.asarray(m.z, dtype=np.complex128), sections)


def load_measurements(path: PathLike) -> tuple[MeasurementSet, Optional[str]]:
    """Return the stored :class:`MeasurementSet` and the embedded config text, if any."""
    z, sections = read_container(path)
    meta = _parse_meta(sections.get("meta", "")) if isinstance(sections.get("meta"), str) else {}
    if meta.get("kind") != "measurements":
        raise FormatError(f"{path} does not hold a measurement set")
    N = int(meta["N"])
    try:
        y = [np.asarray(sections[f"y/{i:06d}"]).reshape(-1).astype(np.complex128) for i in range(N)]
    except KeyError as exc:
        raise FormatError(f"missing section {exc}") from exc
    ms = MeasurementSet(z=z.astype(np.complex128), y=y, snr_db=_opt_float(meta.get("snr_db", "")), seed=_opt_int(meta.get("seed", "")))
    cfg = sections.get("config")
    return ms, cfg if isinstance(cfg, str) else None


def save_subspace(path: PathLike, est: SubspaceEstimate) -> None:
    write_container(path, est.q, {
        "meta": _meta(kind="subspace", r_used=est.r_used),
        "eigenvalues": est.eigenvalues[:, None],
        "spectrum_full": est.spectrum_full[:, None],
    })


def load_subspace(path: PathLike) -> SubspaceEstimate:
    q, sections = read_container(path)
    meta = _parse_meta(sections.get("meta", ""))
    if meta.get("kind") != "subspace":
        raise FormatError(f"{path} does not hold a subspace estimate")
    return SubspaceEstimate(
        q=q.astype(np.complex128),
        eigenvalues=np.real(sections["eigenvalues"]).reshape(-1),
        r_used=int(meta["r_used"]),
        spectrum_full=np.real(sections["spectrum_full"]).reshape(-1),
    )


def save_recovery(path: PathLike, res: RecoveryResult) -> None:
    write_container(path, res.x_hat, {
        "meta": _meta(kind="recovery", iterations=res.iterations, converged=int(res.converged)),
        "p": res.p,
        "residual_history": np.asarray(res.residual_history, dtype=float)[:, None],
        "dual_history": np.asarray(res.dual_history, dtype=float)[:, None],
    })


def load_recovery(path: PathLike) -> RecoveryResult:
    x_hat, sections = read_container(path)
    meta = _parse_meta(sections.get("meta", ""))
    if meta.get("kind") != "recovery":
        raise FormatError(f"{path} does not hold a recovery result")
    return RecoveryResult(
        p=sections["p"].astype(np.complex128),
        x_hat=x_hat.astype(np.complex128),
        iterations=int(meta["iterations"]),
        residual_history=np.real(sections["residual_history"]).reshape(-1).tolist(),
        converged=bool(int(meta["converged"])),
        dual_history=np.real(sections["dual_history"]).reshape(-1).tolist(),
    )


# -- CSV --------------------------------------------------------------------

def format_complex(z: complex) -> str:
    """``a+bi`` / ``a-bi`` with round-trip precision."""
    z = complex(z)
    sign = "-" if (z.imag < 0 or (z.imag == 0 and np.signbit(z.imag))) else "+"
    return f"{z.real!r}{sign}{abs(z.imag)!r}i"


def parse_complex(s: str) -> complex:
    s = s.strip()
    if not s.endswith("i"):
        return complex(float(s))
    try:
        return complex(s[:-1] + "j")
    except ValueError as exc:
        raise FormatError(f"cannot parse complex value {s!r}") from exc


def write_matrix_csv(path: PathLike, m: np.ndarray) -> None:
    """One frame per column; complex entries as ``a+bi``."""
    a = np.asarray(m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"frame_{j}" for j in range(a.shape[1])])
        for row in a:
            w.writerow([format_complex(v) for v in row])


def read_matrix_csv(path: PathLike) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path} is empty")
    body = rows[1:]
    return np.array([[parse_complex(v) for v in row] for row in body], dtype=np.complex128).reshape(len(body), len(rows[0]))


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (complex, np.complexfloating)):
        return format_complex(v)
    return "" if v is None else str(v)


def write_table(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Schema-stable CSV: header row, fixed column order, ``\\n`` line ends."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise FormatError(f"row has {len(row)} fields, header has {len(header)}")
            w.writerow([_cell(v) for v in row])


def read_table(path: PathLike) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path} is empty")
    return rows[0], rows[1:]


# -- PGM --------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def to_uint8(img: np.ndarray, vmax: Optional[float] = None) -> np.ndarray:
    """Magnitude mapped linearly from ``[0, vmax]`` to ``0..255``."""
    mag = np.abs(np.asarray(img))
    top = float(mag.max()) if vmax is None else float(vmax)
    if top <= 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    return np.clip(np.rint(mag / top * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: PathLike, img: np.ndarray, vmax: Optional[float] = None) -> None:
    """Binary (P5) 8-bit greyscale image of ``|img|``."""
    data = to_uint8(img, vmax)
    if data.ndim != 2:
        raise FormatError("PGM images must be 2-D")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: malformed PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported")
    data = raw[pos + 1 : pos + 1 + w * h]
    if len(data) != w * h:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def write_frames_pgm(directory: PathLike, x: np.ndarray, image_side: int, prefix: str = "frame",
                     vmax: Optional[float] = None) -> list[str]:
    """One PGM per column of ``x``, all on a common window ``[0, vmax]``."""
    os.makedirs(directory, exist_ok=True)
    a = np.asarray(x)
    top = float(np.abs(a).max()) if vmax is None else vmax
    paths = []
    for j in range(a.shape[1]):
        p = os.path.join(directory, f"{prefix}_{j:04d}.pgm")
        write_pgm(p, a[:, j].reshape(image_side, image_side), top)
        paths.append(p)
    return paths
