"""Text instance / parameter files, PGM/PPM images and energy-trace CSVs.

Floats are written with 17 significant digits so every value survives a
write/read round trip bit for bit. Files are written to a temporary name
and renamed into place.
"""

import csv
import io as _io
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ParseError
from .lattice import window_size
from .model import (
    DEFAULT_EPS,
    DEFAULT_UNARY_WEIGHT,
    BilateralKernelBank,
    CrfInstance,
    FeatureField,
    GridGeometry,
    SpatialKernelBank,
    make_unary,
)

INSTANCE_MAGIC = "PGDCRF-INSTANCE 1"
PARAMS_MAGIC = "PGDCRF-PARAMS 1"
TRACE_HEADER = ["step", "relaxed_energy", "kl_objective", "method"]


def fmt(v) -> str:
    return format(float(v), ".17g")


def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- PGM / PPM ---------------------------------------------------------------

def _read_token(data, pos):
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of header", start)
    return data[start:pos], start, pos


def parse_pnm(data: bytes) -> np.ndarray:
    """Decode a binary PGM (P5) or PPM (P6) with maxval 255.

    Returns ``(H, W)`` uint8 for P5 and ``(H, W, 3)`` uint8 for P6.
    """
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise ParseError("expected magic P5 or P6", 0)
    channels = 1 if data[:2] == b"P5" else 3
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        tok, start, pos = _read_token(data, pos)
        try:
            val = int(tok)
        except ValueError:
            raise ParseError(f"bad {name} {tok!r}", start) from None
        if val <= 0:
            raise ParseError(f"{name} must be positive", start)
        fields.append(val)
    width, height, maxval = fields
    if maxval != 255:
        raise ParseError(f"only maxval 255 is supported, got {maxval}", pos)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after maxval", pos)
    pos += 1
    expected = width * height * channels
    payload = data[pos:pos + expected]
    if len(payload) != expected:
        raise ParseError(f"truncated payload: expected {expected} bytes, got {len(payload)}", pos)
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, 3).copy()


def read_pnm(path) -> np.ndarray:
    return parse_pnm(Path(path).read_bytes())


def encode_pnm(image) -> bytes:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        if np.any(img < 0) or np.any(img > 255):
            raise ValueError("image values must lie in [0, 255]")
        img = img.astype(np.uint8)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode image of shape {img.shape}")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes()


def write_pnm(path, image):
    atomic_write(path, encode_pnm(image))


def read_image_ppm(path, theta_p, theta_c):
    """Image pixels and the matching :class:`FeatureField`."""
    img = read_pnm(path)
    return img, FeatureField.from_image(img, theta_p, theta_c)


# -- instance files ----------------------------------------------------------

class _Lines:
    def __init__(self, text, source):
        self.lines = text.splitlines()
        self.pos = 0
        self.source = source

    def error(self, msg):
        return ParseError(f"{self.source}: line {self.pos}: {msg}", self.pos)

    def next(self):
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line and not line.startswith("#"):
                return line
        raise self.error("unexpected end of file")

    def peek(self):
        save = self.pos
        try:
            return self.next()
        finally:
            self.pos = save

    def floats(self, count):
        parts = self.next().split()
        if len(parts) != count:
            raise self.error(f"expected {count} values, got {len(parts)}")
        try:
            return [float(p) for p in parts]
        except ValueError:
            raise self.error("non-numeric value") from None

    def ints(self, count):
        vals = self.floats(count)
        if any(v != int(v) for v in vals):
            raise self.error("expected integers")
        return [int(v) for v in vals]


def _spatial_lines(taps):
    L, _, S, _ = taps.shape
    out = []
    for lam in range(L):
        for mu in range(L):
            out.append(f"{lam} {mu}")
            for row in taps[lam, mu]:
                out.append(" ".join(fmt(v) for v in row))
    return out


def _read_spatial(rd, L, S):
    taps = np.zeros((L, L, S, S))
    for _ in range(L * L):
        lam, mu = rd.ints(2)
        if not (0 <= lam < L and 0 <= mu < L):
            raise rd.error(f"label pair ({lam}, {mu}) out of range")
        for r in range(S):
            taps[lam, mu, r] = rd.floats(S)
    return taps


def _bilateral_lines(taps):
    L = taps.shape[0]
    return [f"{lam} {mu} " + " ".join(fmt(v) for v in taps[lam, mu]) for lam in range(L) for mu in range(L)]


def _read_bilateral(rd, L, K):
    taps = np.zeros((L, L, K))
    for _ in range(L * L):
        vals = rd.floats(K + 2)
        lam, mu = int(vals[0]), int(vals[1])
        if not (0 <= lam < L and 0 <= mu < L):
            raise rd.error(f"label pair ({lam}, {mu}) out of range")
        taps[lam, mu] = vals[2:]
    return taps


def format_instance(inst: CrfInstance, image_path=None) -> str:
    H, W = inst.shape
    L = inst.n_labels
    sb = inst.bilateral.radius if inst.bilateral is not None else -1
    tp = inst.features.theta_p if inst.features is not None else 1.0
    tc = inst.features.theta_c if inst.features is not None else 1.0
    lines = [
        INSTANCE_MAGIC,
        "HEADER",
        f"H {H}", f"W {W}", f"L {L}",
        f"S_SPATIAL {inst.spatial.radius}", f"S_BILATERAL {sb}",
        f"THETA_P {fmt(tp)}", f"THETA_C {fmt(tc)}",
        f"EPS {fmt(inst.unary.eps)}", f"W_U {fmt(inst.unary.weight)}",
        "UNARY",
    ]
    lines += [" ".join(fmt(v) for v in row) for row in inst.unary.scores]
    lines.append("SPATIAL")
    lines += _spatial_lines(inst.spatial.taps)
    if inst.bilateral is not None:
        lines.append("BILATERAL")
        lines += _bilateral_lines(inst.bilateral.taps)
        if image_path is not None:
            lines += ["FEATURES", f"FROM_IMAGE {image_path}"]
        else:
            lines.append("FEATURES")
            lines += [" ".join(fmt(v) for v in row) for row in inst.features.values]
    if inst.truth is not None:
        lines.append("TRUTH")
        lines += [" ".join(str(int(v)) for v in row) for row in np.asarray(inst.truth).reshape(H, W)]
    lines.append("END")
    return "\n".join(lines) + "\n"


def write_instance(path, inst: CrfInstance, image_path=None):
    atomic_write(path, format_instance(inst, image_path))


def parse_instance(text, source="<instance>", base_dir=None) -> CrfInstance:
    rd = _Lines(text, source)
    if rd.next() != INSTANCE_MAGIC:
        raise rd.error(f"expected {INSTANCE_MAGIC!r}")
    if rd.next() != "HEADER":
        raise rd.error("expected HEADER")
    header = {}
    keys = ("H", "W", "L", "S_SPATIAL", "S_BILATERAL", "THETA_P", "THETA_C", "EPS", "W_U")
    while rd.peek() not in ("UNARY",):
        parts = rd.next().split()
        if len(parts) != 2 or parts[0] not in keys:
            raise rd.error(f"bad header line {' '.join(parts)!r}")
        header[parts[0]] = parts[1]
    rd.next()
    try:
        H, W, L = int(header["H"]), int(header["W"]), int(header["L"])
        s = int(header["S_SPATIAL"])
        sb = int(header.get("S_BILATERAL", -1))
        theta_p = float(header.get("THETA_P", 1.0))
        theta_c = float(header.get("THETA_C", 1.0))
        eps = float(header.get("EPS", DEFAULT_EPS))
        w_u = float(header.get("W_U", DEFAULT_UNARY_WEIGHT))
    except KeyError as e:
        raise rd.error(f"missing header field {e.args[0]}") from None
    except ValueError:
        raise rd.error("malformed header value") from None
    if H < 1 or W < 1 or L < 2 or s < 0:
        raise rd.error("header declares an empty grid, fewer than 2 labels or a negative radius")
    N = H * W
    z = np.array([rd.floats(L) for _ in range(N)])
    if np.any(z < 0) or np.any(z > 1):
        raise rd.error("unary scores must lie in [0, 1]")
    if rd.next() != "SPATIAL":
        raise rd.error("expected SPATIAL")
    S = 2 * s + 1
    spatial = _read_spatial(rd, L, S)
    bil = feats = truth = None
    section = rd.next()
    if section == "BILATERAL":
        if sb < 0:
            raise rd.error("BILATERAL section needs S_BILATERAL >= 0")
        bil = BilateralKernelBank(_read_bilateral(rd, L, window_size(sb)), sb)
        if rd.next() != "FEATURES":
            raise rd.error("BILATERAL must be followed by FEATURES")
        first = rd.peek()
        if first.startswith("FROM_IMAGE"):
            rd.next()
            rel = first.split(None, 1)[1].strip()
            path = Path(rel)
            if not path.is_absolute() and base_dir is not None:
                path = Path(base_dir) / path
            img, feats = read_image_ppm(path, theta_p, theta_c)
            if img.shape[:2] != (H, W):
                raise rd.error(f"image is {img.shape[1]}x{img.shape[0]}, instance is {W}x{H}")
        else:
            feats = FeatureField(np.array([rd.floats(5) for _ in range(N)]), theta_p, theta_c)
        section = rd.next()
    if section == "TRUTH":
        truth = np.array([rd.ints(W) for _ in range(H)], dtype=np.int64).ravel()
        section = rd.next()
    if section != "END":
        raise rd.error(f"unexpected section {section!r}")
    return CrfInstance(GridGeometry(H, W), make_unary(z, w_u, eps), SpatialKernelBank(spatial), bil, feats, truth)


def read_instance(path) -> CrfInstance:
    path = Path(path)
    return parse_instance(path.read_text(), str(path), path.parent)


# -- parameter files ---------------------------------------------------------

def format_params(params) -> str:
    sb = params.bilateral_radius if params.bilateral is not None else -1
    lines = [
        PARAMS_MAGIC,
        f"L {params.n_labels}",
        f"S_SPATIAL {params.spatial_radius}",
        f"S_BILATERAL {sb}",
        f"W_U {fmt(params.w_u)}",
        "SPATIAL",
    ]
    lines += _spatial_lines(params.spatial)
    if params.bilateral is not None:
        lines.append("BILATERAL")
        lines += _bilateral_lines(params.bilateral)
    lines.append("END")
    return "\n".join(lines) + "\n"


def write_params(path, params):
    atomic_write(path, format_params(params))


def parse_params(text, source="<params>"):
    from .learning import ParameterSet

    rd = _Lines(text, source)
    if rd.next() != PARAMS_MAGIC:
        raise rd.error(f"expected {PARAMS_MAGIC!r}")
    head = {}
    for key in ("L", "S_SPATIAL", "S_BILATERAL", "W_U"):
        parts = rd.next().split()
        if len(parts) != 2 or parts[0] != key:
            raise rd.error(f"expected {key}")
        head[key] = parts[1]
    try:
        L, s, sb, w_u = int(head["L"]), int(head["S_SPATIAL"]), int(head["S_BILATERAL"]), float(head["W_U"])
    except ValueError:
        raise rd.error("malformed header value") from None
    if rd.next() != "SPATIAL":
        raise rd.error("expected SPATIAL")
    spatial = _read_spatial(rd, L, 2 * s + 1)
    bil = None
    section = rd.next()
    if section == "BILATERAL":
        bil = _read_bilateral(rd, L, window_size(sb))
        section = rd.next()
    if section != "END":
        raise rd.error(f"unexpected section {section!r}")
    return ParameterSet(w_u, spatial, bil, sb if bil is not None else None)


def read_params(path):
    path = Path(path)
    return parse_params(path.read_text(), str(path))


# -- traces and heatmaps -----------------------------------------------------

def format_trace(trace) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    kl = trace.kl if trace.kl else [None] * len(trace.energies)
    for t, (e, k) in enumerate(zip(trace.energies, kl)):
        w.writerow([t, fmt(e), "" if k is None else fmt(k), trace.method])
    return buf.getvalue()


def write_trace(path, trace):
    atomic_write(path, format_trace(trace))


def read_trace(path):
    """Rows of ``(step, energy, kl or None, method)``."""
    rows = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        if next(rd) != TRACE_HEADER:
            raise ParseError(f"{path}: bad trace header", 0)
        for n, row in enumerate(rd, start=1):
            step = int(row[0])
            if step != n - 1:
                raise ParseError(f"{path}: steps must count up from 0", n)
            rows.append((step, float(row[1]), float(row[2]) if row[2] else None, row[3]))
    return rows


def write_filter_heatmaps(taps, out_dir, prefix="spatial"):
    """One PGM per label pair, taps mapped affinely onto ``[0, 255]``.

    ``index.txt`` records ``name min max`` for each image so the taps can be
    recovered to within ``(max - min) / 255``. A constant filter is written
    as mid-gray.
    """
    taps = np.asarray(taps, dtype=np.float64)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    L = taps.shape[0]
    side = []
    paths = []
    for lam in range(L):
        for mu in range(L):
            k = taps[lam, mu]
            lo, hi = float(k.min()), float(k.max())
            if hi > lo:
                img = np.rint((k - lo) / (hi - lo) * 255.0).astype(np.uint8)
            else:
                img = np.full(k.shape, 128, dtype=np.uint8)
            name = f"{prefix}_{lam}_{mu}.pgm"
            write_pnm(out_dir / name, img)
            side.append(f"{name} {fmt(lo)} {fmt(hi)}")
            paths.append(out_dir / name)
    index = out_dir / f"{prefix}_index.txt"
    atomic_write(index, "\n".join(side) + "\n")
    return paths


def read_filter_heatmaps(out_dir, prefix="spatial"):
    out_dir = Path(out_dir)
    entries = [ln.split() for ln in (out_dir / f"{prefix}_index.txt").read_text().splitlines() if ln.strip()]
    L = int(round(np.sqrt(len(entries))))
    taps = None
    for name, lo, hi in entries:
        _, lam, mu = Path(name).stem.rsplit("_", 2)
        img = read_pnm(out_dir / name).astype(np.float64)
        lo, hi = float(lo), float(hi)
        if taps is None:
            taps = np.zeros((L, L) + img.shape)
        taps[int(lam), int(mu)] = lo + img / 255.0 * (hi - lo) if hi > lo else lo
    return taps
