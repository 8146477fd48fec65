"""Readers and writers for images, grids, flows, transforms, classifier
parameters, prompt banks and recorded predictors.

Structured data is JSON with a ``format`` tag and integer ``version``. Floats
are written with Python's shortest round-trip repr, so doubles survive
exactly. Dense flows additionally have a compact binary layout::

    b"WFLO" | uint32 width | uint32 height | float32 (dx, dy) * width * height

all little-endian, row-major.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

from .classifier import ClassifierParams
from .geometry import ControlGrid, FlowField, ImageBuffer, Mask
from .prompts import PromptBank
from .tps import TpsTransform

FORMAT_VERSION = 1
COORDINATE_CONVENTION = "normalized-pixel-center"
FLOW_MAGIC = b"WFLO"
_FLOW_HEADER = struct.Struct("<4sII")


class FormatError(ValueError):
    """Malformed, truncated or unsupported file content."""


# --------------------------------------------------------------------------- images


def _quantize(data: np.ndarray, bit_depth: int) -> np.ndarray:
    maxval = (1 << bit_depth) - 1
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return np.rint(np.clip(data, 0.0, 1.0) * maxval).astype(dtype)


def _read_netpbm(raw: bytes) -> np.ndarray:
    tokens = []
    pos = 0
    # magic, width, height, maxval separated by whitespace, '#' comments allowed
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise FormatError("truncated NetPBM header")
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported NetPBM variant {magic!r} (only binary P5/P6)")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("corrupt NetPBM header") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError("corrupt NetPBM header values")
    pos += 1  # single whitespace byte before the raster
    c = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * c
    body = raw[pos:pos + n * dtype.itemsize]
    if len(body) != n * dtype.itemsize:
        raise FormatError(f"NetPBM raster truncated: expected {n * dtype.itemsize} bytes, got {len(body)}")
    arr = np.frombuffer(body, dtype=dtype).reshape(h, w, c)
    return arr.astype(np.float64) / maxval


def _write_netpbm(path: Path, img: ImageBuffer, bit_depth: int) -> None:
    if img.channels not in (1, 3):
        raise FormatError("NetPBM supports 1 or 3 channels")
    q = _quantize(img.data, bit_depth)
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n{(1 << bit_depth) - 1}\n".encode()
    body = q.astype(">u2").tobytes() if bit_depth == 16 else q.tobytes()
    path.write_bytes(header + body)


def read_image(path) -> ImageBuffer:
    """Read PNG or binary NetPBM (PGM/PPM) into a float image in [0, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] in (b"P5", b"P6"):
        return ImageBuffer(_read_netpbm(raw).astype(np.float32))
    if raw[:8] != b"\x89PNG\r\n\x1a\n":
        raise FormatError(f"{path}: unsupported image format")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif mode in ("L", "RGB", "RGBA"):
                arr = np.asarray(im, dtype=np.float64) / 255.0
            elif mode in ("1", "P", "LA"):
                conv = im.convert("RGBA" if mode in ("P", "LA") else "L")
                arr = np.asarray(conv, dtype=np.float64) / 255.0
            else:
                raise FormatError(f"{path}: unsupported PNG mode {mode}")
    except OSError as exc:
        raise FormatError(f"{path}: corrupt image ({exc})") from exc
    return ImageBuffer(arr.astype(np.float32))


def write_image(path, img: ImageBuffer, bit_depth: int = 8) -> None:
    """Write PNG (by ``.png`` suffix) or NetPBM (``.pgm``/``.ppm``/``.pnm``).

    Samples are quantized with ``round(v * maxval)``. 16-bit PNG is only
    available for single-channel images; use PPM for 16-bit color.
    """
    path = Path(path)
    if bit_depth not in (8, 16):
        raise FormatError("bit_depth must be 8 or 16")
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm", ".pnm"):
        _write_netpbm(path, img, bit_depth)
        return
    if suffix != ".png":
        raise FormatError(f"unsupported image extension {suffix!r}")
    q = _quantize(img.data, bit_depth)
    if bit_depth == 16:
        if img.channels != 1:
            raise FormatError("16-bit PNG is supported for single-channel images only")
        im = Image.fromarray(q[:, :, 0].astype("<u2"))  # inferred mode I;16
    else:
        im = Image.fromarray(q[:, :, 0] if img.channels == 1 else q)  # L, RGB or RGBA
    im.save(path)


def write_mask(path, mask: Mask) -> None:
    write_image(path, ImageBuffer(mask.data))


def read_mask(path) -> Mask:
    img = read_image(path)
    return Mask(img.data[:, :, 0])


# --------------------------------------------------------------------------- JSON helpers

_NUM_ARRAY = {"type": "array", "items": {"type": "number"}}


def _envelope(kind: str, body_schema: dict, required: list[str]) -> dict:
    return {
        "type": "object",
        "properties": {
            "format": {"const": kind},
            "version": {"type": "integer"},
            **body_schema,
        },
        "required": ["format", "version", *required],
    }


def _validate(doc, schema: dict, where: str) -> None:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise FormatError(f"{where}: schema violation at {path}: {exc.message}") from None
    if doc["version"] != FORMAT_VERSION:
        raise FormatError(f"{where}: unsupported version {doc['version']} (expected {FORMAT_VERSION})")


def _load_json(path) -> object:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def _dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, allow_nan=False))


def _flat(a: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def _array(values, shape, where: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size != int(np.prod(shape)):
        raise FormatError(f"{where}: expected {int(np.prod(shape))} values, got {arr.size}")
    return arr.reshape(shape)


# --------------------------------------------------------------------------- grids

GRID_SCHEMA = _envelope(
    "grid",
    {
        "rows": {"type": "integer", "minimum": 2},
        "cols": {"type": "integer", "minimum": 2},
        "convention": {"const": COORDINATE_CONVENTION},
        "points": _NUM_ARRAY,
    },
    ["rows", "cols", "convention", "points"],
)


def grid_to_dict(grid: ControlGrid) -> dict:
    return {
        "format": "grid",
        "version": FORMAT_VERSION,
        "rows": grid.rows,
        "cols": grid.cols,
        "convention": COORDINATE_CONVENTION,
        "points": _flat(grid.points),
    }


def grid_from_dict(doc, where: str = "grid") -> ControlGrid:
    _validate(doc, GRID_SCHEMA, where)
    pts = _array(doc["points"], (doc["rows"] * doc["cols"], 2), f"{where}: points")
    return ControlGrid(doc["rows"], doc["cols"], pts)


def write_grid(path, grid: ControlGrid) -> None:
    _dump_json(path, grid_to_dict(grid))


def read_grid(path) -> ControlGrid:
    return grid_from_dict(_load_json(path), str(path))


# --------------------------------------------------------------------------- flows

FLOW_SCHEMA = _envelope(
    "flow",
    {
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "convention": {"const": COORDINATE_CONVENTION},
        "data": _NUM_ARRAY,
    },
    ["width", "height", "data"],
)


def flow_to_bytes(flow: FlowField) -> bytes:
    payload = flow.data.astype("<f4").tobytes()
    return _FLOW_HEADER.pack(FLOW_MAGIC, flow.width, flow.height) + payload


def flow_from_bytes(raw: bytes, where: str = "flow") -> FlowField:
    if len(raw) < _FLOW_HEADER.size:
        raise FormatError(f"{where}: truncated header")
    magic, w, h = _FLOW_HEADER.unpack_from(raw)
    if magic != FLOW_MAGIC:
        raise FormatError(f"{where}: bad magic {magic!r}")
    expected = 8 * w * h
    payload = raw[_FLOW_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"{where}: payload length mismatch, expected {expected} bytes, got {len(payload)}")
    if w < 1 or h < 1:
        raise FormatError(f"{where}: empty flow")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(h, w, 2)
    return FlowField(data)


def write_flow(path, flow: FlowField) -> None:
    """``.json`` suffix writes exact doubles; anything else writes binary WFLO (float32)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        _dump_json(path, {
            "format": "flow",
            "version": FORMAT_VERSION,
            "width": flow.width,
            "height": flow.height,
            "convention": COORDINATE_CONVENTION,
            "data": _flat(flow.data),
        })
    else:
        path.write_bytes(flow_to_bytes(flow))


def read_flow(path) -> FlowField:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == FLOW_MAGIC:
        return flow_from_bytes(raw, str(path))
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise FormatError(f"{path}: neither a WFLO nor a JSON flow file") from None
    _validate(doc, FLOW_SCHEMA, str(path))
    return FlowField(_array(doc["data"], (doc["height"], doc["width"], 2), f"{path}: data"))


# --------------------------------------------------------------------------- transforms

TPS_SCHEMA = _envelope(
    "tps",
    {
        "count": {"type": "integer", "minimum": 1},
        "affine": {**_NUM_ARRAY, "minItems": 6, "maxItems": 6},
        "weights": _NUM_ARRAY,
        "centers": _NUM_ARRAY,
        "regularization": {"type": "number", "minimum": 0},
    },
    ["count", "affine", "weights", "centers", "regularization"],
)


def tps_to_dict(t: TpsTransform) -> dict:
    return {
        "format": "tps",
        "version": FORMAT_VERSION,
        "count": len(t.centers),
        "affine": _flat(t.affine),
        "weights": _flat(t.weights),
        "centers": _flat(t.centers),
        "regularization": t.regularization,
    }


def tps_from_dict(doc, where: str = "tps") -> TpsTransform:
    _validate(doc, TPS_SCHEMA, where)
    n = doc["count"]
    return TpsTransform(
        _array(doc["affine"], (2, 3), f"{where}: affine"),
        _array(doc["weights"], (n, 2), f"{where}: weights"),
        _array(doc["centers"], (n, 2), f"{where}: centers"),
        doc["regularization"],
    )


def write_tps(path, t: TpsTransform) -> None:
    _dump_json(path, tps_to_dict(t))


def read_tps(path) -> TpsTransform:
    return tps_from_dict(_load_json(path), str(path))


# --------------------------------------------------------------------------- classifier

_LAYER_SCHEMA = {
    "type": "object",
    "properties": {
        "in": {"type": "integer", "minimum": 1},
        "out": {"type": "integer", "minimum": 1},
        "weight": _NUM_ARRAY,
        "bias": _NUM_ARRAY,
    },
    "required": ["in", "out", "weight", "bias"],
}

PARAMS_SCHEMA = _envelope(
    "classifier",
    {
        "seed": {"type": ["integer", "null"]},
        "pointwise": {"type": "array", "items": _LAYER_SCHEMA, "minItems": 1},
        "head": {"type": "array", "items": _LAYER_SCHEMA, "minItems": 1},
        "global": {"oneOf": [{"type": "null"}, _LAYER_SCHEMA]},
    },
    ["seed", "pointwise", "head"],
)


def _layer_to_dict(layer) -> dict:
    w, b = layer
    return {"in": int(w.shape[1]), "out": int(w.shape[0]), "weight": _flat(w), "bias": _flat(b)}


def _layer_from_dict(d, where: str):
    return (
        _array(d["weight"], (d["out"], d["in"]), f"{where}/weight"),
        _array(d["bias"], (d["out"],), f"{where}/bias"),
    )


def params_to_dict(p: ClassifierParams) -> dict:
    return {
        "format": "classifier",
        "version": FORMAT_VERSION,
        "seed": p.seed,
        "pointwise": [_layer_to_dict(l) for l in p.pointwise],
        "head": [_layer_to_dict(l) for l in p.head],
        "global": None if p.global_layer is None else _layer_to_dict(p.global_layer),
    }


def params_from_dict(doc, where: str = "classifier") -> ClassifierParams:
    _validate(doc, PARAMS_SCHEMA, where)
    g = doc.get("global")
    try:
        return ClassifierParams(
            [_layer_from_dict(d, f"{where}: pointwise/{i}") for i, d in enumerate(doc["pointwise"])],
            [_layer_from_dict(d, f"{where}: head/{i}") for i, d in enumerate(doc["head"])],
            None if g is None else _layer_from_dict(g, f"{where}: global"),
            doc["seed"],
        )
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from exc


def write_params(path, p: ClassifierParams) -> None:
    _dump_json(path, params_to_dict(p))


def read_params(path) -> ClassifierParams:
    return params_from_dict(_load_json(path), str(path))


# --------------------------------------------------------------------------- prompts

PROMPTS_SCHEMA = _envelope(
    "prompts",
    {
        "shape": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 4, "maxItems": 4},
        "data": _NUM_ARRAY,
    },
    ["shape", "data"],
)


def prompts_to_dict(bank: PromptBank) -> dict:
    return {
        "format": "prompts",
        "version": FORMAT_VERSION,
        "shape": list(bank.prompts.shape),
        "data": _flat(bank.prompts),
    }


def prompts_from_dict(doc, where: str = "prompts") -> PromptBank:
    _validate(doc, PROMPTS_SCHEMA, where)
    return PromptBank(_array(doc["data"], tuple(doc["shape"]), f"{where}: data"))


def write_prompts(path, bank: PromptBank) -> None:
    _dump_json(path, prompts_to_dict(bank))


def read_prompts(path) -> PromptBank:
    return prompts_from_dict(_load_json(path), str(path))


# --------------------------------------------------------------------------- recorded predictors

RECORDED_SCHEMA = _envelope("recorded-heads", {"stages": {"type": "array", "items": GRID_SCHEMA}}, ["stages"])


def write_recorded_heads(path, deltas) -> None:
    _dump_json(path, {
        "format": "recorded-heads",
        "version": FORMAT_VERSION,
        "stages": [grid_to_dict(d) for d in deltas],
    })


def read_recorded_heads(path) -> list[ControlGrid]:
    """Per-stage delta grids for :class:`~tpswarp.hierarchy.RecordedPredictor`."""
    doc = _load_json(path)
    _validate(doc, RECORDED_SCHEMA, str(path))
    return [grid_from_dict(g, f"{path}: stages/{i}") for i, g in enumerate(doc["stages"])]
