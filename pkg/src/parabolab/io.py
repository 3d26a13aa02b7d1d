"""File formats: mask and solution dumps, graymap slices, reports, configs."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from .grid_domain import Grid, DomainMask, BoundaryClass

logger = logging.getLogger(__name__)

MASK_MAGIC = "PARABOLAB-MASK 1"
SOLUTION_MAGIC = "PARABOLAB-SOLUTION 1"


class ConfigError(ValueError):
    """Malformed configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = f"{path or '<config>'}" + (f":{line}" if line is not None else "")
        super().__init__(f"{where}: {message}")
        self.line = line
        self.path = path


# ---------------------------------------------------------------------------
# headers
# ---------------------------------------------------------------------------

def _grid_header(grid: Grid) -> list[str]:
    return [
        f"n {grid.n}",
        f"dims {' '.join(str(k) for k in grid.shape)}",
        f"h {grid.h!r}",
        f"tau {grid.tau!r}",
        "space " + " ".join(f"{lo!r} {hi!r}" for lo, hi in grid.space_extent),
        f"time {grid.time_extent[0]!r} {grid.time_extent[1]!r}",
    ]


def _read_header(fh, magic: str) -> dict:
    first = fh.readline().decode("ascii").strip()
    if first != magic:
        raise ValueError(f"bad magic {first!r}, expected {magic!r}")
    fields = {}
    while True:
        line = fh.readline()
        if not line:
            raise ValueError("truncated header")
        line = line.decode("ascii").strip()
        if line == "END":
            return fields
        key, _, rest = line.partition(" ")
        fields[key] = rest.split()


def _grid_from_header(fields: dict) -> Grid:
    n = int(fields["n"][0])
    sp = [float(v) for v in fields["space"]]
    space = tuple((sp[2 * i], sp[2 * i + 1]) for i in range(n))
    time = tuple(float(v) for v in fields["time"])
    grid = Grid(n, float(fields["h"][0]), space, time, float(fields["tau"][0]))
    dims = tuple(int(v) for v in fields["dims"])
    if dims != grid.shape:
        raise ValueError(f"header dims {dims} disagree with grid shape {grid.shape}")
    return grid


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def write_mask(path, mask: DomainMask, labels: np.ndarray | None = None) -> Path:
    """Flat uint8 dump (C order, time first) behind a short text header.

    Stores 0/1 occupancy, or boundary labels when ``labels`` is given.
    """
    path = Path(path)
    data = np.asarray(mask.occupancy if labels is None else labels, dtype=np.uint8)
    bbox = mask.spec.bbox if mask.spec is not None else None
    head = [MASK_MAGIC] + _grid_header(mask.grid)
    head.append(f"content {'labels' if labels is not None else 'occupancy'}")
    if bbox is not None:
        head.append("bbox " + " ".join(f"{lo!r} {hi!r}" for lo, hi in bbox[0])
                    + f" {bbox[1][0]!r} {bbox[1][1]!r}")
    head.append("END")
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())
    return path


def read_mask(path) -> tuple[Grid, np.ndarray, dict]:
    with open(path, "rb") as fh:
        fields = _read_header(fh, MASK_MAGIC)
        grid = _grid_from_header(fields)
        raw = np.frombuffer(fh.read(), dtype=np.uint8)
    if raw.size != math.prod(grid.shape):
        raise ValueError(f"mask payload has {raw.size} bytes, expected {math.prod(grid.shape)}")
    return grid, raw.reshape(grid.shape).copy(), fields


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> Path:
    """Binary portable graymap of a 2-D array already scaled to ``0..maxval``."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("graymap needs a 2-D array")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(np.clip(img, 0, maxval).astype(np.uint8).tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    if tokens[0] != "P5":
        raise ValueError("not a binary graymap")
    w, hgt = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1:pos + 1 + w * hgt], dtype=np.uint8).reshape(hgt, w)


_LABEL_GRAY = np.array([0, 255, 128, 192], dtype=np.uint8)


def export_mask_images(directory, mask: DomainMask, cls: BoundaryClass | None = None,
                       every: int = 1) -> list[Path]:
    """Graymaps for inspection: one per time slice in 2-D, one time-by-space image in 1-D.

    Gray levels: exterior 0, interior 255, parabolic 128, flat top 192.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    img = _LABEL_GRAY[cls.labels] if cls is not None else np.where(mask.occupancy, 255, 0)
    if mask.grid.n == 1:
        return [write_pgm(directory / "mask_xt.pgm", img[::-1])]
    if mask.grid.n != 2:
        raise ValueError("graymap export supports n = 1 or 2")
    return [write_pgm(directory / f"mask_{m:05d}.pgm", img[m].T[::-1])
            for m in range(0, mask.grid.nt, every)]


# ---------------------------------------------------------------------------
# solutions
# ---------------------------------------------------------------------------

def write_solution(path, grid: Grid, u: np.ndarray) -> Path:
    """float64 little-endian dump; the header lists the byte offset of each slice."""
    path = Path(path)
    u = np.ascontiguousarray(u, dtype="<f8")
    if u.shape != grid.shape:
        raise ValueError("field shape differs from grid shape")
    stride = u[0].nbytes
    head = [SOLUTION_MAGIC] + _grid_header(grid)
    head.append(f"slice_bytes {stride}")
    head.append("END")
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        fh.write(u.tobytes())
    return path


def read_solution(path, slices=None) -> tuple[Grid, np.ndarray]:
    """Read the whole field, or only the listed slice indices."""
    with open(path, "rb") as fh:
        fields = _read_header(fh, SOLUTION_MAGIC)
        grid = _grid_from_header(fields)
        base = fh.tell()
        stride = int(fields["slice_bytes"][0])
        if slices is None:
            data = np.frombuffer(fh.read(), dtype="<f8")
            return grid, data.reshape(grid.shape).copy()
        out = []
        for m in slices:
            fh.seek(base + m * stride)
            out.append(np.frombuffer(fh.read(stride), dtype="<f8").reshape(grid.counts))
    return grid, np.stack(out)


def write_slice_csv(path, grid: Grid, u: np.ndarray, m: int, occupancy: np.ndarray | None = None) -> Path:
    """Rows ``x_1..x_n, t, u`` for slice ``m`` (occupied nodes only when a mask is given)."""
    x = grid.space_coords().reshape(-1, grid.n)
    vals = np.asarray(u[m]).reshape(-1)
    keep = np.ones(len(vals), bool) if occupancy is None else np.asarray(occupancy[m]).reshape(-1)
    t = grid.t_axis[m]
    rows = [dict({f"x{i + 1}": float(p[i]) for i in range(grid.n)}, t=float(t), u=float(v))
            for p, v in zip(x[keep], vals[keep])]
    return write_csv(path, rows, fieldnames=[f"x{i + 1}" for i in range(grid.n)] + ["t", "u"])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def to_jsonable(obj):
    """Plain JSON types; non-finite floats become strings so output stays strict JSON."""
    if is_dataclass(obj) and not isinstance(obj, type):
        obj = asdict(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path, rows: list[dict], fieldnames: list[str] | None = None) -> Path:
    path = Path(path)
    if fieldnames is None:
        fieldnames = []
        for r in rows:
            fieldnames += [k for k in r if k not in fieldnames]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow({k: to_jsonable(v) for k, v in r.items()})
    return path


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _line_map(node, prefix=(), out=None) -> dict:
    """Dotted key path -> 1-based line of its value in the YAML source."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = prefix + (str(k.value),)
            out[".".join(key)] = k.start_mark.line + 1
            _line_map(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            key = prefix + (str(i),)
            out[".".join(key)] = v.start_mark.line + 1
            _line_map(v, key, out)
    return out


def parse_config(text: str, path: str | None = None) -> tuple[dict, dict]:
    """Parse YAML text into ``(config, lines)``; errors carry the offending line."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        msg = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"YAML parse error: {msg}", line, path) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, path)
    return data, _line_map(node) if node is not None else {}


def load_config(path) -> tuple[dict, dict]:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
