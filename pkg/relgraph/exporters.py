"""
CSV and PGM artifacts: metric tables, edge top-k lists, NAU scale matrices
and margin-map images.
"""

import csv
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DataError, ShapeError
from .losses import BAND, CLASS1, CLASS2, band_width, margin_map
from .numeric_core import Tensor
from .rgm import RgmTrace

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SIG_DIGITS = 9
TOP_K = 5


def format_cell(value) -> str:
    """Floats at 9 significant digits; None as an empty cell"""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.{SIG_DIGITS}g}"
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: PathLike, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ShapeError(f"{path.name}: row has {len(row)} cells, header has {len(header)}")
            writer.writerow([format_cell(v) for v in row])
    logger.info(f"Wrote {path} ({len(rows)} rows)")
    return path


def write_pgm(path: PathLike, image: Tensor) -> Tuple[float, float]:
    """
    Binary P5 greyscale, min-max normalised to 0..255

    The source range is recorded in a header comment. A constant image maps
    to all zeros.

    Returns:
        (min, max) of the source values
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"PGM needs a 2-D array, got shape {image.shape}")
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        pixels = np.rint((image - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pixels = np.zeros(image.shape, dtype=np.uint8)

    height, width = image.shape
    header = f"P5\n# min={lo!r} max={hi!r}\n{width} {height}\n255\n".encode("ascii")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + pixels.tobytes())
    return lo, hi


# ── Trace exporters ─────────────────────────────────────────────

def _adjacency(trace: RgmTrace, sample: int) -> Tensor:
    A = trace.adjacency.A
    if A.ndim == 3:
        if not 0 <= sample < A.shape[0]:
            raise DataError(f"sample {sample} out of range for a batch of {A.shape[0]}")
        A = A[sample]
    return A


def edge_topk(trace: RgmTrace, node: int, k: int = TOP_K, sample: int = 0) -> List[Tuple[int, float]]:
    """
    The k strongest outgoing edges of node i as (j, A_ij)

    Ordered by descending value, then ascending j; the self-edge is eligible.
    """
    A = _adjacency(trace, sample)
    n = A.shape[0]
    if not 0 <= node < n:
        raise DataError(f"node {node} out of range [0, {n})")
    row = A[node]
    order = np.lexsort((np.arange(n), -row))
    return [(int(j), float(row[j])) for j in order[:k]]


def export_edge_topk(trace: RgmTrace, node: int, out_dir: PathLike, k: int = TOP_K,
                     sample: int = 0) -> List[Tuple[int, float]]:
    """Write edges_node<i>.csv and the full adjacency as adjacency.pgm"""
    out_dir = Path(out_dir)
    rows = edge_topk(trace, node, k, sample)
    write_csv(out_dir / f"edges_node{node}.csv", ["j", "A_ij"], rows)
    write_pgm(out_dir / "adjacency.pgm", _adjacency(trace, sample))
    return rows


def nau_scale_rows(traces: Sequence[RgmTrace], tags: Sequence[Tuple[int, str]]) -> Tuple[List[str], List[List]]:
    """
    One row per sample: identity, domain, then s_1..s_N

    Each trace may hold a batch; tags run over the samples of all traces in order.
    """
    scales: List[Tensor] = []
    for trace in traces:
        s = trace.scales
        if s is None:
            raise DataError("trace carries no NAU scales (head built without NAU)")
        scales.extend(np.atleast_2d(s))
    widths = {len(s) for s in scales}
    if len(widths) > 1:
        raise ShapeError(f"traces disagree on node count: {sorted(widths)}")
    if len(tags) != len(scales):
        raise ShapeError(f"{len(tags)} tags for {len(scales)} samples")

    n = widths.pop() if widths else 0
    header = ["identity", "domain"] + [f"s{i}" for i in range(n)]
    rows = [[ident, domain] + list(s) for (ident, domain), s in zip(tags, scales)]
    return header, rows


def export_nau_scales(traces: Sequence[RgmTrace], tags: Sequence[Tuple[int, str]], path: PathLike) -> Path:
    header, rows = nau_scale_rows(traces, tags)
    return write_csv(path, header, rows)


def export_margin_map(loss_id: str, params: dict, resolution: int, out_dir: PathLike,
                      band_points: Optional[Sequence[float]] = None) -> Tuple[Path, Path]:
    """
    Write margin_map.csv (long form: cos1, cos2, region), margin_map.pgm
    (top row is cos θ2 = +1) and band_width.csv

    Regions are shaded CLASS1 dark, CLASS2 mid-grey, BAND white.
    """
    out_dir = Path(out_dir)
    labels = margin_map(loss_id, params, resolution)
    axis = np.linspace(-1.0, 1.0, resolution)

    names = {CLASS1: "class1", CLASS2: "class2", BAND: "band"}
    rows = [[axis[j], axis[i], names[int(labels[i, j])]]
            for i in range(resolution) for j in range(resolution)]
    csv_path = write_csv(out_dir / "margin_map.csv", ["cos1", "cos2", "region"], rows)

    shade = np.select([labels == CLASS1, labels == CLASS2], [0.0, 0.5], default=1.0)
    pgm_path = out_dir / "margin_map.pgm"
    write_pgm(pgm_path, shade[::-1])

    points = band_points if band_points is not None else np.linspace(-0.8, 0.8, 9)
    write_csv(out_dir / "band_width.csv", ["cos1", "width"],
              [[float(c), band_width(loss_id, params, float(c))] for c in points])
    return csv_path, pgm_path
