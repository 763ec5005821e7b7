"""
Tests for CSV/PGM writers and the trace exporters
"""

import csv

import numpy as np
import pytest

from relgraph.errors import DataError, ShapeError
from relgraph.exporters import (
    edge_topk, export_edge_topk, export_margin_map, export_nau_scales, nau_scale_rows, write_csv,
    write_pgm,
)
from relgraph.nau import NauParams
from relgraph.numeric_core import Rng
from relgraph.rgm import Adjacency, RgmParams, rgm_forward


def trace_with_adjacency(A):
    """A real RGM trace whose adjacency is replaced by a chosen matrix"""
    n = A.shape[-1]
    p = RgmParams.init(Rng(0), n, 2, 2, 2)
    _, trace = rgm_forward(Rng(1).normal((2, n, 1)), p, NauParams.init(Rng(2), n))
    trace.adjacency = Adjacency(A=np.asarray(A)[None], E=trace.adjacency.E, activation=trace.adjacency.activation)
    return trace


def read_pgm(path):
    blob = path.read_bytes()
    lines = blob.split(b"\n", 4)
    assert lines[0] == b"P5"
    width, height = map(int, lines[2].split())
    assert lines[3] == b"255"
    pixels = np.frombuffer(lines[4], dtype=np.uint8)
    return lines[1].decode(), pixels.reshape(height, width)


# ── Writers ─────────────────────────────────────────────────────

def test_csv_nine_significant_digits(tmp_path):
    path = write_csv(tmp_path / "m.csv", ["name", "value", "missing"], [["a", 1 / 3, None], ["b", 2, 0.5]])
    with path.open() as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["name", "value", "missing"]
    assert rows[1] == ["a", "0.333333333", ""]
    assert rows[2] == ["b", "2", "0.5"]
    print("✅ test_csv_nine_significant_digits passed")


def test_csv_values_parse_back_at_nine_digits(tmp_path, rng):
    values = rng.normal((20,))
    path = write_csv(tmp_path / "v.csv", ["v"], [[v] for v in values])
    with path.open() as f:
        back = [float(r[0]) for r in list(csv.reader(f))[1:]]
    for a, b in zip(values, back):
        assert float(f"{a:.9g}") == b
    print("✅ test_csv_values_parse_back_at_nine_digits passed")


def test_csv_rejects_ragged_rows(tmp_path):
    with pytest.raises(ShapeError):
        write_csv(tmp_path / "bad.csv", ["a", "b"], [[1]])
    print("✅ test_csv_rejects_ragged_rows passed")


def test_pgm_header_and_normalisation(tmp_path):
    lo, hi = write_pgm(tmp_path / "x.pgm", np.array([[0.0, 0.5], [1.0, 2.0]]))
    assert (lo, hi) == (0.0, 2.0)
    comment, pixels = read_pgm(tmp_path / "x.pgm")
    assert comment == "# min=0.0 max=2.0"
    np.testing.assert_array_equal(pixels, [[0, 64], [128, 255]])
    print("✅ test_pgm_header_and_normalisation passed")


def test_pgm_constant_image(tmp_path):
    write_pgm(tmp_path / "c.pgm", np.full((3, 2), 7.0))
    _, pixels = read_pgm(tmp_path / "c.pgm")
    assert pixels.shape == (3, 2) and not pixels.any()
    print("✅ test_pgm_constant_image passed")


# ── Edge top-k ──────────────────────────────────────────────────

def test_one_hot_row_lists_dominant_edge_first():
    A = np.zeros((4, 4))
    A[1, 3] = 1.0
    rows = edge_topk(trace_with_adjacency(A), node=1, k=2)
    assert rows[0] == (3, 1.0)
    print("✅ test_one_hot_row_lists_dominant_edge_first passed")


def test_uniform_row_takes_lowest_indices():
    rows = edge_topk(trace_with_adjacency(np.full((6, 6), 0.25)), node=4, k=3)
    assert [j for j, _ in rows] == [0, 1, 2]
    print("✅ test_uniform_row_takes_lowest_indices passed")


def test_topk_matches_sort_oracle(rng):
    A = rng.uniform((9, 9))
    rows = edge_topk(trace_with_adjacency(A), node=5, k=5)
    oracle = sorted(range(9), key=lambda j: (-A[5, j], j))[:5]
    assert [j for j, _ in rows] == oracle
    print("✅ test_topk_matches_sort_oracle passed")


def test_node_out_of_range():
    with pytest.raises(DataError):
        edge_topk(trace_with_adjacency(np.eye(4)), node=4)
    print("✅ test_node_out_of_range passed")


def test_export_edge_topk_files(tmp_path, rng):
    export_edge_topk(trace_with_adjacency(rng.uniform((4, 4))), 2, tmp_path, k=3)
    assert (tmp_path / "edges_node2.csv").read_text().splitlines()[0] == "j,A_ij"
    _, pixels = read_pgm(tmp_path / "adjacency.pgm")
    assert pixels.shape == (4, 4)
    print("✅ test_export_edge_topk_files passed")


# ── NAU scales ──────────────────────────────────────────────────

def test_single_sample_scale_row():
    p = RgmParams.init(Rng(0), 4, 3, 2, 2)
    _, trace = rgm_forward(Rng(1).normal((3, 2, 2)), p, NauParams.init(Rng(2), 4))
    header, rows = nau_scale_rows([trace], [(7, "NIR")])
    assert header == ["identity", "domain", "s0", "s1", "s2", "s3"]
    assert len(rows) == 1 and rows[0][:2] == [7, "NIR"]
    assert all(0.0 < v < 1.0 for v in rows[0][2:])
    print("✅ test_single_sample_scale_row passed")


def test_frozen_gate_rows_are_half(tmp_path):
    p = RgmParams.init(Rng(0), 4, 3, 2, 2)
    _, trace = rgm_forward(Rng(1).normal((3, 3, 2, 2)), p, NauParams.frozen_gate(4))
    path = export_nau_scales([trace], [(0, "VIS"), (0, "NIR"), (1, "VIS")], tmp_path / "s.csv")
    with path.open() as f:
        rows = list(csv.reader(f))[1:]
    assert len(rows) == 3
    assert all(v == "0.5" for r in rows for v in r[2:])
    print("✅ test_frozen_gate_rows_are_half passed")


def test_inconsistent_node_counts():
    a = rgm_forward(Rng(1).normal((3, 2, 2)), RgmParams.init(Rng(0), 4, 3, 2, 2), NauParams.init(Rng(2), 4))[1]
    b = rgm_forward(Rng(1).normal((3, 3, 3)), RgmParams.init(Rng(0), 9, 3, 2, 2), NauParams.init(Rng(2), 9))[1]
    with pytest.raises(ShapeError):
        nau_scale_rows([a, b], [(0, "VIS"), (1, "VIS")])
    print("✅ test_inconsistent_node_counts passed")


def test_scales_need_nau():
    _, trace = rgm_forward(Rng(1).normal((3, 2, 2)), RgmParams.init(Rng(0), 4, 3, 2, 2))
    with pytest.raises(DataError):
        nau_scale_rows([trace], [(0, "VIS")])
    print("✅ test_scales_need_nau passed")


# ── Margin map ──────────────────────────────────────────────────

def test_margin_map_export(tmp_path):
    export_margin_map("csoftmax", {"m1": 0.7, "m2": -0.3}, 32, tmp_path)
    _, pixels = read_pgm(tmp_path / "margin_map.pgm")
    assert pixels.shape == (32, 32)
    lines = (tmp_path / "margin_map.csv").read_text().splitlines()
    assert lines[0] == "cos1,cos2,region" and len(lines) == 1 + 32 * 32
    assert len((tmp_path / "band_width.csv").read_text().splitlines()) == 10
    print("✅ test_margin_map_export passed")
