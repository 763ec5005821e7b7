"""
Tests for the node attention unit
"""

import numpy as np
import pytest

from relgraph.errors import ContractError, ShapeError
from relgraph.nau import NauParams, bottleneck_width, nau_backward, nau_forward, nau_forward_traced
from relgraph.numeric_core import Rng


def test_bottleneck_width_rounds_up():
    assert bottleneck_width(16, 2) == 8
    assert bottleneck_width(9, 2) == 5
    assert bottleneck_width(3, 4) == 1
    print("✅ test_bottleneck_width_rounds_up passed")


def test_frozen_gate_scales_are_half(rng):
    """Test Wa = Wb = 0 gives every node the scale 0.5"""
    nodes = rng.normal((9, 4))
    out, s = nau_forward(nodes, NauParams.frozen_gate(9))
    np.testing.assert_array_equal(s, np.full(9, 0.5))
    np.testing.assert_allclose(out, 0.5 * nodes)
    print("✅ test_frozen_gate_scales_are_half passed")


def test_scales_lie_in_open_unit_interval(rng):
    q = NauParams.init(rng, 16)
    _, s = nau_forward(rng.normal((3, 16, 5)), q)
    assert s.shape == (3, 16)
    assert np.all((s > 0) & (s < 1))
    print("✅ test_scales_lie_in_open_unit_interval passed")


def test_matches_loop_oracle(rng):
    q = NauParams.init(rng, 6, r=2)
    nodes = rng.normal((6, 3))
    out, s = nau_forward(nodes, q)

    z = [sum(nodes[i]) / 3 for i in range(6)]
    u = [max(sum(z[i] * q.Wa[i, k] for i in range(6)), 0.0) for k in range(3)]
    expect_s = [1 / (1 + np.exp(-sum(u[k] * q.Wb[k, i] for k in range(3)))) for i in range(6)]
    np.testing.assert_allclose(s, expect_s, atol=1e-12)
    np.testing.assert_allclose(out, nodes * np.array(expect_s)[:, None], atol=1e-12)
    print("✅ test_matches_loop_oracle passed")


def test_inconsistent_weights_rejected():
    with pytest.raises(ShapeError):
        NauParams(Wa=np.zeros((8, 3)), Wb=np.zeros((3, 8)), r=2)
    print("✅ test_inconsistent_weights_rejected passed")


def test_node_count_mismatch(rng):
    with pytest.raises(ShapeError):
        nau_forward(rng.normal((5, 2)), NauParams.init(rng, 4))
    print("✅ test_node_count_mismatch passed")


def test_backward_matches_finite_differences(rng):
    """Test the gradient includes the path through s into every row"""
    q = NauParams.init(rng, 6, r=3)
    nodes = rng.normal((2, 6, 3))
    d_out = rng.normal((2, 6, 3))

    def f(x=nodes, Wa=q.Wa, Wb=q.Wb):
        out, _ = nau_forward(x, NauParams(Wa=Wa, Wb=Wb, r=3))
        return float(np.sum(out * d_out))

    _, trace = nau_forward_traced(nodes, q)
    grads = nau_backward(trace, d_out)

    h = 1e-6
    for name, value in (("input", nodes), ("Wa", q.Wa), ("Wb", q.Wb)):
        numeric = np.zeros_like(value)
        key = "x" if name == "input" else name
        for idx in np.ndindex(value.shape):
            up, down = value.copy(), value.copy()
            up[idx] += h
            down[idx] -= h
            numeric[idx] = (f(**{key: up}) - f(**{key: down})) / (2 * h)
        np.testing.assert_allclose(grads[name], numeric, atol=1e-7, err_msg=name)
    print("✅ test_backward_matches_finite_differences passed")


def test_trace_reuse_rejected(rng):
    q = NauParams.init(rng, 4)
    out, trace = nau_forward_traced(rng.normal((4, 2)), q)
    nau_backward(trace, np.ones_like(out))
    with pytest.raises(ContractError):
        nau_backward(trace, np.ones_like(out))
    print("✅ test_trace_reuse_rejected passed")


def test_frozen_gate_backward_halves_the_cotangent(rng):
    """Test the ReLU at zero cuts the path through s when Wa = Wb = 0"""
    nodes = rng.normal((5, 3))
    d_out = rng.normal((5, 3))
    _, trace = nau_forward_traced(nodes, NauParams.frozen_gate(5))
    grads = nau_backward(trace, d_out)
    np.testing.assert_array_equal(grads["input"], 0.5 * d_out)
    print("✅ test_frozen_gate_backward_halves_the_cotangent passed")


def test_channel_permutation_keeps_scales(rng):
    q = NauParams.init(rng, 8)
    nodes = rng.normal((8, 5))
    perm = rng.derive(3).permutation(5)
    out, s = nau_forward(nodes, q)
    out_perm, s_perm = nau_forward(nodes[:, perm], q)
    np.testing.assert_allclose(s_perm, s, atol=1e-12)
    np.testing.assert_allclose(out_perm, out[:, perm], atol=1e-12)
    print("✅ test_channel_permutation_keeps_scales passed")


def test_node_permutation_changes_scales():
    """Test the gate is tied to node positions, not node content"""
    rng = Rng(31)
    q = NauParams.init(rng, 8)
    nodes = rng.derive(1).normal((8, 4))
    perm = np.roll(np.arange(8), 3)
    _, s = nau_forward(nodes, q)
    _, s_perm = nau_forward(nodes[perm], q)
    assert not np.allclose(s_perm, s[perm])
    print("✅ test_node_permutation_changes_scales passed")


def test_single_map_rgm_trace_has_flat_scales(rng):
    from relgraph.rgm import RgmParams, rgm_forward
    p = RgmParams.init(rng, 4, 3, 2, 3)
    q = NauParams.init(rng.derive(2), 4)
    _, trace = rgm_forward(rng.normal((3, 2, 2)), p, q)
    assert trace.scales.shape == (4,)
    _, batch_trace = rgm_forward(rng.normal((2, 3, 2, 2)), p, q)
    assert batch_trace.scales.shape == (2, 4)
    print("✅ test_single_map_rgm_trace_has_flat_scales passed")


@pytest.mark.slow
def test_trained_scales_correlate_within_subject():
    """Test NAU scale rows of one identity agree more than rows of different identities"""
    from relgraph.experiments import fit
    from relgraph.synthdata import gen_dataset
    from config.run_config import default_values

    cfg = default_values()
    cfg.update({"epochs": 30, "batch": 32, "lr": 0.01, "dropout_p": 0.0})
    ds = gen_dataset(12, 4, 5, dims=(16, 4, 4), domain_gap=2.0, seed=0)
    model, _ = fit(cfg, ds)

    rows, ids = [], []
    for s in ds.train:
        _, trace = model.embed(s.features)
        rows.append(trace.scales)
        ids.append(s.identity)
    corr = np.corrcoef(np.array(rows))
    ids = np.array(ids)
    same = ids[:, None] == ids[None, :]
    off_diag = ~np.eye(len(ids), dtype=bool)
    assert corr[same & off_diag].mean() > corr[~same].mean()
