"""
Tests for tensor files, manifests and the synthetic dataset generator
"""

import struct

import numpy as np
import pytest

from relgraph.errors import DataError, FormatError
from relgraph.evaluation import domain_gap_report
from relgraph.numeric_core import Rng
from relgraph.synthdata import (
    MAX_PER_ID, NIR, VIS, DomainSpec, gen_dataset, gen_identity, gen_sample, load_dataset,
    make_domains, save_dataset,
)
from relgraph.tensor_io import decode_tensor, encode_tensor, load_manifest, load_tensor, save_tensor


# ── Tensor files ────────────────────────────────────────────────

def test_tensor_file_is_bit_exact(tmp_path, rng):
    t = rng.normal((2, 3, 4))
    path = save_tensor(tmp_path / "t.rgt", t)
    back = load_tensor(path)
    assert back.shape == t.shape
    assert back.tobytes() == t.tobytes()
    print("✅ test_tensor_file_is_bit_exact passed")


def test_tensor_header_layout():
    blob = encode_tensor(np.arange(6.0).reshape(2, 3))
    magic, dtype, rank, reserved = struct.unpack_from("<4sBBH", blob, 0)
    assert (magic, dtype, rank, reserved) == (b"RGT1", 1, 2, 0)
    assert struct.unpack_from("<QQ", blob, 8) == (2, 3)
    assert len(blob) == 8 + 16 + 48
    print("✅ test_tensor_header_layout passed")


def test_scalar_tensor():
    assert decode_tensor(encode_tensor(np.array(2.5))) == 2.5
    print("✅ test_scalar_tensor passed")


def test_bad_magic_reports_offset_zero():
    blob = bytearray(encode_tensor(np.ones(3)))
    blob[0:4] = b"XXXX"
    with pytest.raises(FormatError) as exc:
        decode_tensor(bytes(blob))
    assert exc.value.offset == 0
    print("✅ test_bad_magic_reports_offset_zero passed")


def test_bad_dtype_and_reserved_offsets():
    blob = bytearray(encode_tensor(np.ones(3)))
    blob[4] = 2
    with pytest.raises(FormatError) as exc:
        decode_tensor(bytes(blob))
    assert exc.value.offset == 4

    blob = bytearray(encode_tensor(np.ones(3)))
    blob[6] = 1
    with pytest.raises(FormatError) as exc:
        decode_tensor(bytes(blob))
    assert exc.value.offset == 6
    print("✅ test_bad_dtype_and_reserved_offsets passed")


def test_truncated_payload_rejected():
    blob = encode_tensor(np.ones((4, 4)))
    with pytest.raises(FormatError):
        decode_tensor(blob[:-3])
    with pytest.raises(FormatError):
        decode_tensor(blob[:5])
    print("✅ test_truncated_payload_rejected passed")


def test_nan_payload_rejected_with_offset():
    blob = bytearray(encode_tensor(np.zeros(3)))
    struct.pack_into("<d", blob, 16 + 8, float("nan"))
    with pytest.raises(FormatError) as exc:
        decode_tensor(bytes(blob))
    assert exc.value.offset == 24
    print("✅ test_nan_payload_rejected_with_offset passed")


def test_manifest_invalid_json(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{not json")
    with pytest.raises(FormatError):
        load_manifest(path)
    print("✅ test_manifest_invalid_json passed")


# ── Generator ───────────────────────────────────────────────────

def test_identity_structure_is_row_stochastic(rng):
    spec = gen_identity(rng, nodes=9, channels=4, structure_sharpness=3.0)
    np.testing.assert_allclose(spec.structure.sum(axis=1), 1.0, atol=1e-12)
    print("✅ test_identity_structure_is_row_stochastic passed")


def test_noise_free_vis_sample_is_mixed_parts(rng):
    """Test the VIS sample with no noise is exactly structure · parts"""
    spec = gen_identity(rng, nodes=4, channels=3, structure_sharpness=2.0)
    vis, _ = make_domains(rng.derive(5), 3, domain_gap=1.0, noise_sigma=0.0)
    sample = gen_sample(spec, vis, rng.derive(6), 2, 2)
    expected = spec.structure @ spec.parts
    np.testing.assert_allclose(sample.features[:, 1, 0], expected[2], atol=1e-12)
    assert sample.domain == VIS
    print("✅ test_noise_free_vis_sample_is_mixed_parts passed")


def test_domain_gain_must_be_positive():
    with pytest.raises(DataError):
        DomainSpec("bad", np.array([1.0, -1.0]), np.zeros(2), 0.1)
    print("✅ test_domain_gain_must_be_positive passed")


def test_dataset_split_sizes():
    ds = gen_dataset(5, 3, 2, dims=(4, 2, 3), domain_gap=1.0, seed=0)
    assert len(ds.train) == 5 * 2 * 2
    assert len(ds.gallery) == 3
    assert len(ds.probe) == 3 * 2
    assert {s.domain for s in ds.gallery} == {VIS}
    assert {s.domain for s in ds.probe} == {NIR}
    assert {s.identity for s in ds.train}.isdisjoint({s.identity for s in ds.gallery})
    assert ds.dims == (4, 2, 3)
    print("✅ test_dataset_split_sizes passed")


def test_dataset_rejects_zero_counts():
    with pytest.raises(DataError):
        gen_dataset(5, 0, 2, dims=(4, 2, 2), domain_gap=1.0, seed=0)
    print("✅ test_dataset_rejects_zero_counts passed")


def test_same_seed_same_dataset_files(tmp_path):
    """Test two runs with one seed write byte-identical directories"""
    for name in ("a", "b"):
        save_dataset(gen_dataset(3, 2, 2, dims=(3, 2, 2), domain_gap=1.5, seed=9), tmp_path / name)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    print("✅ test_same_seed_same_dataset_files passed")


def test_dataset_round_trip(tmp_path):
    ds = gen_dataset(3, 2, 2, dims=(3, 2, 2), domain_gap=1.5, seed=4)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert [s.identity for s in back.probe] == [s.identity for s in ds.probe]
    for a, b in zip(ds.train, back.train):
        np.testing.assert_array_equal(a.features, b.features)
        assert a.domain == b.domain
    assert back.meta["seed"] == 4
    print("✅ test_dataset_round_trip passed")


def test_domain_gap_shifts_nir_statistics():
    ds = gen_dataset(10, 1, 4, dims=(6, 2, 2), domain_gap=3.0, seed=1)
    vis = np.stack([s.features for s in ds.train if s.domain == VIS])
    nir = np.stack([s.features for s in ds.train if s.domain == NIR])
    assert abs(vis.mean() - nir.mean()) > 0.1 or abs(vis.std() - nir.std()) > 0.1
    print("✅ test_domain_gap_shifts_nir_statistics passed")


def test_rng_streams_make_samples_independent_of_split_sizes():
    """Test identity 0's training samples do not depend on the test-id count"""
    a = gen_dataset(2, 1, 2, dims=(3, 2, 2), domain_gap=1.0, seed=5)
    b = gen_dataset(2, 4, 2, dims=(3, 2, 2), domain_gap=1.0, seed=5)
    np.testing.assert_array_equal(a.train[0].features, b.train[0].features)
    print("✅ test_rng_streams_make_samples_independent_of_split_sizes passed")


def test_noise_free_domains_are_per_channel_affine(rng):
    """Test each NIR channel is a perfectly correlated affine copy of the VIS channel"""
    spec = gen_identity(rng, nodes=9, channels=4, structure_sharpness=3.0)
    vis, nir = make_domains(rng.derive(1), 4, domain_gap=2.5, noise_sigma=0.0)
    a = gen_sample(spec, vis, rng.derive(2), 3, 3).features.reshape(4, -1)
    b = gen_sample(spec, nir, rng.derive(3), 3, 3).features.reshape(4, -1)
    for c in range(4):
        assert np.corrcoef(a[c], b[c])[0, 1] == pytest.approx(1.0, abs=1e-9)
    print("✅ test_noise_free_domains_are_per_channel_affine passed")


def test_same_identity_samples_differ_only_by_noise():
    """Test repeated draws stay within 3·σ·sqrt(N·C) of each other"""
    rng = Rng(40)
    spec = gen_identity(rng, nodes=4, channels=3, structure_sharpness=3.0)
    vis, _ = make_domains(rng.derive(1), 3, domain_gap=1.0, noise_sigma=0.2)
    bound = 3 * 0.2 * np.sqrt(4 * 3)
    for k in range(1000):
        a = gen_sample(spec, vis, rng.derive(100 + 2 * k), 2, 2).features
        b = gen_sample(spec, vis, rng.derive(101 + 2 * k), 2, 2).features
        assert np.linalg.norm(a - b) <= bound
    print("✅ test_same_identity_samples_differ_only_by_noise passed")


def test_per_id_count_must_fit_the_stream_layout():
    with pytest.raises(DataError, match="per_id_per_domain"):
        gen_dataset(1, 1, MAX_PER_ID, dims=(2, 1, 1), domain_gap=1.0, seed=0)
    print("✅ test_per_id_count_must_fit_the_stream_layout passed")


def test_large_gap_biases_dominate_nir_maps():
    """Test NIR maps at a large gap point close to one shared direction"""
    ds = gen_dataset(6, 1, 2, dims=(16, 4, 4), domain_gap=6.0, seed=2)
    nir = np.stack([s.features.reshape(-1) for s in ds.train if s.domain == NIR])
    vis = np.stack([s.features.reshape(-1) for s in ds.train if s.domain == VIS])

    def mean_offdiag_cos(x):
        u = x / np.linalg.norm(x, axis=1, keepdims=True)
        cos = u @ u.T
        return cos[~np.eye(len(x), dtype=bool)].mean()

    assert mean_offdiag_cos(nir) > mean_offdiag_cos(vis) + 0.3
    print("✅ test_large_gap_biases_dominate_nir_maps passed")


@pytest.mark.slow
def test_large_domain_gap_breaks_raw_cross_domain_matching():
    """Test raw features match within VIS but fail across domains when the gap is large"""
    same, cross = [], []
    for seed in range(5):
        ds = gen_dataset(40, 1, 5, dims=(16, 4, 4), domain_gap=6.0, seed=seed)
        report = domain_gap_report(ds.train)
        same.append(report["same_domain_rank1"])
        cross.append(report["cross_domain_rank1"])
    assert np.mean(same) > 0.95
    assert np.mean(cross) < 0.6
    print("✅ test_large_domain_gap_breaks_raw_cross_domain_matching passed")
