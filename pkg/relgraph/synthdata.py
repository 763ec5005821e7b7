"""
Synthetic two-domain heterogeneous features.

An identity is a set of N part vectors plus a row-stochastic N×N mixing
matrix; its relational signature is the mixing. A domain applies a
per-channel gain and bias plus Gaussian noise, so relations are shared
across domains while channel statistics are not. VIS is the identity
domain; NIR drifts from it by `domain_gap`.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .errors import DataError
from .numeric_core import Rng, Tensor, row_softmax
from .rgm import feature_map_from_nodes
from .tensor_io import load_manifest, load_tensor, save_manifest, save_tensor

logger = logging.getLogger(__name__)

VIS, NIR = "VIS", "NIR"
MANIFEST_FILE = "manifest.json"
TENSOR_DIR = "tensors"
MANIFEST_FORMAT = "relgraph-dataset/1"

# Stream layout for Rng.derive
_DOMAIN_STREAM = 1
_IDENTITY_STREAM = 1 << 20
_SAMPLE_STREAM = 1 << 40
# Sample stream = _SAMPLE_STREAM + (identity << 21) + (domain << 20) + k
_SAMPLE_BITS = 20
MAX_PER_ID = 1 << _SAMPLE_BITS

# NIR log-gain spread per unit of domain gap
GAIN_SPREAD = 0.1


@dataclass
class IdentitySpec:
    id: int
    parts: Tensor       # N × C
    structure: Tensor   # N × N, rows sum to 1


@dataclass
class DomainSpec:
    name: str
    gain: Tensor        # C, entries > 0
    bias: Tensor        # C
    noise_sigma: float

    def __post_init__(self):
        if np.any(self.gain <= 0):
            raise DataError(f"domain {self.name}: gains must be positive")


@dataclass
class Sample:
    features: Tensor    # C × H × W
    identity: int
    domain: str


@dataclass
class Dataset:
    train: List[Sample]
    gallery: List[Sample]
    probe: List[Sample]
    meta: Dict = field(default_factory=dict)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.train[0].features.shape) if self.train else tuple(self.gallery[0].features.shape)


# ── Generators ──────────────────────────────────────────────────

def gen_identity(rng: Rng, nodes: int, channels: int, structure_sharpness: float, identity: int = 0) -> IdentitySpec:
    """Standard-normal parts and a softmax-sharpened random mixing matrix"""
    parts = rng.normal((nodes, channels))
    structure = row_softmax(structure_sharpness * rng.normal((nodes, nodes)))
    return IdentitySpec(id=identity, parts=parts, structure=structure)


def make_domains(rng: Rng, channels: int, domain_gap: float, noise_sigma: float) -> Tuple[DomainSpec, DomainSpec]:
    """
    VIS is the identity transform. NIR gains are log-normal with log-spread
    GAIN_SPREAD·gap; NIR biases are normal with std gap. The bias is shared by
    every node, so a large gap pulls all NIR maps toward one direction and
    raw cosine matching across domains breaks down.
    """
    vis = DomainSpec(VIS, np.ones(channels), np.zeros(channels), noise_sigma)
    nir = DomainSpec(
        NIR,
        np.exp(GAIN_SPREAD * domain_gap * rng.normal((channels,))),
        domain_gap * rng.normal((channels,)),
        noise_sigma,
    )
    return vis, nir


def gen_sample(spec: IdentitySpec, dom: DomainSpec, rng: Rng, height: int, width: int) -> Sample:
    nodes, channels = spec.parts.shape
    if spec.structure.shape != (nodes, nodes) or dom.gain.shape != (channels,):
        raise DataError(f"identity {spec.id} and domain {dom.name} dimensions disagree")
    mixed = spec.structure @ spec.parts
    features = mixed * dom.gain + dom.bias
    if dom.noise_sigma > 0:
        features = features + dom.noise_sigma * rng.normal((nodes, channels))
    return Sample(features=feature_map_from_nodes(features, height, width), identity=spec.id, domain=dom.name)


def gen_dataset(n_train_ids: int, n_test_ids: int, per_id_per_domain: int,
                dims: Tuple[int, int, int], domain_gap: float, seed: int,
                noise_sigma: float = 0.1, structure_sharpness: float = 3.0) -> Dataset:
    """
    Build train / gallery / probe splits

    Args:
        dims: (C, H, W) of every feature map
        per_id_per_domain: training samples per identity and domain; also
            the number of NIR probes per test identity

    Returns:
        Dataset with disjoint train and test identities, one VIS gallery
        sample per test identity
    """
    if min(n_train_ids, n_test_ids, per_id_per_domain) < 1:
        raise DataError("identity and sample counts must be >= 1")
    if per_id_per_domain >= MAX_PER_ID:
        raise DataError(f"per_id_per_domain must be < {MAX_PER_ID}, got {per_id_per_domain}")
    channels, height, width = dims
    nodes = height * width
    root = Rng(seed)
    vis, nir = make_domains(root.derive(_DOMAIN_STREAM), channels, domain_gap, noise_sigma)

    def identity(i: int) -> IdentitySpec:
        return gen_identity(root.derive(_IDENTITY_STREAM + i), nodes, channels, structure_sharpness, identity=i)

    def draw(spec: IdentitySpec, dom: DomainSpec, k: int) -> Sample:
        dom_index = 0 if dom.name == VIS else 1
        stream = _SAMPLE_STREAM + (spec.id << (_SAMPLE_BITS + 1)) + (dom_index << _SAMPLE_BITS) + k
        return gen_sample(spec, dom, root.derive(stream), height, width)

    train: List[Sample] = []
    for i in range(n_train_ids):
        spec = identity(i)
        for dom in (vis, nir):
            train.extend(draw(spec, dom, k) for k in range(per_id_per_domain))

    gallery: List[Sample] = []
    probe: List[Sample] = []
    for i in range(n_train_ids, n_train_ids + n_test_ids):
        spec = identity(i)
        gallery.append(draw(spec, vis, 0))
        probe.extend(draw(spec, nir, k) for k in range(per_id_per_domain))

    meta = {
        "seed": seed, "train_ids": n_train_ids, "test_ids": n_test_ids,
        "per_id": per_id_per_domain, "dims": [channels, height, width],
        "domain_gap": domain_gap, "noise": noise_sigma, "sharpness": structure_sharpness,
    }
    logger.info(f"Generated dataset: {len(train)} train, {len(gallery)} gallery, {len(probe)} probe samples")
    return Dataset(train=train, gallery=gallery, probe=probe, meta=meta)


# ── Dataset directories ─────────────────────────────────────────

def save_dataset(dataset: Dataset, root: Path) -> Path:
    """Write {manifest.json, tensors/} under root"""
    root = Path(root)
    entries = []
    for split, samples in (("train", dataset.train), ("gallery", dataset.gallery), ("probe", dataset.probe)):
        for k, sample in enumerate(samples):
            rel = f"{TENSOR_DIR}/{split}_{k:05d}.rgt"
            save_tensor(root / rel, sample.features)
            entries.append({
                "split": split, "id": sample.identity, "domain": sample.domain,
                "path": rel, "dims": list(sample.features.shape),
            })

    manifest = {"format": MANIFEST_FORMAT, "meta": dataset.meta, "samples": entries}
    path = save_manifest(root / MANIFEST_FILE, manifest)
    logger.info(f"Saved dataset to {root} ({len(entries)} tensors)")
    return path


def load_dataset(root: Path) -> Dataset:
    root = Path(root)
    manifest = load_manifest(root / MANIFEST_FILE)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{root / MANIFEST_FILE}: unsupported format {manifest.get('format')!r}")

    splits: Dict[str, List[Sample]] = {"train": [], "gallery": [], "probe": []}
    for entry in manifest.get("samples", []):
        try:
            split, ident, domain, rel, dims = (entry[k] for k in ("split", "id", "domain", "path", "dims"))
        except KeyError as e:
            raise DataError(f"manifest entry missing field {e}: {entry}")
        if split not in splits:
            raise DataError(f"unknown split {split!r} in manifest")
        features = load_tensor(root / rel)
        if list(features.shape) != list(dims):
            raise DataError(f"{rel}: tensor dims {list(features.shape)} disagree with manifest {dims}")
        splits[split].append(Sample(features=features, identity=int(ident), domain=domain))

    dataset = Dataset(meta=manifest.get("meta", {}), **splits)
    shapes = {s.features.shape for s in dataset.train + dataset.gallery + dataset.probe}
    if len(shapes) > 1:
        raise DataError(f"inconsistent feature dims in dataset: {sorted(shapes)}")
    logger.info(f"Loaded dataset from {root}: {len(dataset.train)} train, {len(dataset.probe)} probe")
    return dataset


def stack_features(samples: List[Sample]) -> Tensor:
    return np.stack([s.features for s in samples])
