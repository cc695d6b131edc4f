"""
Pipeline weights: in-memory store, binary container and seeded initialization.

Container layout (little-endian):
    magic      6 bytes  b"CCSEG1"
    version    u16
    entries    u32
    per entry: name length u32, utf-8 name, rank u32, rank x u32 extents,
               float32 payload of prod(extents) values
"""

import struct
from pathlib import Path
from typing import Dict, Iterable, Iterator, Optional, Tuple

import numpy as np

from ccseg.core.errors import WeightsLoadError
from ccseg.nn.ccam_attention import CCWeights
from ccseg.pipeline.variant import VariantSpec
from ccseg.utils.logger import pipeline_logger as logger

MAGIC = b"CCSEG1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<6sHI")
_U32 = struct.Struct("<I")


class WeightStore:
    """Read-only name -> float64 tensor mapping."""

    def __init__(self, tensors: Dict[str, np.ndarray]):
        self._tensors: Dict[str, np.ndarray] = {}
        for name, arr in tensors.items():
            frozen = np.array(arr, dtype=np.float64, copy=True)
            frozen.setflags(write=False)
            self._tensors[name] = frozen

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.require(name)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> Tuple[str, ...]:
        return tuple(self._tensors)

    def items(self) -> Iterable[Tuple[str, np.ndarray]]:
        return self._tensors.items()

    def require(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise WeightsLoadError(f"Missing tensor '{name}'", tensor_name=name) from None

    def attention(self, prefix: str, variant: VariantSpec, channels: int) -> CCWeights:
        return CCWeights.from_tensors(self._tensors, variant.attention_config(channels), prefix=prefix)

    def without_prefix(self, prefix: str) -> "WeightStore":
        return WeightStore({n: a for n, a in self._tensors.items() if not n.startswith(prefix)})

    def updated(self, tensors: Dict[str, np.ndarray]) -> "WeightStore":
        merged = dict(self._tensors)
        merged.update(tensors)
        return WeightStore(merged)


def write_weights(store: WeightStore, path: Path) -> None:
    """Serialize a store to the CCSEG1 container."""
    path = Path(path)
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(store))]
    for name, arr in store.items():
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path.write_bytes(b"".join(chunks))
    logger.info(f"Wrote {len(store)} tensors to {path}")


def read_weights(path: Path) -> WeightStore:
    """Parse a CCSEG1 container."""
    path = Path(path)
    if not path.is_file():
        raise WeightsLoadError(f"Weights file not found: {path}")
    blob = path.read_bytes()

    if len(blob) < _HEADER.size:
        raise WeightsLoadError(f"Weights file too short: {path}")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise WeightsLoadError(f"Bad magic {magic!r} in {path}")
    if version != FORMAT_VERSION:
        raise WeightsLoadError(f"Unsupported weights version {version} in {path}")

    offset = _HEADER.size
    tensors: Dict[str, np.ndarray] = {}

    def take(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(blob):
            raise WeightsLoadError(f"Truncated weights file {path} at byte {offset}")
        chunk = blob[offset:offset + size]
        offset += size
        return chunk

    for _ in range(count):
        (name_length,) = _U32.unpack(take(_U32.size))
        name = take(name_length).decode("utf-8")
        if name in tensors:
            raise WeightsLoadError(f"Duplicate tensor name '{name}' in {path}", tensor_name=name)
        (rank,) = _U32.unpack(take(_U32.size))
        extents = struct.unpack(f"<{rank}I", take(4 * rank))
        n_values = int(np.prod(extents, dtype=np.int64))
        payload = np.frombuffer(take(4 * n_values), dtype="<f4")
        tensors[name] = payload.astype(np.float64).reshape(extents)

    if offset != len(blob):
        raise WeightsLoadError(f"{len(blob) - offset} trailing bytes in {path}")
    return WeightStore(tensors)


def _conv_entry(tensors: Dict, rng: np.random.Generator, name: str, c_out: int, c_in: int, k: int):
    tensors[f"{name}.weight"] = rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / (c_in * k * k))
    tensors[f"{name}.bias"] = np.zeros(c_out)


def init_weights(
    variant: VariantSpec,
    seed: Optional[int] = None,
    attention_insertion: Optional[str] = None,
    zero_attention: bool = False,
) -> WeightStore:
    """
    Seeded He-scaled weights for a variant.

    Args:
        variant: Architecture to initialize
        seed: RNG seed, variant.weights_seed when omitted
        attention_insertion: Attention sites to include, variant.insertion when omitted
        zero_attention: Zero the value and fusion paths of every attention site

    Returns:
        WeightStore
    """
    seed = variant.weights_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}

    _conv_entry(tensors, rng, "backbone.stem1", variant.stem_channels, 3, 3)
    _conv_entry(tensors, rng, "backbone.stem2", variant.stem_channels, variant.stem_channels, 3)
    c_in = variant.stem_channels
    for stage, c_out in enumerate(variant.backbone_channels, start=1):
        _conv_entry(tensors, rng, f"backbone.stage{stage}.down", c_out, c_in, 3)
        for block in range(1, variant.blocks_per_stage + 1):
            _conv_entry(tensors, rng, f"backbone.stage{stage}.block{block}.conv1", c_out, c_out, 3)
            _conv_entry(tensors, rng, f"backbone.stage{stage}.block{block}.conv2", c_out, c_out, 3)
        c_in = c_out

    f = variant.fpn_channels
    for level, c in zip((3, 4, 5), variant.backbone_channels):
        _conv_entry(tensors, rng, f"fpn.lateral{level}", f, c, 1)
        _conv_entry(tensors, rng, f"fpn.smooth{level}", f, f, 3)
    _conv_entry(tensors, rng, "fpn.down6", f, f, 3)
    _conv_entry(tensors, rng, "fpn.down7", f, f, 3)

    p = variant.proto_channels
    _conv_entry(tensors, rng, "proto.conv1", p, f, 3)
    _conv_entry(tensors, rng, "proto.conv2", p, p, 3)
    _conv_entry(tensors, rng, "proto.conv3", p, p, 3)
    _conv_entry(tensors, rng, "proto.out", variant.prototype_count, p, 1)

    a = variant.anchors_per_position
    _conv_entry(tensors, rng, "head.conv", f, f, 3)
    _conv_entry(tensors, rng, "head.cls", a * variant.num_classes, f, 3)
    _conv_entry(tensors, rng, "head.box", a * 4, f, 3)
    _conv_entry(tensors, rng, "head.coef", a * variant.prototype_count, f, 3)
    # keep initial regressions small so decoded boxes stay near their anchors
    tensors["head.box.weight"] = tensors["head.box.weight"] * 0.1

    for prefix, channels in variant.attention_sites(attention_insertion):
        site = CCWeights.initialize(variant.attention_config(channels), rng, zero_value_fusion=zero_attention)
        tensors.update(site.to_tensors(prefix))

    return WeightStore(tensors)


def zero_attention_paths(store: WeightStore, variant: VariantSpec, insertion: str = "both") -> WeightStore:
    """Copy of store with the value and fusion tensors of every attention site set to zero."""
    updates = {}
    for prefix, _ in variant.attention_sites(insertion):
        for name in store.names():
            if not name.startswith(prefix):
                continue
            leaf = name.rsplit(".", 1)[-1]
            if leaf in ("wv", "bv", "wf", "bf"):
                updates[name] = np.zeros_like(store.require(name))
    return store.updated(updates)


def check_compatible(store: WeightStore, variant: VariantSpec) -> None:
    """Raise WeightsLoadError naming the first tensor a variant needs but the store lacks."""
    reference = init_weights(variant, seed=0)
    for name, arr in reference.items():
        if name not in store:
            raise WeightsLoadError(
                f"Weights lack tensor '{name}' required by variant {variant.display_name}",
                tensor_name=name,
            )
        if store.require(name).shape != arr.shape:
            raise WeightsLoadError(
                f"Tensor '{name}' has shape {store.require(name).shape}, expected {arr.shape}",
                tensor_name=name,
            )
