"""Weight storage, random initialization, and the UNPR container format.

Canonical kernel layouts (row-major, float32):

* convolution: ``[out_channels, in_channels, k, k]``
* transposed convolution: ``[in_channels, out_channels, k, k]``

Per-node tensor roles:

* ``kernel`` and, when the layer has a bias, ``bias`` (``[out_channels]``)
* batch norm: ``norm_scale``, ``norm_shift``, ``norm_mean``, ``norm_var``
  (all ``[channels]``); instance norm: ``norm_scale``, ``norm_shift`` only.

Container layout (all integers little-endian)::

    bytes 0..4   magic  b"UNPR"
    bytes 4..8   format version, u32 (currently 1)
    bytes 8..16  header length in bytes, u64
    16..16+hlen  UTF-8 JSON header {"graph": ..., "tensors": [...]}
    data region  starts at the first 64-byte boundary at/after the header

Each tensor index entry carries ``name`` (node id), ``role``, ``dims``,
``offset`` (relative to the data-region start, 64-byte aligned) and
``length`` (bytes).  Blobs are raw little-endian float32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from . import graph as g

MAGIC = b"UNPR"
FORMAT_VERSION = 1
_ALIGN = 64

KERNEL_INIT_STD = 0.02
NORM_INIT_STD = 0.02

ROLES = ("kernel", "bias", "norm_scale", "norm_shift", "norm_mean", "norm_var")


class ContainerError(Exception):
    """Base class for container read/write failures."""


class BadMagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class HeaderError(ContainerError):
    pass


class DimsMismatchError(ContainerError):
    """Tensor inventory or shape disagrees with what the graph requires."""


# --------------------------------------------------------------------------
# store
# --------------------------------------------------------------------------


@dataclass
class WeightStore:
    """float32 tensors keyed by (node id, role)."""

    tensors: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def set(self, node_id: str, role: str, value: np.ndarray) -> None:
        if role not in ROLES:
            raise KeyError(f"unknown tensor role '{role}'")
        self.tensors[(node_id, role)] = np.ascontiguousarray(value, dtype=np.float32)

    def get(self, node_id: str, role: str) -> np.ndarray:
        return self.tensors[(node_id, role)]

    def has(self, node_id: str, role: str) -> bool:
        return (node_id, role) in self.tensors

    def items(self) -> Iterator[tuple[tuple[str, str], np.ndarray]]:
        return iter(self.tensors.items())

    def copy(self) -> "WeightStore":
        return WeightStore({k: v.copy() for k, v in self.tensors.items()})

    def __len__(self) -> int:
        return len(self.tensors)

    def allclose(self, other: "WeightStore", atol: float = 0.0) -> bool:
        if set(self.tensors) != set(other.tensors):
            return False
        return all(a.shape == other.tensors[k].shape
                   and np.allclose(a, other.tensors[k], rtol=0.0, atol=atol)
                   for k, a in self.tensors.items())


def required_tensors(graph: g.GeneratorGraph) -> list[tuple[str, str, tuple[int, ...]]]:
    """(node id, role, dims) for every tensor the graph needs, in node order."""
    out: list[tuple[str, str, tuple[int, ...]]] = []
    for nid, node in graph.nodes.items():
        kind = node.kind
        if isinstance(kind, g.ConvSpec):
            out.append((nid, "kernel", (kind.out_channels, kind.in_channels,
                                        kind.kernel_size, kind.kernel_size)))
            if kind.has_bias:
                out.append((nid, "bias", (kind.out_channels,)))
        elif isinstance(kind, g.ConvTransposeSpec):
            out.append((nid, "kernel", (kind.in_channels, kind.out_channels,
                                        kind.kernel_size, kind.kernel_size)))
            if kind.has_bias:
                out.append((nid, "bias", (kind.out_channels,)))
        elif isinstance(kind, g.NormSpec):
            if kind.norm_kind == "none":
                continue
            out.append((nid, "norm_scale", (kind.channels,)))
            out.append((nid, "norm_shift", (kind.channels,)))
            if kind.norm_kind == "batch":
                out.append((nid, "norm_mean", (kind.channels,)))
                out.append((nid, "norm_var", (kind.channels,)))
    return out


def validate_weights(graph: g.GeneratorGraph, store: WeightStore) -> None:
    """Every required tensor present with the right dims, and nothing else."""
    required = {(nid, role): dims for nid, role, dims in required_tensors(graph)}
    for key, dims in required.items():
        if key not in store.tensors:
            raise DimsMismatchError(f"missing tensor {key[0]}/{key[1]}")
        got = store.tensors[key].shape
        if tuple(got) != dims:
            raise DimsMismatchError(
                f"tensor {key[0]}/{key[1]} has dims {tuple(got)}, expected {dims}")
    extra = set(store.tensors) - set(required)
    if extra:
        name, role = sorted(extra)[0]
        raise DimsMismatchError(f"unexpected tensor {name}/{role} "
                                f"(+{len(extra) - 1} more)" if len(extra) > 1
                                else f"unexpected tensor {name}/{role}")


def init_random(graph: g.GeneratorGraph, seed: int = 0) -> WeightStore:
    """Deterministic random weights.

    Kernels and biases draw from N(0, 0.02); norm scales from N(1, 0.02) and
    shifts from N(0, 0.02); running means/vars start at 0/1.  Tensors are
    drawn in ``required_tensors`` order from one generator, so a given
    (graph, seed) always yields bit-identical weights.
    """
    rng = np.random.default_rng(seed)
    store = WeightStore()
    for nid, role, dims in required_tensors(graph):
        if role in ("kernel", "bias"):
            value = rng.normal(0.0, KERNEL_INIT_STD, size=dims)
        elif role == "norm_scale":
            value = rng.normal(1.0, NORM_INIT_STD, size=dims)
        elif role == "norm_shift":
            value = rng.normal(0.0, NORM_INIT_STD, size=dims)
        elif role == "norm_mean":
            value = np.zeros(dims)
        else:  # norm_var
            value = np.ones(dims)
        store.set(nid, role, value.astype(np.float32))
    return store


def swap_conv_kernel_axes(graph: g.GeneratorGraph, store: WeightStore) -> WeightStore:
    """Flip every plain-conv kernel between [out,in,k,k] and [in,out,k,k].

    An involution: applying it twice returns the original store.  Transposed
    convolutions already use [in,out,k,k] and are left alone.
    """
    out = store.copy()
    for nid, node in graph.nodes.items():
        if isinstance(node.kind, g.ConvSpec):
            out.tensors[(nid, "kernel")] = np.ascontiguousarray(
                out.tensors[(nid, "kernel")].swapaxes(0, 1))
    return out


# --------------------------------------------------------------------------
# container I/O
# --------------------------------------------------------------------------


def _align(n: int) -> int:
    return (n + _ALIGN - 1) // _ALIGN * _ALIGN


def to_bytes(graph: g.GeneratorGraph, store: WeightStore) -> bytes:
    """Serialize to the container format (deterministic for equal inputs)."""
    validate_weights(graph, store)
    order = required_tensors(graph)
    index = []
    offset = 0
    blobs: list[bytes] = []
    for nid, role, dims in order:
        arr = np.ascontiguousarray(store.get(nid, role), dtype="<f4")
        raw = arr.tobytes()
        index.append({"name": nid, "role": role, "dims": list(dims),
                      "offset": offset, "length": len(raw)})
        blobs.append(raw)
        offset = _align(offset + len(raw))
    header = json.dumps({"graph": g.to_json_dict(graph), "tensors": index},
                        separators=(",", ":")).encode("utf-8")
    data_start = _align(16 + len(header))
    parts = [MAGIC,
             FORMAT_VERSION.to_bytes(4, "little"),
             len(header).to_bytes(8, "little"),
             header,
             b"\x00" * (data_start - 16 - len(header))]
    pos = 0
    for entry, raw in zip(index, blobs):
        parts.append(b"\x00" * (entry["offset"] - pos))
        parts.append(raw)
        pos = entry["offset"] + len(raw)
    return b"".join(parts)


def from_bytes(data: bytes) -> tuple[g.GeneratorGraph, WeightStore]:
    """Parse and fully validate a container."""
    if len(data) < 16:
        raise TruncatedError(f"file is {len(data)} bytes; fixed header needs 16")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version = int.from_bytes(data[4:8], "little")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {version}, "
                           f"expected {FORMAT_VERSION}")
    header_len = int.from_bytes(data[8:16], "little")
    if 16 + header_len > len(data):
        raise TruncatedError("header extends past end of file")
    try:
        header = json.loads(data[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"header is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"graph", "tensors"}:
        raise HeaderError("header must be an object with exactly "
                          "'graph' and 'tensors'")
    try:
        graph = g.from_json_dict(header["graph"])
    except g.GraphError as exc:
        raise HeaderError(f"embedded graph is invalid: {exc}") from exc

    entries = header["tensors"]
    if not isinstance(entries, list):
        raise HeaderError("'tensors' must be a list")
    data_start = _align(16 + header_len)
    required = {(nid, role): dims for nid, role, dims in required_tensors(graph)}
    seen: dict[tuple[str, str], np.ndarray] = {}
    spans: list[tuple[int, int, str]] = []
    for raw in entries:
        if not isinstance(raw, dict) or set(raw) != {"name", "role", "dims",
                                                     "offset", "length"}:
            raise HeaderError("tensor index entries need exactly "
                              "name/role/dims/offset/length")
        key = (raw["name"], raw["role"])
        label = f"{key[0]}/{key[1]}"
        if key in seen:
            raise HeaderError(f"duplicate tensor {label}")
        if key not in required:
            raise DimsMismatchError(f"tensor {label} is not required by the graph")
        dims = tuple(raw["dims"])
        if dims != required[key]:
            raise DimsMismatchError(
                f"tensor {label} has dims {dims}, graph requires {required[key]}")
        offset, length = raw["offset"], raw["length"]
        if not isinstance(offset, int) or not isinstance(length, int) or offset < 0:
            raise HeaderError(f"tensor {label} has a malformed offset/length")
        if offset % _ALIGN:
            raise HeaderError(f"tensor {label} offset {offset} is not "
                              f"{_ALIGN}-byte aligned")
        expect_len = int(np.prod(dims)) * 4
        if length != expect_len:
            raise DimsMismatchError(
                f"tensor {label} length {length} != 4*prod(dims) = {expect_len}")
        lo = data_start + offset
        if lo + length > len(data):
            raise TruncatedError(f"tensor {label} extends past end of file")
        spans.append((lo, lo + length, label))
        seen[key] = np.frombuffer(data, dtype="<f4", count=length // 4,
                                  offset=lo).reshape(dims).copy()
    missing = set(required) - set(seen)
    if missing:
        name, role = sorted(missing)[0]
        raise DimsMismatchError(f"missing tensor {name}/{role}")
    spans.sort()
    for (lo1, hi1, lab1), (lo2, _, lab2) in zip(spans, spans[1:]):
        if lo2 < hi1:
            raise HeaderError(f"tensors {lab1} and {lab2} overlap")

    store = WeightStore()
    for (nid, role), arr in seen.items():
        store.set(nid, role, arr)
    return graph, store


def save(path, graph: g.GeneratorGraph, store: WeightStore) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(graph, store))


def load(path) -> tuple[g.GeneratorGraph, WeightStore]:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
