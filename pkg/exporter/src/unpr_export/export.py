"""Checkpoint -> UNPR container conversion and round-trip verification.

The exporter performs exactly two kinds of work: renaming (via the
:class:`~unpr_export.namemap.NameMap`) and layout conversion into the
engine's canonical tensor conventions.  Torch already stores conv kernels as
``[out, in, k, k]`` and transposed-conv kernels as ``[in, out, k, k]``, so the
axis layouts pass through unchanged; the one substantive conversion is
concat order.  The engine orders every channel concatenation (trunk, skip),
while the published image-translation U-Net concatenates (skip, trunk)
inside its recursive blocks — so the input-channel slices of every decoder
kernel that reads a concat are reordered accordingly.  Any structural
discrepancy beyond that is an error, never a repair.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from unetprune import (
    ArchConfig,
    GeneratorGraph,
    WeightStore,
    build,
    count_params,
    load,
    required_tensors,
    save,
    validate,
    validate_weights,
)

from .namemap import ExportError, NameMap, check_coverage, name_map_for

# checkpoint roles that are learnable parameters (running stats are state,
# not parameters, and are counted separately on both sides)
_LEARNABLE_ROLES = ("kernel", "bias", "norm_scale", "norm_shift")


class CheckpointReadError(ExportError):
    """The checkpoint file could not be read or unpickled at all."""


# --------------------------------------------------------------------------
# checkpoint loading
# --------------------------------------------------------------------------

def load_state_dict(source) -> dict:
    """Accept a path to a torch checkpoint, or an in-memory mapping.

    Unwraps the common ``{"state_dict": ...}`` envelope and strips the
    ``module.`` prefix that data-parallel training leaves on every key.
    """
    if isinstance(source, (str, Path)):
        import torch
        try:
            obj = torch.load(source, map_location="cpu", weights_only=True)
        except OSError:
            raise
        except Exception as exc:
            raise CheckpointReadError(
                f"could not read checkpoint '{source}': {exc}") from exc
    else:
        obj = source
    if not isinstance(obj, dict):
        raise ExportError(f"checkpoint did not contain a mapping "
                          f"(got {type(obj).__name__})")
    if "state_dict" in obj and isinstance(obj["state_dict"], dict):
        obj = obj["state_dict"]
    return {(k[7:] if k.startswith("module.") else k): v
            for k, v in obj.items()}


def _as_float32(path: str, value) -> np.ndarray:
    try:
        arr = np.asarray(
            value.detach().cpu().numpy() if hasattr(value, "detach")
            else value)
    except Exception as exc:
        raise ExportError(f"parameter '{path}' is not a tensor: {exc}") from exc
    if not np.issubdtype(arr.dtype, np.floating):
        raise ExportError(f"parameter '{path}' has non-float dtype {arr.dtype}")
    return np.ascontiguousarray(arr, dtype=np.float32)


# --------------------------------------------------------------------------
# layout conversion
# --------------------------------------------------------------------------

def _concat_swaps(graph: GeneratorGraph) -> dict[str, int]:
    """Nodes whose kernel input slices must be reordered, mapped to the
    checkpoint-side width of the slice that comes first there (the skip).

    Only the image-translation U-Net needs this: its published blocks emit
    (skip, trunk) where the engine graph orders (trunk, skip).
    """
    if graph.arch != "pix2pix":
        return {}
    shapes = validate(graph).shapes
    swaps: dict[str, int] = {}
    for nid in graph.conv_node_ids():
        feeder = graph.nodes[graph.nodes[nid].inputs[0]]
        while feeder.kind_name == "act":
            feeder = graph.nodes[feeder.inputs[0]]
        if feeder.kind_name == "concat":
            trunk, skip = feeder.inputs
            assert shapes[trunk].channels + shapes[skip].channels == \
                graph.nodes[nid].kind.in_channels
            swaps[nid] = shapes[skip].channels
        # else: reads a plain tensor; nothing to reorder
    return swaps


def to_canonical(graph: GeneratorGraph, node: str, role: str,
                 array: np.ndarray,
                 swaps: dict[str, int] | None = None) -> np.ndarray:
    """Convert one checkpoint tensor into the engine's canonical layout."""
    if role != "kernel":
        return array
    if swaps is None:
        swaps = _concat_swaps(graph)
    skip_width = swaps.get(node)
    if skip_width is None:
        return array
    # checkpoint input order (skip, trunk) -> engine order (trunk, skip);
    # both kernel layouts carry input channels on axis 0 here (transposed
    # conv natively; these plain-conv cases do not occur in practice)
    axis = 0 if graph.nodes[node].kind_name == "conv_transpose" else 1
    skip_part = np.take(array, range(skip_width), axis=axis)
    trunk_part = np.take(array, range(skip_width, array.shape[axis]),
                         axis=axis)
    return np.ascontiguousarray(
        np.concatenate([trunk_part, skip_part], axis=axis))


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def build_store(state_dict: dict, graph: GeneratorGraph,
                name_map: NameMap | None = None) -> WeightStore:
    """Rename, convert, and shape-check a checkpoint into a weight store."""
    nm = name_map or name_map_for(graph)
    check_coverage(nm, state_dict.keys())
    expected = {(node, role): dims for node, role, dims
                in required_tensors(graph)}
    swaps = _concat_swaps(graph)

    tensors: dict[tuple[str, str], np.ndarray] = {}
    mismatches = []
    for path, (node, role) in nm:
        arr = _as_float32(path, state_dict[path])
        want = expected[(node, role)]
        if arr.shape != want:
            mismatches.append(f"{node}.{role} ('{path}'): checkpoint "
                              f"{tuple(arr.shape)} vs graph {tuple(want)}")
            continue
        tensors[(node, role)] = to_canonical(graph, node, role, arr, swaps)
    if mismatches:
        shown = "; ".join(mismatches[:6])
        raise ExportError(
            f"{len(mismatches)} parameter shape mismatch(es) — the arch "
            f"config does not describe this checkpoint: {shown}"
            f"{'; ...' if len(mismatches) > 6 else ''}")

    store = WeightStore(tensors)
    validate_weights(graph, store)

    ckpt_learnable = sum(
        tensors[(node, role)].size for (node, role) in tensors
        if role in _LEARNABLE_ROLES)
    if ckpt_learnable != count_params(graph):
        raise ExportError(
            f"learnable parameter count mismatch: checkpoint {ckpt_learnable:,}"
            f" vs graph {count_params(graph):,}")
    return store


def export(ckpt, cfg: ArchConfig, out_path) -> Path:
    """Convert a checkpoint into a UNPR container at ``out_path``."""
    graph = build(cfg)
    store = build_store(load_state_dict(ckpt), graph)
    out_path = Path(out_path)
    save(out_path, graph, store)
    return out_path


# --------------------------------------------------------------------------
# round-trip verification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RoundtripReport:
    checked: int
    mismatches: tuple[tuple[str, str, str], ...]  # (node, role, ckpt path)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def summary(self) -> str:
        if self.passed:
            return (f"PASS: all {self.checked} tensors match their "
                    "checkpoint counterparts")
        lines = [f"FAIL: {len(self.mismatches)} of {self.checked} tensors "
                 "differ from the checkpoint:"]
        lines += [f"  {node}.{role}  <-  {path}"
                  for node, role, path in self.mismatches]
        return "\n".join(lines)


def _digest(arr: np.ndarray) -> bytes:
    return hashlib.sha256(
        np.ascontiguousarray(arr, dtype=np.float32).tobytes()).digest()


def roundtrip_check(ckpt, container_path) -> RoundtripReport:
    """Per-tensor checksum comparison: container vs freshly converted
    checkpoint.  Catches any corruption or extra/missing layout conversion
    that shape validation cannot see."""
    graph, store = load(container_path)
    state_dict = load_state_dict(ckpt)
    nm = name_map_for(graph)
    check_coverage(nm, state_dict.keys())
    swaps = _concat_swaps(graph)

    mismatches = []
    for path, (node, role) in nm:
        converted = to_canonical(graph, node, role,
                                 _as_float32(path, state_dict[path]), swaps)
        stored = store.get(node, role)
        if (converted.shape != stored.shape
                or _digest(converted) != _digest(stored)):
            mismatches.append((node, role, path))
    return RoundtripReport(checked=len(nm), mismatches=tuple(mismatches))
