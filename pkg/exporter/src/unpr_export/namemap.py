"""Name mapping between checkpoint parameter paths and engine tensor slots.

A :class:`NameMap` is an ordered, one-to-one correspondence between framework
parameter paths (``state_dict`` keys) and ``(node, role)`` pairs of the
engine's weight store.  Coverage is total in both directions: a checkpoint
key with no slot, or a slot with no key, is a hard error that lists the
leftovers — the exporter renames and transposes, it never guesses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from unetprune import GeneratorGraph, required_tensors


class ExportError(Exception):
    """Any condition that prevents a faithful conversion."""


# role of each checkpoint parameter suffix, per owning module kind
_CONV_ROLES = {"weight": "kernel", "bias": "bias"}
_NORM_ROLES = {"weight": "norm_scale", "bias": "norm_shift",
               "running_mean": "norm_mean", "running_var": "norm_var"}

# torch batch-norm bookkeeping counter: not a tensor the engine stores
SKIPPED_SUFFIX = ".num_batches_tracked"


@dataclass(frozen=True)
class NameMap:
    """Ordered pairs (checkpoint path -> (node, role)), one-to-one."""

    pairs: tuple[tuple[str, tuple[str, str]], ...]

    def __post_init__(self) -> None:
        seen_paths: set[str] = set()
        seen_slots: set[tuple[str, str]] = set()
        for path, slot in self.pairs:
            if path in seen_paths:
                raise ExportError(f"NameMap maps '{path}' twice")
            if slot in seen_slots:
                raise ExportError(f"NameMap maps {slot} from two paths")
            seen_paths.add(path)
            seen_slots.add(slot)

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def to_slot(self) -> dict[str, tuple[str, str]]:
        return dict(self.pairs)

    def to_path(self) -> dict[tuple[str, str], str]:
        return {slot: path for path, slot in self.pairs}


def _role_to_suffix(role: str, node: str) -> str:
    for suffix, r in _CONV_ROLES.items():
        if r == role:
            return suffix
    for suffix, r in _NORM_ROLES.items():
        if r == role:
            return suffix
    raise ExportError(f"no checkpoint suffix for role '{role}' of '{node}'")


def _pix2pix_module_paths() -> dict[str, str]:
    """Module path of every pix2pix conv/norm node in the published
    recursively-nested U-Net implementation.

    Block nesting, innermost-out; within a block's sequential:
    outermost  = [downconv, submodule, uprelu, upconv, tanh]
    middle     = [downrelu, downconv, downnorm, submodule, uprelu, upconv, upnorm]
    innermost  = [downrelu, downconv, uprelu, upconv, upnorm]
    """
    paths = {"C1": "model.model.0", "U1": "model.model.3"}
    prefix = "model.model.1.model"
    for k in range(2, 8):
        paths[f"C{k}"] = f"{prefix}.1"
        paths[f"C{k}.norm"] = f"{prefix}.2"
        paths[f"U{k}"] = f"{prefix}.5"
        paths[f"U{k}.norm"] = f"{prefix}.6"
        prefix = f"{prefix}.3.model"
    paths["C8"] = f"{prefix}.1"
    paths["U8"] = f"{prefix}.3"
    paths["U8.norm"] = f"{prefix}.4"
    return paths


def pix2pix_name_map(graph: GeneratorGraph) -> NameMap:
    """Derive the full map from what the graph requires: every engine tensor
    slot gets the checkpoint path the published implementation would use."""
    module_paths = _pix2pix_module_paths()
    pairs = []
    for node, role, _dims in required_tensors(graph):
        if node not in module_paths:
            raise ExportError(f"no module path for graph node '{node}'")
        suffix = _role_to_suffix(role, node)
        pairs.append((f"{module_paths[node]}.{suffix}", (node, role)))
    return NameMap(tuple(pairs))


def wav2lip_name_map(graph: GeneratorGraph) -> NameMap:
    """Load the wav2lip map from package data (the checkpoint naming of this
    generator variant is reconstructed, so it ships as an editable data file),
    then order and filter it by what the graph actually requires."""
    text = (resources.files("unpr_export") / "data" /
            "wav2lip_namemap.json").read_text(encoding="utf-8")
    entries = json.loads(text)
    by_slot: dict[tuple[str, str], str] = {}
    for entry in entries:
        if not (isinstance(entry, list) and len(entry) == 3
                and all(isinstance(v, str) for v in entry)):
            raise ExportError(f"bad wav2lip name-map entry: {entry!r}")
        path, node, role = entry
        if (node, role) in by_slot:
            raise ExportError(f"wav2lip name map lists ('{node}', '{role}') twice")
        by_slot[(node, role)] = path
    pairs = []
    for node, role, _dims in required_tensors(graph):
        path = by_slot.get((node, role))
        if path is None:
            raise ExportError(
                f"wav2lip name map has no entry for ('{node}', '{role}')")
        pairs.append((path, (node, role)))
    return NameMap(tuple(pairs))


def name_map_for(graph: GeneratorGraph) -> NameMap:
    if graph.arch == "pix2pix":
        return pix2pix_name_map(graph)
    if graph.arch == "wav2lip":
        return wav2lip_name_map(graph)
    raise ExportError(f"no checkpoint name map for arch '{graph.arch}'")


def check_coverage(name_map: NameMap, ckpt_keys) -> None:
    """Both-direction totality: every checkpoint parameter must land in a
    slot, every slot must be fed.  Missing running statistics get a targeted
    message because they have a specific cause (norm layers exported without
    inference-mode statistics)."""
    keys = {k for k in ckpt_keys if not k.endswith(SKIPPED_SUFFIX)}
    mapped = {path for path, _ in name_map}

    missing = [(path, slot) for path, slot in name_map if path not in keys]
    missing_stats = [p for p, (_, role) in missing
                     if role in ("norm_mean", "norm_var")]
    if missing_stats and len(missing_stats) == len(missing):
        shown = ", ".join(missing_stats[:4])
        raise ExportError(
            f"checkpoint lacks running statistics ({shown}"
            f"{', ...' if len(missing_stats) > 4 else ''}): norm layers must "
            "be exported in inference mode (track running stats and save "
            "after eval()), otherwise the engine cannot evaluate them")
    if missing:
        shown = ", ".join(p for p, _ in missing[:8])
        raise ExportError(
            f"checkpoint is missing {len(missing)} mapped parameter(s): "
            f"{shown}{', ...' if len(missing) > 8 else ''}")

    extra = sorted(keys - mapped)
    if extra:
        shown = ", ".join(extra[:8])
        raise ExportError(
            f"checkpoint has {len(extra)} parameter(s) with no engine slot: "
            f"{shown}{', ...' if len(extra) > 8 else ''}")
