"""Reference inference engine.

Small, deterministic, NumPy-only forward evaluation of a generator graph.
Tensors are (channels, height, width).  All arithmetic is carried out in
float64 (inputs and weights are promoted, node outputs are returned as
float32), which keeps results reproducible within a process and makes the
engine a trustworthy oracle for equivalence checks.

Convolution uses im2col + one matrix product per layer; transposed
convolution multiplies first and scatter-accumulates each of the k*k kernel
taps onto a strided output canvas, which costs k^2 * in_h * in_w MACs instead
of materializing a zero-stuffed input.
"""

from __future__ import annotations

import numpy as np

from .graph import (ActSpec, ConcatSpec, ConvSpec, ConvTransposeSpec,
                    GeneratorGraph, InputSpec, LEAKY_SLOPE, NORM_EPS, NormSpec,
                    OutputSpec, TensorShape, topological_order, validate)
from .weights import WeightStore


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None,
           stride: int, padding: int) -> np.ndarray:
    """x: (cin,h,w); kernel: (cout,cin,k,k) -> (cout,oh,ow) in float64."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    cout, cin, k, _ = kernel.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]          # (cin, oh, ow, k, k)
    oh, ow = windows.shape[1], windows.shape[2]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(cin * k * k, oh * ow)
    out = kernel.reshape(cout, cin * k * k) @ cols
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None]
    return out.reshape(cout, oh, ow)


def conv_transpose2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None,
                     stride: int, padding: int) -> np.ndarray:
    """x: (cin,h,w); kernel: (cin,cout,k,k) -> (cout,oh,ow) in float64."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    cin, cout, k, _ = kernel.shape
    h, w = x.shape[1], x.shape[2]
    taps = (kernel.reshape(cin, cout * k * k).T @ x.reshape(cin, h * w))
    taps = taps.reshape(cout, k, k, h, w)
    full_h, full_w = (h - 1) * stride + k, (w - 1) * stride + k
    canvas = np.zeros((cout, full_h, full_w))
    for ki in range(k):
        for kj in range(k):
            canvas[:, ki:ki + (h - 1) * stride + 1:stride,
                   kj:kj + (w - 1) * stride + 1:stride] += taps[:, ki, kj]
    out = canvas[:, padding:full_h - padding, padding:full_w - padding]
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[:, None, None]
    return out


def norm_forward(x: np.ndarray, kind: str, scale: np.ndarray, shift: np.ndarray,
                 mean: np.ndarray | None = None,
                 var: np.ndarray | None = None) -> np.ndarray:
    """Per-channel normalization in float64.

    ``batch`` uses the stored running statistics (inference behavior);
    ``instance`` recomputes mean/variance over each channel's spatial extent.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "batch":
        m = np.asarray(mean, dtype=np.float64)
        v = np.asarray(var, dtype=np.float64)
    elif kind == "instance":
        m = x.mean(axis=(1, 2))
        v = x.var(axis=(1, 2))
    else:
        raise ValueError(f"cannot evaluate norm kind '{kind}'")
    inv = 1.0 / np.sqrt(v + NORM_EPS)
    s = np.asarray(scale, dtype=np.float64)
    b = np.asarray(shift, dtype=np.float64)
    return (x - m[:, None, None]) * (inv * s)[:, None, None] + b[:, None, None]


def apply_activation(x: np.ndarray, kind: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x >= 0.0, x, LEAKY_SLOPE * x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        # branch on sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    raise ValueError(f"cannot evaluate activation '{kind}'")


def _node_forward(node, store: WeightStore, ins: list[np.ndarray]) -> np.ndarray:
    kind = node.kind
    if isinstance(kind, ConvSpec):
        bias = store.get(node.id, "bias") if kind.has_bias else None
        return conv2d(ins[0], store.get(node.id, "kernel"), bias,
                      kind.stride, kind.padding)
    if isinstance(kind, ConvTransposeSpec):
        bias = store.get(node.id, "bias") if kind.has_bias else None
        return conv_transpose2d(ins[0], store.get(node.id, "kernel"), bias,
                                kind.stride, kind.padding)
    if isinstance(kind, NormSpec):
        if kind.norm_kind == "batch":
            return norm_forward(ins[0], "batch",
                                store.get(node.id, "norm_scale"),
                                store.get(node.id, "norm_shift"),
                                store.get(node.id, "norm_mean"),
                                store.get(node.id, "norm_var"))
        if kind.norm_kind == "instance":
            return norm_forward(ins[0], "instance",
                                store.get(node.id, "norm_scale"),
                                store.get(node.id, "norm_shift"))
        return ins[0]
    if isinstance(kind, ActSpec):
        return apply_activation(ins[0], kind.act_kind)
    if isinstance(kind, ConcatSpec):
        return np.concatenate(ins, axis=0)
    if isinstance(kind, OutputSpec):
        return ins[0]
    raise TypeError(f"cannot evaluate node kind {type(kind).__name__}")


def _check_inputs(graph: GeneratorGraph,
                  inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    if set(inputs) != set(graph.input_ids):
        raise ValueError(f"inputs must be exactly {sorted(graph.input_ids)}, "
                         f"got {sorted(inputs)}")
    cast: dict[str, np.ndarray] = {}
    for iid in graph.input_ids:
        shape: TensorShape = graph.nodes[iid].kind.shape
        arr = np.asarray(inputs[iid], dtype=np.float64)
        if arr.shape != shape.as_tuple():
            raise ValueError(f"input '{iid}' must have shape {shape.as_tuple()}, "
                             f"got {arr.shape}")
        cast[iid] = arr
    return cast


def run(graph: GeneratorGraph, store: WeightStore,
        inputs: dict[str, np.ndarray]) -> np.ndarray:
    """Forward-evaluate; returns the output tensor as float32."""
    return run_with_trace(graph, store, inputs)[0]


def run_with_trace(graph: GeneratorGraph, store: WeightStore,
                   inputs: dict[str, np.ndarray]
                   ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Forward-evaluate capturing every node's output (as float32)."""
    validate(graph)
    values = _check_inputs(graph, inputs)
    for nid in topological_order(graph):
        node = graph.nodes[nid]
        if isinstance(node.kind, InputSpec):
            continue
        values[nid] = _node_forward(node, store,
                                    [values[src] for src in node.inputs])
    trace = {nid: np.asarray(v, dtype=np.float32) for nid, v in values.items()}
    return trace[graph.output_id], trace


# --------------------------------------------------------------------------
# flat tensor files (for feeding the CLI)
# --------------------------------------------------------------------------


def save_tensor3(path, array: np.ndarray) -> None:
    """One ASCII line ``c h w\\n`` followed by raw little-endian float32."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError(f"expected a (c,h,w) tensor, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(f"{arr.shape[0]} {arr.shape[1]} {arr.shape[2]}\n".encode("ascii"))
        fh.write(arr.tobytes())


def load_tensor3(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            c, h, w = (int(t) for t in header.split())
        except ValueError:
            raise ValueError(f"bad tensor header {header!r}; expected 'c h w'") from None
        raw = fh.read()
    expect = c * h * w * 4
    if len(raw) != expect:
        raise ValueError(f"tensor payload is {len(raw)} bytes, expected {expect}")
    return np.frombuffer(raw, dtype="<f4").reshape(c, h, w).copy()
