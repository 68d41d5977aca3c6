"""Structured pruning for U-Net GAN generator graphs.

Public surface: graph IR + validation, architecture builders, weight
container I/O, cost model, importance criteria and planners, pruning
rewrites, a reference inference engine, and verification/sweep/benchmark
tooling.
"""

from .analysis import (DEFAULT_TOLERANCE, BenchResult, EquivalenceReport,
                       SweepRow, bench, make_probes, masked_store,
                       sensitivity_sweep, sweep_to_csv,
                       verify_masked_equivalence)
from .builders import ArchConfig, BuildError, build, build_pix2pix, build_wav2lip, load_default_table
from .costs import (MACS_CONVENTION, CostReport, LayerCost, ReductionSummary,
                    conv_transpose_macs_input_referenced, count_macs,
                    count_params, diff_reports, format_factor, full_report,
                    render_csv, render_summary, render_text)
from .criteria import (CRITERIA, PRESETS, ImportanceScore, PlanError,
                       PruningPlan, RemoveFilters, RemoveLayerPair,
                       plan_from_json, plan_global, plan_inner,
                       plan_layer_pairs, plan_to_json, plan_uniform,
                       preset_plan, score, score_geometric_median, score_l2,
                       score_lamp_structured)
from .graph import (ActSpec, ConcatSpec, ConvSpec, ConvTransposeSpec, CycleError,
                    DanglingInputError, FormatError, GeneratorGraph, GraphError,
                    InputSpec, LayerNode, NormSpec, OutputSpec, ShapeMismatchError,
                    TensorShape, UnreachableError, ValidationReport, from_json,
                    output_layer_ids, to_json, topological_order, validate)
from .infer import (apply_activation, conv2d, conv_transpose2d, load_tensor3,
                    norm_forward, run, run_with_trace, save_tensor3)
from .transform import (LAYER_REMOVAL_POLICIES, ChannelMap, PruneResult,
                        apply_filter_prune, apply_plan,
                        channel_maps_to_json_dict, remove_inner_layers)
from .weights import (BadMagicError, ContainerError, DimsMismatchError,
                      HeaderError, TruncatedError, VersionError, WeightStore,
                      from_bytes, init_random, load, required_tensors, save,
                      swap_conv_kernel_axes, to_bytes, validate_weights)

__version__ = "0.1.0"
