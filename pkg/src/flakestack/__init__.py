"""Layered volumetric-microflake BSDF library.

Materials are stacks of SGGX microflake (or Henyey-Greenstein) layers over an
optional lambertian substrate. The package provides exact analytic single
scattering through the stack, matching importance sampling, a two-extra-lobe
closure for multiple scattering (direct-fit or network-predicted), a Monte
Carlo random-walk reference, table/weight file formats, and a validation CLI.
"""

from .errors import (
    FileFormatError,
    MaterialParseError,
    NumericalError,
    ParameterError,
    StreamExhausted,
)
from .geometry import (
    cosine_sample_hemisphere,
    flip_z,
    from_frame,
    normalize,
    orthonormal_basis,
    sphere_quadrature,
    spherical_direction,
    spectrum,
    unit_vector,
)
from .microflake import (
    SggxMatrix,
    flake_phase_eval,
    hg_phase_eval,
    lambda_fn,
    projected_area,
    schlick,
    sggx_from_matrix,
    sggx_matrix,
    sggx_ndf,
)
from .layers import (
    HG,
    LayerSpec,
    LayerStack,
    SubstrateSpec,
    layer_phase,
    layer_sigma,
    mirror_stack,
    parse_material,
    reduced_phase_eval,
    serialize_material,
)
from .single_scatter import (
    attenuation,
    delta_transmittance,
    eval_layer_reflect,
    eval_layer_transmit,
    eval_stack_single,
    eval_stack_single_grid,
    eval_stack_single_many,
)
from .sampling import (
    EVENT_DELTA,
    EVENT_SUBSTRATE,
    SampleRecord,
    SequenceSource,
    UniformSource,
    layer_probabilities,
    pdf_stack,
    pdf_stack_many,
    sample_flake_normal,
    sample_flake_phase,
    sample_hg_phase,
    sample_stack,
    sample_stack_many,
)
from .oracle import (
    WALK_MODES,
    WalkOutcome,
    estimate_single_pair,
    furnace_albedo,
    random_walk,
    tabulate,
)
from .tables import (
    MODES,
    BsdfTable,
    bin_centers_upper,
    bin_solid_angle,
    grazing_wo_mask,
    read_table,
    wo_bin_centers,
    wo_bin_index,
    write_table,
)
from .multiscatter import (
    ACT_RELU,
    RANGE_SIGMOID,
    RANGE_SOFTPLUS,
    MlpWeights,
    ThreeLobeParams,
    apply_range_maps,
    default_range_tags,
    eval_full,
    eval_full_many,
    fit_direct,
    mapped_outputs,
    mapped_raw,
    mlp_infer,
    read_weights,
    stack_features,
    write_weights,
)
from .diagnostics import (
    ChiSquareResult,
    StackSampleCheck,
    bin_masses,
    check_stack_sampling,
    chi_square_directions,
    sphere_bin_index,
)
from .datasets import generate_dataset, random_stack
from .images import read_pfm, tonemap, write_pfm, write_png_preview
from .render import STRATEGIES, render

__all__ = [
    "ACT_RELU",
    "BsdfTable",
    "ChiSquareResult",
    "EVENT_DELTA",
    "EVENT_SUBSTRATE",
    "FileFormatError",
    "HG",
    "MODES",
    "RANGE_SIGMOID",
    "RANGE_SOFTPLUS",
    "STRATEGIES",
    "StackSampleCheck",
    "WALK_MODES",
    "LayerSpec",
    "LayerStack",
    "MaterialParseError",
    "MlpWeights",
    "NumericalError",
    "ParameterError",
    "SampleRecord",
    "SequenceSource",
    "SggxMatrix",
    "StreamExhausted",
    "SubstrateSpec",
    "ThreeLobeParams",
    "UniformSource",
    "WalkOutcome",
    "apply_range_maps",
    "attenuation",
    "bin_centers_upper",
    "bin_masses",
    "bin_solid_angle",
    "check_stack_sampling",
    "chi_square_directions",
    "cosine_sample_hemisphere",
    "default_range_tags",
    "delta_transmittance",
    "estimate_single_pair",
    "eval_full",
    "eval_full_many",
    "eval_layer_reflect",
    "eval_layer_transmit",
    "eval_stack_single",
    "eval_stack_single_grid",
    "eval_stack_single_many",
    "fit_direct",
    "flake_phase_eval",
    "flip_z",
    "from_frame",
    "furnace_albedo",
    "generate_dataset",
    "grazing_wo_mask",
    "hg_phase_eval",
    "lambda_fn",
    "layer_phase",
    "layer_probabilities",
    "layer_sigma",
    "mapped_outputs",
    "mapped_raw",
    "mirror_stack",
    "mlp_infer",
    "normalize",
    "orthonormal_basis",
    "parse_material",
    "pdf_stack",
    "pdf_stack_many",
    "projected_area",
    "random_stack",
    "random_walk",
    "read_pfm",
    "read_table",
    "read_weights",
    "reduced_phase_eval",
    "render",
    "sample_flake_normal",
    "sample_flake_phase",
    "sample_hg_phase",
    "sample_stack",
    "sample_stack_many",
    "schlick",
    "serialize_material",
    "sggx_from_matrix",
    "sggx_matrix",
    "sggx_ndf",
    "spectrum",
    "sphere_bin_index",
    "sphere_quadrature",
    "spherical_direction",
    "stack_features",
    "tabulate",
    "tonemap",
    "unit_vector",
    "wo_bin_centers",
    "wo_bin_index",
    "write_pfm",
    "write_png_preview",
    "write_table",
    "write_weights",
]
