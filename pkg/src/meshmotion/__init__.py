"""Learned mesh motion with hard Dirichlet boundary constraints.

A deep operator network is trained to reproduce biharmonic mesh extension
on a channel-with-flag geometry, with a harmonic lift and a boundary mask
guaranteeing that prescribed boundary displacements are met exactly.
"""

__version__ = "0.1.0"

from .mesh import (
    BoundaryDeformation,
    GeometryConfig,
    Mesh,
    MeshError,
    NodalField,
    deform,
    flag_polyline,
    generate_channel_flag_mesh,
    load_mesh,
    mesh_hash,
    save_mesh,
    unit_square_mesh,
    validate_mesh,
)
from .fem import (
    BiharmonicOperator,
    HarmonicOperator,
    SolverError,
    assemble_mass,
    assemble_stiffness,
    biharmonic_extension,
    harmonic_extension,
    mask_field,
    solve_spd,
)
from .quality import (
    QualityReport,
    histogram,
    min_det_gradient,
    quality_report,
    scaled_jacobian,
)
from .neural import (
    MLP,
    AdamState,
    PlateauScheduler,
    adam_step,
    init_mlp,
    mlp_forward,
    mlp_gradient,
    parameter_count,
)
from .deeponet import (
    DeepONetModel,
    SensorLayout,
    build_sensor_layout,
    corrected_eval,
    deeponet_eval,
    encode_boundary,
    init_deeponet,
    load_model_bundle,
    save_model_bundle,
)
from .training import (
    Snapshot,
    TrainConfig,
    TrainingDiverged,
    enumerate_grid,
    grid_search,
    loss,
    select_best,
    snapshot_quality,
    split_dataset,
    train,
)
from .data import (
    Dataset,
    OscillationFamily,
    StressFamily,
    calibrate_stress_scale,
    gen_oscillation_snapshots,
    gen_stress_snapshots,
    load_dataset,
    save_dataset,
)
