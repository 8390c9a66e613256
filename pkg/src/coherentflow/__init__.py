"""coherentflow: thermal-diffusion motion analysis for crowd scenes.

Turns dense motion fields into thermal energy fields, segments coherent
motions, builds semantic regions, recognizes pre-defined activities, and
mines recurrent activities with flow-curve summaries.  A synthetic scene
generator with analytic ground truth makes every stage testable offline.
"""
from .diffusion import DiffusionConfig, coarse_to_fine, diffuse_field, individual_energy
from .fields import (
    FlowSequence,
    GridDims,
    MotionField,
    Particle,
    ThermalEnergyField,
    advect,
    read_flo,
    write_flo,
)
from .kernels import backend as kernel_backend
from .mining import (
    ActivityGroup,
    FlowCurve,
    MiningConfig,
    cluster_frames,
    extract_flow_curve,
    merge_cluster,
)
from .recognition import LinearModel, extract_feature, predict, train
from .regions import (
    IndicativeParticleSet,
    SemanticRegionMap,
    SimilarityConfig,
    build_semantic_regions,
    cluster_coherent_motions,
    coherent_similarity,
    indicative_particles,
)
from .segmentation import (
    CoherentMotion,
    SegmentationConfig,
    link_weight,
    motion_from_mask,
    segment,
    triangulate,
)
from .spectral import ClusterResult, SimilarityMatrix, cluster
from .synth import GroundTruth, SceneSpec, cne, generate, per, rand_index

__version__ = "0.1.0"
