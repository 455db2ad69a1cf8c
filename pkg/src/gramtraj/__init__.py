"""Shape trajectories on the manifold of rank-2 positive semidefinite matrices."""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    PsdPoint,
    canonical_align,
    center_landmarks,
    closeness,
    covariance,
    flat_distance,
    gram,
    grassmann_distance,
    grassmann_geodesic,
    point_from_landmarks,
    polar_decompose,
    pseudo_geodesic,
    regularized_spd_distance,
    spd_distance,
    spd_geodesic,
    squared_distance_matrix,
)
from .trajectory import (  # noqa: E402
    AlignmentPath,
    Trajectory,
    build_trajectory,
    dtw_align,
    dtw_distance,
    frame_distance_profile,
    resample,
)
from .classify import (  # noqa: E402
    PpfSvmModel,
    cross_validate,
    embed,
    knn_predict,
    predict,
    proximity,
    proximity_matrix,
    train_ppfsvm,
)
from .data import SequenceRecord, SynthSpec, confusion_and_metrics, load_sequences, synth_generate  # noqa: E402
