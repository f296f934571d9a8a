"""Single-shot Monte Carlo global localisation in 2-D occupancy grids, ranked by CAER."""

from .bench import (
    EnvSpec,
    PartitionDiagnostic,
    SensorModel,
    TrialRecord,
    TrialReport,
    generate_environment,
    generate_twin_rooms,
    partition_diagnostic,
    run_trials,
    timing_profile,
)
from .caer import PsiField, RankedField, bottom_k_indices, bottom_k_poses, caer, psi_field, rank_field
from .estimator import CBGL
from .grid_map import (
    MapFormatError,
    MapMetadata,
    NoFreeSpaceError,
    OccupancyGrid,
    free_area,
    is_free,
    load_map,
    load_map_files,
    sample_free_point,
    save_map_files,
)
from .pipeline import CbglConfig, CbglResult, cbgl, disperse_hypotheses
from .pose import Pose, wrap_angle
from .scan_geometry import (
    NotInFreeSpaceError,
    RangeScan,
    ScanError,
    load_scan,
    save_scan,
    scan_map,
    simulate_measurement,
)
from .sm2 import IcpConfig, scan_match, sm2

__version__ = "0.1.0"

__all__ = [
    "CBGL", "CbglConfig", "CbglResult", "EnvSpec", "IcpConfig", "MapFormatError", "MapMetadata",
    "NoFreeSpaceError", "NotInFreeSpaceError", "OccupancyGrid", "PartitionDiagnostic", "Pose",
    "PsiField", "RangeScan", "RankedField", "ScanError", "SensorModel", "TrialRecord", "TrialReport",
    "bottom_k_indices", "bottom_k_poses", "caer", "cbgl", "disperse_hypotheses", "free_area",
    "generate_environment", "generate_twin_rooms", "is_free", "load_map", "load_map_files",
    "load_scan", "partition_diagnostic", "psi_field", "rank_field", "run_trials",
    "sample_free_point", "save_map_files", "save_scan", "scan_map", "scan_match",
    "simulate_measurement", "sm2", "timing_profile", "wrap_angle",
]
