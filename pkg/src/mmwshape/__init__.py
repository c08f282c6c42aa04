"""mmWave MIMO-OFDM target shape sensing: ray-traced channel synthesis,
scatter/reflection point detection, and convex-polygon reconstruction."""

from .scene import (BaseStation, ConvexPolygon, Material, Scene, SystemConfig,
                    validate_scene, load_scene, save_scene)
from .raytrace import (MicroFacet, PathRecord, enumerate_scatter_paths,
                       find_reflection_path)
from .channel import (ChannelTensor, NO_NOISE, add_noise, apply_window,
                      synthesize)
from .estimate import (CfarConfig, EstimatorConfig, PathEstimate, cfar_1d,
                       detect_reflection, detect_scatter_points, music_1d,
                       periodogram_3d)
from .localize import (DetectedPoint, localize_dual, localize_single,
                       reflection_surface)
from .reconstruct import (FittedLine, ReconstructionParams, ShapeEstimate,
                          ht_pca_tsr, refine_with_reflection)
from .metrics import TrialResult, close_rate, direction_error, point_mse
from .cli import ExperimentConfig, build_default_scene, run_sweep, run_trial

__version__ = "0.1.0"
