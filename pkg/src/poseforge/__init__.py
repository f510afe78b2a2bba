"""poseforge: mine the poses a 3D pose estimator gets wrong, synthesize
token-based motion variations around them, and filter the result into new
training data — with a synthetic estimator closing the loop for evaluation.
"""

from .config import PipelineConfig, load_config_file
from .errors import (ConfigError, DataError, DegenerateGeometryError,
                     InvalidRotationError, NumericError, PoseforgeError)
from .estimator import CorruptionModel, ExemplarPoseEstimator
from .filtering import FilterConfig, FilterReport, err3d, filter_batch
from .geometry import (CameraIntrinsics, Pose2D, Pose3D, SkeletonParams,
                       axis_angle_to_matrix, matrix_to_axis_angle,
                       pose_skeleton, project)
from .manifest import DatasetManifest, SampleRecord, load_manifest, save_manifest
from .metrics import MetricReport, mpjpe, pa_mpjpe, pckh
from .mining import JointWeights, MinedSplit, mine, sample_error
from .motion_repr import (MotionRepr, MotionSequence, ReprLayout, decode_repr,
                          default_layout, encode_repr, make_initial_repr,
                          toy_layout)
from .pipeline import (ExperimentReport, PlantedFixture,
                       run_closed_loop_experiment, run_synthesis)
from .prior import (GenerationConfig, HashedBagOfWordsEmbedder,
                    MotionTokenPrior, TextEmbedding, embed_text, generate,
                    prior_logprob, synthesize_motion, train_prior)
from .skeleton import SkeletonDefinition, default_skeleton, load_skeleton_file
from .vq import (Codebook, MotionVqvae, TokenSequence, decode_tokens,
                 encode_latents, quantize, train_vqvae)
from .alignment import ReferenceContext, align_orientations, build_guidance

__version__ = "0.1.0"
