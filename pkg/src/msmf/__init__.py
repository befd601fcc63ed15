"""Multi-scale multimodal market prediction in plain numpy.

The pipeline: three numeric feature streams (time series, image-derived,
text-derived) pass through per-modality fine and coarse temporal
encoders, get aligned and sparsified by a learned top-k mask, and feed a
gated mixture of experts with one head per task (return regression,
movement classification).  Rows with absent modalities are filled by a
Gaussian-Bernoulli RBM before training.  Everything runs on a small
tape-based autodiff core; no framework dependencies.
"""

from .bench import (AblationSuite, ReportRow, ReportTable, emit_report,
                    emit_reports, make_suite, run_ablation,
                    run_imputation_bench, run_suite)
from .completion import (CompletionConfig, RbmParams, complete_dataset,
                         complete_missing, fit_completion, free_energy,
                         hidden_conditional, rbm_energy, train_cd,
                         visible_conditional)
from .config import (RunConfig, apply_overrides, default_config, load_config,
                     save_config)
from .data import (MODALITIES, ModalityStream, MultiModalDataset,
                   SyntheticSpec, generate_synthetic, impute_baseline,
                   load_csv_dataset, save_csv_dataset, simulate_missing,
                   split_dataset)
from .encoder import (EncoderParams, ModalityFeatures, encode_coarse,
                      encode_fine, encode_modality, init_encoder)
from .errors import (ConfigurationError, ContractError, DataError,
                     DimensionError, MetricError, MsmfError, NumericError,
                     ParseError, ResourceError, TrainingError)
from .fusion import (AlignedStack, BlankMask, FusionParams, align_features,
                     blank_mask, fuse, fuse_baseline, init_fusion, run_fusion)
from .metrics import MetricsRecord, compute_metrics
from .multitask import (TASKS, ModelConfig, MsmfModel, TaskPrediction,
                        forward, init_model, predict)
from .numcore import (Rng, Tensor, Variable, backward, check_gradients,
                      constant, gradient, param, zero_grad)
from .training import (LossConfig, PipelineResult, TrainConfig, TrainHistory,
                       evaluate, load_model, multi_task_loss, optimizer_step,
                       prepare_splits, run_pipeline, save_model, train)

__version__ = "0.1.0"
