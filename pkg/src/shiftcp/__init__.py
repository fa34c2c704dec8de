"""Prediction sets that stay honest under distribution shift.

Threshold (split) conformal prediction with a calibrated softmax-score
cutoff; entropy-scaled sets that inflate scores by a quantile of the model's
own test-batch uncertainty; entropy-minimization test-time adaptation of the
built-in classifier; a severity-graded shift simulator; evaluation metrics
with worst-window statistics; and a supervised online baseline for streaming
comparisons.
"""

from .config import METHODS, RunConfig, load_config, parse_config_text
from .conformal import (
    CalibrationResult,
    SplitConformalClassifier,
    calibrate,
    naive_set,
    score,
    set_members,
    set_sizes,
    splitcp_set,
    true_label_scores,
)
from .errors import ConfigError, DataFormatError, NumericError, ShiftCPError
from .experiment import run_beta_sweep, run_experiment, run_scaling_diagnostic
from .fileio import LogitTable, load_dataset, load_logit_table, save_dataset, save_logit_table
from .metrics import (
    EvalReport,
    beta_sweep,
    build_report,
    coverage,
    ece,
    scaling_order_diagnostic,
    worst_window,
)
from .model import (
    ClassifierParams,
    Dataset,
    SoftmaxClassifier,
    TrainConfig,
    entropy_loss_and_grad,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    sgd_momentum_step,
    train_supervised,
)
from .numeric import empirical_quantile, entropy, linear_fit_loglog, softmax
from .online import OnlineState, aci_run, aci_step
from .scaling import (
    EntropyProfile,
    EntropyScaledConformal,
    ScalingSpec,
    ecp_set,
    entropy_quantile,
    scale_factor,
    tau_test_diagnostic,
    uncertainty_values,
)
from .shiftsim import Corruption, ShiftSchedule, SyntheticSpec, corrupt, generate, schedule_stream
from .tta import (
    AdaptationState,
    EntropyAdaptedConformal,
    TTAConfig,
    eacp_offline,
    eacp_streaming,
    eta_batch_update,
    tent_batch_update,
)

__version__ = "0.1.0"
