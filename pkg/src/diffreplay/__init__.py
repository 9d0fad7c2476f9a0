"""Continual learning with a jointly trained diffusion-plus-classifier model
that serves as its own generative-replay source."""

from .data import (TaskSpec, TaskStream, UNLABELED, build_class_incremental_splits,
                   subsample_labels)
from .diffusion import (NoiseSchedule, ddim_sample, diffusion_loss, forward_noise,
                        make_linear_schedule, sample_timesteps)
from .distill import (TeacherRef, cl_loss, freeze_teacher, kd_classification_loss,
                      kd_diffusion_loss, kd_joint_loss)
from .metrics import (AccuracyMatrix, MetricsReport, average_accuracy, average_forgetting,
                      fid, knn_drift_probe, linear_probe, precision_recall, transfer_metrics)
from .model import (ConvClassifier, JointModel, JointModelConfig, classification_loss,
                    joint_loss)
from .replay import (SyntheticDataset, baseline_generative_replay, generate_labeled_samples,
                     merge_rehearsal)
from .semi import PseudoLabelBatch, pseudo_label, ssl_joint_loss, ssl_loss
from .trainer import (TrainConfig, TrainerState, run_motivation_experiment,
                      run_task_sequence, train_global, train_local)
from .experiments import ExperimentConfig, beta_sweep, render_report, run

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix", "ConvClassifier", "ExperimentConfig", "JointModel",
    "JointModelConfig", "MetricsReport", "NoiseSchedule", "PseudoLabelBatch",
    "SyntheticDataset", "TaskSpec", "TaskStream", "TeacherRef", "TrainConfig",
    "TrainerState", "UNLABELED", "average_accuracy", "average_forgetting",
    "baseline_generative_replay", "beta_sweep", "build_class_incremental_splits",
    "cl_loss", "classification_loss", "ddim_sample", "diffusion_loss", "fid",
    "forward_noise", "freeze_teacher", "generate_labeled_samples", "joint_loss",
    "kd_classification_loss", "kd_diffusion_loss", "kd_joint_loss", "knn_drift_probe",
    "linear_probe", "make_linear_schedule", "merge_rehearsal", "precision_recall",
    "pseudo_label", "render_report", "run", "run_motivation_experiment",
    "run_task_sequence", "sample_timesteps", "ssl_joint_loss", "ssl_loss",
    "subsample_labels", "train_global", "train_local", "transfer_metrics",
]
