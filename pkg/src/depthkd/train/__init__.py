"""Optimizer, checkpoints and training loops."""

from . import checkpoint
from .config import TrainConfig
from .loop import (StudentTrainer, TeacherFeatureCache, TeacherTrainer, evaluate_model, load_data, load_model,
                   load_teacher, predict, train_student, train_teacher)
from .optim import Adam, linear_lr
from .ablation import LABELS, ROWS, AblationResult, run_ablation
