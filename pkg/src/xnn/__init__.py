"""Enhanced explainable neural network (xNN): an additive index model with
sparse, orthogonal projections and smooth subnetwork ridge functions."""

from .config import Hyperparams
from .data import Dataset, gen_features, get_scenario, load_csv, scenario, split
from .diff import Grads, Jet2, fd_check, loss_and_grads, roughness, subnet_jet
from .errors import ConfigError, DegenerateError, NumericError, ShapeError, XnnError
from .model import (
    DenseLayer, NormState, Subnetwork, XnnModel, forward, importance_ratios, init_model,
    load_model, normalize, project, save_model, subnet_eval,
)
from .optim import AdamState, adam_step, cayley_step, l1_subgradient, skew_from_grad
from .report import ExplainReport, explain
from .train import (
    TrainHistory, evaluate, fine_tune, finalize_norm, fit_pipeline, grid_search, prune,
    sosbp_fit,
)

__version__ = "0.1.0"
