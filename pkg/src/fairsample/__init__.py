"""Demographic-parity-fair GCN training with edge injection and a learned neighbor sampler."""
from .datagen import SbmSpec, generate
from .gcn import GcnParams, forward, forward_full, full_probabilities, predict
from .graph import AttributedGraph, DataSplit, draw_split, intra_group_edge_ratio, load_graph_dir, save_graph
from .injector import inject, pseudo_label
from .metrics import EvalResult, delta_dp, evaluate, pareto_frontier, select_hyperparameters
from .sampler import SamplerPolicy
from .theory import dp_upper_bound, empirical_dp, random_walk_matrix
from .trainer import RunReport, TrainConfig, run_experiment, train

__version__ = "0.1.0"
