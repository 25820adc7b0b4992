"""Hybrid quantum-classical graph network for particle track edge classification."""
from .circuits import ANALYTIC, AnsatzKind, Shots, build_pqc, qnn_forward, qnn_jacobian
from .graphbuild import SelectionCuts, SliceSpec, SubGraph, build_subgraphs, read_graph, write_graph
from .metrics import auc, roc_curve
from .qgnn import ModelConfig, ModelParams, forward, init_params
from .qsim import Circuit, GateOp, run_circuit
from .trackdata import ToyConfig, generate_toy_event, load_trackml_event
from .trainer import TrainConfig, adam_step, finite_diff_check, model_gradients, train, weighted_bce

__version__ = "0.1.0"
