"""
Loss, gradients, optimiser and training loop.

Gradients are assembled in reverse mode through the whole pipeline. Each
block supplies full Jacobians of its outputs with respect to its parameters
and its inputs (parameter-shift for quantum blocks, closed form for
perceptrons); the chain through edge gathering, the score-weighted
aggregation and the input layer is written out by hand in float64.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .circuits import ANALYTIC
from .errors import ArityError, UnsupportedModeError
from .graphbuild import SubGraph
from .metrics import auc as auc_score
from .errors import DegenerateClassError
from .qgnn import (
    N_SPATIAL,
    Model,
    ModelConfig,
    ModelParams,
    aggregate,
    edge_inputs,
    forward,
    logistic,
    write_checkpoint,
)
from .qsim import as_real, make_rng

CLAMP_EPS = 1e-7
HISTORY_HEADER = ["run", "step", "train_loss", "val_loss", "val_auc", "seconds"]


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def class_weights(labels) -> tuple:
    """(w_pos, w_neg) = (E / 2 N_pos, E / 2 N_neg); 0 for an absent class."""
    labels = np.asarray(labels)
    E = labels.size
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = E - n_pos
    w_pos = E / (2.0 * n_pos) if n_pos else 0.0
    w_neg = E / (2.0 * n_neg) if n_neg else 0.0
    return w_pos, w_neg


def weighted_bce(scores, labels, weights: Optional[tuple] = None) -> float:
    """Class-balanced binary cross entropy averaged over edges."""
    p = as_real(scores).reshape(-1)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if p.size == 0:
        raise ArityError("weighted_bce needs at least one edge")
    if p.size != y.size:
        raise ArityError("scores and labels differ in length")
    w_pos, w_neg = class_weights(y) if weights is None else weights
    p = np.clip(p, CLAMP_EPS, 1 - CLAMP_EPS)
    terms = w_pos * y * np.log(p) + w_neg * (1 - y) * np.log1p(-p)
    loss = -terms.sum() / p.size
    return loss if p.dtype == np.longdouble else float(loss)


def weighted_bce_grad(scores, labels, weights: Optional[tuple] = None) -> np.ndarray:
    """d loss / d score; zero where the clamp is active."""
    p = as_real(scores).reshape(-1)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if p.size == 0:
        raise ArityError("weighted_bce needs at least one edge")
    w_pos, w_neg = class_weights(y) if weights is None else weights
    inside = (p >= CLAMP_EPS) & (p <= 1 - CLAMP_EPS)
    pc = np.clip(p, CLAMP_EPS, 1 - CLAMP_EPS)
    g = -(w_pos * y / pc - w_neg * (1 - y) / (1 - pc)) / p.size
    return np.where(inside, g, 0.0)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def _scatter(target, index, values):
    np.add.at(target, index, values)


def _edge_backward(g_s, jac, edges, D, gH):
    """Accumulate edge-block gradients; returns the parameter gradient."""
    _, Jp, Jx = jac
    g_in = g_s[:, None] * Jx[:, 0, :]
    _scatter(gH, edges[:, 0], g_in[:, :D])
    _scatter(gH, edges[:, 1], g_in[:, D:])
    return g_s @ Jp[:, 0, :]


def loss_and_gradient(graph: SubGraph, params: ModelParams, config: ModelConfig,
                      weights: Optional[tuple] = None):
    """(loss, flat gradient, final scores) for one subgraph."""
    if config.mode != ANALYTIC:
        raise UnsupportedModeError("gradients require analytic expectations")
    model = Model(config)
    model.check(params)
    edges = graph.edges
    if len(edges) == 0:
        raise ArityError("cannot compute a loss on a graph without edges")
    X = graph.node_features
    N, D = X.shape[0], config.width
    src, dst = edges[:, 0], edges[:, 1]

    # Forward, keeping every Jacobian.
    u0 = logistic(X @ params.input_weights + params.input_bias)
    H = np.hstack([X, u0])
    tape = []
    for _ in range(config.n_iterations):
        e_jac = model.edge_block.jacobians(edge_inputs(H, edges), params.edge_params)
        s = e_jac[0][:, 0]
        in_agg, out_agg, in_sum, out_sum = aggregate(H, edges, s)
        n_jac = model.node_block.jacobians(np.hstack([in_agg, H, out_agg]), params.node_params)
        tape.append((H, s, e_jac, n_jac, in_agg, out_agg, in_sum, out_sum))
        H = np.hstack([X, n_jac[0]])
    f_jac = model.edge_block.jacobians(edge_inputs(H, edges), params.edge_params)
    scores = f_jac[0][:, 0]
    loss = weighted_bce(scores, graph.labels, weights)

    # Reverse sweep.
    dtype = scores.dtype
    g_edge = np.zeros(model.edge_block.n_params, dtype=dtype)
    g_node = np.zeros(model.node_block.n_params, dtype=dtype)
    gH = np.zeros((N, D), dtype=dtype)
    g_s = weighted_bce_grad(scores, graph.labels, weights)
    g_edge += _edge_backward(g_s, f_jac, edges, D, gH)

    for H_prev, s, e_jac, n_jac, in_agg, out_agg, in_sum, out_sum in reversed(tape):
        g_hidden = gH[:, N_SPATIAL:]  # spatial columns are constants
        _, Jp_n, Jx_n = n_jac
        g_node += np.einsum("nk,nkp->p", g_hidden, Jp_n)
        g_trip = np.einsum("nk,nkp->np", g_hidden, Jx_n)
        g_in, g_self, g_out = g_trip[:, :D], g_trip[:, D:2 * D], g_trip[:, 2 * D:]

        gH = g_self.copy()
        in_norm = np.maximum(1.0, in_sum)
        out_norm = np.maximum(1.0, out_sum)
        in_active = (in_sum > 1.0).astype(float)
        out_active = (out_sum > 1.0).astype(float)
        _scatter(gH, src, (s / in_norm[dst])[:, None] * g_in[dst])
        _scatter(gH, dst, (s / out_norm[src])[:, None] * g_out[src])
        g_s = (
            np.einsum("ed,ed->e", g_in[dst], H_prev[src] - in_active[dst, None] * in_agg[dst]) / in_norm[dst]
            + np.einsum("ed,ed->e", g_out[src], H_prev[dst] - out_active[src, None] * out_agg[src]) / out_norm[src]
        )
        g_edge += _edge_backward(g_s, e_jac, edges, D, gH)

    dz = gH[:, N_SPATIAL:] * u0 * (1 - u0)
    gW = X.T @ dz
    gb = dz.sum(axis=0)
    grad = np.concatenate([gW.ravel(), gb, g_edge, g_node])
    return loss, grad, scores


def model_gradients(graph: SubGraph, params: ModelParams, config: ModelConfig,
                    weights: Optional[tuple] = None) -> np.ndarray:
    """Flat gradient of the weighted loss over all model parameters."""
    return loss_and_gradient(graph, params, config, weights)[1]


def graph_loss(graph: SubGraph, params: ModelParams, config: ModelConfig,
               weights: Optional[tuple] = None) -> float:
    return weighted_bce(forward(graph, params, config), graph.labels, weights)


def finite_diff_check(graph: SubGraph, params: ModelParams, config: ModelConfig, eps: float = 1e-5) -> float:
    """Max over components of |analytic - central difference| / (|analytic| + 1e-12).

    The difference quotient is taken on a long double evaluation of the loss.
    In float64 the loss itself jitters by ~1e-16, which after division by
    2 eps swamps gradient components of order 1e-7 and below. The analytic
    side is the float64 gradient used in training.
    """
    model = Model(config)
    _, grad, _ = loss_and_gradient(graph, params, config)
    flat = params.flatten().astype(np.longdouble)
    eps = np.longdouble(eps)
    worst = 0.0
    for k in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[k] += eps
        down[k] -= eps
        fd = (graph_loss(graph, model.unflatten(up), config)
              - graph_loss(graph, model.unflatten(down), config)) / (2 * eps)
        worst = max(worst, float(abs(grad[k] - fd) / (abs(grad[k]) + 1e-12)))
    return worst


# ---------------------------------------------------------------------------
# ADAM
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 0.03) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected ADAM update; returns (new_params, new_state) without mutating inputs."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape or state.v.shape != params.shape:
        raise ArityError("params, grads and optimiser state differ in length")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grads
    v = state.beta2 * state.v + (1 - state.beta2) * grads**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

QUANTUM_LR = 0.03
CLASSICAL_LR = 0.001


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    lr: Optional[float] = None  # None: 0.03 for quantum blocks, 0.001 for classical
    validation_size: int = 200
    split_seed: int = 0
    shuffle_seed: int = 0
    init_seed: int = 0
    repeat_runs: int = 3
    val_every: int = 10
    record_time: bool = False

    def learning_rate(self, model_config: ModelConfig) -> float:
        if self.lr is not None:
            return float(self.lr)
        return CLASSICAL_LR if model_config.classical_baseline else QUANTUM_LR


@dataclass
class TrainRecord:
    step: int
    train_loss: float = math.nan
    val_loss: float = math.nan
    val_auc: float = math.nan
    seconds: float = math.nan


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    run: int = 0
    model_config: Optional[ModelConfig] = None
    param_count: int = 0

    def validation(self) -> list:
        return [r for r in self.records if not math.isnan(r.val_loss)]

    def train_steps(self) -> list:
        return [r for r in self.records if not math.isnan(r.train_loss)]

    def final_val_auc(self) -> float:
        vals = self.validation()
        return vals[-1].val_auc if vals else math.nan


def split_dataset(n: int, validation_size: int, seed: int):
    """(train_indices, validation_indices); validation drawn once from ``seed``."""
    if not 0 < validation_size < n:
        raise ArityError(f"validation_size must be in (0, {n}) for {n} graphs")
    rng = make_rng(seed)
    val = np.sort(rng.choice(n, size=validation_size, replace=False))
    train = np.setdiff1d(np.arange(n), val)
    return train, val


def evaluate(graphs, params: ModelParams, config: ModelConfig) -> tuple:
    """(weighted loss, AUC) over the concatenated edges of ``graphs``."""
    scores, labels = [], []
    for g in graphs:
        if g.n_edges:
            scores.append(forward(g, params, config))
            labels.append(g.labels)
    if not scores:
        raise ArityError("no edges to evaluate")
    s = np.concatenate(scores)
    y = np.concatenate(labels)
    loss = weighted_bce(s, y)
    try:
        area = auc_score(s, y)
    except DegenerateClassError:
        area = math.nan
    return loss, area


def train(dataset, config: TrainConfig, model_config: ModelConfig, checkpoint_path=None,
          run: int = 0, params: Optional[ModelParams] = None, progress=None):
    """One training run; returns (params, TrainHistory).

    Validation records are taken before the first update (step 0), after
    every ``val_every`` updates and after the last update.
    """
    dataset = list(dataset)
    train_idx, val_idx = split_dataset(len(dataset), config.validation_size, config.split_seed)
    train_graphs = [dataset[i] for i in train_idx if dataset[i].n_edges > 0]
    if not train_graphs:
        raise ArityError("training split has no graph with edges")
    val_graphs = [dataset[i] for i in val_idx]

    model = Model(model_config)
    if params is None:
        params = model.init_params(config.init_seed)
    flat = params.flatten()
    state = AdamState.zeros(flat.size, config.learning_rate(model_config))
    shuffle = make_rng(config.shuffle_seed)
    history = TrainHistory(run=run, model_config=model_config, param_count=model.n_params)
    start = time.perf_counter()

    def clock():
        return time.perf_counter() - start if config.record_time else math.nan

    def validate(step, record):
        record.val_loss, record.val_auc = evaluate(val_graphs, model.unflatten(flat), model_config)
        record.seconds = clock()

    rec0 = TrainRecord(0)
    validate(0, rec0)
    history.records.append(rec0)
    step = 0
    for _ in range(config.epochs):
        for i in shuffle.permutation(len(train_graphs)):
            step += 1
            loss, grad, _ = loss_and_gradient(train_graphs[i], model.unflatten(flat), model_config)
            flat, state = adam_step(flat, grad, state)
            rec = TrainRecord(step, train_loss=loss, seconds=clock())
            if step % config.val_every == 0:
                validate(step, rec)
            history.records.append(rec)
            if progress is not None:
                progress(rec)
    if step % config.val_every != 0:
        validate(step, history.records[-1])

    final = model.unflatten(flat)
    if checkpoint_path is not None:
        write_checkpoint(checkpoint_path, final, model_config)
    return final, history


# ---------------------------------------------------------------------------
# History files
# ---------------------------------------------------------------------------

def _cell(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def format_history(histories) -> str:
    if isinstance(histories, TrainHistory):
        histories = [histories]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_HEADER)
    for h in histories:
        for r in h.records:
            w.writerow([h.run, r.step, _cell(r.train_loss), _cell(r.val_loss), _cell(r.val_auc), _cell(r.seconds)])
    return buf.getvalue()


def write_history(path, histories) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_history(histories))


def read_history(path) -> list:
    """TrainHistory objects (records only) keyed in file order by run."""
    runs = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != HISTORY_HEADER:
            raise ArityError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            run = int(row["run"])
            h = runs.setdefault(run, TrainHistory(run=run))
            val = lambda k: float(row[k]) if row[k] != "" else math.nan
            h.records.append(TrainRecord(int(row["step"]), val("train_loss"), val("val_loss"),
                                         val("val_auc"), val("seconds")))
    return list(runs.values())
