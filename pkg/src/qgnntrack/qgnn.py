"""
Hybrid graph network for edge classification.

Pipeline for one subgraph with scaled node coordinates X (N x 3):

    H = [X, logistic(X W + b)]                       input layer
    repeat n_iterations:
        s = EdgeNet(H)                               one score per edge
        H = [X, NodeNet(in_agg(H, s), H, out_agg(H, s))]
    s = EdgeNet(H)                                   returned scores

EdgeNet/NodeNet are either quantum blocks (angle-encoded PQCs) or, for the
classical baseline, one-hidden-layer logistic perceptrons with the same
input and output widths. Node features stay in [0, 1] throughout, which is
what the angle encoder expects.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .circuits import (
    ANALYTIC,
    AnsatzKind,
    Shots,
    build_pqc,
    init_pqc_params,
    parse_mode,
    qnn_forward_batch,
    qnn_jacobian_batch,
)
from .errors import ArityError, CompatibilityError, ParseError, UnsupportedModeError
from .graphbuild import SubGraph
from .qsim import as_real, make_rng

N_SPATIAL = 3
CHECKPOINT_FORMAT = "qgnn-checkpoint"
CHECKPOINT_VERSION = 1


def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * as_real(x)))


@dataclass(frozen=True)
class ModelConfig:
    n_hidden: int = 1
    n_iterations: int = 1
    ansatz: AnsatzKind = AnsatzKind.TTN
    mode: object = ANALYTIC
    classical_baseline: bool = False

    def __post_init__(self):
        if self.n_hidden < 1 or self.n_iterations < 1:
            raise ValueError("n_hidden and n_iterations must be >= 1")
        object.__setattr__(self, "ansatz", AnsatzKind.parse(self.ansatz))
        object.__setattr__(self, "mode", parse_mode(self.mode))

    @property
    def width(self) -> int:
        return N_SPATIAL + self.n_hidden

    @property
    def edge_width(self) -> int:
        return 2 * self.width

    @property
    def node_width(self) -> int:
        return 3 * self.width

    def to_dict(self) -> dict:
        mode = self.mode if self.mode == ANALYTIC else {"shots": self.mode.n, "seed": self.mode.seed}
        return {
            "n_hidden": self.n_hidden,
            "n_iterations": self.n_iterations,
            "ansatz": self.ansatz.value,
            "mode": mode,
            "classical_baseline": self.classical_baseline,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        mode = d.get("mode", ANALYTIC)
        if isinstance(mode, dict):
            mode = Shots(int(mode["shots"]), int(mode["seed"]))
        return cls(int(d["n_hidden"]), int(d["n_iterations"]), d["ansatz"], mode,
                   bool(d.get("classical_baseline", False)))

    def label(self) -> str:
        if self.classical_baseline:
            return f"classical-h{self.n_hidden}-i{self.n_iterations}"
        return f"{self.ansatz.value}-h{self.n_hidden}-i{self.n_iterations}"


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------

class QnnBlock:
    """Angle-encoded PQC with (1 + <Z>)/2 readouts."""

    def __init__(self, kind, n_in: int, n_out: int):
        self.template = build_pqc(kind, n_in, n_out)
        self.n_in = n_in
        self.n_out = n_out
        self.n_params = self.template.n_params

    def init_params(self, rng) -> np.ndarray:
        return init_pqc_params(self.n_params, rng)

    def forward(self, X, params, mode=ANALYTIC, rng=None):
        X = as_real(X).reshape(-1, self.n_in)
        if len(X) == 0:
            return np.zeros((0, self.n_out))
        mode = parse_mode(mode)
        if mode != ANALYTIC:
            # One draw of the shot seed per call keeps repeated calls distinct.
            seed = int(rng.integers(2**63)) if rng is not None else mode.seed
            mode = Shots(mode.n, seed)
        return qnn_forward_batch(self.template, X, params, mode)

    def jacobians(self, X, params):
        X = as_real(X).reshape(-1, self.n_in)
        if len(X) == 0:
            return np.zeros((0, self.n_out)), np.zeros((0, self.n_out, self.n_params)), np.zeros((0, self.n_out, self.n_in))
        return qnn_jacobian_batch(self.template, X, params)


class PerceptronBlock:
    """n_in -> n_hidden (logistic) -> n_out (logistic)."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int):
        self.n_in, self.n_hidden, self.n_out = n_in, n_hidden, n_out
        self.n_params = n_in * n_hidden + n_hidden + n_hidden * n_out + n_out

    def unpack(self, params):
        params = as_real(params)
        if params.size != self.n_params:
            raise ArityError(f"expected {self.n_params} params, got {params.size}")
        i, h, o = self.n_in, self.n_hidden, self.n_out
        k = 0
        W1 = params[k:k + i * h].reshape(i, h); k += i * h
        b1 = params[k:k + h]; k += h
        W2 = params[k:k + h * o].reshape(h, o); k += h * o
        b2 = params[k:k + o]
        return W1, b1, W2, b2

    def init_params(self, rng) -> np.ndarray:
        rng = make_rng(rng)
        i, h, o = self.n_in, self.n_hidden, self.n_out
        lim1 = np.sqrt(6.0 / (i + h))
        lim2 = np.sqrt(6.0 / (h + o))
        return np.concatenate([
            rng.uniform(-lim1, lim1, i * h), np.zeros(h),
            rng.uniform(-lim2, lim2, h * o), np.zeros(o),
        ])

    def forward(self, X, params, mode=ANALYTIC, rng=None):
        W1, b1, W2, b2 = self.unpack(params)
        X = as_real(X).reshape(-1, self.n_in)
        return logistic(logistic(X @ W1 + b1) @ W2 + b2)

    def jacobians(self, X, params):
        W1, b1, W2, b2 = self.unpack(params)
        X = as_real(X).reshape(-1, self.n_in)
        B, i, h, o = len(X), self.n_in, self.n_hidden, self.n_out
        u = logistic(X @ W1 + b1)  # (B, h)
        y = logistic(u @ W2 + b2)  # (B, o)
        dy = y * (1 - y)  # (B, o)
        du = u * (1 - u)  # (B, h)
        # g[b, k, j] = dy_k/da_j for hidden pre-activation a_j.
        g = dy[:, :, None] * W2.T[None, :, :] * du[:, None, :]
        jW1 = X[:, None, :, None] * g[:, :, None, :]  # (B, o, i, h)
        jW2 = np.zeros((B, o, h, o), dtype=y.dtype)
        jb2 = np.zeros((B, o, o), dtype=y.dtype)
        for k in range(o):
            jW2[:, k, :, k] = dy[:, k, None] * u
            jb2[:, k, k] = dy[:, k]
        Jp = np.concatenate([
            jW1.reshape(B, o, i * h), g, jW2.reshape(B, o, h * o), jb2,
        ], axis=2)
        Jx = g @ W1.T  # (B, o, i)
        return y, Jp, Jx


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class ModelParams:
    input_weights: np.ndarray  # (3, n_hidden)
    input_bias: np.ndarray  # (n_hidden,)
    edge_params: np.ndarray
    node_params: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([
            np.ravel(self.input_weights), np.ravel(self.input_bias),
            np.ravel(self.edge_params), np.ravel(self.node_params),
        ]).astype(float)

    def copy(self) -> "ModelParams":
        return ModelParams(*(np.array(a, dtype=float, copy=True) for a in
                             (self.input_weights, self.input_bias, self.edge_params, self.node_params)))

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return np.array_equal(self.flatten(), other.flatten())


class Model:
    """Blocks and parameter layout for one ModelConfig."""

    def __init__(self, config: ModelConfig):
        self.config = config
        w = config.width
        if config.classical_baseline:
            self.edge_block = PerceptronBlock(2 * w, config.n_hidden, 1)
            self.node_block = PerceptronBlock(3 * w, config.n_hidden, config.n_hidden)
        else:
            self.edge_block = QnnBlock(config.ansatz, 2 * w, 1)
            self.node_block = QnnBlock(config.ansatz, 3 * w, config.n_hidden)
        assert self.edge_block.n_in == config.edge_width
        assert self.node_block.n_in == config.node_width
        h = config.n_hidden
        self.sizes = (N_SPATIAL * h, h, self.edge_block.n_params, self.node_block.n_params)

    @property
    def n_params(self) -> int:
        return sum(self.sizes)

    def unflatten(self, flat) -> ModelParams:
        flat = as_real(flat).reshape(-1)
        if flat.size != self.n_params:
            raise ArityError(f"expected {self.n_params} parameters, got {flat.size}")
        cuts = np.cumsum((0,) + self.sizes)
        parts = [flat[cuts[i]:cuts[i + 1]].copy() for i in range(4)]
        return ModelParams(parts[0].reshape(N_SPATIAL, self.config.n_hidden), parts[1], parts[2], parts[3])

    def check(self, params: ModelParams) -> None:
        h = self.config.n_hidden
        if np.shape(params.input_weights) != (N_SPATIAL, h) or np.size(params.input_bias) != h:
            raise CompatibilityError("input layer shape does not match n_hidden")
        if np.size(params.edge_params) != self.edge_block.n_params:
            raise CompatibilityError("edge parameter count does not match the edge block")
        if np.size(params.node_params) != self.node_block.n_params:
            raise CompatibilityError("node parameter count does not match the node block")

    def init_params(self, seed) -> ModelParams:
        rng = make_rng(seed)
        h = self.config.n_hidden
        lim = np.sqrt(6.0 / (N_SPATIAL + h))
        W = rng.uniform(-lim, lim, (N_SPATIAL, h))
        b = np.zeros(h)
        return ModelParams(W, b, self.edge_block.init_params(rng), self.node_block.init_params(rng))


def init_params(config: ModelConfig, seed) -> ModelParams:
    return Model(config).init_params(seed)


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------

def input_network(spatial, weights, bias) -> np.ndarray:
    """Node state [X, logistic(X W + b)] of shape (N, 3 + n_hidden)."""
    X = as_real(spatial)
    if X.ndim != 2 or X.shape[1] != N_SPATIAL:
        raise ArityError(f"spatial features must be (N, {N_SPATIAL})")
    W = as_real(weights)
    b = as_real(bias).reshape(-1)
    if W.shape != (N_SPATIAL, b.size):
        raise ArityError("input weights must be (3, n_hidden) matching the bias")
    return np.hstack([X, logistic(X @ W + b)])


def _check_edges(H, edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= len(H)):
        raise IndexError("edge references a missing node")
    return edges


def edge_inputs(H, edges) -> np.ndarray:
    return np.hstack([H[edges[:, 0]], H[edges[:, 1]]])


def edge_network(H, edges, block, params, mode=ANALYTIC, rng=None) -> np.ndarray:
    """Score in [0, 1] for every (inner, outer) edge."""
    edges = _check_edges(H, edges)
    if len(edges) == 0:
        return np.zeros(0)
    return block.forward(edge_inputs(H, edges), params, mode, rng)[:, 0]


def aggregate(H, edges, scores):
    """Score-weighted means of inner and outer neighbours.

    in_agg[i] = sum_{(j,i)} s_ji H[j] / max(1, sum s_ji), out_agg likewise
    over (i,k) edges. Also returns the two normalisers.
    """
    N, D = H.shape
    src, dst = edges[:, 0], edges[:, 1]
    w = as_real(scores)
    in_sum = np.zeros(N, dtype=w.dtype)
    out_sum = np.zeros(N, dtype=w.dtype)
    np.add.at(in_sum, dst, w)
    np.add.at(out_sum, src, w)
    in_norm = np.maximum(1.0, in_sum)
    out_norm = np.maximum(1.0, out_sum)
    in_agg = np.zeros((N, D), dtype=np.result_type(H, w))
    out_agg = np.zeros_like(in_agg)
    np.add.at(in_agg, dst, w[:, None] * H[src])
    np.add.at(out_agg, src, w[:, None] * H[dst])
    return in_agg / in_norm[:, None], out_agg / out_norm[:, None], in_sum, out_sum


def triplet_inputs(H, edges, scores) -> np.ndarray:
    in_agg, out_agg, _, _ = aggregate(H, edges, scores)
    return np.hstack([in_agg, H, out_agg])


def node_network(H, edges, scores, block, params, mode=ANALYTIC, rng=None) -> np.ndarray:
    """Updated node state: spatial columns copied, hidden columns from the node block."""
    edges = _check_edges(H, edges)
    out = H.copy()
    if len(H) == 0:
        return out
    out[:, N_SPATIAL:] = block.forward(triplet_inputs(H, edges, scores), params, mode, rng)
    return out


def _run(graph: SubGraph, params: ModelParams, model: Model, trace: Optional[list] = None) -> np.ndarray:
    cfg = model.config
    model.check(params)
    rng = make_rng(cfg.mode.seed) if cfg.mode != ANALYTIC else None
    H = input_network(graph.node_features, params.input_weights, params.input_bias)
    edges = graph.edges
    for _ in range(cfg.n_iterations):
        s = edge_network(H, edges, model.edge_block, params.edge_params, cfg.mode, rng)
        if trace is not None:
            trace.append("EN")
        H = node_network(H, edges, s, model.node_block, params.node_params, cfg.mode, rng)
        if trace is not None:
            trace.append("NN")
    s = edge_network(H, edges, model.edge_block, params.edge_params, cfg.mode, rng)
    if trace is not None:
        trace.append("EN")
    return s


def forward(graph: SubGraph, params: ModelParams, config: ModelConfig, trace: Optional[list] = None) -> np.ndarray:
    """Final edge scores for one subgraph (quantum or classical per config)."""
    return _run(graph, params, Model(config), trace)


def forward_classical(graph: SubGraph, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Same pipeline with perceptron blocks in place of the quantum ones."""
    if not config.classical_baseline:
        config = ModelConfig(config.n_hidden, config.n_iterations, config.ansatz, ANALYTIC, True)
    return _run(graph, params, Model(config))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
#
#   qgnn-checkpoint 1
#   config {"n_hidden": 1, ...}
#   input_weights <rows> <cols>
#   <values, one per line, 17 significant digits>
#   input_bias <n>
#   ...
#   edge_params <n>
#   ...
#   node_params <n>
#   ...
#   end

_SECTIONS = ("input_bias", "edge_params", "node_params")


def format_checkpoint(params: ModelParams, config: ModelConfig) -> str:
    buf = io.StringIO()
    buf.write(f"{CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}\n")
    buf.write("config " + json.dumps(config.to_dict(), sort_keys=True) + "\n")
    W = np.asarray(params.input_weights, dtype=float)
    buf.write(f"input_weights {W.shape[0]} {W.shape[1]}\n")
    for v in W.ravel():
        buf.write(f"{v:.17g}\n")
    for name in _SECTIONS:
        arr = np.asarray(getattr(params, name), dtype=float).ravel()
        buf.write(f"{name} {arr.size}\n")
        for v in arr:
            buf.write(f"{v:.17g}\n")
    buf.write("end\n")
    return buf.getvalue()


def write_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(format_checkpoint(params, config))


def parse_checkpoint(text: str, path=None):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def take(key, n_fields):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"unexpected end of file (expected {key})", pos + 1, path)
        parts = lines[pos].split(" ", 1) if key == "config" else lines[pos].split()
        pos += 1
        if not parts or parts[0] != key or len(parts) - 1 != n_fields:
            raise ParseError(f"expected {key!r} line", pos, path)
        return parts[1:]

    def values(n):
        nonlocal pos
        if pos + n > len(lines):
            raise ParseError("unexpected end of file in value block", len(lines) + 1, path)
        try:
            out = np.array([float(v) for v in lines[pos:pos + n]])
        except ValueError:
            raise ParseError("bad numeric value", pos + 1, path) from None
        pos += n
        return out

    head = take(CHECKPOINT_FORMAT, 1)
    if head[0] != str(CHECKPOINT_VERSION):
        raise ParseError(f"unsupported checkpoint version {head[0]}", 1, path)
    try:
        config = ModelConfig.from_dict(json.loads(take("config", 1)[0]))
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"bad config line: {exc}", pos, path) from None
    try:
        r, c = (int(v) for v in take("input_weights", 2))
        W = values(r * c).reshape(r, c)
        arrays = {}
        for name in _SECTIONS:
            n = int(take(name, 1)[0])
            arrays[name] = values(n)
    except ValueError:
        raise ParseError("bad size field", pos, path) from None
    take("end", 0)
    if pos != len(lines):
        raise ParseError("trailing content after 'end'", pos + 1, path)
    params = ModelParams(W, arrays["input_bias"], arrays["edge_params"], arrays["node_params"])
    try:
        Model(config).check(params)
    except CompatibilityError as exc:
        raise CompatibilityError(f"{path or 'checkpoint'}: {exc}") from None
    return params, config


def read_checkpoint(path):
    with open(path) as fh:
        return parse_checkpoint(fh.read(), path)
