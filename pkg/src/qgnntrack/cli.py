"""
Command line entry point.

    qgnntrack gen-toy       write toy events in the TrackML CSV layout
    qgnntrack build-graphs  events -> per-slice subgraph files + manifest
    qgnntrack train         repeated training runs, histories, checkpoints
    qgnntrack evaluate      score a checkpoint, append a summary row
    qgnntrack describe      print an ansatz circuit and parameter totals

Settings are resolved as built-in defaults, then a JSON config file
(``--config``), then explicit flags. The resolved settings are written as
config.json into every output directory.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import copy
import dataclasses
import glob
import json
import math
import os
import sys

from threadpoolctl import threadpool_limits

from .circuits import AnsatzKind, Shots, describe, describe_text
from .errors import (
    AlignmentError,
    ArityError,
    CompatibilityError,
    ConstructionError,
    DegenerateClassError,
    GeometryError,
    JoinError,
    ParseError,
    QgnnError,
    RangeError,
    SchemaError,
    SingularityError,
    SizeError,
    UnsupportedModeError,
)
from .graphbuild import (
    SelectionCuts,
    SliceSpec,
    build_subgraphs,
    graph_filename,
    layer_pair_counts,
    read_graph,
    write_graph,
)
from .metrics import append_summary_row, emit_history
from .qgnn import Model, ModelConfig, read_checkpoint
from .trackdata import ToyConfig, generate_toy_event, list_events, load_event_dir, write_trackml_event
from .trainer import TrainConfig, evaluate, split_dataset, train, write_history

CONFIG_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, frozenset):
        return sorted(value)
    return value


def _section(obj) -> dict:
    return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def default_config() -> dict:
    """Every setting with its built-in default, as a JSON-ready dict."""
    return {
        "version": CONFIG_VERSION,
        "model": ModelConfig().to_dict(),
        "train": _section(TrainConfig()),
        "cuts": _section(SelectionCuts()),
        "slices": _section(SliceSpec()),
        "toy": _section(ToyConfig()),
        "events": {"n_events": 100, "first_event": 0},
        "paths": {"data_dir": "data", "graph_dir": "graphs", "out_dir": "out"},
        "threads": 1,
    }


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise UsageError(f"unknown config key {where}{key!r}")
        if isinstance(out[key], dict) and key != "mode":
            if not isinstance(value, dict):
                raise UsageError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(out[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config(path) -> dict:
    """Defaults overlaid with the JSON document at ``path`` (if any)."""
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise UsageError(f"{path}: config needs a top-level 'version' field")
    if doc["version"] != CONFIG_VERSION:
        raise UsageError(f"{path}: unsupported config version {doc['version']!r}")
    return _merge(cfg, doc)


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig.from_dict(cfg["model"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**cfg["train"])


def selection_cuts(cfg: dict) -> SelectionCuts:
    d = dict(cfg["cuts"])
    d["eta_range"] = tuple(d["eta_range"])
    d["barrel_volumes"] = frozenset(d["barrel_volumes"])
    d["barrel_layers"] = tuple(tuple(p) for p in d["barrel_layers"])
    return SelectionCuts(**d)


def slice_spec(cfg: dict) -> SliceSpec:
    d = dict(cfg["slices"])
    d["eta_bounds"] = tuple(d["eta_bounds"])
    return SliceSpec(**d)


def toy_config(cfg: dict) -> ToyConfig:
    d = dict(cfg["toy"])
    d["pt_range"] = tuple(d["pt_range"])
    d["eta_range"] = tuple(d["eta_range"])
    d["layer_radii"] = tuple(d["layer_radii"])
    d["layer_labels"] = tuple(tuple(p) for p in d["layer_labels"])
    return ToyConfig(**d)


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def echo_config(cfg: dict, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    _write_json(os.path.join(directory, "config.json"), cfg)


def apply_threads(n: int) -> None:
    """Cap BLAS worker threads; the compiled simulator kernel is serial."""
    if n is None or n < 1:
        raise UsageError("--threads must be >= 1")
    threadpool_limits(limits=n)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_toy(cfg: dict) -> dict:
    """Write toy events plus gen_manifest.json into data_dir."""
    toy = toy_config(cfg)
    ev = cfg["events"]
    out = cfg["paths"]["data_dir"]
    os.makedirs(out, exist_ok=True)
    events = []
    for event_id in range(ev["first_event"], ev["first_event"] + ev["n_events"]):
        event = generate_toy_event(toy, event_id)
        write_trackml_event(event, out)
        events.append({"event_id": event_id, "n_hits": len(event), "seed": [toy.seed, event_id]})
    manifest = {"n_events": len(events), "toy_seed": toy.seed, "events": events}
    _write_json(os.path.join(out, "gen_manifest.json"), manifest)
    echo_config(cfg, out)
    return manifest


def cmd_build_graphs(cfg: dict) -> dict:
    """One graph file per slice of every event, plus manifest.json."""
    cuts, spec = selection_cuts(cfg), slice_spec(cfg)
    data_dir, out = cfg["paths"]["data_dir"], cfg["paths"]["graph_dir"]
    event_ids = list_events(data_dir)
    if not event_ids:
        raise ArityError(f"{data_dir}: no events found")
    os.makedirs(out, exist_ok=True)
    files = []
    totals = {"n_graphs": 0, "n_nodes": 0, "n_edges": 0, "n_true": 0}
    layer_totals = {}
    for event_id in event_ids:
        event = load_event_dir(data_dir, event_id)
        for g in build_subgraphs(event, cuts, spec):
            name = graph_filename(g)
            write_graph(g, os.path.join(out, name))
            per_layer = layer_pair_counts(g)
            n_true = int(g.labels.sum())
            files.append({
                "file": name, "n_nodes": g.n_nodes, "n_edges": g.n_edges, "n_true": n_true,
                "layers": {str(k): {"true": t, "fake": f} for k, (t, f) in sorted(per_layer.items())},
            })
            totals["n_graphs"] += 1
            totals["n_nodes"] += g.n_nodes
            totals["n_edges"] += g.n_edges
            totals["n_true"] += n_true
            for k, (t, f) in per_layer.items():
                acc = layer_totals.setdefault(str(k), {"true": 0, "fake": 0})
                acc["true"] += t
                acc["fake"] += f
    manifest = {
        "n_events": len(event_ids),
        "totals": totals,
        "layers": dict(sorted(layer_totals.items(), key=lambda kv: int(kv[0]))),
        "graphs": files,
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    echo_config(cfg, out)
    return manifest


def load_graphs(directory) -> list:
    paths = sorted(glob.glob(os.path.join(directory, "*.graph")))
    if not paths:
        raise ArityError(f"{directory}: no .graph files")
    return [read_graph(p) for p in paths]


def _check_finite(history, run) -> None:
    for r in history.records:
        # NaN marks "not recorded" except for the train loss of an update step.
        bad = math.isinf(r.val_loss) or (r.step > 0 and not math.isfinite(r.train_loss))
        if bad:
            raise FloatingPointError(f"run {run}: non-finite loss at step {r.step}")


def run_seeds(tc: TrainConfig, run: int) -> TrainConfig:
    """Per-run seeds: base + run index for shuffling and initialisation."""
    return dataclasses.replace(tc, shuffle_seed=tc.shuffle_seed + run, init_seed=tc.init_seed + run)


def cmd_train(cfg: dict, progress=None) -> list:
    """repeat_runs runs; history.csv, checkpoint_run<k>.txt and reports in out_dir."""
    mc, tc = model_config(cfg), train_config(cfg)
    if tc.repeat_runs < 1:
        raise UsageError("repeat_runs must be >= 1")
    graphs = load_graphs(cfg["paths"]["graph_dir"])
    out = cfg["paths"]["out_dir"]
    os.makedirs(out, exist_ok=True)
    histories = []
    for run in range(tc.repeat_runs):
        ckpt = os.path.join(out, f"checkpoint_run{run}.txt")
        _, history = train(graphs, run_seeds(tc, run), mc, checkpoint_path=ckpt, run=run, progress=progress)
        _check_finite(history, run)
        histories.append(history)
    write_history(os.path.join(out, "history.csv"), histories)
    emit_history(histories, out, append_summary=False)
    echo_config(cfg, out)
    return histories


def cmd_evaluate(cfg: dict, checkpoint, subset: str = "validation", check_model: bool = False) -> dict:
    """Loss and AUC of a checkpoint; writes evaluation.csv and appends to summary.csv."""
    params, ck_config = read_checkpoint(checkpoint)
    if check_model:
        wanted = model_config(cfg)
        if (wanted.n_hidden, wanted.n_iterations, wanted.ansatz, wanted.classical_baseline) != (
                ck_config.n_hidden, ck_config.n_iterations, ck_config.ansatz, ck_config.classical_baseline):
            raise CompatibilityError(f"{checkpoint}: checkpoint model {ck_config.label()} "
                                     f"does not match requested {wanted.label()}")
    mode = cfg["model"].get("mode", "analytic")
    if isinstance(mode, dict):
        ck_config = dataclasses.replace(ck_config, mode=Shots(int(mode["shots"]), int(mode["seed"])))
    Model(ck_config).check(params)
    graphs = load_graphs(cfg["paths"]["graph_dir"])
    if subset == "validation":
        tc = train_config(cfg)
        _, val_idx = split_dataset(len(graphs), tc.validation_size, tc.split_seed)
        graphs = [graphs[i] for i in val_idx]
    loss, area = evaluate(graphs, params, ck_config)
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite evaluation loss")
    n_params = Model(ck_config).n_params
    result = {
        "checkpoint": os.path.basename(str(checkpoint)), "subset": subset, "n_graphs": len(graphs),
        "n_edges": int(sum(g.n_edges for g in graphs)), "loss": loss, "auc": area,
    }
    out = cfg["paths"]["out_dir"]
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "evaluation.csv")
    new = not os.path.exists(path)
    with open(path, "a") as fh:
        if new:
            fh.write(",".join(result) + "\n")
        fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in result.values()) + "\n")
    ansatz = "classical" if ck_config.classical_baseline else ck_config.ansatz.value
    append_summary_row(os.path.join(out, "summary.csv"),
                       (ck_config.label(), ansatz, ck_config.n_hidden, ck_config.n_iterations, n_params, area))
    echo_config(cfg, out)
    return result


def cmd_describe(kind, n_qubits: int, n_readout: int = 1, as_json: bool = False) -> str:
    if as_json:
        return json.dumps(describe(kind, n_qubits, n_readout), indent=2, sort_keys=True)
    return describe_text(kind, n_qubits, n_readout)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _d(text, default) -> str:
    return f"{text} (default: {default})"


# (flag, config path, type, help). Flags default to None so that only
# flags given on the command line override the config file.
_D = default_config()
_COMMON = [
    ("--threads", ("threads",), int, _d("cap on BLAS worker threads", _D["threads"])),
]
_FLAGS = {
    "gen-toy": [
        ("--data-dir", ("paths", "data_dir"), str, _d("output directory for event CSVs", _D["paths"]["data_dir"])),
        ("--n-events", ("events", "n_events"), int, _d("number of events", _D["events"]["n_events"])),
        ("--first-event", ("events", "first_event"), int, _d("first event id", _D["events"]["first_event"])),
        ("--n-particles", ("toy", "n_particles"), int, _d("particles per event", _D["toy"]["n_particles"])),
        ("--noise-hits-per-layer", ("toy", "noise_hits_per_layer"), int,
         _d("random noise hits per layer", _D["toy"]["noise_hits_per_layer"])),
        ("--field", ("toy", "field_strength"), float, _d("solenoid field in tesla", _D["toy"]["field_strength"])),
        ("--z0-spread", ("toy", "z0_spread"), float, _d("vertex z spread in mm", _D["toy"]["z0_spread"])),
        ("--toy-seed", ("toy", "seed"), int, _d("base seed; event k uses (seed, k)", _D["toy"]["seed"])),
    ],
    "build-graphs": [
        ("--data-dir", ("paths", "data_dir"), str, _d("directory with event CSVs", _D["paths"]["data_dir"])),
        ("--graph-dir", ("paths", "graph_dir"), str, _d("output directory for graph files", _D["paths"]["graph_dir"])),
        ("--pt-min", ("cuts", "pt_min"), float, _d("keep hits of particles with pt above this (GeV)", _D["cuts"]["pt_min"])),
        ("--dphi-slope-max", ("cuts", "dphi_slope_max"), float,
         _d("doublet cut on |dphi/dr| (1/mm)", _D["cuts"]["dphi_slope_max"])),
        ("--z0-max", ("cuts", "z0_max"), float, _d("doublet cut on |z0| (mm)", _D["cuts"]["z0_max"])),
        ("--n-phi", ("slices", "n_phi"), int, _d("number of sectors", _D["slices"]["n_phi"])),
        ("--n-z", ("slices", "n_z"), int, _d("number of z bins", _D["slices"]["n_z"])),
        ("--sector-axis", ("slices", "sector_axis"), str, _d("sector coordinate: phi or eta", _D["slices"]["sector_axis"])),
    ],
    "train": [
        ("--graph-dir", ("paths", "graph_dir"), str, _d("directory with graph files", _D["paths"]["graph_dir"])),
        ("--out-dir", ("paths", "out_dir"), str, _d("output directory", _D["paths"]["out_dir"])),
        ("--ansatz", ("model", "ansatz"), str, _d("PQC ansatz: MPS, TTN or MERA", _D["model"]["ansatz"])),
        ("--n-hidden", ("model", "n_hidden"), int, _d("hidden node features", _D["model"]["n_hidden"])),
        ("--n-iterations", ("model", "n_iterations"), int, _d("message passing iterations", _D["model"]["n_iterations"])),
        ("--lr", ("train", "lr"), float, "learning rate (default: 0.03 quantum / 0.001 classical)"),
        ("--epochs", ("train", "epochs"), int, _d("passes over the training split", _D["train"]["epochs"])),
        ("--validation-size", ("train", "validation_size"), int,
         _d("graphs held out for validation", _D["train"]["validation_size"])),
        ("--val-every", ("train", "val_every"), int, _d("validate every K steps", _D["train"]["val_every"])),
        ("--repeat-runs", ("train", "repeat_runs"), int, _d("independent runs", _D["train"]["repeat_runs"])),
        ("--split-seed", ("train", "split_seed"), int, _d("validation split seed", _D["train"]["split_seed"])),
        ("--seed", ("train", "shuffle_seed", "init_seed"), int,
         _d("seed base; run k shuffles and initialises with base + k", _D["train"]["shuffle_seed"])),
    ],
    "evaluate": [
        ("--graph-dir", ("paths", "graph_dir"), str, _d("directory with graph files", _D["paths"]["graph_dir"])),
        ("--out-dir", ("paths", "out_dir"), str, _d("output directory", _D["paths"]["out_dir"])),
        ("--validation-size", ("train", "validation_size"), int,
         _d("size of the validation split", _D["train"]["validation_size"])),
        ("--split-seed", ("train", "split_seed"), int, _d("validation split seed", _D["train"]["split_seed"])),
        ("--ansatz", ("model", "ansatz"), str, "expected ansatz; checked against the checkpoint"),
        ("--n-hidden", ("model", "n_hidden"), int, "expected n_hidden; checked against the checkpoint"),
        ("--n-iterations", ("model", "n_iterations"), int, "expected n_iterations; checked against the checkpoint"),
    ],
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qgnntrack", description="Hybrid quantum graph network for track edge classification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "gen-toy": "write toy events in the TrackML CSV layout",
        "build-graphs": "build per-slice subgraph files from events",
        "train": "train repeated runs and write histories and checkpoints",
        "evaluate": "evaluate a checkpoint on graph files",
    }
    for name, flags in _FLAGS.items():
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", help="JSON config file with a 'version' field (default: none)")
        for flag, _, typ, text in _COMMON + flags:
            p.add_argument(flag, type=typ, default=None, help=text)
        if name == "train":
            p.add_argument("--classical", action="store_true", default=None,
                           help="use the classical perceptron baseline (default: False)")
            p.add_argument("--record-time", action="store_true", default=None,
                           help="fill the seconds column of history.csv (default: False)")
        if name == "evaluate":
            p.add_argument("checkpoint", help="checkpoint file written by train")
            p.add_argument("--subset", choices=("validation", "all"), default="validation",
                           help="graphs to score (default: validation)")
            p.add_argument("--shots", type=int, default=None,
                           help="estimate readouts from this many shots (default: analytic)")
            p.add_argument("--shot-seed", type=int, default=0, help="seed for shot sampling (default: 0)")
            p.add_argument("--classical", action="store_true", default=None,
                           help="expect a classical checkpoint (default: False)")
    p = sub.add_parser("describe", help="print an ansatz circuit and parameter totals",
                       description="print an ansatz circuit and parameter totals")
    p.add_argument("ansatz", help="MPS, TTN or MERA")
    p.add_argument("n_qubits", type=int, help="circuit width")
    p.add_argument("--n-readout", type=int, default=1, help="number of readout qubits (default: 1)")
    p.add_argument("--json", action="store_true", help="emit JSON instead of text (default: False)")
    return parser


def _set(cfg, path, value):
    *head, last = path
    node = cfg
    for k in head:
        node = node[k]
    node[last] = value


def resolve_config(args) -> dict:
    cfg = load_config(args.config)
    for flag, path, _, _ in _COMMON + _FLAGS[args.command]:
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is None:
            continue
        if path[0] == "train" and len(path) == 3:  # --seed sets both seeds
            cfg["train"][path[1]] = value
            cfg["train"][path[2]] = value
        else:
            _set(cfg, path, value)
    if getattr(args, "classical", None):
        cfg["model"]["classical_baseline"] = True
    if getattr(args, "record_time", None):
        cfg["train"]["record_time"] = True
    if getattr(args, "shots", None) is not None:
        cfg["model"]["mode"] = {"shots": args.shots, "seed": args.shot_seed}
    return cfg


_DATA_ERRORS = (SchemaError, JoinError, ParseError, CompatibilityError, ArityError, RangeError,
                AlignmentError, OSError, KeyError)
_NUMERIC_ERRORS = (FloatingPointError, SingularityError, GeometryError, DegenerateClassError)
_USAGE_ERRORS = (UsageError, ValueError, SizeError, ConstructionError, UnsupportedModeError)


def _run(args) -> int:
    if args.command == "describe":
        print(cmd_describe(AnsatzKind.parse(args.ansatz), args.n_qubits, args.n_readout, args.json))
        return EXIT_OK
    cfg = resolve_config(args)
    apply_threads(cfg["threads"])
    if args.command == "gen-toy":
        m = cmd_gen_toy(cfg)
        print(f"wrote {m['n_events']} events to {cfg['paths']['data_dir']}")
    elif args.command == "build-graphs":
        m = cmd_build_graphs(cfg)
        t = m["totals"]
        print(f"wrote {t['n_graphs']} graphs ({t['n_nodes']} nodes, {t['n_edges']} edges, "
              f"{t['n_true']} true) to {cfg['paths']['graph_dir']}")
    elif args.command == "train":
        histories = cmd_train(cfg)
        aucs = ", ".join(f"{h.final_val_auc():.4f}" for h in histories)
        print(f"final validation AUC per run: {aucs}")
    elif args.command == "evaluate":
        check = any(getattr(args, k) is not None for k in ("ansatz", "n_hidden", "n_iterations", "classical"))
        r = cmd_evaluate(cfg, args.checkpoint, args.subset, check_model=check)
        print(f"{r['subset']}: {r['n_graphs']} graphs, {r['n_edges']} edges, loss {r['loss']:.6f}, auc {r['auc']:.6f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return _run(args)
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (_USAGE_ERRORS + (QgnnError,)) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
