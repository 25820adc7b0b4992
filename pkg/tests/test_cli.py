import csv
import json
import os
import re

import pytest

from qgnntrack.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, build_parser, default_config, main


def run(*argv):
    return main([str(a) for a in argv])


def assert_same_outputs(a, b):
    """Byte-identical files; config.json may differ only in its echoed paths."""
    for name in os.listdir(a):
        if name == "config.json":
            ca, cb = (json.loads((d / name).read_text()) for d in (a, b))
            ca.pop("paths"), cb.pop("paths")
            assert ca == cb
        else:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, graphs = root / "data", root / "graphs"
    assert run("gen-toy", "--data-dir", data, "--n-events", 3, "--n-particles", 12, "--toy-seed", 5) == EXIT_OK
    assert run("build-graphs", "--data-dir", data, "--graph-dir", graphs, "--n-phi", 4, "--n-z", 1) == EXIT_OK
    return root


def train_args(root, out, *extra):
    return ("train", "--graph-dir", root / "graphs", "--out-dir", out, "--validation-size", 3,
            "--repeat-runs", 1, "--val-every", 4, *extra)


# ---------------------------------------------------------------------------
# gen-toy / build-graphs
# ---------------------------------------------------------------------------

def test_gen_toy_outputs(workspace):
    names = sorted(os.listdir(workspace / "data"))
    assert "gen_manifest.json" in names and "config.json" in names
    assert sum(n.endswith("-hits.csv") for n in names) == 3
    manifest = json.loads((workspace / "data" / "gen_manifest.json").read_text())
    assert [e["seed"] for e in manifest["events"]] == [[5, 0], [5, 1], [5, 2]]


def test_gen_toy_zero_events(tmp_path):
    assert run("gen-toy", "--data-dir", tmp_path, "--n-events", 0) == EXIT_OK
    assert json.loads((tmp_path / "gen_manifest.json").read_text())["n_events"] == 0


def test_gen_toy_is_deterministic(workspace, tmp_path):
    assert run("gen-toy", "--data-dir", tmp_path, "--n-events", 3, "--n-particles", 12, "--toy-seed", 5) == EXIT_OK
    assert_same_outputs(workspace / "data", tmp_path)


def test_build_graphs_manifest(workspace):
    graphs = workspace / "graphs"
    files = sorted(n for n in os.listdir(graphs) if n.endswith(".graph"))
    assert len(files) == 3 * 4
    manifest = json.loads((graphs / "manifest.json").read_text())
    per_file = manifest["graphs"]
    assert [f["file"] for f in per_file] == files
    for key in ("n_nodes", "n_edges", "n_true"):
        assert manifest["totals"][key] == sum(f[key] for f in per_file)
    layer_sum = sum(v["true"] + v["fake"] for v in manifest["layers"].values())
    assert layer_sum == manifest["totals"]["n_edges"]


def test_build_graphs_is_deterministic(workspace, tmp_path):
    assert run("build-graphs", "--data-dir", workspace / "data", "--graph-dir", tmp_path,
               "--n-phi", 4, "--n-z", 1) == EXIT_OK
    assert_same_outputs(workspace / "graphs", tmp_path)


def test_build_graphs_without_events(tmp_path):
    assert run("build-graphs", "--data-dir", tmp_path, "--graph-dir", tmp_path / "g") == EXIT_DATA


def test_build_graphs_schema_error(tmp_path):
    (tmp_path / "event000000000-hits.csv").write_text("hit_id,x,y\n1,2,3\n")
    (tmp_path / "event000000000-truth.csv").write_text("hit_id\n")
    (tmp_path / "event000000000-particles.csv").write_text("particle_id\n")
    assert run("build-graphs", "--data-dir", tmp_path, "--graph-dir", tmp_path / "g") == EXIT_DATA


# ---------------------------------------------------------------------------
# train / evaluate
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("ansatz", ["MPS", "TTN", "MERA"])
def test_train_each_ansatz(workspace, tmp_path, ansatz):
    assert run(*train_args(workspace, tmp_path, "--ansatz", ansatz)) == EXIT_OK
    with open(tmp_path / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and rows[0]["step"] == "0"
    for name in ("checkpoint_run0.txt", "learning_curves.csv", "summary.csv", "config.json"):
        assert (tmp_path / name).exists()


@pytest.mark.parametrize("h", [1, 5, 10])
def test_train_classical_sizes(workspace, tmp_path, h):
    assert run(*train_args(workspace, tmp_path, "--classical", "--n-hidden", h)) == EXIT_OK
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["model"]["classical_baseline"] is True and cfg["model"]["n_hidden"] == h


def test_train_is_byte_identical(workspace, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(*train_args(workspace, a)) == EXIT_OK
    assert run(*train_args(workspace, b)) == EXIT_OK
    for name in ("checkpoint_run0.txt", "history.csv", "learning_curves.csv", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_repeat_runs_use_distinct_seeds(workspace, tmp_path):
    assert run(*train_args(workspace, tmp_path)[:-4], "--repeat-runs", 2, "--val-every", 4) == EXIT_OK
    assert (tmp_path / "checkpoint_run0.txt").read_bytes() != (tmp_path / "checkpoint_run1.txt").read_bytes()


def test_evaluate(workspace, tmp_path):
    assert run(*train_args(workspace, tmp_path)) == EXIT_OK
    ckpt = tmp_path / "checkpoint_run0.txt"
    args = ("evaluate", ckpt, "--graph-dir", workspace / "graphs", "--out-dir", tmp_path, "--validation-size", 3)
    assert run(*args) == EXIT_OK
    assert run(*args) == EXIT_OK
    with open(tmp_path / "evaluation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and rows[0] == rows[1]
    assert 0.0 <= float(rows[0]["auc"]) <= 1.0
    # Header, the row written by train, then one row per evaluation.
    with open(tmp_path / "summary.csv") as fh:
        assert len(list(csv.reader(fh))) == 4


def test_evaluate_mismatch_is_data_error(workspace, tmp_path):
    assert run(*train_args(workspace, tmp_path, "--ansatz", "MPS")) == EXIT_OK
    assert run("evaluate", tmp_path / "checkpoint_run0.txt", "--graph-dir", workspace / "graphs",
               "--out-dir", tmp_path, "--validation-size", 3, "--ansatz", "MERA") == EXIT_DATA


def test_evaluate_empty_graph_dir(workspace, tmp_path):
    assert run(*train_args(workspace, tmp_path)) == EXIT_OK
    (tmp_path / "empty").mkdir()
    assert run("evaluate", tmp_path / "checkpoint_run0.txt", "--graph-dir", tmp_path / "empty",
               "--out-dir", tmp_path) == EXIT_DATA


def test_evaluate_shots(workspace, tmp_path):
    assert run(*train_args(workspace, tmp_path)) == EXIT_OK
    assert run("evaluate", tmp_path / "checkpoint_run0.txt", "--graph-dir", workspace / "graphs",
               "--out-dir", tmp_path, "--validation-size", 3, "--shots", 200, "--subset", "all") == EXIT_OK


def test_config_file_and_override(workspace, tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({"version": 1, "model": {"ansatz": "MPS"}, "train": {"epochs": 1}}))
    out = tmp_path / "out"
    assert run(*train_args(workspace, out, "--config", cfg_path, "--n-iterations", 2)) == EXIT_OK
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["model"]["ansatz"] == "MPS" and echoed["model"]["n_iterations"] == 2


def test_bad_config_key(workspace, tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({"version": 1, "model": {"colour": "red"}}))
    assert run(*train_args(workspace, tmp_path, "--config", cfg_path)) == EXIT_USAGE


# ---------------------------------------------------------------------------
# describe, usage and help
# ---------------------------------------------------------------------------

def test_describe_mps(capsys):
    assert run("describe", "MPS", 8) == EXIT_OK
    text = capsys.readouterr().out
    assert re.search(r"\b15\b", text) and "[7]" in text


def test_describe_json(capsys):
    assert run("describe", "TTN", 4, "--json") == EXIT_OK
    assert json.loads(capsys.readouterr().out)["n_params"] == 7


def test_describe_invalid_size():
    assert run("describe", "TTN", 1) == EXIT_USAGE


def test_usage_errors():
    assert run("train", "--no-such-flag") == EXIT_USAGE
    assert run() == EXIT_USAGE
    assert run("describe", "XYZ", 4) == EXIT_USAGE


EXPECTED_DEFAULTS = {
    "build-graphs": {"--pt-min": "1.0", "--dphi-slope-max": "0.0006", "--z0-max": "100.0",
                     "--n-phi": "8", "--n-z": "2", "--sector-axis": "phi"},
    "train": {"--ansatz": "TTN", "--n-hidden": "1", "--n-iterations": "1", "--epochs": "1",
              "--validation-size": "200", "--val-every": "10", "--repeat-runs": "3",
              "--lr": "0.03 quantum / 0.001 classical"},
}


@pytest.mark.parametrize("command", sorted(EXPECTED_DEFAULTS))
def test_help_lists_defaults(command, capsys):
    assert run(command, "--help") == EXIT_OK
    text = " ".join(capsys.readouterr().out.split())
    for flag, default in EXPECTED_DEFAULTS[command].items():
        assert re.search(re.escape(flag) + r"\b.*?\(default: " + re.escape(default) + r"\)", text), flag


def test_every_flag_has_a_default_in_help():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction")
    for name, p in sub.choices.items():
        for action in p._actions:
            if action.option_strings and action.help != "show this help message and exit":
                assert "default" in action.help or "checked against" in action.help, (name, action.dest)


def test_default_config_sections():
    cfg = default_config()
    assert {"model", "train", "cuts", "slices", "toy", "paths", "version"} <= set(cfg)
