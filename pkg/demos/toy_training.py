"""Generate a toy event, build subgraphs and train a small TTN model.

Run with: python3 demos/toy_training.py   (about 15 s)
"""
import numpy as np

from qgnntrack.graphbuild import SliceSpec, build_subgraphs, layer_pair_counts
from qgnntrack.qgnn import ModelConfig
from qgnntrack.trackdata import ToyConfig, generate_toy_event
from qgnntrack.trainer import TrainConfig, train

event = generate_toy_event(ToyConfig(n_particles=750, pt_range=(2.0, 20.0), seed=0), event_id=0)
print(f"event 0: {len(event)} hits from {event.hits['particle_id'].nunique()} particles")

graphs = [g for g in build_subgraphs(event, spec=SliceSpec(64, 4)) if g.n_edges][:60]
n_true = sum(int(g.labels.sum()) for g in graphs)
n_edges = sum(g.n_edges for g in graphs)
print(f"{len(graphs)} subgraphs, {np.mean([g.n_nodes for g in graphs]):.1f} nodes and "
      f"{n_edges / len(graphs):.1f} edges each, {n_true / n_edges:.0%} of edges true")

# Where the fakes come from: per inner layer (true, fake) counts for one slice.
print("layer pairs of the first subgraph:", layer_pair_counts(graphs[0]))

params, history = train(graphs, TrainConfig(validation_size=20), ModelConfig(ansatz="TTN"))
for r in history.validation():
    print(f"step {r.step:3d}  val loss {r.val_loss:.4f}  val AUC {r.val_auc:.3f}")
