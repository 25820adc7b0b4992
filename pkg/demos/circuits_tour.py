"""Tour of the three ansatz families and the hybrid model sizes.

Run with: python3 demos/circuits_tour.py
"""
from qgnntrack.circuits import AnsatzKind, describe_text, pipeline_param_counts, qnn_forward, build_pqc
from qgnntrack.qsim import apply_ry, expectation_z, new_state

# Angle encoding: RY(theta)|0> has <Z> = cos(theta).
for theta in (0.0, 1.0, 2.0):
    print(f"theta={theta:.1f}  <Z>={expectation_z(apply_ry(new_state(1), 0, theta), 0):+.4f}")

# A 4-qubit tree: 7 trainable angles, readout on the root qubit.
print()
print(describe_text("TTN", 4))

# Every family evaluated on the same features with all parameters at zero.
print()
features = [0.1, 0.4, 0.7, 0.2, 0.9, 0.3, 0.55, 0.6]
for kind in AnsatzKind:
    t = build_pqc(kind, 8)
    print(f"{kind.value:5s} params={t.n_params:2d}  output={qnn_forward(t, features, [0.0] * t.n_params)[0]:.4f}")

# Whole-model totals with one hidden feature (edge block 8 qubits, node block 12).
print()
for kind in AnsatzKind:
    c = pipeline_param_counts(kind, 1)
    print(f"{kind.value:5s} circuits={c['circuit_total']}  with input layer={c['model_total']}  "
          f"reported={c['reported_total']}")
