"""Per-layer probes: training, AUC ranking, and picking the k best layers.

Two of the simulated layers carry no class signal at all; the AUC ranking on
held-out calibration pairs finds and excludes them.
"""

from linkguard.pipeline import fit_classifiers
from linkguard.probes import TrainConfig, predict_score, select_top_k_layers
from linkguard.simulate import SimConfig, SimWorld
from linkguard.traces import build_branch_dataset, split_dataset

config = SimConfig(seed=3, p_err=0.25)
world = SimWorld(config, 300)
dataset = build_branch_dataset(world.make_traces())
train, calibration = split_dataset(dataset, calib_fraction=0.5, seed=17)
print(f"train pairs: {len(train)}, calibration pairs: {len(calibration)}")
print(f"layer separations: {config.deltas().tolist()}")

classifiers = fit_classifiers(train, TrainConfig(hidden_width=32, epochs=200))
selection = select_top_k_layers(
    [classifiers[j] for j in sorted(classifiers)], calibration, k=5
)
print("\ncalibration AUC per layer (best first):")
for layer, score in selection.ranked:
    chosen = "  selected" if layer in selection.layers else ""
    print(f"  layer {layer}: {score:.4f}{chosen}")

# a probe turns one layer's hidden state into branch / non-branch probabilities
best = classifiers[selection.layers[0]]
vectors, labels = calibration.layer_pairs(best.layer_index)
branchy = vectors[labels == 1][0]
clean = vectors[labels == 0][0]
print(f"\nbest layer {best.layer_index}:")
print("  p(branch | true branch state)     =", round(predict_score(best, branchy)[0], 4))
print("  p(branch | true non-branch state) =", round(predict_score(best, clean)[0], 4))
