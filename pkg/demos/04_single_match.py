"""
One match
=========

Two encoders train side by side on identical batches, each minimising its own
seat of the competitive loss. The score is diff = L_A - L_B on held-out
graphs, averaged over the last epochs and over seeds. Negative means A wins.
"""

from graphac.arena import TrainConfig, train_pair
from graphac.graphs import generate_synthetic_dataset
from graphac.models import ModelSpec

# a short desk run; the acceptance suite uses 2000 graphs and 20 epochs
data = generate_synthetic_dataset(seed=0, count=400)
cfg = TrainConfig(epochs=6, eval_window=3, seeds=(0, 1))

shallow = ModelSpec(num_layers=1, hidden_dim=16)
deep = ModelSpec(num_layers=4, hidden_dim=16)

result = train_pair(shallow, deep, data, cfg)
print(result.summary("PNA-L1", "PNA-L4"))
for run in result.runs:
    print(f"  seed {run.seed}: diff per epoch", [round(v, 3) for v in run.trajectory["diff"]])
print("largest top-PCA fraction:", round(result.top_pca_fraction(), 3))

# the same match with the seats swapped is the mirror image
swapped = train_pair(deep, shallow, data, cfg)
print(swapped.summary("PNA-L4", "PNA-L1"))
