"""
A depth tournament
==================

Every model plays every model from both seats. The diff matrix is reduced to
a ranking and checked for seat-swap antisymmetry, self-play ties and margin
consistency. Reports land in ``depth-tournament/``.

Pass ``--full`` for the 2000-graph, 20-epoch, 3-seed protocol (about half an
hour on one core).
"""

import sys

from graphac.arena import TrainConfig
from graphac.graphs import generate_synthetic_dataset
from graphac.models import ModelSpec
from graphac.tournament import emit_report, run_tournament, schedule_double_round_robin

full = "--full" in sys.argv
if full:
    data, cfg = generate_synthetic_dataset(), TrainConfig()
else:
    data, cfg = generate_synthetic_dataset(count=300), TrainConfig(epochs=4, eval_window=2, seeds=(0, 1))

pool = [(f"PNA-L{k}", ModelSpec(num_layers=k, hidden_dim=32 if full else 16)) for k in (2, 4, 6)]
plan = schedule_double_round_robin(pool, config=cfg, dataset=data)
report = run_tournament(plan)
emit_report(report, "depth-tournament")

print(open("depth-tournament/report.md").read())
print("ranking:", " > ".join(name for name, _ in report.ranking))
