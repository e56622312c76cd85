"""Selection frequencies over subsamples on a tree-shaped truth.

With n = 100 true edges are picked in nearly every replicate while spurious
ones come and go, so the edge count falls as the frequency cut rises.

Run: python3 demos/03_stability_selection.py  (about 15 s)
"""

import numpy as np

from plntree import SimulationSpec, simulate_dataset
from plntree.resample import ResampleConfig, stability_selection, threshold_curve, threshold_frequencies

data = simulate_dataset(SimulationSpec(structure="scalefree", p=10, n=100, seed=8))
freq = stability_selection(data.counts, data.design, data.offsets,
                           ResampleConfig(s=30, seed=8, n_jobs=2))
iu = np.triu_indices(10, 1)
true = data.adjacency[iu] == 1
print(f"{freq.n_success}/{freq.n_replicates} replicates succeeded")
print(f"median frequency: true edges {np.median(freq.freq[iu][true]):.2f}, "
      f"non-edges {np.median(freq.freq[iu][~true]):.2f}")

net = threshold_frequencies(freq, 0.9)
hits = int(np.sum(np.triu(net.adjacency * data.adjacency, 1)))
print(f"edges selected in more than 90% of replicates: {net.n_edges} ({hits} true)")

grid, counts = threshold_curve(freq, step=0.1)
# an edge is kept when its frequency is strictly above the cut
for g, c in zip(grid, counts):
    print(f"  cut {g:.1f}: {c} edges")
