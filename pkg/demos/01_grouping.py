"""Token grouping walkthrough: densities, peaks, and labels on 2-D blobs.

Run:  python demos/01_grouping.py
"""

import numpy as np

from avtk.grouping import assign_clusters, group_tokens, local_density
from avtk.rng import make_rng

rng = make_rng(0)

# Three Gaussian blobs of unequal size stand in for visual tokens.
blobs = np.vstack([
    rng.normal((0.0, 0.0), 0.4, size=(14, 2)),
    rng.normal((5.0, 0.5), 0.4, size=(10, 2)),
    rng.normal((2.5, 4.0), 0.4, size=(8, 2)),
])

rho = local_density(blobs, k=4)
print("density range: %.3f .. %.3f" % (rho.min(), rho.max()))

ga = assign_clusters(blobs, rho, num_groups=3)
print("peaks (token indices):", ga.peaks.tolist())
print("group sizes:", ga.group_sizes().tolist())

# The three densest regions become the three groups; print a crude map.
for p in range(3):
    members = np.flatnonzero(ga.labels == p)
    center = blobs[members].mean(axis=0)
    print(f"group {p}: {members.size} tokens around ({center[0]:+.2f}, {center[1]:+.2f})")

# group_tokens wraps both steps with the default neighborhood size.
same = group_tokens(blobs, 3, k=4)
assert (same.labels == ga.labels).all()

# Requesting one group per token degenerates to the identity clustering.
identity = group_tokens(blobs, len(blobs), k=4)
print("P=N gives", len(set(identity.labels.tolist())), "distinct labels")
