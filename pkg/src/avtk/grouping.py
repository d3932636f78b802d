"""Token grouping via the k-nearest-neighbor variant of density peaks clustering.

Grouping is a discrete, non-differentiable operation: it runs on plain
float64 numpy arrays and returns integer labels.  All distance work is done
in float64 and every tie is broken deterministically (lowest token index),
so results can be compared exactly against a brute-force oracle.

Tie conventions: the "higher density" relation is strict on density with a
lowest-index-first refinement for exact density ties, which makes the
lowest-index token among those at the global maximum density the unique
root of the pointer forest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


class GroupingError(ValueError):
    """Raised for invalid k / P parameters."""


@dataclass
class GroupAssignment:
    """Cluster labels, peak (center) token indices, and densities for one level."""

    labels: np.ndarray      # (N,) int, values in [0, P)
    peaks: np.ndarray       # (P,) int token indices; labels[peaks[p]] == p
    densities: np.ndarray   # (N,) float64, strictly positive
    num_groups: int

    def membership(self, dtype=np.float32):
        """(P, N) one-hot membership matrix."""
        m = np.zeros((self.num_groups, self.labels.size), dtype=dtype)
        m[self.labels, np.arange(self.labels.size)] = 1.0
        return m

    def group_sizes(self):
        return np.bincount(self.labels, minlength=self.num_groups)


def _features_array(features):
    f = features.data if isinstance(features, Tensor) else np.asarray(features)
    if f.ndim != 2:
        raise GroupingError(f"expected (N, D) features, got shape {f.shape}")
    return f.astype(np.float64)


def pairwise_distances(features):
    """(N, N) Euclidean distance matrix in float64.

    Computed from explicit coordinate differences, not the Gram-matrix
    identity: equal true distances must give bitwise-equal values so the
    deterministic tie rules downstream are reproducible.
    """
    f = _features_array(features)
    diff = f[:, None, :] - f[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def local_density(features, k):
    """rho_i = sum over the k nearest neighbors j of exp(-||f_i - f_j||)."""
    f = _features_array(features)
    n = f.shape[0]
    if not 1 <= k < n:
        raise GroupingError(f"k must satisfy 1 <= k < N (k={k}, N={n})")
    dist = pairwise_distances(f)
    np.fill_diagonal(dist, np.inf)  # exclude self
    part = np.partition(dist, k - 1, axis=1)[:, :k]
    return np.exp(-part).sum(axis=1)


def default_k(n):
    """Neighborhood size when unconfigured; scales with the token count."""
    return max(2, n // 16)


def assign_clusters(features, densities, num_groups):
    """Assign every token to one of ``num_groups`` clusters.

    Each token points at its nearest neighbor of higher density (h_i); the
    top-P tokens by gamma_i = rho_i * d_i become centers, where d_i is the
    distance to h_i and the root gets the maximum d.  Non-center tokens
    inherit labels along h chains.
    """
    f = _features_array(features)
    rho = np.asarray(densities, dtype=np.float64)
    n = f.shape[0]
    if rho.shape != (n,):
        raise GroupingError(f"densities shape {rho.shape} does not match N={n}")
    if not 1 <= num_groups <= n:
        raise GroupingError(f"P must satisfy 1 <= P <= N (P={num_groups}, N={n})")

    dist = pairwise_distances(f)
    # The "higher density" candidate set, with (rho, -index) refining exact
    # density ties so the lowest-index densest token is the unique root.
    order = np.lexsort((np.arange(n), -rho))
    rank = np.empty(n, dtype=np.intp)
    rank[order] = np.arange(n)
    masked = np.where(rank[None, :] < rank[:, None], dist, np.inf)
    # argmin returns the first (lowest-index) minimizer, matching the tie rule
    h = masked.argmin(axis=1).astype(np.intp)
    d = masked[np.arange(n), h]
    root = order[0]
    h[root] = -1
    d[root] = 0.0
    d[root] = d.max() if n > 1 else 1.0

    gamma = rho * d
    # Top-P by gamma; ties prefer the root, then the lowest token index.
    is_root = np.zeros(n)
    is_root[root] = 1.0
    center_order = np.lexsort((np.arange(n), -is_root, -gamma))
    peaks = np.array(sorted(center_order[:num_groups]), dtype=np.intp)

    labels = np.full(n, -1, dtype=np.intp)
    labels[peaks] = np.arange(num_groups)
    for pos in range(n):
        i = order[pos]
        if labels[i] < 0:
            labels[i] = labels[h[i]]
    return GroupAssignment(labels=labels, peaks=peaks, densities=rho,
                           num_groups=num_groups)


def group_tokens(features, num_groups, k=None):
    """local_density followed by assign_clusters with the default k rule."""
    f = _features_array(features)
    if f.shape[0] == 1:
        # a single token has no neighbors; density is a harmless constant
        return assign_clusters(f, np.ones(1), num_groups)
    if k is None:
        k = default_k(f.shape[0])
    k = min(k, f.shape[0] - 1)
    rho = local_density(f, k)
    return assign_clusters(f, rho, num_groups)


def canonical_labels(labels):
    """Relabel groups by first occurrence; used for permutation-equivariance checks."""
    labels = np.asarray(labels)
    mapping = {}
    out = np.empty_like(labels)
    for i, lab in enumerate(labels):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def format_assignment(ga):
    """Text table: token_index, label, density, is_peak."""
    peakset = set(int(p) for p in ga.peaks)
    lines = ["token\tlabel\tdensity\tis_peak"]
    for i in range(ga.labels.size):
        lines.append(f"{i}\t{int(ga.labels[i])}\t{ga.densities[i]:.6f}\t"
                     f"{1 if i in peakset else 0}")
    return "\n".join(lines)
