"""K-nearest-neighbor patch graphs and the two graph aggregation operators.

A feature map becomes a set of vertices (one per patch), connected by directed
edges from each vertex to its K nearest neighbors in feature space. Aggregation
is either a degree-normalized mean or the max-relative feature difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, apply_op, _as_tensor

__all__ = [
    "PatchGraph",
    "partition_patches",
    "pairwise_distance",
    "knn_edges",
    "aggregate_mean",
    "aggregate_max_relative",
]


@dataclass
class PatchGraph:
    """Directed KNN graph over N vertices.

    neighbor_lists[i] holds the K nearest vertex indices of vertex i in
    ascending distance order (ties broken by smaller index). adjacency[i, j] = 1
    iff j is in neighbor_lists[i], so every row sums to K.
    """

    n_vertices: int
    k: int
    neighbor_lists: np.ndarray  # (N, K) int
    distances: np.ndarray       # (N, N) float
    adjacency: np.ndarray       # (N, N) 0/1 float
    degrees: np.ndarray         # (N,) row sums of adjacency


def partition_patches(image: Tensor, n_patches: int, mean_pool: bool = True) -> Tensor:
    """Split a DxMxM image into n_patches square patches in raster order.

    With mean_pool each patch collapses to one D-vector (its per-channel mean);
    otherwise the patch is flattened to length D * (M/sqrt(N))^2.
    """
    image = _as_tensor(image)
    if image.data.ndim != 3 or image.data.shape[1] != image.data.shape[2]:
        raise ShapeError(f"expected DxMxM image, got {image.data.shape}")
    d, m, _ = image.data.shape
    side = int(round(np.sqrt(n_patches)))
    if side * side != n_patches:
        raise ShapeError(f"n_patches={n_patches} is not a perfect square")
    if m % side:
        raise ShapeError(f"image side {m} not divisible by patch grid side {side}")
    p = m // side
    # (D, side, p, side, p) -> (side, side, D, p, p) -> (N, D, p, p)
    blocks = image.data.reshape(d, side, p, side, p).transpose(1, 3, 0, 2, 4)
    blocks = blocks.reshape(n_patches, d, p, p)
    if mean_pool:
        out = blocks.mean(axis=(2, 3))
    else:
        out = blocks.reshape(n_patches, d * p * p)

    def backward(g):
        g = np.asarray(g)
        if mean_pool:
            gb = np.broadcast_to(g[:, :, None, None], (n_patches, d, p, p)) / (p * p)
        else:
            gb = g.reshape(n_patches, d, p, p)
        gb = gb.reshape(side, side, d, p, p).transpose(2, 0, 3, 1, 4)
        return (gb.reshape(d, m, m),)

    return apply_op((image,), out, backward)


def pairwise_distance(x: Tensor) -> np.ndarray:
    """Euclidean distance matrix between the rows of an NxD feature matrix."""
    xd = _as_tensor(x).data
    if xd.ndim != 2 or xd.shape[0] < 2:
        raise ShapeError(f"expected NxD with N >= 2, got {xd.shape}")
    sq = np.sum(xd ** 2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (xd @ xd.T)
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)
    np.fill_diagonal(dist, 0.0)
    return dist


def knn_edges(distances: np.ndarray, k: int) -> PatchGraph:
    """Directed KNN graph from a distance matrix; ties go to the smaller index."""
    distances = np.asarray(distances, dtype=np.float64)
    n = distances.shape[0]
    if distances.shape != (n, n):
        raise ShapeError(f"distance matrix must be square, got {distances.shape}")
    if not 1 <= k <= n - 1:
        raise ValueError(f"K must be in [1, {n - 1}], got {k}")
    masked = distances.copy()
    np.fill_diagonal(masked, np.inf)
    # Stable sort keeps equidistant candidates in index order.
    order = np.argsort(masked, axis=1, kind="stable")
    neighbors = order[:, :k]
    adjacency = np.zeros((n, n), dtype=np.float64)
    rows = np.repeat(np.arange(n), k)
    adjacency[rows, neighbors.ravel()] = 1.0
    return PatchGraph(
        n_vertices=n,
        k=k,
        neighbor_lists=neighbors,
        distances=distances,
        adjacency=adjacency,
        degrees=adjacency.sum(axis=1),
    )


def aggregate_mean(x: Tensor, graph: PatchGraph, inverse_sqrt: bool = True) -> Tensor:
    """Degree-normalized mean aggregate D^(-1/2) A D^(-1/2) X, per channel.

    inverse_sqrt=False applies the un-inverted D^(1/2) A D^(1/2) variant for
    comparison; the normalized form is the default.
    """
    x = _as_tensor(x)
    if x.data.shape[0] != graph.n_vertices:
        raise ShapeError(f"features have {x.data.shape[0]} rows, graph has {graph.n_vertices} vertices")
    if np.any(graph.degrees <= 0):
        raise ValueError("graph has an isolated vertex (degree 0)")
    exponent = -0.5 if inverse_sqrt else 0.5
    d_half = np.power(graph.degrees, exponent)
    norm_adj = d_half[:, None] * graph.adjacency * d_half[None, :]
    out = norm_adj @ x.data
    return apply_op((x,), out, lambda g: (norm_adj.T @ np.asarray(g),))


def aggregate_max_relative(x: Tensor, graph: PatchGraph) -> Tensor:
    """Max-relative aggregate g_i = [x_i, max_j(x_i - x_j)] over neighbors j.

    Output is Nx2D; the gradient of the difference half routes to x_i and to
    the argmax neighbor per channel.
    """
    x = _as_tensor(x)
    n, d = x.data.shape
    if n != graph.n_vertices:
        raise ShapeError(f"features have {n} rows, graph has {graph.n_vertices} vertices")
    neigh = graph.neighbor_lists
    diffs = x.data[:, None, :] - x.data[neigh]          # (N, K, D)
    arg = np.argmax(diffs, axis=1)                      # (N, D), index into K
    maxdiff = np.take_along_axis(diffs, arg[:, None, :], axis=1)[:, 0, :]
    out = np.concatenate([x.data, maxdiff], axis=1)
    winners = np.take_along_axis(neigh, arg, axis=1)    # (N, D) vertex index of argmax

    def backward(g):
        g = np.asarray(g)
        gx = g[:, :d].copy()
        gdiff = g[:, d:]
        gx += gdiff                                     # d(x_i - x_j)/dx_i = 1
        cols = np.tile(np.arange(d), n)
        np.subtract.at(gx, (winners.ravel(), cols), gdiff.ravel())
        return (gx,)

    return apply_op((x,), out, backward)
