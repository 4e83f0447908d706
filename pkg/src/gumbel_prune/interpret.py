"""Interpretability read straight off a pruned topology.

Importance of neuron i (previous layer) for neuron j (next layer) is the share
of j's incoming absolute weight that comes from i:

    F[i, j] = |W[i, j]| / sum_k |W[k, j]|

with pruned weights counted as zero.  Input-to-output importance chains the
per-layer matrices, ``I = F1 @ F2 @ ... @ FL``.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .training import PrunedNetwork


def layer_importance(W: np.ndarray) -> np.ndarray:
    """Column-normalised ``|W|``; ``W`` is (prev, next), pruned entries zero.

    Columns whose inputs are all pruned stay all-zero.
    """
    A = np.abs(np.asarray(W, dtype=np.float64))
    col = A.sum(axis=0, keepdims=True)
    return np.divide(A, col, out=np.zeros_like(A), where=col > 0)


def layer_importances(pruned: PrunedNetwork) -> list[np.ndarray]:
    # network weights are stored (out, in)
    return [layer_importance(W.T) for W in pruned.weights]


def input_output_importance(pruned: PrunedNetwork) -> np.ndarray:
    """(inputs, outputs) matrix of chained layer importances."""
    mats = layer_importances(pruned)
    I = mats[0]
    for F in mats[1:]:
        I = I @ F
    return I


def importance_heatmap(I: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    """Per-input importance summed over outputs, reshaped row-major to ``dims``."""
    I = np.asarray(I, dtype=np.float64)
    if I.ndim == 1:
        I = I[:, None]
    rows, cols = dims
    if rows * cols != I.shape[0]:
        raise ValueError(f"{I.shape[0]} inputs cannot fill a {rows}x{cols} grid")
    return I.sum(axis=1).reshape(rows, cols)


def top_inputs(I: np.ndarray, output: int, k: int = 2) -> list[int]:
    """Indices of the ``k`` most important inputs for one output (ties: lower index)."""
    col = np.asarray(I)[:, output]
    order = np.lexsort((np.arange(len(col)), -col))
    return [int(i) for i in order[:k]]


# ---------------------------------------------------------------------------
# pathway graph


@dataclass
class Node:
    layer: int
    index: int
    role: str
    name: str
    label: str = ""


@dataclass
class PathwayGraph:
    """Retained connections as a layered digraph.

    ``adjacency[k]`` is the boolean (prev, next) edge matrix between layer k
    and k + 1.  Node names are 1-based: ``x{i}`` for inputs, ``h{layer}_{i}``
    for hidden units (layer 1 = first hidden layer) and ``y{i}`` for outputs.
    """

    sizes: list[int]
    nodes: list[Node]
    edges: list[tuple[str, str, float]]
    adjacency: list[np.ndarray]

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]

    def to_dot(self) -> str:
        lines = ["digraph pathways {", "  rankdir=LR;"]
        for n in self.nodes:
            label = f' label="{n.label}"' if n.label else ""
            lines.append(f'  {n.name} [role="{n.role}"{label}];')
        for src, dst, w in self.edges:
            lines.append(f'  {src} -> {dst} [weight="{w:.6f}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "nodes": [
                {"name": n.name, "layer": n.layer, "index": n.index, "role": n.role, "label": n.label}
                for n in self.nodes
            ],
            "edges": [{"from": s, "to": d, "weight": w} for s, d, w in self.edges],
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _node_name(layer: int, index: int, n_layers: int) -> tuple[str, str]:
    if layer == 0:
        return f"x{index + 1}", "input"
    if layer == n_layers:
        return f"y{index + 1}", "output"
    return f"h{layer}_{index + 1}", "hidden"


def extract_pathways(pruned: PrunedNetwork, input_names=None, output_names=None) -> PathwayGraph:
    """One edge per retained connection, carrying its weight value."""
    sizes = [pruned.specs[0].input_size] + [s.output_size for s in pruned.specs]
    L = len(pruned.specs)
    nodes = []
    for layer, size in enumerate(sizes):
        for i in range(size):
            name, role = _node_name(layer, i, L)
            label = ""
            if layer == 0 and input_names:
                label = str(input_names[i])
            elif layer == L and output_names:
                label = str(output_names[i])
            nodes.append(Node(layer, i, role, name, label))
    edges, adj = [], []
    for k, (W, M) in enumerate(zip(pruned.weights, pruned.masks)):
        A = M.T > 0
        adj.append(A)
        for i, j in zip(*np.nonzero(A)):
            edges.append((_node_name(k, i, L)[0], _node_name(k + 1, j, L)[0], float(W[j, i])))
    return PathwayGraph(sizes, nodes, edges, adj)


def ancestors_of_output(graph: PathwayGraph, output: int) -> set[int]:
    """Inputs with a directed path of retained connections to ``output``."""
    if not 0 <= output < graph.n_outputs:
        raise IndexError(f"output {output} out of range [0, {graph.n_outputs})")
    adj = graph.adjacency
    live = np.zeros(graph.n_outputs, dtype=bool)
    live[output] = True
    for A in reversed(adj):
        live = A[:, live].any(axis=1)
    return {int(i) for i in np.flatnonzero(live)}


def reachability(graph: PathwayGraph) -> np.ndarray:
    """(inputs, outputs) boolean matrix: is there a path from input to output."""
    R = np.eye(graph.n_inputs, dtype=bool)
    for A in graph.adjacency:
        R = (R.astype(np.int64) @ A.astype(np.int64)) > 0
    return R


def symmetry_signatures(graph: PathwayGraph) -> list[list[int]]:
    """Partition inputs by the structure of their routes to the outputs.

    Colours are assigned from the output side in one backward sweep: output j
    gets colour ``("y", j)``; every other node gets the sorted multiset of its
    successors' colours.  Colours are interned to small integers per layer.
    An input's signature is its colour, so two inputs share a group exactly
    when their out-neighbourhoods are isomorphic under this relabelling.
    Inputs without edges all share the empty signature.  Groups are returned
    sorted by their smallest member.
    """
    adj = graph.adjacency
    colours: list = [("y", j) for j in range(graph.n_outputs)]
    for A in reversed(adj):
        raw = [tuple(sorted(colours[j] for j in np.flatnonzero(A[i]))) for i in range(A.shape[0])]
        intern = {sig: n for n, sig in enumerate(sorted(set(raw)))}
        colours = [("c", intern[sig]) if sig else ("c", -1) for sig in raw]
    groups = defaultdict(list)
    for i, c in enumerate(colours):
        groups[c].append(i)
    return sorted(groups.values(), key=lambda g: g[0])


# ---------------------------------------------------------------------------
# pattern probe


@dataclass
class ProbeResult:
    pixels: list[int]
    target: int
    support: int
    hits: int
    defined: bool
    accuracy: float | None

    def to_json(self) -> dict:
        return {
            "pixels": self.pixels,
            "target": self.target,
            "support": self.support,
            "hits": self.hits,
            "defined": self.defined,
            "accuracy": self.accuracy,
        }


def pattern_probe(dataset: Dataset, pixel_indices, target_label: int, binarize_threshold: float = 0.0) -> ProbeResult:
    """P(label == target | every probed feature > threshold).

    An empty pixel set conditions on nothing, giving the class prior.  When no
    row has all probed features active the result is flagged undefined and
    ``accuracy`` is None.
    """
    pixels = sorted({int(i) for i in pixel_indices})
    if any(not 0 <= i < dataset.p for i in pixels):
        raise IndexError(f"pixel indices must lie in [0, {dataset.p})")
    active = (dataset.features[:, pixels] > binarize_threshold).all(axis=1)
    labels = dataset.labels
    is_target = labels[:, target_label] > 0 if labels.ndim == 2 else labels == target_label
    support = int(active.sum())
    hits = int((active & is_target).sum())
    if support == 0:
        return ProbeResult(pixels, target_label, 0, 0, False, None)
    return ProbeResult(pixels, target_label, support, hits, True, hits / support)
