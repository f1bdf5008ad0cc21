"""Mean-aggregation layers and stack, plus the structural ego-Jacobian.

The backbone operator mixes a node's own representation (weight alpha)
with the average of its neighbors (weight 1-alpha).  An ego-concat
variant concatenates the two instead of mixing, doubling the
pre-transform width.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .graph import CsrMatrix


def mean_aggregate(h: T.Tensor, adj: CsrMatrix, alpha: float) -> T.Tensor:
    """alpha * h + (1-alpha) * neighbor mean; differentiable in h."""
    return T.add(T.scale(h, alpha), T.scale(T.spmm(adj, h), 1.0 - alpha))


class MeanAggLayer:
    """One aggregation step, optionally followed by a linear transform.

    alpha must lie strictly inside (0,1); the boundary cases make the
    operator either a no-op or pure smoothing and are excluded from the
    analysis this layer is built to test.
    """

    def __init__(self, alpha: float, in_dim=None, out_dim=None, variant="mean-mix"):
        if not 0.0 < alpha < 1.0:
            raise ContractError(f"alpha must be in (0,1), got {alpha}")
        if variant not in ("mean-mix", "ego-concat"):
            raise ContractError(f"unknown variant {variant!r}")
        self.alpha = alpha
        self.variant = variant
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.has_weight = in_dim is not None and out_dim is not None

    def weight_shape(self):
        if not self.has_weight:
            return None
        width = 2 * self.in_dim if self.variant == "ego-concat" else self.in_dim
        return (width, self.out_dim)

    def forward(self, h: T.Tensor, adj: CsrMatrix, weight: T.Tensor | None = None) -> T.Tensor:
        if self.variant == "ego-concat":
            mixed = T.concat_cols([h, T.spmm(adj, h)])
        else:
            mixed = mean_aggregate(h, adj, self.alpha)
        if self.has_weight:
            if weight is None:
                raise ContractError("layer has a weight but none was supplied")
            mixed = T.matmul(mixed, weight)
        return mixed


class GnnStack:
    """L aggregation layers with ReLU between them (none after the last)."""

    def __init__(self, num_layers: int, alpha: float, hidden_dim=None,
                 in_dim=None, variant="mean-mix"):
        if num_layers < 1:
            raise ContractError(f"stack needs at least one layer, got {num_layers}")
        self.num_layers = num_layers
        self.alpha = alpha
        self.variant = variant
        self.layers = []
        for i in range(num_layers):
            if hidden_dim is None:
                self.layers.append(MeanAggLayer(alpha, variant=variant))
            else:
                d_in = in_dim if (i == 0 and in_dim is not None) else hidden_dim
                self.layers.append(MeanAggLayer(alpha, d_in, hidden_dim, variant))

    def param_shapes(self, prefix: str) -> dict:
        shapes = {}
        for i, layer in enumerate(self.layers):
            ws = layer.weight_shape()
            if ws is not None:
                shapes[f"{prefix}.w{i}"] = ws
        return shapes

    def forward(self, h: T.Tensor, adj: CsrMatrix, params: dict, prefix: str,
                activation: bool = True) -> T.Tensor:
        for i, layer in enumerate(self.layers):
            w = params.get(f"{prefix}.w{i}")
            h = layer.forward(h, adj, w)
            if activation and i + 1 < self.num_layers:
                h = T.relu(h)
        return h


def ego_jacobian_diag(adj: CsrMatrix, alpha: float, num_layers: int, node: int) -> float:
    """(node, node) entry of (alpha*I + (1-alpha)*A_hat)^L via L sparse
    matrix-vector products on a basis vector.  Equals the structural
    ego-gradient through L linear mean-aggregation layers."""
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha must be in (0,1), got {alpha}")
    if not adj.normalized:
        raise ContractError("ego_jacobian_diag needs a row-normalized adjacency")
    if not 0 <= node < adj.num_rows:
        raise ContractError(f"node {node} out of range [0,{adj.num_rows})")
    v = np.zeros(adj.num_rows)
    v[node] = 1.0
    sp = adj.scipy()
    for _ in range(num_layers):
        v = alpha * v + (1.0 - alpha) * (sp @ v)
    return float(v[node])
