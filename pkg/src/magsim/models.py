"""Baseline model zoo: MLPs, joint / ego-concat GNNs, independent aggregation.

Every model owns a flat dict of named float64 parameter arrays.  A forward
pass wraps those arrays into tensors on the caller's tape; after backward
the gradients are read back from the same wrappers.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .aggregation import GnnStack
from .errors import ContractError, TapeError
from .graph import CsrMatrix, Mag


def _he(rng, fan_in, shape):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Model:
    """Common parameter bookkeeping for all trainable models."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self._taped = None

    def add_linear(self, rng, name, d_in, d_out):
        self.params[f"{name}.w"] = _he(rng, d_in, (d_in, d_out))
        self.params[f"{name}.b"] = np.zeros((1, d_out))

    def wrap(self, tape):
        self._taped = {k: T.Tensor(v, tape) for k, v in self.params.items()}
        return self._taped

    def grads(self) -> dict:
        if self._taped is None:
            raise TapeError("no forward/backward recorded yet")
        return {k: t.grad for k, t in self._taped.items() if t.grad is not None}

    def grad_norm(self, names) -> float:
        g = self.grads()
        total = sum(float(np.sum(g[n] ** 2)) for n in names if n in g)
        return float(np.sqrt(total))

    def branches(self) -> dict:
        return {"all": list(self.params)}

    def branch_grad_norms(self) -> dict:
        return {b: self.grad_norm(names) for b, names in self.branches().items()}

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_copy(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state(self, state: dict):
        for k in self.params:
            self.params[k][...] = state[k]

    # subclasses implement forward(mag, norm_adj, tape, training, rng) -> dict


def _linear(p, prefix, x):
    return T.add(T.matmul(x, p[f"{prefix}.w"]), p[f"{prefix}.b"])


def _concat_features(mag: Mag, names, tape) -> T.Tensor:
    cols = [T.Tensor(mag.features[n], None) for n in names]
    out = T.concat_cols(cols) if len(cols) > 1 else cols[0]
    return out


class MlpModel(Model):
    """Two-layer perceptron on one modality or on the early-fusion concat."""

    def __init__(self, rng, mag: Mag, modality_names, hidden, dropout):
        super().__init__()
        self.modality_names = list(modality_names)
        self.dropout = dropout
        d_in = sum(dim for name, dim in mag.modalities if name in self.modality_names)
        if d_in == 0:
            raise ContractError(f"no such modalities: {modality_names}")
        self.add_linear(rng, "fc1", d_in, hidden)
        self.add_linear(rng, "head", hidden, mag.num_classes)

    def forward(self, mag, norm_adj, tape, training, rng):
        p = self.wrap(tape)
        x = _concat_features(mag, self.modality_names, tape)
        h = T.relu(_linear(p, "fc1", x))
        h = T.dropout(h, self.dropout, rng, training)
        return {"logits": _linear(p, "head", h)}


class JointGcn(Model):
    """Joint aggregation: early-fused features projected once, then routed
    through L mean-aggregation layers and a linear head."""

    def __init__(self, rng, mag: Mag, hidden, num_layers, alpha, dropout,
                 variant="mean-mix"):
        super().__init__()
        self.dropout = dropout
        d_in = sum(dim for _, dim in mag.modalities)
        self.add_linear(rng, "proj", d_in, hidden)
        self.stack = GnnStack(num_layers, alpha, hidden_dim=hidden, variant=variant)
        for name, shape in self.stack.param_shapes("gnn").items():
            self.params[name] = _he(rng, shape[0], shape)
        self.add_linear(rng, "head", hidden, mag.num_classes)

    def forward(self, mag, norm_adj, tape, training, rng):
        p = self.wrap(tape)
        x = _concat_features(mag, mag.modality_names(), tape)
        h = T.relu(_linear(p, "proj", x))
        h = T.dropout(h, self.dropout, rng, training)
        h = self.stack.forward(h, norm_adj, p, "gnn")
        return {"logits": _linear(p, "head", h)}


class IndependentAgg(Model):
    """Independent aggregation: one GNN branch per modality, outputs
    concatenated into a shared linear fusion head."""

    def __init__(self, rng, mag: Mag, hidden, num_layers, alpha, dropout):
        super().__init__()
        self.dropout = dropout
        self.hidden = hidden
        self.stacks = {}
        for name, dim in mag.modalities:
            self.add_linear(rng, f"proj_{name}", dim, hidden)
            stack = GnnStack(num_layers, alpha, hidden_dim=hidden)
            self.stacks[name] = stack
            for pname, shape in stack.param_shapes(f"gnn_{name}").items():
                self.params[pname] = _he(rng, shape[0], shape)
        self.add_linear(rng, "head", hidden * len(mag.modalities), mag.num_classes)

    def forward(self, mag, norm_adj, tape, training, rng):
        p = self.wrap(tape)
        outs = []
        for name, _dim in mag.modalities:
            x = T.Tensor(mag.features[name], None)
            h = T.relu(_linear(p, f"proj_{name}", x))
            h = T.dropout(h, self.dropout, rng, training)
            h = self.stacks[name].forward(h, norm_adj, p, f"gnn_{name}")
            outs.append(h)
        return {"logits": _linear(p, "head", T.concat_cols(outs))}

    def branches(self):
        out = {}
        for name in self.stacks:
            out[f"proj_{name}"] = [f"proj_{name}.w", f"proj_{name}.b"]
            out[f"gnn_{name}"] = list(self.stacks[name].param_shapes(f"gnn_{name}"))
        return out
