"""Tree-structured LSTM over binary character trees.

Each character is embedded by running a binary tree LSTM bottom-up over its
component tree: leaves feed the component's input vector with zero child
states, internal nodes feed the layout operator's input vector plus their
two children's hidden/cell states.  The root hidden state is the character
embedding.

The cell is the N-ary variant with a separate forget gate per child.  For a
node with input x and children (h_l, c_l), (h_r, c_r):

    i   = sigmoid(W_i x + U_il h_l + U_ir h_r + b_i)
    f_l = sigmoid(W_fl x + U_fll h_l + U_flr h_r + b_fl)
    f_r = sigmoid(W_fr x + U_frl h_l + U_frr h_r + b_fr)
    o   = sigmoid(W_o x + U_ol h_l + U_or h_r + b_o)
    u   = tanh   (W_u x + U_ul h_l + U_ur h_r + b_u)
    c   = i*u + f_l*c_l + f_r*c_r
    h   = o*tanh(c)

All five affine transforms are stored fused as one (5*dim, dim_in + 2*dim)
matrix applied to concat(x, h_l, h_r); gate order is i, f_l, f_r, o, u.
Arithmetic is double precision and fully deterministic.  Gradients are
exact reverse-mode derivatives of <upstream, h_root>, computed by hand so
they can be validated against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .char_tree import CharTree, TreeRegistry
from .errors import DimensionMismatch, UnknownComponent, UnknownOperator
from .vocab import Vocabulary

GATE_ORDER = ("input", "forget_left", "forget_right", "output", "update")
N_GATES = len(GATE_ORDER)

DEFAULT_DIM = 512


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # clamp keeps exp() inside double range; saturation is unobservable
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


@dataclass
class HierEmbedding:
    """Root hidden and cell state of one tree pass."""

    h: np.ndarray
    c: np.ndarray


class EmbedParams:
    """Input-vector tables plus fused cell weights.

    ``comp_vecs[i]`` is the input vector of ``component_keys[i]``; likewise
    for operators.  ``cell_w`` has rows grouped by gate (GATE_ORDER) and
    columns grouped as [x | h_left | h_right].
    """

    def __init__(self, component_keys, operator_keys, comp_vecs, op_vecs,
                 cell_w, cell_b, dim_in: int, dim: int):
        self.component_keys = list(component_keys)
        self.operator_keys = list(operator_keys)
        self.comp_index = {k: i for i, k in enumerate(self.component_keys)}
        self.op_index = {k: i for i, k in enumerate(self.operator_keys)}
        self.comp_vecs = np.asarray(comp_vecs, dtype=np.float64)
        self.op_vecs = np.asarray(op_vecs, dtype=np.float64)
        self.cell_w = np.asarray(cell_w, dtype=np.float64)
        self.cell_b = np.asarray(cell_b, dtype=np.float64)
        self.dim_in = int(dim_in)
        self.dim = int(dim)
        self._check_shapes()

    def _check_shapes(self):
        d_in, d = self.dim_in, self.dim
        if self.comp_vecs.shape != (len(self.component_keys), d_in):
            raise DimensionMismatch(
                f"component table shape {self.comp_vecs.shape}, "
                f"expected {(len(self.component_keys), d_in)}")
        if self.op_vecs.shape != (len(self.operator_keys), d_in):
            raise DimensionMismatch(
                f"operator table shape {self.op_vecs.shape}, "
                f"expected {(len(self.operator_keys), d_in)}")
        if self.cell_w.shape != (N_GATES * d, d_in + 2 * d):
            raise DimensionMismatch(
                f"cell weight shape {self.cell_w.shape}, "
                f"expected {(N_GATES * d, d_in + 2 * d)}")
        if self.cell_b.shape != (N_GATES * d,):
            raise DimensionMismatch(
                f"cell bias shape {self.cell_b.shape}, expected {(N_GATES * d,)}")

    @classmethod
    def init(cls, components, operators, dim_in: int = DEFAULT_DIM,
             dim: int = DEFAULT_DIM, seed: int = 0) -> "EmbedParams":
        """Seeded uniform initialization, scale (6/(fan_in+fan_out))**0.5
        per block; biases start at zero."""
        rng = np.random.default_rng(seed)
        component_keys = sorted(components)
        operator_keys = sorted(operators)

        def uniform(shape, fan_in, fan_out):
            s = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-s, s, size=shape)

        comp_vecs = uniform((len(component_keys), dim_in), dim_in, dim)
        op_vecs = uniform((len(operator_keys), dim_in), dim_in, dim)
        cell_w = np.empty((N_GATES * dim, dim_in + 2 * dim))
        cell_w[:, :dim_in] = uniform((N_GATES * dim, dim_in), dim_in, dim)
        cell_w[:, dim_in:] = uniform((N_GATES * dim, 2 * dim), dim, dim)
        cell_b = np.zeros(N_GATES * dim)
        return cls(component_keys, operator_keys, comp_vecs, op_vecs,
                   cell_w, cell_b, dim_in, dim)

    @classmethod
    def zeros(cls, components, operators, dim_in: int, dim: int) -> "EmbedParams":
        component_keys = sorted(components)
        operator_keys = sorted(operators)
        return cls(component_keys, operator_keys,
                   np.zeros((len(component_keys), dim_in)),
                   np.zeros((len(operator_keys), dim_in)),
                   np.zeros((N_GATES * dim, dim_in + 2 * dim)),
                   np.zeros(N_GATES * dim), dim_in, dim)

    def gate_block(self, gate: str):
        """(W, U_left, U_right, b) views of one gate's transform."""
        g = GATE_ORDER.index(gate)
        d, d_in = self.dim, self.dim_in
        rows = slice(g * d, (g + 1) * d)
        w = self.cell_w[rows, :d_in]
        ul = self.cell_w[rows, d_in:d_in + d]
        ur = self.cell_w[rows, d_in + d:]
        return w, ul, ur, self.cell_b[rows]

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in fixed order (aligned with EmbedGradients)."""
        return [self.comp_vecs, self.op_vecs, self.cell_w, self.cell_b]

    def copy(self) -> "EmbedParams":
        return EmbedParams(self.component_keys, self.operator_keys,
                           self.comp_vecs.copy(), self.op_vecs.copy(),
                           self.cell_w.copy(), self.cell_b.copy(),
                           self.dim_in, self.dim)

    def validate_finite(self):
        for name, arr in zip(("components", "operators", "cell weights", "cell biases"),
                             self.arrays()):
            if not np.all(np.isfinite(arr)):
                raise DimensionMismatch(f"non-finite entries in {name} table")


class EmbedGradients:
    """Dense gradient accumulator aligned with EmbedParams.arrays()."""

    def __init__(self, params: EmbedParams):
        self._params = params
        self.comp_vecs = np.zeros_like(params.comp_vecs)
        self.op_vecs = np.zeros_like(params.op_vecs)
        self.cell_w = np.zeros_like(params.cell_w)
        self.cell_b = np.zeros_like(params.cell_b)

    def arrays(self) -> list[np.ndarray]:
        return [self.comp_vecs, self.op_vecs, self.cell_w, self.cell_b]

    def component(self, char: str) -> np.ndarray:
        return self.comp_vecs[self._params.comp_index[char]]

    def operator(self, op: str) -> np.ndarray:
        return self.op_vecs[self._params.op_index[op]]


class TreeSchedule:
    """Flattened bottom-up execution plan for one tree.

    Nodes are listed children-before-parent; the root is last.  ``xsrc`` is
    0 for component rows, 1 for operator rows; ``left``/``right`` are node
    positions or -1 at leaves.
    """

    __slots__ = ("xsrc", "xrow", "left", "right", "n")

    def __init__(self, xsrc, xrow, left, right):
        self.xsrc = xsrc
        self.xrow = xrow
        self.left = left
        self.right = right
        self.n = len(xsrc)


def compile_tree(tree: CharTree, params: EmbedParams) -> TreeSchedule:
    xsrc: list[int] = []
    xrow: list[int] = []
    left: list[int] = []
    right: list[int] = []

    def visit(node: CharTree) -> int:
        if node.is_leaf:
            row = params.comp_index.get(node.component)
            if row is None:
                raise UnknownComponent(
                    f"component {node.component!r} missing from the embedding table")
            li = ri = -1
            src = 0
        else:
            li = visit(node.left)
            ri = visit(node.right)
            row = params.op_index.get(node.op)
            if row is None:
                raise UnknownOperator(
                    f"layout operator {node.op!r} missing from the embedding table")
            src = 1
        xsrc.append(src)
        xrow.append(row)
        left.append(li)
        right.append(ri)
        return len(xsrc) - 1

    visit(tree)
    return TreeSchedule(xsrc, xrow, left, right)


class ForwardCache:
    """Intermediates of one forward pass, consumed by the backward pass."""

    __slots__ = ("Z", "G4", "Uu", "C", "TC", "H")

    def __init__(self, n: int, dim_in: int, dim: int):
        self.Z = np.empty((n, dim_in + 2 * dim))
        self.G4 = np.empty((n, 4 * dim))
        self.Uu = np.empty((n, dim))
        self.C = np.empty((n, dim))
        self.TC = np.empty((n, dim))
        self.H = np.empty((n, dim))


def forward(sched: TreeSchedule, params: EmbedParams) -> ForwardCache:
    d, d_in = params.dim, params.dim_in
    cache = ForwardCache(sched.n, d_in, d)
    zeros = np.zeros(d)
    tables = (params.comp_vecs, params.op_vecs)
    for idx in range(sched.n):
        li = sched.left[idx]
        ri = sched.right[idx]
        x = tables[sched.xsrc[idx]][sched.xrow[idx]]
        hl = cache.H[li] if li >= 0 else zeros
        hr = cache.H[ri] if ri >= 0 else zeros
        z = cache.Z[idx]
        z[:d_in] = x
        z[d_in:d_in + d] = hl
        z[d_in + d:] = hr
        a = params.cell_w @ z + params.cell_b
        g4 = _sigmoid(a[:4 * d])
        u = np.tanh(a[4 * d:])
        i, fl, fr = g4[:d], g4[d:2 * d], g4[2 * d:3 * d]
        cl = cache.C[li] if li >= 0 else zeros
        cr = cache.C[ri] if ri >= 0 else zeros
        c = i * u + fl * cl + fr * cr
        tc = np.tanh(c)
        cache.G4[idx] = g4
        cache.Uu[idx] = u
        cache.C[idx] = c
        cache.TC[idx] = tc
        cache.H[idx] = g4[3 * d:] * tc
    return cache


def backward(sched: TreeSchedule, params: EmbedParams, cache: ForwardCache,
             upstream: np.ndarray, grads: EmbedGradients) -> None:
    """Accumulate d<upstream, h_root>/dparams into ``grads``."""
    d, d_in = params.dim, params.dim_in
    if upstream.shape != (d,):
        raise DimensionMismatch(f"upstream shape {upstream.shape}, expected {(d,)}")
    n = sched.n
    dH = np.zeros((n, d))
    dC = np.zeros((n, d))
    dH[n - 1] = upstream
    grad_tables = (grads.comp_vecs, grads.op_vecs)
    zeros = np.zeros(d)
    for idx in range(n - 1, -1, -1):
        dh = dH[idx]
        g4 = cache.G4[idx]
        i, fl, fr, o = g4[:d], g4[d:2 * d], g4[2 * d:3 * d], g4[3 * d:]
        u = cache.Uu[idx]
        tc = cache.TC[idx]
        li = sched.left[idx]
        ri = sched.right[idx]
        cl = cache.C[li] if li >= 0 else zeros
        cr = cache.C[ri] if ri >= 0 else zeros

        do = dh * tc
        dc = dC[idx] + dh * o * (1.0 - tc * tc)
        dgate4 = np.concatenate([dc * u, dc * cl, dc * cr, do])
        da = np.concatenate([dgate4 * g4 * (1.0 - g4),
                             (dc * i) * (1.0 - u * u)])
        grads.cell_w += np.outer(da, cache.Z[idx])
        grads.cell_b += da
        dz = params.cell_w.T @ da
        grad_tables[sched.xsrc[idx]][sched.xrow[idx]] += dz[:d_in]
        if li >= 0:
            dH[li] += dz[d_in:d_in + d]
            dC[li] += dc * fl
        if ri >= 0:
            dH[ri] += dz[d_in + d:]
            dC[ri] += dc * fr


def embed(tree: CharTree, params: EmbedParams) -> HierEmbedding:
    """Bottom-up pass over one tree; returns the root (h, c)."""
    sched = compile_tree(tree, params)
    cache = forward(sched, params)
    return HierEmbedding(h=cache.H[-1].copy(), c=cache.C[-1].copy())


def embed_grad(tree: CharTree, params: EmbedParams,
               upstream: np.ndarray) -> EmbedGradients:
    """Exact gradients of <upstream, h_root> w.r.t. every parameter.

    Entries not on the tree's data path come back exactly zero.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    sched = compile_tree(tree, params)
    cache = forward(sched, params)
    grads = EmbedGradients(params)
    backward(sched, params, cache, upstream, grads)
    return grads


def embed_all(registry: TreeRegistry, vocab: Vocabulary,
              params: EmbedParams) -> np.ndarray:
    """Embedding matrix with one row per vocabulary character, in order."""
    out = np.empty((len(vocab), params.dim))
    for idx, char in enumerate(vocab):
        try:
            out[idx] = embed(registry.tree_for(char), params).h
        except (UnknownComponent, UnknownOperator) as exc:
            raise type(exc)(f"character {char!r}: {exc}") from None
    return out
