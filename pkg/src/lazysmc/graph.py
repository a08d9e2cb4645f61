"""Lazy random-variable graph with delayed sampling.

Nodes move through three states: uninitialized (declared, nothing computed),
marginalized (an analytic marginal is being carried forward), and realized
(a concrete value is fixed). Linear-Gaussian parent/child pairs are the one
supported conjugacy: chains of such nodes are marginalized forward with the
Kalman predict formula and conditioned backward with the Kalman update, so
observing the end of a chain and then realizing its interior reproduces a
forward filter followed by backward sampling. Everything else is pruned:
a non-Gaussian or nonlinear dependency forces the parent to be realized and
its value folded into the child's prior.

The marginalized nodes of any ancestry tree form a single path at all times
(at most one marginalized child per node); grafting a node prunes competing
branches before extending the path to it.

An arena owns the nodes of one model execution and is never shared between
executions; cloning an arena (or anything holding node handles, via
``copy.deepcopy``) produces an id-stable copy so handles remain valid.
"""

from __future__ import annotations

import copy
import enum
import math

import numpy as np

from .dists import (
    BernoulliDist,
    CategoricalDist,
    Gaussian1D,
    GaussianND,
    PoissonDist,
    UniformBox,
    cholesky_psd,
)

__all__ = [
    "NodeState",
    "GraphError",
    "UnsupportedFormError",
    "AffineExpr",
    "LazyGaussian",
    "Normal",
    "NodeRef",
    "RandomNode",
    "GraphArena",
    "marginalize_forward",
    "condition_backward",
]

_ROOT_DISTS = (Gaussian1D, GaussianND, UniformBox, PoissonDist, BernoulliDist, CategoricalDist)


class NodeState(enum.Enum):
    UNINITIALIZED = 0
    MARGINALIZED = 1
    REALIZED = 2


class GraphError(RuntimeError):
    pass


class UnsupportedFormError(GraphError):
    """Raised when a dependency is not in the supported linear-Gaussian form."""


def _apply_link(scale, offset, parent_value):
    if isinstance(scale, np.ndarray):
        return scale @ parent_value + offset
    return scale * parent_value + offset


class AffineExpr:
    """A lazy affine function of a single node: scale * node + offset.

    Built by operator overloading on :class:`NodeRef`; composing two affine
    operations folds into one. Anything non-affine must go through
    ``NodeRef.value()``, which realizes the node.
    """

    __slots__ = ("arena", "nid", "scale", "offset")
    __array_ufunc__ = None

    def __init__(self, arena, nid, scale, offset):
        self.arena = arena
        self.nid = nid
        self.scale = scale
        self.offset = offset

    def _with(self, scale, offset):
        return AffineExpr(self.arena, self.nid, scale, offset)

    def __mul__(self, c):
        c = _as_scalar(c)
        return self._with(_scale_mul(c, self.scale), _off_mul(c, self.offset))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self.__mul__(1.0 / _as_scalar(c))

    def __rmatmul__(self, mat):
        mat = np.asarray(mat, dtype=float)
        scale = mat @ self.scale if isinstance(self.scale, np.ndarray) else mat * self.scale
        if isinstance(self.offset, np.ndarray):
            offset = mat @ self.offset
        elif self.offset == 0.0:
            offset = 0.0
        else:
            raise UnsupportedFormError("matrix applied to expression with scalar offset")
        return self._with(scale, offset)

    def __add__(self, other):
        if isinstance(other, (NodeRef, AffineExpr)):
            other = _realize_operand(other)  # second parent of a sum is realized
        return self._with(self.scale, _off_add(self.offset, other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.__add__(_neg(other))

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __neg__(self):
        return self.__mul__(-1.0)

    def __repr__(self):
        return f"AffineExpr(node={self.nid})"


class NodeRef:
    """Handle to one node in an arena; supports affine arithmetic.

    Multiplying two node handles realizes the left operand (the coefficient
    position); adding two realizes the right. Any other function of a node
    must call :meth:`value` first.
    """

    __slots__ = ("arena", "nid")
    __array_ufunc__ = None

    def __init__(self, arena: "GraphArena", nid: int):
        self.arena = arena
        self.nid = nid

    @property
    def node(self) -> "RandomNode":
        return self.arena._nodes[self.nid]

    @property
    def state(self) -> NodeState:
        return self.node.state

    @property
    def marginal(self):
        return self.node.marginal

    @property
    def stored_value(self):
        return self.node.value

    def value(self):
        """Realize this node if needed and return its value."""
        return self.arena.realize(self.nid)

    def realize(self):
        return self.arena.realize(self.nid)

    def observe(self, given) -> float:
        return self.arena.observe(self.nid, given)

    def predictive_log_pdf(self, candidate) -> float:
        return self.arena.predictive_log_pdf(self.nid, candidate)

    def predictive_pdf(self, candidate) -> float:
        return math.exp(self.arena.predictive_log_pdf(self.nid, candidate))

    def _expr(self):
        return AffineExpr(self.arena, self.nid, 1.0, 0.0)

    def __mul__(self, other):
        if isinstance(other, (NodeRef, AffineExpr)):
            # product of two randoms: realize self, keep the other lazy
            return _as_expr(other).__mul__(_as_scalar_value(self))
        return self._expr().__mul__(other)

    def __rmul__(self, other):
        return self._expr().__mul__(other)

    def __truediv__(self, c):
        return self._expr().__truediv__(c)

    def __rmatmul__(self, mat):
        return self._expr().__rmatmul__(mat)

    def __add__(self, other):
        return self._expr().__add__(other)

    def __radd__(self, other):
        return self._expr().__add__(other)

    def __sub__(self, other):
        return self._expr().__sub__(other)

    def __rsub__(self, other):
        return (-self._expr()).__add__(other)

    def __neg__(self):
        return self._expr().__neg__()

    def __deepcopy__(self, memo):
        return NodeRef(copy.deepcopy(self.arena, memo), self.nid)

    def __repr__(self):
        return f"NodeRef({self.nid}, {self.node.state.name})"


def _as_expr(x) -> AffineExpr:
    return x._expr() if isinstance(x, NodeRef) else x


def _realize_operand(x):
    if isinstance(x, NodeRef):
        return x.value()
    value = x.arena.realize(x.nid)
    return _apply_link(x.scale, x.offset, value)


def _as_scalar_value(ref: NodeRef) -> float:
    v = ref.value()
    if isinstance(v, np.ndarray):
        if v.size != 1:
            raise UnsupportedFormError("vector-valued coefficient in a product")
        return float(v[0])
    return float(v)


def _as_scalar(c) -> float:
    if isinstance(c, (NodeRef, AffineExpr)):
        v = _realize_operand(c)
        if isinstance(v, np.ndarray):
            raise UnsupportedFormError("vector-valued coefficient in a product")
        return float(v)
    if isinstance(c, np.ndarray):
        raise UnsupportedFormError("array scaling of an expression is not affine-supported")
    return float(c)


def _scale_mul(c, scale):
    return c * scale


def _off_mul(c, offset):
    return c * offset


def _off_add(offset, other):
    other = np.asarray(other, dtype=float) if isinstance(other, (list, tuple, np.ndarray)) else float(other)
    return offset + other


def _neg(x):
    if isinstance(x, (NodeRef, AffineExpr)):
        return _as_expr(x).__neg__()
    return -np.asarray(x, dtype=float) if isinstance(x, (list, tuple, np.ndarray)) else -float(x)


class LazyGaussian:
    """Gaussian whose mean is an affine function of another node.

    ``noise`` is a variance (scalar chain) or covariance matrix (vector
    chain); it is the conditional noise added on top of the affine mean.
    """

    __slots__ = ("mean_expr", "noise")

    def __init__(self, mean_expr, noise):
        if isinstance(mean_expr, NodeRef):
            mean_expr = mean_expr._expr()
        if not isinstance(mean_expr, AffineExpr):
            raise TypeError("LazyGaussian mean must involve a node handle")
        self.mean_expr = mean_expr
        self.noise = np.asarray(noise, dtype=float) if not np.isscalar(noise) else float(noise)


def Normal(mean, noise):
    """Gaussian constructor accepting eager or lazy means.

    A plain number / vector mean gives a concrete :class:`Gaussian1D` or
    :class:`GaussianND`; a node handle or affine expression gives a
    :class:`LazyGaussian` that keeps the dependency analytic.
    """
    if isinstance(mean, (NodeRef, AffineExpr)):
        return LazyGaussian(mean, noise)
    if np.isscalar(noise):
        return Gaussian1D(mean, noise)
    return GaussianND(mean, noise)


class RandomNode:
    """One random variable: state machine plus prior/marginal bookkeeping.

    ``parent``/``scale``/``offset``/``noise`` describe an affine-Gaussian
    link; they are cleared ("folded") once the parent is realized. ``child``
    points at this node's single marginalized child, if any.
    """

    __slots__ = (
        "nid", "state", "base_dist", "parent", "scale", "offset", "noise",
        "dim", "marginal", "value", "child",
    )

    def __init__(self, nid, base_dist, parent, scale, offset, noise, dim):
        self.nid = nid
        self.state = NodeState.UNINITIALIZED
        self.base_dist = base_dist
        self.parent = parent
        self.scale = scale
        self.offset = offset
        self.noise = noise
        self.dim = dim
        self.marginal = None
        self.value = None
        self.child = None

    def copy(self) -> "RandomNode":
        # shallow: distributions, link coefficients and realized values are
        # immutable and safely shared between clones
        dup = object.__new__(RandomNode)
        dup.nid = self.nid
        dup.state = self.state
        dup.base_dist = self.base_dist
        dup.parent = self.parent
        dup.scale = self.scale
        dup.offset = self.offset
        dup.noise = self.noise
        dup.dim = self.dim
        dup.marginal = self.marginal
        dup.value = self.value
        dup.child = self.child
        return dup


def _dist_dim(dist):
    if isinstance(dist, (GaussianND, UniformBox)):
        return dist.dim
    return None


class GraphArena:
    """Id-indexed store of nodes owned by exactly one model execution.

    The arena also carries the execution's random stream: realization forced
    at expression-build time (products of randoms, pruning) draws from it.
    """

    def __init__(self, rng: np.random.Generator):
        self._nodes: dict[int, RandomNode] = {}
        self._next_id = 0
        self.rng = rng

    # -- construction -------------------------------------------------

    def assume(self, dist_expr) -> NodeRef:
        """Declare a random variable; nothing is sampled or evaluated yet."""
        if isinstance(dist_expr, LazyGaussian):
            node = self._assume_linked(dist_expr)
        elif isinstance(dist_expr, _ROOT_DISTS):
            node = self._new_node(dist_expr, None, None, None, None, _dist_dim(dist_expr))
        else:
            raise TypeError(f"cannot assume from {type(dist_expr).__name__}")
        return NodeRef(self, node.nid)

    def _assume_linked(self, lg: LazyGaussian) -> RandomNode:
        expr, noise = lg.mean_expr, lg.noise
        if expr.arena is not self:
            raise GraphError("expression belongs to a different arena")
        parent = self._nodes[expr.nid]
        scale, offset = expr.scale, expr.offset
        dim = self._check_link_dims(parent, scale, offset, noise)
        if parent.state is NodeState.REALIZED:
            mean = _apply_link(scale, offset, parent.value)
            base = Gaussian1D(mean, noise) if dim is None else GaussianND(mean, noise)
            return self._new_node(base, None, None, None, None, dim)
        return self._new_node(None, expr.nid, scale, offset, noise, dim)

    def _check_link_dims(self, parent, scale, offset, noise):
        """Validate an affine link; returns the child dimension (None = scalar)."""
        if np.isscalar(noise):
            if parent.dim is not None:
                raise GraphError("scalar noise with vector parent")
            if isinstance(scale, np.ndarray) or isinstance(offset, np.ndarray):
                raise GraphError("vector link coefficients on a scalar chain")
            if not noise > 0.0:
                raise GraphError("noise variance must be positive")
            return None
        m = noise.shape[0]
        if noise.shape != (m, m):
            raise GraphError(f"noise covariance must be square, got {noise.shape}")
        if parent.dim is None:
            raise GraphError("vector noise with scalar parent")
        if isinstance(scale, np.ndarray):
            if scale.shape != (m, parent.dim):
                raise GraphError(
                    f"link matrix {scale.shape} incompatible with parent dim "
                    f"{parent.dim} and noise dim {m}")
        elif parent.dim != m:
            raise GraphError("scalar-scaled link requires matching dimensions")
        if isinstance(offset, np.ndarray) and offset.shape != (m,):
            raise GraphError(f"offset shape {offset.shape} != ({m},)")
        return m

    def _new_node(self, base, parent, scale, offset, noise, dim) -> RandomNode:
        nid = self._next_id
        self._next_id += 1
        node = RandomNode(nid, base, parent, scale, offset, noise, dim)
        self._nodes[nid] = node
        return node

    # -- delayed-sampling operations ----------------------------------

    def graft(self, nid: int) -> None:
        """Make the node the terminal node of its tree's marginalized path."""
        node = self._nodes[nid]
        if node.state is NodeState.REALIZED:
            raise GraphError(f"cannot graft realized node {nid}")
        if node.state is NodeState.MARGINALIZED:
            if node.child is not None:
                self._prune(node.child)
            return
        if node.parent is not None:
            parent = self._nodes[node.parent]
            if parent.state is not NodeState.REALIZED and self._gaussian_form(parent):
                self.graft(node.parent)
                node.marginal = marginalize_forward(
                    parent.marginal, node.scale, node.offset, node.noise)
                node.state = NodeState.MARGINALIZED
                parent.child = nid
                return
            if parent.state is not NodeState.REALIZED:
                self.realize(node.parent)  # unsupported form: prune the parent
            self._fold_parent(node)
        node.marginal = node.base_dist
        node.state = NodeState.MARGINALIZED

    def _gaussian_form(self, parent: RandomNode) -> bool:
        if parent.state is NodeState.MARGINALIZED:
            return isinstance(parent.marginal, (Gaussian1D, GaussianND))
        return parent.parent is not None or isinstance(
            parent.base_dist, (Gaussian1D, GaussianND))

    def _fold_parent(self, node: RandomNode) -> None:
        parent = self._nodes[node.parent]
        mean = _apply_link(node.scale, node.offset, parent.value)
        if node.dim is None:
            node.base_dist = Gaussian1D(mean, node.noise)
        else:
            node.base_dist = GaussianND(np.broadcast_to(mean, (node.dim,)), node.noise)
        node.parent = None
        node.scale = node.offset = node.noise = None

    def _prune(self, nid: int) -> None:
        node = self._nodes[nid]
        if node.child is not None:
            self._prune(node.child)
        self._assign(node, node.marginal.sample(self.rng))

    def realize(self, nid: int):
        """Force a value for the node; idempotent once realized.

        Realizing the tip of a marginalized chain conditions its parent
        analytically, so realizing a chain back-to-front yields an exact
        joint draw given everything observed so far.
        """
        node = self._nodes[nid]
        if node.state is NodeState.REALIZED:
            return node.value
        self.graft(nid)
        value = node.marginal.sample(self.rng)
        self._assign(node, value)
        return value

    def observe(self, nid: int, given) -> float:
        """Fix the node at ``given``; returns its log marginal density."""
        node = self._nodes[nid]
        if node.state is NodeState.REALIZED:
            raise GraphError(f"observe after realize on node {nid}")
        self.graft(nid)
        if node.dim is not None:
            given = np.asarray(given, dtype=float)
        log_w = node.marginal.log_pdf(given)
        self._assign(node, given)
        return log_w

    def predictive_log_pdf(self, nid: int, candidate) -> float:
        """Log density of a candidate under the node's current marginal.

        The node is grafted (so ancestors may become marginalized) but not
        realized; a subsequent observe of the same value returns this exact
        log weight.
        """
        node = self._nodes[nid]
        if node.state is NodeState.REALIZED:
            raise GraphError(f"predictive query on realized node {nid}")
        self.graft(nid)
        return node.marginal.log_pdf(candidate)

    def _assign(self, node: RandomNode, value) -> None:
        node.value = value
        node.state = NodeState.REALIZED
        if node.parent is not None:
            parent = self._nodes[node.parent]
            if parent.child == node.nid:
                parent.marginal = condition_backward(
                    parent.marginal, node.scale, node.offset, node.noise, value)
                parent.child = None
        node.marginal = None

    # -- housekeeping ---------------------------------------------------

    def node(self, nid: int) -> RandomNode:
        return self._nodes[nid]

    def __len__(self) -> int:
        return len(self._nodes)

    def clone(self, rng: np.random.Generator | None = None) -> "GraphArena":
        dup = copy.deepcopy(self)
        if rng is not None:
            dup.rng = rng
        return dup

    def __deepcopy__(self, memo):
        dup = object.__new__(GraphArena)
        memo[id(self)] = dup
        dup._next_id = self._next_id
        replacement = memo.get(id(self.rng))
        dup.rng = replacement if replacement is not None else copy.deepcopy(self.rng, memo)
        dup._nodes = {nid: node.copy() for nid, node in self._nodes.items()}
        return dup

    def assert_single_m_path(self) -> None:
        """Debug check: marginalized nodes form a path in every ancestry tree."""
        marg_children: dict[int, list[int]] = {}
        for node in self._nodes.values():
            if node.state is NodeState.MARGINALIZED and node.parent is not None:
                marg_children.setdefault(node.parent, []).append(node.nid)
                if self._nodes[node.parent].state is NodeState.UNINITIALIZED:
                    raise AssertionError(
                        f"marginalized node {node.nid} has uninitialized parent")
        for pid, kids in marg_children.items():
            if len(kids) > 1:
                raise AssertionError(f"node {pid} has marginalized children {kids}")
            if self._nodes[pid].state is NodeState.MARGINALIZED and \
                    self._nodes[pid].child != kids[0]:
                raise AssertionError(f"child pointer of node {pid} is stale")
        for node in self._nodes.values():
            if node.child is not None:
                child = self._nodes[node.child]
                if child.state is not NodeState.MARGINALIZED or child.parent != node.nid:
                    raise AssertionError(f"dangling child pointer on node {node.nid}")


# -- closed-form Gaussian steps ---------------------------------------


def marginalize_forward(parent_marginal, scale, offset, noise):
    """Marginal of scale*parent + offset + N(0, noise) for a Gaussian parent.

    Scalar case: N(a*mu + b, a^2*var + q). Vector case: N(A mu + b,
    A Sigma A' + Q), where a scalar ``scale`` acts as a multiple of the
    identity.
    """
    if isinstance(parent_marginal, Gaussian1D):
        if not np.isscalar(noise):
            raise UnsupportedFormError("vector noise under scalar parent")
        mean = scale * parent_marginal.mean + offset
        return Gaussian1D(mean, scale * scale * parent_marginal.var + noise)
    if isinstance(parent_marginal, GaussianND):
        mu, sigma = parent_marginal.mean, parent_marginal.cov
        if isinstance(scale, np.ndarray):
            mean = scale @ mu + offset
            cov = scale @ sigma @ scale.T + noise
        else:
            mean = scale * mu + offset
            cov = (scale * scale) * sigma + noise
        return GaussianND._unchecked(np.asarray(mean, dtype=float),
                                     0.5 * (cov + cov.T))
    raise UnsupportedFormError(
        f"cannot marginalize through a {type(parent_marginal).__name__} parent")


def condition_backward(parent_marginal, scale, offset, noise, child_value):
    """Parent posterior after observing child = scale*parent + offset + noise.

    The Kalman update: gain K = Sigma A' (A Sigma A' + Q)^-1.
    """
    if isinstance(parent_marginal, Gaussian1D):
        m, v = parent_marginal.mean, parent_marginal.var
        s = scale * scale * v + noise
        gain = scale * v / s
        mean = m + gain * (child_value - (scale * m + offset))
        return Gaussian1D(mean, v * noise / s)
    if isinstance(parent_marginal, GaussianND):
        mu, sigma = parent_marginal.mean, parent_marginal.cov
        child_value = np.asarray(child_value, dtype=float)
        if isinstance(scale, np.ndarray):
            predicted = scale @ mu + offset
            cross = scale @ sigma                       # A Sigma, (m, n)
            innov_cov = scale @ sigma @ scale.T + noise
        else:
            predicted = scale * mu + offset
            cross = scale * sigma
            innov_cov = (scale * scale) * sigma + noise
        innov_cov = 0.5 * (innov_cov + innov_cov.T)
        chol = cholesky_psd(innov_cov)  # jitter retry inside; error if singular
        gain = np.linalg.solve(chol.T, np.linalg.solve(chol, cross)).T  # Sigma A' S^-1
        mean = mu + gain @ (child_value - predicted)
        cov = sigma - gain @ cross
        return GaussianND._unchecked(mean, 0.5 * (cov + cov.T))
    raise UnsupportedFormError(
        f"cannot condition a {type(parent_marginal).__name__} parent")
