"""Quadratic penalties on parameter blocks.

All penalties are block quadratic forms tau(beta) = beta' P beta built
from difference operators:

    ridge   sum_t beta_t^2                    (whole block to zero)
    arc1    sum_t (beta_t - beta_{t-1})^2     (whole block to a constant)
    arc2    s-fold differences; on the association block two streams,
            one differencing across the first response's cuts and one
            across the second's

and an asymmetric ordering penalty on the fitted marginal predictors,

    tau(beta) = sum_i n_i sum_{k=1,2} lambda_k
                sum_r 1[d_eta <= margin] (d_eta - margin)^2,

with d_eta the consecutive predictor differences of margin k at profile
i.  Its indicator depends on beta, so it is rebuilt each scoring step.

Only category-dependent blocks (and intercept blocks of length > 1) are
penalizable; a single collapsed association intercept silently receives
no penalty columns.

>>> difference_matrix(4, 1)
array([[-1.,  1.,  0.,  0.],
       [ 0., -1.,  1.,  0.],
       [ 0.,  0., -1.,  1.]])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .model_core import INTERCEPT, Dataset, ModelSpec, OrdinalPair, ParamLayout, design_matrices

_FAMILIES = ("none", "ridge", "arc1", "arc2", "ordering", "composite")


def difference_matrix(length: int, order: int) -> np.ndarray:
    """Order-th difference operator, shape (length - order, length)."""
    if order < 1 or order >= length:
        raise ValueError(f"difference order {order} invalid for block length {length}")
    D = np.eye(length)
    for _ in range(order):
        D = D[1:] - D[:-1]
    return D


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty family plus per-(equation, variable) smoothing values.

    Block keys are (equation, variable) with variable INTERCEPT or a
    covariate name.  arc2 keys streams 1..4 instead of equations:
    streams 1 and 2 act on the two marginal equations, streams 3 and 4
    on the association block (differences across the first and second
    response's cut points respectively).
    """

    family: str
    lambdas: tuple = ()            # ridge/arc1: ((eq, var), lam)
    streams: tuple = ()            # arc2: ((stream, var), (lam, order))
    lambda1: float = 0.0           # ordering
    lambda2: float = 0.0
    margin: float = 0.0
    parts: tuple = ()              # composite

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown penalty family {self.family!r}")
        for _, lam in self.lambdas:
            if lam < 0:
                raise ValueError("smoothing values must be nonnegative")
        for _, (lam, order) in self.streams:
            if lam < 0:
                raise ValueError("smoothing values must be nonnegative")
            if int(order) < 1:
                raise ValueError("difference order must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("smoothing values must be nonnegative")
        if self.margin < 0:
            raise ValueError("ordering margin must be nonnegative")

    @classmethod
    def none(cls) -> "PenaltyConfig":
        return cls("none")

    @classmethod
    def ridge(cls, lambdas: dict) -> "PenaltyConfig":
        return cls("ridge", lambdas=tuple(sorted(lambdas.items())))

    @classmethod
    def arc1(cls, lambdas: dict) -> "PenaltyConfig":
        return cls("arc1", lambdas=tuple(sorted(lambdas.items())))

    @classmethod
    def arc2(cls, lambdas: dict, orders: dict) -> "PenaltyConfig":
        streams = {}
        for key, lam in lambdas.items():
            streams[key] = (float(lam), int(orders.get(key, 1)))
        return cls("arc2", streams=tuple(sorted(streams.items())))

    @classmethod
    def ordering(
        cls, lambda1: float, lambda2: float, margin: float = 0.0
    ) -> "PenaltyConfig":
        return cls("ordering", lambda1=lambda1, lambda2=lambda2, margin=margin)

    @classmethod
    def composite(cls, *parts: "PenaltyConfig") -> "PenaltyConfig":
        flat: list[PenaltyConfig] = []
        for p in parts:
            flat.extend(p.parts if p.family == "composite" else [p])
        return cls("composite", parts=tuple(flat))

    @property
    def is_null(self) -> bool:
        if self.family == "none":
            return True
        if self.family == "composite":
            return all(p.is_null for p in self.parts)
        return False

    def static_parts(self) -> list["PenaltyConfig"]:
        if self.family == "composite":
            return [p for p in self.parts if p.family not in ("ordering", "none")]
        if self.family in ("ordering", "none"):
            return []
        return [self]

    def ordering_parts(self) -> list["PenaltyConfig"]:
        if self.family == "composite":
            return [p for p in self.parts if p.family == "ordering"]
        if self.family == "ordering":
            return [self]
        return []

    def block_operators(
        self, spec: ModelSpec
    ) -> list[tuple[tuple[int, str], float, np.ndarray]]:
        """Per-block operators: tau = sum lam * ||K beta_block||^2.

        Ordering parts are excluded (their operator depends on beta).
        """
        layout = ParamLayout(spec)
        out: list[tuple[tuple[int, str], float, np.ndarray]] = []
        for part in self.static_parts():
            if part.family in ("ridge", "arc1"):
                for (k, var), lam in part.lambdas:
                    b = _penalizable_block(layout, k, var)
                    if b is None:
                        continue
                    if part.family == "ridge":
                        K = np.eye(b.length)
                    else:
                        if b.length == 1:
                            continue  # no differences on a singleton block
                        K = difference_matrix(b.length, 1)
                    out.append(((k, var), lam, K))
            else:  # arc2
                pair = spec.pair
                for (h, var), (lam, order) in part.streams:
                    if h not in (1, 2, 3, 4):
                        raise ValueError(f"arc2 stream must be 1..4, got {h}")
                    k = h if h <= 2 else 3
                    b = _penalizable_block(layout, k, var)
                    if b is None:
                        continue
                    if k <= 2:
                        K = difference_matrix(b.length, order)
                    elif h == 3:
                        # differences across the first response's cuts
                        K = np.kron(
                            difference_matrix(pair.m1, order), np.eye(pair.m2)
                        )
                    else:
                        K = np.kron(
                            np.eye(pair.m1), difference_matrix(pair.m2, order)
                        )
                    out.append(((k, var), lam, K))
        return out


def _penalizable_block(layout: ParamLayout, k: int, var: str):
    if not layout.has_block(k, var):
        raise ValueError(f"penalty targets missing block eq{k}:{var}")
    b = layout.block(k, var)
    if var == INTERCEPT:
        # a collapsed association intercept gets no penalty columns
        return None if b.length == 1 else b
    if not b.per_category:
        raise ValueError(
            f"penalty targets global coefficient eq{k}:{var}; only "
            "category-dependent blocks and intercepts are penalizable"
        )
    return b


def build_penalty_matrix(config: PenaltyConfig, spec: ModelSpec) -> np.ndarray:
    """Assemble P with beta' P beta equal to the summed penalty.

    Rejects the ordering family: its matrix depends on beta and the
    data, see build_ordering_penalty.
    """
    if config.ordering_parts():
        raise ValueError(
            "ordering penalty depends on beta; use build_ordering_penalty"
        )
    layout = ParamLayout(spec)
    P = np.zeros((layout.size, layout.size))
    for (k, var), lam, K in config.block_operators(spec):
        b = layout.block(k, var)
        P[b.slice, b.slice] += lam * (K.T @ K)
    return P


def penalty_value(config: PenaltyConfig, spec: ModelSpec, beta: np.ndarray) -> float:
    """tau(beta) for static penalty families."""
    return PenaltyOperator(config, spec).tau(np.asarray(beta, dtype=float))


class PenaltyOperator:
    """Static penalty kept in factored form.

    Evaluating tau and P beta through the block operators K avoids the
    catastrophic cancellation of the assembled quadratic form: near an
    optimum K beta is tiny while beta is not, so beta' P beta computed
    directly loses ~lambda * eps * |beta|^2 of absolute accuracy, which
    at lambda >= 1e8 dwarfs the quantities themselves.
    """

    def __init__(self, config: PenaltyConfig, spec: ModelSpec):
        if config.ordering_parts():
            raise ValueError("ordering penalty depends on beta")
        layout = ParamLayout(spec)
        self.size = layout.size
        self.terms = [
            (layout.block(k, var).slice, lam, K)
            for (k, var), lam, K in config.block_operators(spec)
            if lam > 0.0
        ]

    def tau(self, beta: np.ndarray) -> float:
        total = 0.0
        for sl, lam, K in self.terms:
            w = K @ beta[sl]
            total += lam * float(w @ w)
        return total

    def grad(self, beta: np.ndarray) -> np.ndarray:
        """P beta, evaluated as sum lam K'(K beta)."""
        out = np.zeros(self.size)
        for sl, lam, K in self.terms:
            out[sl] += lam * (K.T @ (K @ beta[sl]))
        return out

    def matrix(self) -> np.ndarray:
        P = np.zeros((self.size, self.size))
        for sl, lam, K in self.terms:
            P[sl, sl] += lam * (K.T @ K)
        return P


# ---------------------------------------------------------------------------
# ordering penalty


def marginal_difference_selector(pair: OrdinalPair) -> np.ndarray:
    """Rows extracting consecutive marginal-predictor differences from eta."""
    rows = []
    for r in range(2, pair.m1 + 1):
        row = np.zeros(pair.n_eta)
        row[r] = 1.0
        row[r - 1] = -1.0
        rows.append(row)
    for c in range(2, pair.m2 + 1):
        row = np.zeros(pair.n_eta)
        row[pair.m1 + c] = 1.0
        row[pair.m1 + c - 1] = -1.0
        rows.append(row)
    return np.array(rows) if rows else np.zeros((0, pair.n_eta))


def ordering_terms(
    X: np.ndarray,
    weights: np.ndarray,
    pair: OrdinalPair,
    beta: np.ndarray,
    lambda1: float,
    lambda2: float,
    margin: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Quadratic expansion of the ordering penalty at beta.

    Returns (P, q, const) with tau(b) = b'Pb - 2 q'b + const for the
    indicator frozen at the supplied beta.  With margin 0 this is the
    pure quadratic form beta' P beta.
    """
    state = ordering_state(X, weights, pair, beta, lambda1, lambda2, margin)
    return state.matrix(), state.q_vector(), state.const()


@dataclass(frozen=True)
class OrderingState:
    """Ordering penalty with the violation set frozen at one iterate.

    tau(b) = sum coef * (Gb - margin)^2 over the frozen violations; grad
    and tau are evaluated through the rows of G so heavy smoothing values
    do not wash out the small residuals Gb - margin.
    """

    G: np.ndarray      # (groups, rows, params)
    coef: np.ndarray   # (groups, rows), zero off the violation set
    margin: float

    def tau(self, beta: np.ndarray) -> float:
        v = self.G @ beta - self.margin
        return float((self.coef * v * v).sum())

    def grad(self, beta: np.ndarray) -> np.ndarray:
        """P beta - q, the gradient of tau / 2."""
        v = self.coef * (self.G @ beta - self.margin)
        return np.einsum("gr,grp->p", v, self.G, optimize=True)

    def matrix(self) -> np.ndarray:
        return np.einsum("gr,gra,grb->ab", self.coef, self.G, self.G, optimize=True)

    def q_vector(self) -> np.ndarray:
        return self.margin * np.einsum("gr,gra->a", self.coef, self.G, optimize=True)

    def q_bound(self) -> np.ndarray:
        """Componentwise bound |q| used for score noise floors."""
        return abs(self.margin) * np.einsum(
            "gr,gra->a", self.coef, np.abs(self.G), optimize=True
        )

    def const(self) -> float:
        return float(self.margin * self.margin * self.coef.sum())


def ordering_state(
    X: np.ndarray,
    weights: np.ndarray,
    pair: OrdinalPair,
    beta: np.ndarray,
    lambda1: float,
    lambda2: float,
    margin: float = 0.0,
) -> OrderingState:
    M = marginal_difference_selector(pair)
    p = X.shape[-1]
    if M.shape[0] == 0 or (lambda1 == 0.0 and lambda2 == 0.0):
        return OrderingState(np.zeros((1, 0, p)), np.zeros((1, 0)), margin)
    G = np.einsum("re,gep->grp", M, X, optimize=True)
    v = G @ beta
    lam = np.concatenate(
        [np.full(pair.m1 - 1, lambda1), np.full(pair.m2 - 1, lambda2)]
    )
    coef = weights[:, None] * lam[None, :] * (v <= margin)
    return OrderingState(G, coef, margin)


def build_ordering_penalty(
    spec: ModelSpec,
    dataset: Dataset,
    beta: np.ndarray,
    lambda1: float,
    lambda2: float,
) -> np.ndarray:
    """Ordering-penalty matrix P(beta), indicator evaluated at beta.

    Penalizes marginal-predictor differences with d_eta <= 0 at every
    observed profile, weighted by group counts.  Held fixed within one
    Fisher-scoring step by the estimator.
    """
    X = design_matrices(spec, dataset)
    weights = np.array([g.total for g in dataset.groups], dtype=float)
    P, _, _ = ordering_terms(
        X, weights, spec.pair, np.asarray(beta, dtype=float), lambda1, lambda2
    )
    return P


# ---------------------------------------------------------------------------
# heavy-smoothing limits


@dataclass(frozen=True)
class LimitStructure:
    """Association surface reached as both arc2 stream penalties grow."""

    s3: int
    s4: int
    exponents: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self) -> None:
        exps = tuple(product(range(self.s3), range(self.s4)))
        object.__setattr__(self, "exponents", exps)

    @property
    def dimension(self) -> int:
        return self.s3 * self.s4

    def describe(self) -> str:
        terms = []
        for a, b in self.exponents:
            ra = "" if a == 0 else ("r" if a == 1 else f"r^{a}")
            cb = "" if b == 0 else ("c" if b == 1 else f"c^{b}")
            terms.append((ra + cb) or "1")
        deg = self.s3 + self.s4 - 2
        return f"polynomial surface of degree {deg} (basis: {', '.join(terms)})"

    def basis(self, pair: OrdinalPair) -> np.ndarray:
        """Monomials r^a c^b over the cut grid, shape (m3, dimension)."""
        r = np.arange(1, pair.m1 + 1, dtype=float)
        c = np.arange(1, pair.m2 + 1, dtype=float)
        cols = [
            np.outer(r**a, c**b).reshape(-1) for a, b in self.exponents
        ]
        return np.column_stack(cols)


def arc2_limit_structure(s3: int, s4: int) -> LimitStructure:
    if s3 < 1 or s4 < 1:
        raise ValueError("difference orders must be >= 1")
    return LimitStructure(s3, s4)
