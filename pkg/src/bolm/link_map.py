"""Bijection between cell probabilities and the marginal/association predictor.

For cut points r, c the predictor collects global logits of the two
margins and log global odds ratios

    log psi_rc = log[ mu_rc (1 - mu_r - mu_c + mu_rc) ]
               - log[ (mu_r - mu_rc) (mu_c - mu_rc) ]

where mu_rc is the joint cumulative probability P(A1 <= r, A2 <= c).
Both directions are smooth; the inverse solves a quadratic per cut point
(Plackett) and recovers cells by double differencing the cumulative grid.

The same map in matrix form is eta = C' log(L pi) for 0/1 matrices L
(cumulative sums) and a contrast matrix C.  ContrastSystem builds both;
the direct formulas below must agree with the matrix path.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit, logit

from .model_core import OrdinalPair


class IncompatibleEta(ValueError):
    """Predictor maps to a table with a nonpositive cell.

    Recoverable: the estimator treats it as a rejected trial step.
    """


@dataclass(frozen=True)
class ContrastSystem:
    """Matrices L and C with eta = C' log(L pi).

    Row order of L: the all-ones row, then (mu_r, 1-mu_r) pairs for each
    A1 cut, (mu_c, 1-mu_c) pairs for each A2 cut, then quadrant quadruples
    (both low, A1 low, A2 low, both high) per cut point, row-major.
    """

    pair: OrdinalPair
    L: np.ndarray
    C: np.ndarray


@lru_cache(maxsize=None)
def _contrast_system(d1: int, d2: int) -> ContrastSystem:
    pair = OrdinalPair(d1, d2)
    cells = pair.n_cells
    rows_i, cols_j = np.divmod(np.arange(cells), d2)  # 0-based cell indices

    L_rows: list[np.ndarray] = []
    C_cols: list[dict[int, float]] = []

    L_rows.append(np.ones(cells))
    C_cols.append({0: 1.0})  # null contrast: log sum(pi) = 0

    for r in range(1, d1):
        low = (rows_i < r).astype(float)
        C_cols.append({len(L_rows): 1.0, len(L_rows) + 1: -1.0})
        L_rows.append(low)
        L_rows.append(1.0 - low)
    for c in range(1, d2):
        low = (cols_j < c).astype(float)
        C_cols.append({len(L_rows): 1.0, len(L_rows) + 1: -1.0})
        L_rows.append(low)
        L_rows.append(1.0 - low)
    for r in range(1, d1):
        for c in range(1, d2):
            a1_low = rows_i < r
            a2_low = cols_j < c
            base = len(L_rows)
            L_rows.append((a1_low & a2_low).astype(float))
            L_rows.append((a1_low & ~a2_low).astype(float))
            L_rows.append((~a1_low & a2_low).astype(float))
            L_rows.append((~a1_low & ~a2_low).astype(float))
            C_cols.append({base: 1.0, base + 1: -1.0, base + 2: -1.0, base + 3: 1.0})

    L = np.array(L_rows)
    C = np.zeros((L.shape[0], pair.n_eta))
    for j, col in enumerate(C_cols):
        for i, v in col.items():
            C[i, j] = v
    L.setflags(write=False)
    C.setflags(write=False)
    return ContrastSystem(pair, L, C)


def contrast_system(pair: OrdinalPair) -> ContrastSystem:
    return _contrast_system(pair.d1, pair.d2)


def pi_to_eta(pi: np.ndarray, pair: OrdinalPair | None = None) -> np.ndarray:
    """Predictor vector of a strictly positive probability table."""
    pi = np.asarray(pi, dtype=float)
    if pair is None:
        pair = OrdinalPair(*pi.shape)
    pi = pi.reshape(pair.d1, pair.d2)
    if (pi <= 0).any():
        raise ValueError("cell probabilities must be strictly positive")
    if abs(pi.sum() - 1.0) > 1e-8:
        raise ValueError("cell probabilities must sum to 1")

    # cumulative grid, mu[r, c] = P(A1 <= r, A2 <= c), 1-based cuts
    mu = pi.cumsum(axis=0).cumsum(axis=1)
    mu_r = mu[:-1, -1]
    mu_c = mu[-1, :-1]

    eta = np.empty(pair.n_eta)
    eta[0] = 0.0
    eta[1 : 1 + pair.m1] = logit(mu_r)
    eta[1 + pair.m1 : 1 + pair.m1 + pair.m2] = logit(mu_c)
    joint = mu[:-1, :-1]
    num = joint * (1.0 - mu_r[:, None] - mu_c[None, :] + joint)
    den = (mu_r[:, None] - joint) * (mu_c[None, :] - joint)
    eta[1 + pair.m1 + pair.m2 :] = (np.log(num) - np.log(den)).reshape(-1)
    return eta


def pi_to_eta_matrix(pi: np.ndarray, pair: OrdinalPair) -> np.ndarray:
    """Matrix-path predictor C' log(L pi); agrees with pi_to_eta."""
    cs = contrast_system(pair)
    return cs.C.T @ np.log(cs.L @ np.asarray(pi, dtype=float).reshape(-1))


def plackett_inverse(mu_r, mu_c, psi):
    """Joint cumulative probability with given margins and odds ratio.

    Root of psi = mu(1-mu_r-mu_c+mu) / ((mu_r-mu)(mu_c-mu)), equal to
    (a - sqrt(a^2 + b)) / (2 (psi-1)) with a = 1 + (mu_r+mu_c)(psi-1)
    and b = -4 psi (psi-1) mu_r mu_c, and to mu_r*mu_c at psi = 1.

    Evaluated in equivalent cancellation-free forms so the function is
    smooth through psi = 1 and stable for extreme odds ratios.
    """
    mu_r = np.asarray(mu_r, dtype=float)
    mu_c = np.asarray(mu_c, dtype=float)
    psi = np.asarray(psi, dtype=float)
    mu_r, mu_c, psi = np.broadcast_arrays(mu_r, mu_c, psi)
    if (psi <= 0).any():
        raise ValueError("odds ratio must be positive")

    out = np.empty(psi.shape)
    prod = mu_r * mu_c
    s = mu_r + mu_c

    near_one = np.abs(psi - 1.0) < 1e-8
    out[near_one] = prod[near_one]

    hi = (psi >= 1.0) & ~near_one
    if hi.any():
        # scaled by 1/psi so a^2 never overflows for huge odds ratios
        t = 1.0 / psi[hi]
        a_t = t + s[hi] * (1.0 - t)
        b_t = -4.0 * (1.0 - t) * prod[hi]
        disc = _clamped_sqrt(a_t * a_t + b_t)
        out[hi] = 2.0 * prod[hi] / (a_t + disc)

    lo = (psi < 1.0) & ~near_one
    if lo.any():
        a = 1.0 + s[lo] * (psi[lo] - 1.0)
        b = -4.0 * psi[lo] * (psi[lo] - 1.0) * prod[lo]
        disc = _clamped_sqrt(a * a + b)
        val = np.where(
            a > 0,
            2.0 * psi[lo] * prod[lo] / (a + disc),  # conjugate, no cancellation
            (a - disc) / (2.0 * (psi[lo] - 1.0)),
        )
        out[lo] = val

    if out.ndim == 0:
        return float(out)
    return out


def _clamped_sqrt(x: np.ndarray) -> np.ndarray:
    if (x < -1e-12).any():
        raise FloatingPointError("negative discriminant in Plackett inversion")
    return np.sqrt(np.maximum(x, 0.0))


def _cells_unchecked(eta: np.ndarray, pair: OrdinalPair) -> np.ndarray:
    """Double-differenced cell table, (m, d1, d2); entries may be <= 0."""
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    m = eta.shape[0]
    if eta.shape[1] != pair.n_eta:
        raise ValueError(f"predictor length {eta.shape[1]}, expected {pair.n_eta}")

    finite = np.isfinite(eta)
    safe = np.where(finite, eta, 0.0)
    mu_r = expit(safe[:, 1 : 1 + pair.m1])
    mu_c = expit(safe[:, 1 + pair.m1 : 1 + pair.m1 + pair.m2])
    # cap so exp never overflows; beyond this the cells underflow anyway
    log_psi = np.clip(safe[:, 1 + pair.m1 + pair.m2 :], -690.0, 690.0)
    psi = np.exp(log_psi).reshape(m, pair.m1, pair.m2)

    mu = np.zeros((m, pair.d1 + 1, pair.d2 + 1))
    mu[:, 1:-1, 1:-1] = plackett_inverse(
        mu_r[:, :, None], mu_c[:, None, :], psi
    ).reshape(m, pair.m1, pair.m2)
    mu[:, 1:-1, -1] = mu_r
    mu[:, -1, 1:-1] = mu_c
    mu[:, -1, -1] = 1.0

    pi = np.diff(np.diff(mu, axis=1), axis=2)
    pi[~finite.all(axis=1)] = np.nan
    return pi


def compatible_eta_mask(eta: np.ndarray, pair: OrdinalPair) -> np.ndarray:
    """Per-row flag: True when the predictor maps to strictly positive cells.

    The model family is not variation independent, so a predictor with
    in-range margins can still demand an impossible association; this is
    the non-raising counterpart of eta_to_pi_batch.
    """
    pi = _cells_unchecked(eta, pair)
    return np.all(np.isfinite(pi) & (pi > 0), axis=(1, 2))


def eta_to_pi_batch(eta: np.ndarray, pair: OrdinalPair) -> np.ndarray:
    """Cell probabilities for stacked predictors, shape (m, n_eta).

    Raises IncompatibleEta if any resulting cell is not strictly
    positive (margins out of order, or an incompatible association).
    """
    pi = _cells_unchecked(eta, pair)
    ok = np.all(np.isfinite(pi) & (pi > 0), axis=(1, 2))
    if not ok.all():
        bad = np.where(~ok)[0]
        raise IncompatibleEta(
            f"nonpositive cell probability for group index {bad[0]}"
        )
    m = pi.shape[0]
    return pi.reshape(m, pair.n_cells)


def eta_to_pi(eta: np.ndarray, pair: OrdinalPair) -> np.ndarray:
    """Cell probability table (d1 x d2) of a single predictor vector."""
    return eta_to_pi_batch(eta, pair)[0].reshape(pair.d1, pair.d2)


def d_pi_d_eta(pi: np.ndarray, pair: OrdinalPair | None = None) -> np.ndarray:
    """Jacobian d pi / d eta at a positive table: inverse of C' D^-1 L."""
    pi = np.asarray(pi, dtype=float)
    if pair is None:
        pair = OrdinalPair(*pi.shape)
    cs = contrast_system(pair)
    mu = cs.L @ pi.reshape(-1)
    return np.linalg.inv(cs.C.T @ (cs.L / mu[:, None]))


def d_pi_d_eta_batch(pi: np.ndarray, pair: OrdinalPair) -> np.ndarray:
    """Stacked Jacobians for (m, n_cells) probability rows."""
    cs = contrast_system(pair)
    mu = pi @ cs.L.T
    A = np.einsum("ka,kb,mk->mab", cs.C, cs.L, 1.0 / mu, optimize=True)
    return np.linalg.inv(A)


def empirical_log_gors(counts: np.ndarray) -> np.ndarray:
    """Observed log global odds ratios of a count table.

    Returns an (d1-1) x (d2-1) grid; cut points with an empty quadrant
    give +/-inf (nan when opposing quadrants are both empty).
    """
    y = np.asarray(counts, dtype=float)
    d1, d2 = y.shape
    cum = y.cumsum(axis=0).cumsum(axis=1)
    total = cum[-1, -1]
    out = np.empty((d1 - 1, d2 - 1))
    for r in range(1, d1):
        for c in range(1, d2):
            both_low = cum[r - 1, c - 1]
            a1_low = cum[r - 1, -1] - both_low
            a2_low = cum[-1, c - 1] - both_low
            both_high = total - both_low - a1_low - a2_low
            num = both_low * both_high
            den = a1_low * a2_low
            if den == 0.0 and num == 0.0:
                out[r - 1, c - 1] = np.nan
            elif den == 0.0:
                out[r - 1, c - 1] = np.inf
            elif num == 0.0:
                out[r - 1, c - 1] = -np.inf
            else:
                out[r - 1, c - 1] = np.log(num) - np.log(den)
    return out
