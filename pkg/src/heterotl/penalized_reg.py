"""Convex solvers for the transfer objective.

The generic problem is

    min_delta (1/n) ||r - D delta||_2^2 + lam ||delta||_1,

solved by cyclic coordinate descent with exact coordinate updates. Under
this (1/n) convention the smallest lam with an all-zero solution is the
null threshold (2/n) ||D' r||_inf. The offset form shrinks beta toward a
reference vector omega_hat through the substitution delta = beta - omega_hat.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .core import (ConfigError, DimensionError, InvalidValueError,
                   mean_absolute_prediction_error)


class RankWarning(UserWarning):
    """Design matrix is rank deficient; a minimum-norm solution was used."""


@dataclass(frozen=True)
class LassoSettings:
    max_iters: int = 10000
    tol: float = 1e-9
    standardize: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class SolveDiagnostics:
    iterations: int
    converged: bool
    max_kkt_violation: float
    objective: float

    def to_dict(self):
        return {"iterations": self.iterations, "converged": self.converged,
                "max_kkt_violation": self.max_kkt_violation,
                "objective": self.objective}


def _check_design(D, v, dname="D", vname="r"):
    D = np.asarray(D, dtype=float)
    v = np.asarray(v, dtype=float)
    if D.ndim != 2:
        raise DimensionError(f"{dname} must be 2-d, got ndim={D.ndim}")
    if v.ndim != 1 or v.shape[0] != D.shape[0]:
        raise DimensionError(
            f"{vname} must be 1-d with {D.shape[0]} entries")
    if not np.all(np.isfinite(D)):
        raise InvalidValueError(f"{dname} contains non-finite values")
    if not np.all(np.isfinite(v)):
        raise InvalidValueError(f"{vname} contains non-finite values")
    return D, v


def _lstsq_minnorm(D, y):
    """Minimum-norm least squares solution and the design rank."""
    w, _, rank, _ = np.linalg.lstsq(D, y, rcond=None)
    return w, rank


def ols(D, y):
    """Least-squares coefficients of y on D.

    Rank-deficient designs fall back to the minimum-norm solution and emit
    a RankWarning.
    """
    D, y = _check_design(D, y, "D", "y")
    w, rank = _lstsq_minnorm(D, y)
    if rank < D.shape[1]:
        warnings.warn(
            f"design has rank {rank} < {D.shape[1]}; "
            "returning the minimum-norm solution", RankWarning, stacklevel=2)
    return w


def soft_threshold(v, t):
    """sign(v) * max(|v| - t, 0); v may be a scalar or an array."""
    if np.any(np.asarray(t) < 0):
        raise ConfigError("threshold must be nonnegative")
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def null_threshold(D, r):
    """Smallest lam at which the lasso solution is identically zero."""
    D, r = _check_design(D, r)
    n = D.shape[0]
    return float(2.0 / n * np.max(np.abs(D.T @ r))) if D.size else 0.0


def objective(D, r, lam, delta):
    """(1/n) ||r - D delta||^2 + lam ||delta||_1."""
    e = r - D @ delta
    return float(np.mean(e * e) + lam * np.sum(np.abs(delta)))


def offset_objective(D, y, omega_hat, beta, lam):
    """(1/n) ||y - D beta||^2 + lam ||beta - omega_hat||_1."""
    e = y - D @ beta
    return float(np.mean(e * e) + lam * np.sum(np.abs(beta - omega_hat)))


def kkt_check(D, r, lam, delta_hat):
    """Maximum violation of the stationarity conditions at delta_hat.

    With g = (2/n) D'(D delta_hat - r), a nonzero coordinate must satisfy
    g_j + lam sign(delta_j) = 0 and a zero coordinate |g_j| <= lam.
    """
    D, r = _check_design(D, r)
    delta_hat = np.asarray(delta_hat, dtype=float)
    n = D.shape[0]
    g = (2.0 / n) * (D.T @ (D @ delta_hat - r))
    nz = delta_hat != 0.0
    viol = np.where(nz,
                    np.abs(g + lam * np.sign(delta_hat)),
                    np.maximum(np.abs(g) - lam, 0.0))
    return float(np.max(viol)) if viol.size else 0.0


def _pin_zero_variance(nsq):
    """Flag zero-variance columns and give them a harmless curvature.

    Their coefficients stay pinned at zero; the 1.0 substitute only keeps
    the update formula well defined.
    """
    zero_var = nsq == 0.0
    if np.any(zero_var):
        warnings.warn(
            f"{int(zero_var.sum())} zero-variance column(s) pinned to 0",
            UserWarning)
        nsq = np.where(zero_var, 1.0, nsq)
    return nsq, zero_var


def _gram_pass(A, b, d, q, nsq, half, idx):
    """One pass of exact coordinate updates in the gram form.

    q tracks A @ d, so an update touches one row of A instead of the
    residual vector. Returns the largest absolute step of the pass and
    the accumulated sum of nsq_j * step_j^2, which lower-bounds the
    objective decrease by coordinatewise strong convexity.
    """
    biggest = 0.0
    moved = 0.0
    for j in idx:
        old = d[j]
        rho = b[j] - q[j].item() + nsq[j] * old
        if rho > half:
            new = (rho - half) / nsq[j]
        elif rho < -half:
            new = (rho + half) / nsq[j]
        else:
            new = 0.0
        step = new - old
        if step != 0.0:
            d[j] = new
            q += A[j] * step
            moved += nsq[j] * step * step
            if step < 0.0:
                step = -step
            if step > biggest:
                biggest = step
    return biggest, moved


def _gram_solve(A, b, d, q, nsq, half, order, tol, cap, stall=None):
    """Run passes until a full pass moves every coordinate by less than tol.

    Between full passes the active set is swept on its own, the usual
    refinement. stall, when set, exits a fit whose per-pass objective
    decrease has fallen below that bound; near-flat directions can keep
    the coordinates drifting long after the objective has settled, and
    ranking fits do not need to wait that out. A stall exit does not
    count as converged. Returns (passes taken, converged flag).
    """
    it = 0
    while it < cap:
        it += 1
        big, moved = _gram_pass(A, b, d, q, nsq, half, order)
        if big < tol:
            return it, True
        if stall is not None and moved < stall:
            return it, False
        active = [j for j in order if d[j] != 0.0]
        if active and len(active) < len(order):
            while it < cap:
                it += 1
                big, moved = _gram_pass(A, b, d, q, nsq, half, active)
                if big < tol:
                    break
                if stall is not None and moved < stall:
                    return it, False
    return it, False


def _warm_path(D, r, lams, settings, delta0=None, stall_tol=None):
    """Solve a descending penalty sequence with warm starts.

    The gram matrix is formed once, each value starts from the previous
    solution, and q = A @ d is refreshed from scratch per value so no
    update drift carries across the path. stall_tol, when set, enables
    the objective-stall exit at stall_tol times the response scale.
    Returns (Delta with one column per value, total passes, per-value
    convergence flags).
    """
    n, p = D.shape
    A = D.T @ D / n
    b = list(D.T @ r / n)
    nsq, zero_var = _pin_zero_variance(np.diagonal(A).copy())
    nsq = list(nsq)
    order = [j for j in range(p) if not zero_var[j]]
    if delta0 is None:
        d = [0.0] * p
    else:
        d = [0.0 if zero_var[j] else float(delta0[j]) for j in range(p)]
    stall = None
    if stall_tol is not None:
        stall = stall_tol * max(1.0, float(r @ r) / n)
    L = len(lams)
    Delta = np.empty((p, L))
    conv = np.zeros(L, dtype=bool)
    iters = 0
    for l in range(L):
        q = A @ d
        it, ok = _gram_solve(A, b, d, q, nsq, lams[l] / 2.0, order,
                             settings.tol, settings.max_iters, stall)
        iters += it
        conv[l] = ok
        Delta[:, l] = d
    return Delta, iters, conv


def _gram_ok(n, p):
    """Whether the gram form pays for itself on an (n, p) design."""
    return p * p <= 50_000_000 and p <= 4 * n


def _sweep_columns(cols, E, Delta, nsq, halves, n, idx, changes):
    """One pass of exact coordinate updates over idx, residual form.

    E holds one residual column per problem; Delta is (p, L). Mutates E,
    Delta, and the per-problem running maximum step size in changes.
    """
    for j in idx:
        cj = cols[j]
        old = Delta[j]
        rho = (E.T @ cj) / n + nsq[j] * old
        new = np.sign(rho) * np.maximum(np.abs(rho) - halves, 0.0) / nsq[j]
        step = new - old
        if np.any(step != 0.0):
            Delta[j] = new
            E -= cj[:, None] * step
            np.maximum(changes, np.abs(step), out=changes)


def _gram_sweep_columns(A, B, Delta, Q, nsq, halves, idx, changes):
    """Gram-form counterpart of _sweep_columns.

    Q tracks A @ Delta, so a coordinate that does not move costs a row
    lookup instead of a correlation against the residuals.
    """
    for j in idx:
        old = Delta[j]
        rho = B[j] - Q[j] + nsq[j] * old
        new = np.sign(rho) * np.maximum(np.abs(rho) - halves, 0.0) / nsq[j]
        step = new - old
        if np.any(step != 0.0):
            Delta[j] = new
            Q += A[j][:, None] * step
            np.maximum(changes, np.abs(step), out=changes)


def _run_lockstep(sweep, order, Delta, settings):
    """Full passes with union-support refinement between them.

    A column counts as converged only when a full pass moves none of its
    coordinates by tol or more. Returns (passes taken, per-column flags).
    """
    tol = settings.tol
    L = Delta.shape[1]
    it = 0
    col_converged = np.zeros(L, dtype=bool)
    while it < settings.max_iters:
        changes = np.zeros(L)
        sweep(order, changes)
        it += 1
        col_converged = changes < tol
        if col_converged.all():
            break
        while it < settings.max_iters:
            act = np.flatnonzero(np.any(Delta != 0.0, axis=1))
            if act.size == 0 or act.size == order.size:
                break
            changes = np.zeros(L)
            sweep(act, changes)
            it += 1
            if (changes < tol).all():
                break
    return it, col_converged


def _cd_columns(D, R, lams, settings, Delta0=None):
    """Coordinate descent run jointly over the columns of R.

    Column l solves the lasso with response R[:, l] and penalty lams[l].
    The columns are independent problems; running them in lockstep turns
    the per-coordinate work into wide array operations. When the gram
    matrix is economical the passes run in gram form, otherwise against
    the residuals. Returns (Delta, passes taken, per-column flags).
    """
    n, p = D.shape
    L = R.shape[1]
    nsq, zero_var = _pin_zero_variance(np.einsum("ij,ij->j", D, D) / n)
    if Delta0 is None:
        Delta = np.zeros((p, L))
    else:
        Delta = np.array(Delta0, dtype=float)
        Delta[zero_var] = 0.0
    halves = np.asarray(lams, dtype=float) / 2.0
    order = np.flatnonzero(~zero_var)
    if _gram_ok(n, p):
        A = D.T @ D / n
        B = D.T @ R / n
        Q = A @ Delta

        def sweep(idx, changes):
            _gram_sweep_columns(A, B, Delta, Q, nsq, halves, idx, changes)
    else:
        cols = np.ascontiguousarray(D.T)
        E = R - D @ Delta

        def sweep(idx, changes):
            _sweep_columns(cols, E, Delta, nsq, halves, n, idx, changes)

    it, col_converged = _run_lockstep(sweep, order, Delta, settings)
    return Delta, it, col_converged


def _cd_solve(D, r, lam, settings, delta0):
    n, p = D.shape
    if _gram_ok(n, p):
        Delta, it, conv = _warm_path(D, r, [lam], settings, delta0=delta0)
        return Delta[:, 0], it, bool(conv[0])
    Delta0 = None if delta0 is None else np.asarray(delta0, float)[:, None]
    Delta, it, conv = _cd_columns(D, r[:, None], np.array([lam]), settings,
                                  Delta0)
    return Delta[:, 0], it, bool(conv[0])


def lasso(D, r, lam, settings=None, delta0=None):
    """Cyclic coordinate descent for the l1-penalized least squares problem.

    Parameters
    ----------
    D : (n, p) design matrix.
    r : (n,) response (already residualized in the offset form).
    lam : nonnegative penalty level under the (1/n) objective convention.
    settings : LassoSettings or None for defaults.
    delta0 : optional warm start.

    Returns (delta_hat, SolveDiagnostics). Non-convergence is reported via
    diagnostics.converged, never raised here.
    """
    D, r = _check_design(D, r)
    if not (lam >= 0):
        raise ConfigError(f"lam must be >= 0, got {lam}")
    if settings is None:
        settings = LassoSettings()
    if delta0 is not None:
        delta0 = np.asarray(delta0, dtype=float)
        if delta0.shape != (D.shape[1],):
            raise DimensionError("delta0 length does not match D columns")
    if settings.standardize:
        nsq = np.einsum("ij,ij->j", D, D) / D.shape[0]
        scale = np.sqrt(np.where(nsq > 0, nsq, 1.0))
        Ds = D / scale
        d0 = None if delta0 is None else delta0 * scale
        dstd, it, conv = _cd_solve(Ds, r, lam, settings, d0)
        diag = SolveDiagnostics(it, conv, kkt_check(Ds, r, lam, dstd),
                                objective(Ds, r, lam, dstd))
        return dstd / scale, diag
    delta, it, conv = _cd_solve(D, r, lam, settings, delta0)
    diag = SolveDiagnostics(it, conv, kkt_check(D, r, lam, delta),
                            objective(D, r, lam, delta))
    return delta, diag


def lasso_with_offset(D, y, omega_hat, lam, settings=None, delta0=None):
    """Shrink toward omega_hat: solve for delta on the residual y - D omega_hat.

    Returns (beta_hat, delta_hat, SolveDiagnostics) with
    beta_hat = omega_hat + delta_hat.
    """
    D, y = _check_design(D, y, "D", "y")
    omega_hat = np.asarray(omega_hat, dtype=float)
    if omega_hat.shape != (D.shape[1],):
        raise DimensionError(
            f"omega_hat must have length {D.shape[1]}, got {omega_hat.shape}")
    r = y - D @ omega_hat
    delta, diag = lasso(D, r, lam, settings, delta0)
    return omega_hat + delta, delta, diag


def default_grid(lam_max, num=50, decay=1e-4):
    """Log-spaced descending path from lam_max down to lam_max * decay."""
    if lam_max <= 0:
        return np.array([0.0])
    return np.geomspace(lam_max, lam_max * decay, num)


def _path_settings(settings):
    """Relaxed settings for fits that only need to rank or warm start."""
    return LassoSettings(max_iters=min(settings.max_iters, 250),
                         tol=max(settings.tol, 1e-5), standardize=False)


def warm_start(D, r, lam, settings=None):
    """Warm start for a full-tolerance solve at lam.

    Descends the default path from the null threshold down to lam at the
    relaxed path tolerance and returns the endpoint. Returns None when
    lam is at or above the null threshold, where the zero start is
    already exact, or when the gram form would be oversized.
    """
    D, r = _check_design(D, r)
    if settings is None:
        settings = LassoSettings()
    if not _gram_ok(*D.shape):
        return None
    lam_max = null_threshold(D, r)
    if not 0 < lam < lam_max:
        return None
    grid = default_grid(lam_max)
    lams = np.append(grid[grid > lam], lam)
    Delta, _, _ = _warm_path(D, r, lams, _path_settings(settings),
                             stall_tol=1e-7)
    return Delta[:, -1]


def cv_lambda(D, y, omega_hat, folds=5, grid=None, seed=0, settings=None):
    """Pick lam by K-fold cross-validation of held-out mean absolute error.

    Fold assignment is a seeded permutation split into contiguous blocks.
    Each fold fits the whole grid as one warm-started descending path;
    these path fits only rank the candidates, so they use a relaxed
    tolerance and a sweep cap, and the caller refits at the returned
    value. Ties in the mean error go to the larger lam (more shrinkage
    toward omega_hat).
    Returns (best_lam, path) where path is a (L, 2) array of (lam, mean
    held-out error) rows over the deduplicated descending grid.
    """
    D, y = _check_design(D, y, "D", "y")
    omega_hat = np.asarray(omega_hat, dtype=float)
    n = D.shape[0]
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    if n < folds:
        raise ConfigError(f"need n >= folds, got n={n}, folds={folds}")
    if grid is None:
        grid = default_grid(null_threshold(D, y - D @ omega_hat))
    grid = np.unique(np.asarray(grid, dtype=float))[::-1]
    if grid.size == 0:
        raise ConfigError("lambda grid is empty")
    if np.any(grid < 0):
        raise ConfigError("lambda grid must be nonnegative")
    if settings is None:
        settings = LassoSettings()
    path_settings = _path_settings(settings)
    perm = np.random.default_rng(seed).permutation(n)
    blocks = np.array_split(perm, folds)
    errs = np.zeros((grid.size, folds))
    for f, val_idx in enumerate(blocks):
        mask = np.ones(n, dtype=bool)
        mask[val_idx] = False
        D_tr, y_tr = D[mask], y[mask]
        D_val, y_val = D[val_idx], y[val_idx]
        if settings.standardize:
            col_rms = np.sqrt(np.einsum("ij,ij->j", D_tr, D_tr)
                              / D_tr.shape[0])
            scale = np.where(col_rms > 0, col_rms, 1.0)
            D_tr = D_tr / scale
        r_tr = y_tr - D_tr @ (omega_hat * scale if settings.standardize
                              else omega_hat)
        Delta, _, _ = _warm_path(D_tr, r_tr, grid, path_settings,
                                 stall_tol=1e-7)
        if settings.standardize:
            Delta = Delta / scale[:, None]
        preds = D_val @ (omega_hat[:, None] + Delta)
        errs[:, f] = np.mean(np.abs(preds - y_val[:, None]), axis=0)
    mean_errs = errs.mean(axis=1)
    best = int(np.argmin(mean_errs))  # first hit is the largest lam
    return float(grid[best]), np.column_stack([grid, mean_errs])
