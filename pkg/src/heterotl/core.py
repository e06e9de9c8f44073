"""Shared data model, validation, error types, and evaluation metrics."""

import csv

import numpy as np

METHOD_TAGS = ("htl", "homogeneous", "target_lasso", "oracle")


class HeterotlError(Exception):
    """Base class for all library errors."""


class DimensionError(HeterotlError):
    """Array shapes do not agree."""


class InvalidValueError(HeterotlError):
    """Non-finite values where finite ones are required."""


class SupportError(HeterotlError):
    """Input lies outside the basis support [-a, a]."""


class CapacityError(HeterotlError):
    """Requested more basis functions than the enumeration cap admits."""


class IncompatibleError(HeterotlError):
    """Objects cannot be combined (mixed variants, mismatched parameters)."""


class ConfigError(HeterotlError):
    """Invalid configuration values."""


class ConvergenceError(HeterotlError):
    """A solver failed to converge within its iteration budget."""


class DataError(HeterotlError):
    """Malformed input data file; message names file, row, and column."""


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a 2-d array, got ndim={a.ndim}")
    return a


def _as_vector(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 1:
        raise DimensionError(f"{name} must be a 1-d array, got ndim={a.ndim}")
    return a


def _require_finite(a, name):
    if not np.all(np.isfinite(a)):
        raise InvalidValueError(f"{name} contains non-finite values")


class Dataset:
    """One domain's observations.

    x : (n, p1) matched covariates, observed in every domain.
    z : (n, p2) mismatched covariates, or None when unobserved.
    y : (n,) response.

    Immutable after construction; arrays are validated and copied.
    """

    __slots__ = ("x", "z", "y")

    def __init__(self, x, y, z=None):
        x = _as_matrix(x, "x")
        y = _as_vector(y, "y")
        if x.shape[1] < 1:
            raise DimensionError("x needs at least one column")
        if x.shape[0] != y.shape[0]:
            raise DimensionError(
                f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        _require_finite(x, "x")
        _require_finite(y, "y")
        if z is not None:
            z = _as_matrix(z, "z")
            if z.shape[1] < 1:
                raise DimensionError("z needs at least one column")
            if z.shape[0] != x.shape[0]:
                raise DimensionError(
                    f"z has {z.shape[0]} rows but x has {x.shape[0]}")
            _require_finite(z, "z")
            z = z.copy()
            z.flags.writeable = False
        x = x.copy()
        y = y.copy()
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p1(self):
        return self.x.shape[1]

    @property
    def p2(self):
        return 0 if self.z is None else self.z.shape[1]

    def without_z(self):
        """Copy of this dataset with the mismatched block dropped."""
        return Dataset(self.x, self.y)


class TLFit:
    """A fitted transfer model: beta_hat = omega_hat + delta_hat.

    omega_hat is the proxy-trained reference vector, delta_hat the fitted
    contrast, lam the l1 penalty level, method one of METHOD_TAGS.
    """

    __slots__ = ("omega_hat", "delta_hat", "beta_hat", "lam", "method")

    def __init__(self, omega_hat, delta_hat, lam, method, beta_hat=None):
        omega_hat = _as_vector(omega_hat, "omega_hat")
        delta_hat = _as_vector(delta_hat, "delta_hat")
        if omega_hat.shape != delta_hat.shape:
            raise DimensionError("omega_hat and delta_hat lengths differ")
        if beta_hat is None:
            beta_hat = omega_hat + delta_hat
        else:
            beta_hat = _as_vector(beta_hat, "beta_hat")
            # compare against the recomputed sum bitwise: subtracting the
            # parts back out rounds differently and rejects valid sums
            if not np.array_equal(beta_hat, omega_hat + delta_hat):
                raise InvalidValueError(
                    "beta_hat must equal omega_hat + delta_hat exactly")
        if not (lam >= 0):
            raise ConfigError(f"lam must be >= 0, got {lam}")
        if method not in METHOD_TAGS:
            raise ConfigError(f"unknown method tag {method!r}")
        for name, v in (("omega_hat", omega_hat), ("delta_hat", delta_hat),
                        ("beta_hat", beta_hat)):
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        object.__setattr__(self, "lam", float(lam))
        object.__setattr__(self, "method", method)

    def __setattr__(self, name, value):
        raise AttributeError("TLFit is immutable")

    @property
    def p(self):
        return self.beta_hat.shape[0]


class TruthRecord:
    """Simulation ground truth for one replication.

    Holds the true coefficient vector, the per-proxy contrasts with their
    exact nonzero counts, the true feature maps (None when the generating
    map is not linear), and the withheld target/test mismatched features.
    """

    __slots__ = ("beta_star", "delta_star_per_proxy", "sparsity_s_delta",
                 "true_map_target", "true_map_proxies", "z_target", "z_test")

    def __init__(self, beta_star, delta_star_per_proxy, true_map_target,
                 true_map_proxies, z_target=None, z_test=None):
        beta_star = _as_vector(beta_star, "beta_star")
        deltas = [_as_vector(d, "delta_star") for d in delta_star_per_proxy]
        sparsity = [int(np.count_nonzero(d)) for d in deltas]
        object.__setattr__(self, "beta_star", beta_star)
        object.__setattr__(self, "delta_star_per_proxy", deltas)
        object.__setattr__(self, "sparsity_s_delta", sparsity)
        object.__setattr__(self, "true_map_target", true_map_target)
        object.__setattr__(self, "true_map_proxies",
                           None if true_map_proxies is None
                           else list(true_map_proxies))
        object.__setattr__(self, "z_target", z_target)
        object.__setattr__(self, "z_test", z_test)

    def __setattr__(self, name, value):
        raise AttributeError("TruthRecord is immutable")


def _metric_pair(y, yhat):
    y = _as_vector(y, "y")
    yhat = _as_vector(yhat, "yhat")
    if y.shape != yhat.shape:
        raise DimensionError(
            f"length mismatch: y has {y.shape[0]}, yhat has {yhat.shape[0]}")
    if y.shape[0] < 1:
        raise DimensionError("need at least one observation")
    _require_finite(y, "y")
    _require_finite(yhat, "yhat")
    return y, yhat


def mean_absolute_prediction_error(y, yhat):
    """Mean absolute prediction error, (1/n) sum |y_i - yhat_i|."""
    y, yhat = _metric_pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def l1_estimation_error(beta_hat, beta_star):
    """l1 distance between an estimate and the truth, sum |b_j - b*_j|."""
    beta_hat = _as_vector(beta_hat, "beta_hat")
    beta_star = _as_vector(beta_star, "beta_star")
    if beta_hat.shape != beta_star.shape:
        raise DimensionError(
            f"length mismatch: {beta_hat.shape[0]} vs {beta_star.shape[0]}")
    return float(np.sum(np.abs(beta_hat - beta_star)))


def rmse(y, yhat):
    """Root mean squared prediction error."""
    y, yhat = _metric_pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def fit_centering(X):
    """Column means of a training design, for the optional centering step."""
    return _as_matrix(X, "X").mean(axis=0)


def apply_centering(X, means):
    """Subtract previously fitted column means from new rows."""
    X = _as_matrix(X, "X")
    means = _as_vector(means, "means")
    if X.shape[1] != means.shape[0]:
        raise DimensionError(
            f"X has {X.shape[1]} columns but means has {means.shape[0]}")
    return X - means


def _dataset_header(p1, p2):
    cols = [f"x{j}" for j in range(1, p1 + 1)]
    cols += [f"z{j}" for j in range(1, p2 + 1)]
    cols.append("y")
    return cols


def read_dataset_csv(path):
    """Read a Dataset from CSV with columns x1..xP1[, z1..zP2], y.

    UTF-8, '.' decimal separator, header required. Parse failures raise
    DataError naming the file, row, and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        p1 = 0
        while p1 < len(header) and header[p1] == f"x{p1 + 1}":
            p1 += 1
        k = p1
        p2 = 0
        while k < len(header) and header[k] == f"z{p2 + 1}":
            k += 1
            p2 += 1
        if p1 < 1 or k >= len(header) or header[k] != "y" or k + 1 != len(header):
            raise DataError(
                f"{path}: header must be x1..xP1[, z1..zP2], y; got {header}")
        rows = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {i} has {len(row)} fields, expected "
                    f"{len(header)}")
            vals = []
            for j, field in enumerate(row):
                try:
                    vals.append(float(field))
                except ValueError:
                    raise DataError(
                        f"{path}: row {i}, column {header[j]}: "
                        f"cannot parse {field!r} as a number") from None
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.array(rows, dtype=float)
    if not np.all(np.isfinite(data)):
        bad = np.argwhere(~np.isfinite(data))[0]
        raise DataError(
            f"{path}: row {bad[0] + 2}, column {header[bad[1]]}: "
            "non-finite value")
    x = data[:, :p1]
    z = data[:, p1:p1 + p2] if p2 else None
    y = data[:, -1]
    return Dataset(x, y, z)


def write_dataset_csv(path, dataset):
    """Write a Dataset in the same CSV layout read_dataset_csv expects."""
    header = _dataset_header(dataset.p1, dataset.p2)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.x[i]]
            if dataset.z is not None:
                row += [repr(float(v)) for v in dataset.z[i]]
            row.append(repr(float(dataset.y[i])))
            writer.writerow(row)


def read_x_csv(path):
    """Read a covariates-only CSV with columns x1..xP1 into an (n, p1) array."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        expected = [f"x{j}" for j in range(1, len(header) + 1)]
        if not header or header != expected:
            raise DataError(
                f"{path}: header must be x1..xP1 only; got {header}")
        p1 = len(header)
        rows = []
        for i, row in enumerate(reader, start=2):
            if len(row) != p1:
                raise DataError(
                    f"{path}: row {i} has {len(row)} fields, expected {p1}")
            vals = []
            for j, field in enumerate(row):
                try:
                    vals.append(float(field))
                except ValueError:
                    raise DataError(
                        f"{path}: row {i}, column {header[j]}: "
                        f"cannot parse {field!r} as a number") from None
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.array(rows, dtype=float)
    if not np.all(np.isfinite(data)):
        bad = np.argwhere(~np.isfinite(data))[0]
        raise DataError(
            f"{path}: row {bad[0] + 2}, column {header[bad[1]]}: "
            "non-finite value")
    return data
