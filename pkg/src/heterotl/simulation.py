"""Synthetic benchmark scenarios and the replication harness.

Two designs. In the linear one the mismatched features are a noisy linear
function of the matched ones, with each proxy's map perturbed around the
target map and each proxy's coefficients offset by a contrast vector. In
the nonlinear one the map is a fixed tent-plus-exponential function of the
first five matched features, with proxies seeing an oscillated version.
The harness runs seeded replications, fits the three estimators plus the
oracle arm, and aggregates test-set metrics per method.
"""

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (METHOD_TAGS, ConfigError, Dataset, HeterotlError,
                   TruthRecord, l1_estimation_error,
                   mean_absolute_prediction_error, rmse)
from .penalized_reg import LassoSettings
from .estimators import (fit_homogeneous, fit_htl, fit_target_lasso,
                         oracle_predict, predict)
from .feature_map import FeatureMapModel

_MASK64 = (1 << 64) - 1


def _hash64(v):
    # splitmix64 finalizer: well-mixed 64-bit hash of the replication index
    v = (v + 0x9E3779B97F4A7C15) & _MASK64
    v = ((v ^ (v >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    v = ((v ^ (v >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (v ^ (v >> 31)) & _MASK64


def rep_seed_for(seed, r):
    return (seed & _MASK64) ^ _hash64(r)


def _m_for(p, scenario):
    rate = 0.12 if scenario == "linear" else 0.15
    return int(round(rate * p))


@dataclass(frozen=True)
class SimConfig:
    scenario: str
    K: int
    n_p: int
    n_t: int
    p1: int
    p2: int
    reps: int
    seed: int
    n_test: int = 200
    delta_sparse: bool = True
    sparse_total: bool = False
    lambda_policy: str = "cv"
    lambda_value: float = None
    map_kind: str = None
    delta_scale: float = 1.0
    map_noise_scale: float = 1.0
    model_noise_scale: float = 1.0
    map_perturb_scale: float = 1.0
    ridge_tau: float = 0.0
    gamma: str = "auto"
    c_gamma: float = 1.0
    p1_prime: int = 1
    budget: int = None
    d_cap: int = 64
    clamp_tol: float = 0.01
    cv_folds: int = 5
    tol: float = 1e-7
    max_iters: int = 3000

    def __post_init__(self):
        if self.scenario not in ("linear", "nonlinear"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for name in ("K", "n_p", "n_t", "n_test", "p1", "p2", "reps"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, "
                                  f"got {v!r}")
        if self.lambda_policy not in ("fixed", "cv"):
            raise ConfigError(
                f"lambda_policy must be fixed or cv, got "
                f"{self.lambda_policy!r}")
        if self.lambda_policy == "fixed":
            if self.lambda_value is None or self.lambda_value < 0:
                raise ConfigError(
                    "fixed lambda policy needs lambda_value >= 0")
        if self.map_kind not in (None, "linear", "sieve"):
            raise ConfigError(f"unknown map kind {self.map_kind!r}")
        if _m_for(self.p1 + self.p2, self.scenario) < 1:
            raise ConfigError(
                f"p1 + p2 = {self.p1 + self.p2} is too small: the "
                "repeating-block count rounds to zero")
        if self.scenario == "nonlinear" and self.p1 < 5:
            raise ConfigError(
                f"nonlinear scenario needs p1 >= 5 active features, "
                f"got p1={self.p1}")
        for name in ("delta_scale", "map_noise_scale", "model_noise_scale",
                     "map_perturb_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        # constructing settings validates tol and max_iters
        LassoSettings(max_iters=self.max_iters, tol=self.tol)

    @property
    def effective_map_kind(self):
        if self.map_kind is not None:
            return self.map_kind
        return "linear" if self.scenario == "linear" else "sieve"

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SimScenario:
    proxies: list
    target: Dataset
    test: Dataset
    truth: TruthRecord


def gen_beta_star(p, scenario):
    """Repeating-block coefficient vector: m ones at stride ceil(p/m)."""
    if p < 1:
        raise ConfigError(f"p must be >= 1, got {p}")
    m = _m_for(p, scenario)
    if m < 1:
        raise ConfigError(f"block count m = round({p} * rate) is zero")
    block = -(-p // m)
    v = np.zeros(p)
    v[0::block] = 1.0
    return v


def _delta_draw(rng, p, sparse):
    # values drawn for every slot, then masked; keeps the draw order fixed
    values = rng.normal(0.0, 0.25, size=p)
    if not sparse:
        return values
    s0 = int(np.floor(np.sqrt(p / 2.0)))
    keep = rng.choice(p, size=s0, replace=False)
    out = np.zeros(p)
    out[keep] = values[keep]
    return out


def _delta_blocks(rng, p1, p2, sparse, sparse_total):
    if sparse_total and sparse:
        return _delta_draw(rng, p1 + p2, True)
    return np.concatenate([_delta_draw(rng, p1, sparse),
                           _delta_draw(rng, p2, sparse)])


def gen_delta_star(p, sparse, seed):
    """Contrast vector: floor(sqrt(p/2)) nonzeros N(0, 1/16), or all slots."""
    if p < 1:
        raise ConfigError(f"p must be >= 1, got {p}")
    return _delta_draw(np.random.default_rng(seed), p, sparse)


def _streams(rep_seed, K):
    # fixed spawn order truth, proxies, target, test: growing n_test must
    # not perturb the training draws
    children = np.random.SeedSequence(rep_seed).spawn(K + 3)
    return [np.random.default_rng(c) for c in children]


def _bivariate(rng, n, scale):
    # correlation 0.5 via the Cholesky factor of [[1, .5], [.5, 1]]
    z = rng.standard_normal((n, 2))
    chol = np.array([[1.0, 0.0], [0.5, np.sqrt(0.75)]])
    return scale * (z @ chol.T)


def _responses(X, Z, coef, eps, p1):
    return X @ coef[:p1] + Z @ coef[p1:] + eps


def gen_linear_scenario(config, rep_seed):
    """One replication of the linear design.

    Proxy X rows are standard normal; target and test X entries are
    Uniform(0, sqrt(12)) so each coordinate has unit variance but a
    shifted support. The target map P_t has 10*Beta(10,10) entries and
    each proxy uses P_t plus (Beta(4,4) - 1/2)/3 perturbations. Errors
    are bivariate normal with correlation 0.5; the target and test draws
    take the first marginal, proxies the second. Target and test Z are
    generated but withheld to the truth record.
    """
    p1, p2 = config.p1, config.p2
    p = p1 + p2
    rngs = _streams(rep_seed, config.K)
    truth_rng = rngs[0]

    beta_star = gen_beta_star(p, "linear")
    P_t = 10.0 * truth_rng.beta(10.0, 10.0, size=(p1, p2))
    P_k = [P_t + config.map_perturb_scale
           * ((truth_rng.beta(4.0, 4.0, size=(p1, p2)) - 0.5) / 3.0)
           for _ in range(config.K)]
    deltas = [config.delta_scale
              * _delta_blocks(truth_rng, p1, p2, config.delta_sparse,
                              config.sparse_total)
              for _ in range(config.K)]

    proxies = []
    for k in range(config.K):
        rng = rngs[1 + k]
        X = rng.standard_normal((config.n_p, p1))
        xi = config.map_noise_scale * rng.standard_normal((config.n_p, p2))
        Z = X @ P_k[k] + xi
        eps = _bivariate(rng, config.n_p, config.model_noise_scale)[:, 1]
        y = _responses(X, Z, beta_star - deltas[k], eps, p1)
        proxies.append(Dataset(X, y, Z))

    width = np.sqrt(12.0)
    rng = rngs[config.K + 1]
    X_t = rng.uniform(0.0, width, size=(config.n_t, p1))
    xi = config.map_noise_scale * rng.standard_normal((config.n_t, p2))
    Z_t = X_t @ P_t + xi
    eps = _bivariate(rng, config.n_t, config.model_noise_scale)[:, 0]
    target = Dataset(X_t, _responses(X_t, Z_t, beta_star, eps, p1))

    rng = rngs[config.K + 2]
    X_te = rng.uniform(0.0, width, size=(config.n_test, p1))
    xi = config.map_noise_scale * rng.standard_normal((config.n_test, p2))
    Z_te = X_te @ P_t + xi
    eps = _bivariate(rng, config.n_test, config.model_noise_scale)[:, 0]
    test = Dataset(X_te, _responses(X_te, Z_te, beta_star, eps, p1))

    truth = TruthRecord(
        beta_star, deltas,
        true_map_target=FeatureMapModel("linear", P=P_t),
        true_map_proxies=[FeatureMapModel("linear", P=Pk) for Pk in P_k],
        z_target=Z_t, z_test=Z_te)
    return SimScenario(proxies, target, test, truth)


def _h_values(X):
    # first five features active; 1-based odd ones contribute the tent
    # 0.5 - |x - 0.5|, even ones contribute exp(-x); free of the output
    # column index
    active = X[:, :5]
    odd = active[:, 0::2]
    even = active[:, 1::2]
    return (np.sum(0.5 - np.abs(odd - 0.5), axis=1)
            + np.sum(np.exp(-even), axis=1))


def gen_nonlinear_scenario(config, rep_seed):
    """One replication of the nonlinear design.

    All X entries are Uniform(-2, 2). Every mismatched feature shares the
    same conditional mean h; proxies see the oscillated h + sin(h). The
    rest matches the linear design: contrasts on proxy coefficients,
    bivariate errors, withheld target and test Z.
    """
    p1, p2 = config.p1, config.p2
    p = p1 + p2
    if p1 < 5:
        raise ConfigError(f"nonlinear scenario needs p1 >= 5, got {p1}")
    rngs = _streams(rep_seed, config.K)
    truth_rng = rngs[0]

    beta_star = gen_beta_star(p, "nonlinear")
    deltas = [config.delta_scale
              * _delta_blocks(truth_rng, p1, p2, config.delta_sparse,
                              config.sparse_total)
              for _ in range(config.K)]

    def tiled(h):
        return np.repeat(h[:, None], p2, axis=1)

    proxies = []
    for k in range(config.K):
        rng = rngs[1 + k]
        X = rng.uniform(-2.0, 2.0, size=(config.n_p, p1))
        h = _h_values(X)
        h_prox = h + config.map_perturb_scale * np.sin(h)
        xi = config.map_noise_scale * rng.standard_normal((config.n_p, p2))
        Z = tiled(h_prox) + xi
        eps = _bivariate(rng, config.n_p, config.model_noise_scale)[:, 1]
        y = _responses(X, Z, beta_star - deltas[k], eps, p1)
        proxies.append(Dataset(X, y, Z))

    rng = rngs[config.K + 1]
    X_t = rng.uniform(-2.0, 2.0, size=(config.n_t, p1))
    xi = config.map_noise_scale * rng.standard_normal((config.n_t, p2))
    Z_t = tiled(_h_values(X_t)) + xi
    eps = _bivariate(rng, config.n_t, config.model_noise_scale)[:, 0]
    target = Dataset(X_t, _responses(X_t, Z_t, beta_star, eps, p1))

    rng = rngs[config.K + 2]
    X_te = rng.uniform(-2.0, 2.0, size=(config.n_test, p1))
    xi = config.map_noise_scale * rng.standard_normal((config.n_test, p2))
    Z_te = tiled(_h_values(X_te)) + xi
    eps = _bivariate(rng, config.n_test, config.model_noise_scale)[:, 0]
    test = Dataset(X_te, _responses(X_te, Z_te, beta_star, eps, p1))

    truth = TruthRecord(beta_star, deltas, true_map_target=None,
                        true_map_proxies=None, z_target=Z_t, z_test=Z_te)
    return SimScenario(proxies, target, test, truth)


def gen_scenario(config, rep_seed):
    if config.scenario == "linear":
        return gen_linear_scenario(config, rep_seed)
    return gen_nonlinear_scenario(config, rep_seed)


def _one_rep(config, r):
    rep_seed = rep_seed_for(config.seed, r)
    scen = gen_scenario(config, rep_seed)
    lam = "cv" if config.lambda_policy == "cv" else config.lambda_value
    cv_seed = _hash64(rep_seed)
    p1 = config.p1
    settings = LassoSettings(max_iters=config.max_iters, tol=config.tol)
    try:
        htl = fit_htl(scen.proxies, scen.target,
                      map_kind=config.effective_map_kind, lam=lam,
                      settings=settings, ridge_tau=config.ridge_tau,
                      gamma=config.gamma, c_gamma=config.c_gamma,
                      p1_prime=config.p1_prime, budget=config.budget,
                      d_cap=config.d_cap, clamp_tol=config.clamp_tol,
                      cv_folds=config.cv_folds, cv_seed=cv_seed)
        hom = fit_homogeneous(scen.proxies, scen.target, lam=lam,
                              settings=settings, cv_folds=config.cv_folds,
                              cv_seed=cv_seed)
        las = fit_target_lasso(scen.target, lam=lam, settings=settings,
                               cv_folds=config.cv_folds, cv_seed=cv_seed)
        fitted = (("htl", htl.fit.beta_hat, predict(htl, scen.test.x)),
                  ("homogeneous", hom.beta_hat, predict(hom, scen.test.x)),
                  ("target_lasso", las.beta_hat, predict(las, scen.test.x)))
    except HeterotlError as exc:
        return r, None, f"{type(exc).__name__}: {exc}"
    beta1_star = scen.truth.beta_star[:p1]
    rows = []
    for method, beta_hat, yhat in fitted:
        rows.append((r, method,
                     mean_absolute_prediction_error(scen.test.y, yhat),
                     rmse(scen.test.y, yhat),
                     l1_estimation_error(beta_hat[:p1], beta1_star)))
    # with the withheld test Z the oracle residual is exactly the test
    # noise, the floor the other methods are compared against
    yhat = oracle_predict(scen.test.x, scen.truth.z_test,
                          scen.truth.beta_star)
    rows.append((r, "oracle",
                 mean_absolute_prediction_error(scen.test.y, yhat),
                 rmse(scen.test.y, yhat), 0.0))
    return r, rows, None


def _aggregate(rows):
    out = {}
    for method in METHOD_TAGS:
        cols = [(row[2], row[3], row[4]) for row in rows
                if row[1] == method]
        if not cols:
            out[method] = {"n": 0}
            continue
        arr = np.array(cols)
        stats = {}
        for j, name in enumerate(("map", "rmse", "l1_err_beta1")):
            v = arr[:, j]
            stats[name] = {
                "mean": float(np.mean(v)),
                "median": float(np.median(v)),
                "sd": float(np.std(v, ddof=1)) if v.size > 1 else 0.0,
            }
        stats["n"] = int(arr.shape[0])
        out[method] = stats
    return out


@dataclass(frozen=True)
class MetricsReport:
    """Replication-level metric rows plus per-method aggregates."""

    config: dict
    rows: list
    aggregates: dict
    failures: list = field(default_factory=list)

    def method_values(self, method, metric):
        idx = {"map": 2, "rmse": 3, "l1_err_beta1": 4}[metric]
        return np.array([row[idx] for row in self.rows
                         if row[1] == method])

    def to_dict(self):
        return {
            "config": self.config,
            "rows": [{"rep": r, "method": m, "map": a, "rmse": b,
                      "l1_err_beta1": c} for r, m, a, b, c in self.rows],
            "aggregates": self.aggregates,
            "failures": [{"rep": r, "error": e} for r, e in self.failures],
        }

    def to_csv_text(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["rep", "method", "map", "rmse", "l1_err_beta1"])
        for r, m, a, b, c in self.rows:
            writer.writerow([r, m, repr(float(a)), repr(float(b)),
                             repr(float(c))])
        return buf.getvalue()


def run_replications(config, n_workers=1):
    """Run config.reps seeded replications and collect metrics.

    Each replication derives its own seed from the master seed and the
    index, so results do not depend on execution order or worker count.
    A replication that raises a library error is dropped whole and
    recorded under failures.
    """
    indices = range(config.reps)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(lambda r: _one_rep(config, r), indices))
    else:
        results = [_one_rep(config, r) for r in indices]
    results.sort(key=lambda t: t[0])
    rows, failures = [], []
    for r, rep_rows, err in results:
        if err is not None:
            failures.append((r, err))
        else:
            rows.extend(rep_rows)
    return MetricsReport(config.to_dict(), rows, _aggregate(rows), failures)
