"""
Logistic asymmetry model, BIC subset selection, ROC and threshold choice.

    p(X) = exp(b0 + b.X) / (1 + exp(b0 + b.X))

Coefficients are estimated by maximum likelihood with iteratively reweighted
least squares on z-scored predictors and reported in the original units.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .features import FEATURE_NAMES


@dataclass(frozen=True)
class LogisticModel:
    predictors: tuple
    coefficients: np.ndarray  # b0, b1..bd
    standard_errors: np.ndarray
    p_values: np.ndarray
    log_likelihood: float
    n_train: int
    converged: bool
    n_iter: int = 0
    loglik_trace: tuple = field(default=(), repr=False)

    @property
    def d(self) -> int:
        return len(self.predictors)

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    def linear_predictor(self, x) -> np.ndarray:
        x = _as_design(x, self.predictors)
        return self.coefficients[0] + x @ self.coefficients[1:]

    def predict(self, x) -> np.ndarray:
        return expit(self.linear_predictor(x))

    def summary(self) -> list[dict]:
        names = ("intercept",) + tuple(self.predictors)
        return [
            {"predictor": n, "coefficient": float(c), "std_error": float(s), "p_value": float(p)}
            for n, c, s, p in zip(names, self.coefficients, self.standard_errors, self.p_values)
        ]

    def to_dict(self) -> dict:
        return {
            "predictors": list(self.predictors),
            "coefficients": self.summary(),
            "log_likelihood": self.log_likelihood,
            "n_train": self.n_train,
            "converged": self.converged,
            "bic": bic(self),
        }


def _as_design(x, predictors) -> np.ndarray:
    """Accept a mapping of name -> values or an array ordered like ``predictors``."""
    if isinstance(x, dict):
        missing = [p for p in predictors if p not in x]
        if missing:
            raise KeyError(f"missing predictors: {missing}")
        return np.column_stack([np.atleast_1d(np.asarray(x[p], dtype=float)) for p in predictors])
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != len(predictors):
        raise ValueError(f"expected {len(predictors)} predictors, got {arr.shape[1]}")
    return arr


def log_likelihood(eta: np.ndarray, y: np.ndarray) -> float:
    """Bernoulli log-likelihood for linear predictor ``eta``, overflow safe."""
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(x, y, predictors: Optional[Sequence[str]] = None, max_iter: int = 100,
                 tol: float = 1e-8, separation_norm: float = 1e3) -> LogisticModel:
    """Maximum-likelihood logistic regression by IRLS with step halving.

    Non-convergence within ``max_iter`` or a standardized coefficient norm
    beyond ``separation_norm`` (complete separation) yields
    ``converged=False``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, d = x.shape
    if predictors is None:
        predictors = tuple(f"x{i + 1}" for i in range(d))
    predictors = tuple(predictors)
    if len(predictors) != d:
        raise ValueError("predictor names do not match the number of columns")
    if y.size != n:
        raise ValueError("x and y lengths differ")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if y.min() == y.max():
        raise ValueError("need at least one sample of each class")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = np.column_stack([np.ones(n), (x - mean) / std])

    beta = np.zeros(d + 1)
    p0 = y.mean()
    beta[0] = math.log(p0 / (1 - p0))
    eta = z @ beta
    ll = log_likelihood(eta, y)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        w = p * (1 - p)
        grad = z.T @ (y - p)
        hess = (z * w[:, None]).T @ z
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            eta_c = z @ cand
            ll_c = log_likelihood(eta_c, y)
            if ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            # no ascent possible along the Newton direction
            converged = bool(np.max(np.abs(step)) < 1e-6)
            break
        delta = cand - beta
        beta, eta, ll = cand, eta_c, ll_c
        trace.append(ll)
        if np.linalg.norm(beta[1:]) > separation_norm:
            break
        if np.max(np.abs(delta)) < tol:
            converged = True
            break

    p = expit(eta)
    w = p * (1 - p)
    hess = (z * w[:, None]).T @ z
    try:
        cov_z = np.linalg.inv(hess)
        if not np.all(np.isfinite(cov_z)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        cov_z = np.linalg.pinv(hess)

    # back to raw units: b_j = bz_j / s_j, b0 = bz_0 - sum bz_j m_j / s_j
    jac = np.zeros((d + 1, d + 1))
    jac[0, 0] = 1.0
    jac[0, 1:] = -mean / std
    jac[1:, 1:] = np.diag(1.0 / std)
    coef = jac @ beta
    cov = jac @ cov_z @ jac.T
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        zstat = coef / se
    pval = 2 * norm.sf(np.abs(zstat))
    if np.linalg.norm(beta[1:]) > separation_norm:
        converged = False
    return LogisticModel(predictors, coef, se, pval, float(log_likelihood(eta, y)), n,
                         converged, it, tuple(trace))


def predict(model: LogisticModel, x) -> np.ndarray:
    return model.predict(x)


def detect(p, tau: float):
    """True where p >= tau (asymmetric gait)."""
    return np.asarray(p) >= tau


def bic(model: LogisticModel) -> float:
    """-2 logL + (d + 1) ln n; +inf for unconverged fits."""
    if not model.converged:
        return math.inf
    return -2.0 * model.log_likelihood + (model.d + 1) * math.log(model.n_train)


# --- feature tables ------------------------------------------------------------


@dataclass
class FeatureTable:
    """Rows of measurement metadata plus the eight features."""

    subject: list
    direction: list
    label: np.ndarray
    x: np.ndarray
    flags: list = field(default_factory=list)
    names: tuple = FEATURE_NAMES
    measurement: list = field(default_factory=list)

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=int)
        self.x = np.asarray(self.x, dtype=float).reshape(len(self.label), len(self.names))
        if not self.flags:
            self.flags = [""] * len(self.label)
        if not self.measurement:
            self.measurement = [""] * len(self.label)

    def __len__(self):
        return len(self.label)

    def subset(self, mask) -> "FeatureTable":
        mask = np.asarray(mask, dtype=bool)
        pick = lambda seq: [v for v, m in zip(seq, mask) if m]
        return FeatureTable(pick(self.subject), pick(self.direction), self.label[mask],
                            self.x[mask], pick(self.flags), self.names, pick(self.measurement))

    def usable(self) -> "FeatureTable":
        """Drop rejected rows (imputed rows are kept)."""
        ok = np.array([not f.startswith("rejected") for f in self.flags], dtype=bool)
        ok &= np.all(np.isfinite(self.x), axis=1)
        return self.subset(ok)

    def scenario(self, scenario: str) -> "FeatureTable":
        if scenario == "both":
            return self
        if scenario not in ("toward", "away"):
            raise ValueError(f"unknown scenario {scenario!r}")
        return self.subset([d == scenario for d in self.direction])

    def columns(self, predictors) -> np.ndarray:
        idx = [self.names.index(p) for p in predictors]
        return self.x[:, idx]


@dataclass(frozen=True)
class ModelSelectionResult:
    scenario: str
    bic_by_subset: dict  # tuple(names) -> BIC
    best_subset: tuple
    best_bic: float
    best_model: Optional[LogisticModel]
    n_train: int

    def per_order_minima(self) -> list[tuple[int, tuple, float]]:
        out = []
        orders = sorted({len(s) for s in self.bic_by_subset})
        for d in orders:
            subs = [(b, s) for s, b in self.bic_by_subset.items() if len(s) == d]
            b, s = min(subs, key=lambda t: (t[0], t[1]))
            out.append((d, s, b))
        return out


def select_model(table: FeatureTable, scenario: str = "both",
                 names: Optional[Sequence[str]] = None) -> ModelSelectionResult:
    """Fit every nonempty predictor subset and keep the lowest BIC."""
    data = table.usable().scenario(scenario)
    names = tuple(names) if names is not None else tuple(table.names)
    bics = {}
    models = {}
    for d in range(1, len(names) + 1):
        for subset in itertools.combinations(names, d):
            try:
                m = fit_logistic(data.columns(subset), data.label, subset)
            except ValueError:
                bics[subset] = math.inf
                continue
            bics[subset] = bic(m)
            models[subset] = m
    best = min(bics, key=lambda s: (bics[s], len(s), s))
    return ModelSelectionResult(scenario, bics, best, bics[best], models.get(best), len(data))


# --- thresholds and ROC -----------------------------------------------------------


@dataclass(frozen=True)
class Detector:
    model: LogisticModel
    tau: float
    train_fa_rate: float
    train_detection_rate: float

    def decide(self, x) -> np.ndarray:
        return detect(self.model.predict(x), self.tau)


def _rates(probs, labels, tau):
    pos = probs[labels == 1]
    neg = probs[labels == 0]
    pd = float(np.mean(pos >= tau)) if pos.size else math.nan
    fa = float(np.mean(neg >= tau)) if neg.size else math.nan
    return fa, pd


def threshold_candidates(probs) -> np.ndarray:
    u = np.unique(np.asarray(probs, dtype=float))
    mids = 0.5 * (u[1:] + u[:-1])
    lower = u[0] / 2 if u[0] > 0 else u[0]
    upper = 0.5 * (u[-1] + 1.0) if u[-1] < 1.0 else np.nextafter(u[-1], np.inf)
    return np.concatenate([[lower], mids, [upper]])


def choose_threshold(probs, labels, fa_bound: float = 0.05) -> tuple[float, float, float]:
    """Smallest candidate tau with training false-alarm rate <= fa_bound.

    Candidates are the midpoints between adjacent distinct probabilities plus
    one value below the smallest and one above the largest. Returns
    ``(tau, fa_rate, detection_rate)``.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if not (np.any(labels == 0) and np.any(labels == 1)):
        raise ValueError("need both classes to choose a threshold")
    for tau in threshold_candidates(probs):
        fa, pd = _rates(probs, labels, tau)
        if fa <= fa_bound:
            return float(tau), fa, pd
    raise AssertionError("upper candidate always has zero false alarms")


def make_detector(model: LogisticModel, x, labels, fa_bound: float = 0.05) -> Detector:
    tau, fa, pd = choose_threshold(model.predict(x), labels, fa_bound)
    return Detector(model, tau, fa, pd)


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fa: np.ndarray
    detection: np.ndarray

    @property
    def auc(self) -> float:
        return float(_trapezoid(self.detection, self.fa))

    def rows(self):
        return zip(self.thresholds.tolist(), self.fa.tolist(), self.detection.tolist())


def roc(probs, labels) -> RocCurve:
    """Operating points at every distinct score, from (0, 0) to (1, 1)."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-probs, kind="mergesort")
    p = probs[order]
    lab = labels[order]
    tp = np.cumsum(lab == 1)
    fp = np.cumsum(lab == 0)
    last = np.r_[np.nonzero(np.diff(p))[0], p.size - 1]  # last index of each distinct score
    thr = np.r_[np.inf, p[last]]
    det = np.r_[0.0, tp[last] / n_pos]
    fa = np.r_[0.0, fp[last] / n_neg]
    return RocCurve(thr, fa, det)


# --- leave-one-subject-out ------------------------------------------------------


@dataclass(frozen=True)
class LosoReport:
    subject: str
    scenario: str
    predictors: tuple
    tau: float
    pd_train: float
    fa_train: float
    pd_test: float
    fa_test: float
    n_test_pos: int
    n_test_neg: int
    flags: tuple = ()
    selection: Optional[ModelSelectionResult] = field(default=None, repr=False)
    detector: Optional[Detector] = field(default=None, repr=False)
    test_probs: np.ndarray = field(default=None, repr=False)
    test_labels: np.ndarray = field(default=None, repr=False)

    def row(self) -> dict:
        return {
            "subject": self.subject,
            "direction": self.scenario,
            "predictors": "+".join(self.predictors),
            "tau": self.tau,
            "pd_train": self.pd_train,
            "fa_train": self.fa_train,
            "pd_test": self.pd_test,
            "fa_test": self.fa_test,
            "n_test_pos": self.n_test_pos,
            "n_test_neg": self.n_test_neg,
            "flags": ";".join(self.flags),
        }


def evaluate_loso(table: FeatureTable, held_out: str, scenario: str,
                  fa_bound: float = 0.05) -> LosoReport:
    """Select, fit and threshold on all other subjects; test on ``held_out``."""
    data = table.usable()
    if held_out not in set(data.subject):
        raise KeyError(f"subject {held_out!r} not in feature table")
    is_test = np.array([s == held_out for s in data.subject])
    train = data.subset(~is_test).scenario(scenario)
    test = data.subset(is_test).scenario(scenario)
    sel = select_model(train, "both")
    if sel.best_model is None or not math.isfinite(sel.best_bic):
        raise ValueError("no subset could be fitted on the training rows")
    model = sel.best_model
    det = make_detector(model, train.columns(model.predictors), train.label, fa_bound)
    flags = []
    probs = model.predict(test.columns(model.predictors)) if len(test) else np.zeros(0)
    fa_test, pd_test = _rates(probs, test.label, det.tau) if len(test) else (math.nan, math.nan)
    n_pos = int(np.sum(test.label == 1))
    n_neg = int(np.sum(test.label == 0))
    if n_pos == 0:
        flags.append("pd_test_undefined")
    if n_neg == 0:
        flags.append("fa_test_undefined")
    return LosoReport(held_out, scenario, model.predictors, det.tau, det.train_detection_rate,
                      det.train_fa_rate, pd_test, fa_test, n_pos, n_neg, tuple(flags), sel, det,
                      probs, test.label)
