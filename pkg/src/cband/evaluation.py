"""Benchmark harness: rank/linear correlations, 4-parameter logistic mapping, content-disjoint splits."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataIntegrityError
from .regressor import LabeledFeatureSet, TrainConfig, mlp_forward, mlp_init, train, video_score


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    return x, y


def pearson(x, y) -> float:
    """Pearson correlation; NaN when either vector is constant."""
    x, y = _pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if den == 0.0:
        return math.nan
    return float(np.clip((dx @ dy) / den, -1.0, 1.0))


def srocc(x, y) -> float:
    x, y = _pair(x, y)
    if x.size < 3:
        raise ValueError("srocc needs at least 3 points")
    return pearson(rankdata(x), rankdata(y))


def krocc(x, y) -> float:
    """Kendall tau-b over all pairs."""
    x, y = _pair(x, y)
    if x.size < 3:
        raise ValueError("krocc needs at least 3 points")
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(x.size, k=1)
    sx, sy = sx[iu], sy[iu]
    n_x = np.count_nonzero(sx)
    n_y = np.count_nonzero(sy)
    if n_x == 0 or n_y == 0:
        return math.nan
    return float(np.sum(sx * sy) / math.sqrt(n_x * n_y))


# ---------------------------------------------------------------------------
# logistic linearisation


@dataclass
class LogisticParams:
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    form: str = "standard"
    converged: bool = True
    iterations: int = 0

    def __call__(self, x) -> np.ndarray:
        return logistic4(x, (self.beta1, self.beta2, self.beta3, self.beta4), self.form)


def logistic4(x, beta, form: str = "standard") -> np.ndarray:
    """f(x) = b2 + (b1 - b2) / (1 + exp(-z)).

    ``standard``: z = (x - b3) / |b4|.  ``printed``: z = x - b3 / |b4|, the grouping
    as it appears in the usual typeset formula.
    """
    b1, b2, b3, b4 = beta
    x = np.asarray(x, dtype=np.float64)
    s = abs(b4)
    if form == "standard":
        z = (x - b3) / s
    elif form == "printed":
        z = x - b3 / s
    else:
        raise ValueError(f"unknown logistic form {form!r}")
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return b2 + (b1 - b2) / (1.0 + np.exp(-z))


def nelder_mead(fun: Callable[[np.ndarray], float], x0, max_iter: int = 2000, diam_tol: float = 1e-8,
                reflect=1.0, expand=2.0, contract=0.5, shrink=0.5):
    """Plain Nelder-Mead. Returns (x_best, f_best, iterations, converged).

    Converged when the largest vertex-to-vertex distance drops below ``diam_tol``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    n = x0.size
    simplex = [x0]
    for i in range(n):
        v = x0.copy()
        v[i] = v[i] * 1.05 if v[i] != 0 else 0.00025
        simplex.append(v)
    simplex = np.array(simplex)
    fvals = np.array([fun(v) for v in simplex])

    def safe(f):
        return f if np.isfinite(f) else np.inf

    fvals = np.array([safe(f) for f in fvals])
    for it in range(1, max_iter + 1):
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        diam = max(np.max(np.abs(simplex[i] - simplex[j])) for i in range(n + 1) for j in range(i))
        if diam < diam_tol:
            return simplex[0], fvals[0], it - 1, True
        centroid = simplex[:-1].mean(axis=0)
        xr = centroid + reflect * (centroid - simplex[-1])
        fr = safe(fun(xr))
        if fr < fvals[0]:
            xe = centroid + expand * (xr - centroid)
            fe = safe(fun(xe))
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + contract * (xr - centroid)
                fc = safe(fun(xc))
                accept = fc <= fr
            else:
                xc = centroid + contract * (simplex[-1] - centroid)
                fc = safe(fun(xc))
                accept = fc < fvals[-1]
            if accept:
                simplex[-1], fvals[-1] = xc, fc
            else:
                simplex[1:] = simplex[0] + shrink * (simplex[1:] - simplex[0])
                fvals[1:] = [safe(fun(v)) for v in simplex[1:]]
    order = np.argsort(fvals, kind="stable")
    return simplex[order[0]], fvals[order[0]], max_iter, False


def fit_logistic4(pred, mos, form: str = "standard", max_iter: int = 2000) -> LogisticParams:
    """Least-squares fit of the 4-parameter logistic from pred to MOS."""
    pred, mos = _pair(pred, mos)
    if pred.size < 8:
        raise ValueError("logistic fit needs at least 8 points")
    if np.ptp(pred) == 0:
        raise ValueError("logistic fit needs non-constant predictions")
    x0 = np.array([mos.max(), mos.min(), pred.mean(), pred.std()])

    def sse(beta):
        if beta[3] == 0:
            return np.inf
        r = logistic4(pred, beta, form) - mos
        return float(r @ r)

    # restart from the best vertex until a restart no longer improves; collapsed
    # simplices are common when two parameters only enter through their ratio
    beta, best, iters, converged = nelder_mead(sse, x0, max_iter=max_iter)
    while converged and iters < max_iter:
        cand, f, used, converged = nelder_mead(sse, beta, max_iter=max_iter - iters)
        iters += used
        if not f < best - 1e-12 * max(best, 1.0):
            if f <= best:
                beta, best = cand, f
            break
        beta, best = cand, f
    return LogisticParams(*map(float, beta), form=form, converged=converged, iterations=iters)


def plcc_rmse(pred, mos, params: LogisticParams) -> tuple[float, float]:
    pred, mos = _pair(pred, mos)
    mapped = params(pred)
    return pearson(mapped, mos), float(np.sqrt(np.mean((mapped - mos) ** 2)))


# ---------------------------------------------------------------------------
# splits and benchmark


@dataclass
class SplitPlan:
    repeats: list  # list of (train_contents, test_contents)
    seed: int
    train_fraction: float

    def __len__(self) -> int:
        return len(self.repeats)


def make_splits(content_ids: Sequence, repeats: int = 50, train_fraction: float = 0.8, seed: int = 0) -> SplitPlan:
    contents = sorted(set(content_ids))
    if len(contents) < 5:
        raise ValueError("need at least 5 distinct contents")
    n_train = math.floor(train_fraction * len(contents) + 0.5)
    rng = np.random.default_rng(seed)
    plan = []
    for _ in range(repeats):
        perm = rng.permutation(len(contents))
        plan.append((sorted(contents[i] for i in perm[:n_train]),
                     sorted(contents[i] for i in perm[n_train:])))
    return SplitPlan(plan, seed, train_fraction)


@dataclass
class MosRecord:
    video_id: str
    content_id: str
    crf: str
    mos: float


def read_mos_csv(path: str) -> dict[str, MosRecord]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"video_id", "content_id", "mos"} - set(reader.fieldnames or ())
        if missing:
            raise DataIntegrityError(f"{path} lacks columns {sorted(missing)}")
        for row in reader:
            vid = row["video_id"]
            if vid in out:
                raise DataIntegrityError(f"duplicate video_id {vid!r} in {path}")
            out[vid] = MosRecord(vid, row["content_id"], row.get("crf", ""), float(row["mos"]))
    return out


@dataclass
class EvalReport:
    srocc: float
    krocc: float
    plcc: float
    rmse: float
    n: int
    logistic: Optional[LogisticParams] = None
    split_id: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        return d


def _json_float(x):
    return x if not isinstance(x, float) or math.isfinite(x) else None


@dataclass
class BenchmarkResult:
    per_repeat: list[EvalReport] = field(default_factory=list)

    def values(self, key: str) -> np.ndarray:
        return np.array([getattr(r, key) for r in self.per_repeat], dtype=np.float64)

    def mean(self, key: str) -> float:
        """Mean over repeats where the metric is defined; NaN if none are."""
        vals = self.values(key)
        vals = vals[~np.isnan(vals)]
        return float(vals.mean()) if vals.size else math.nan

    def summary(self) -> dict:
        return {k: self.mean(k) for k in ("srocc", "krocc", "plcc", "rmse")}

    def to_json(self) -> dict:
        """Report with undefined metrics as null so the output stays strict JSON."""
        return {
            "schema_version": 1,
            "repeats": len(self.per_repeat),
            "mean": {k: _json_float(v) for k, v in self.summary().items()},
            "per_repeat": {k: [_json_float(getattr(r, k)) for r in self.per_repeat]
                           for k in ("split_id", "srocc", "krocc", "plcc", "rmse", "n")},
            "logistic": [asdict(r.logistic) if r.logistic else None for r in self.per_repeat],
        }


def evaluate_predictions(pred, mos, split_id: int = 0, form: str = "standard") -> EvalReport:
    pred, mos = _pair(pred, mos)
    s, k = srocc(pred, mos), krocc(pred, mos)
    try:
        params = fit_logistic4(pred, mos, form)
        p, r = plcc_rmse(pred, mos, params)
    except ValueError:
        params, p, r = None, math.nan, math.nan
    return EvalReport(s, k, p, r, int(pred.size), params, split_id)


def run_benchmark(features_by_video: Mapping[str, np.ndarray], mos_by_video: Mapping[str, MosRecord],
                  plan: SplitPlan, train_cfg: TrainConfig, form: str = "standard",
                  progress: Optional[Callable[[int, EvalReport], None]] = None) -> BenchmarkResult:
    """Per repeat: train on frames of training contents (video MOS broadcast to frames),
    score test videos by average pooling, and evaluate."""
    for vid in features_by_video:
        if vid not in mos_by_video:
            raise DataIntegrityError(f"no MOS for video {vid!r}")
    videos = sorted(features_by_video)
    by_content: dict[str, list[str]] = {}
    for vid in videos:
        by_content.setdefault(mos_by_video[vid].content_id, []).append(vid)
    dims = {np.asarray(features_by_video[v]).shape[-1] for v in videos}
    if len(dims) != 1:
        raise DataIntegrityError(f"feature dimensions disagree across videos: {sorted(dims)}")
    dim = dims.pop()
    result = BenchmarkResult()
    for split_id, (train_c, test_c) in enumerate(plan.repeats):
        train_v = [v for c in train_c for v in by_content.get(c, [])]
        test_v = [v for c in test_c for v in by_content.get(c, [])]
        X = np.concatenate([np.atleast_2d(features_by_video[v]) for v in train_v])
        y = np.concatenate([np.full(len(np.atleast_2d(features_by_video[v])), mos_by_video[v].mos)
                            for v in train_v])
        cfg = TrainConfig(**{**train_cfg.__dict__, "seed": train_cfg.seed + split_id})
        model = train(mlp_init(dim, cfg.seed), LabeledFeatureSet(X, y), cfg)
        pred = [video_score(mlp_forward(model, np.atleast_2d(features_by_video[v]))) for v in test_v]
        mos = [mos_by_video[v].mos for v in test_v]
        report = evaluate_predictions(pred, mos, split_id, form)
        result.per_repeat.append(report)
        if progress:
            progress(split_id, report)
    return result
