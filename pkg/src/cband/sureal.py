"""Maximum-likelihood recovery of true scores from raw opinion scores.

Each rating is modelled as x_es ~ N(q_e + b_s, v_s^2 + a_c(e)^2): q_e the true
quality of stimulus e, b_s the bias of subject s, v_s their inconsistency and
a_c the ambiguity of the content stimulus e was made from.

Estimation is coordinate ascent on the log-likelihood. q and b have closed-form
conditional maximisers (precision-weighted means). The variances are updated
by safeguarded 1-D Newton steps on v_s^2 and a_c^2, which keeps the
non-negativity constraints as simple bounds and avoids the stationary point
that a Newton step in a_c itself has at a_c = 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnderdeterminedError

LOG_2PI = math.log(2.0 * math.pi)
Z95 = 1.96


@dataclass
class RatingsTable:
    subject_ids: list
    stimulus_ids: list
    content_ids: list  # content of each stimulus, aligned with stimulus_ids
    scores: np.ndarray  # (E, S) with NaN for missing ratings

    @classmethod
    def from_entries(cls, entries) -> "RatingsTable":
        """Build from (subject_id, stimulus_id, content_id, score) tuples."""
        entries = list(entries)
        subjects = sorted({e[0] for e in entries}, key=str)
        stimuli = sorted({e[1] for e in entries}, key=str)
        s_idx = {s: i for i, s in enumerate(subjects)}
        e_idx = {e: i for i, e in enumerate(stimuli)}
        content_of: dict = {}
        scores = np.full((len(stimuli), len(subjects)), np.nan)
        for subj, stim, content, score in entries:
            if content_of.setdefault(stim, content) != content:
                raise ValueError(f"stimulus {stim!r} maps to more than one content")
            i, j = e_idx[stim], s_idx[subj]
            if not np.isnan(scores[i, j]):
                raise ValueError(f"duplicate rating for ({subj!r}, {stim!r})")
            scores[i, j] = float(score)
        return cls(subjects, stimuli, [content_of[s] for s in stimuli], scores)

    @classmethod
    def from_csv(cls, path: str) -> "RatingsTable":
        with open(path, newline="") as fh:
            rows = [(r["subject_id"], r["stimulus_id"], r["content_id"], float(r["score"]))
                    for r in csv.DictReader(fh)]
        return cls.from_entries(rows)

    def entries(self):
        for i, stim in enumerate(self.stimulus_ids):
            for j, subj in enumerate(self.subject_ids):
                if not np.isnan(self.scores[i, j]):
                    yield subj, stim, self.content_ids[i], float(self.scores[i, j])


@dataclass
class MOSEstimate:
    stimulus_ids: list
    subject_ids: list
    content_ids: list  # distinct contents, order of a_c
    q: np.ndarray
    b: np.ndarray
    v: np.ndarray
    a: np.ndarray
    q_se: np.ndarray
    b_se: np.ndarray
    v_se: np.ndarray
    a_se: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    loglik_history: list = field(default_factory=list)
    numerical_flag: bool = False

    def ci95(self, name: str) -> np.ndarray:
        est, se = getattr(self, name), getattr(self, name + "_se")
        return np.stack([est - Z95 * se, est + Z95 * se], axis=1)

    def to_json(self) -> dict:
        def arr(x):
            return [float(v) if np.isfinite(v) else None for v in np.asarray(x, dtype=float).ravel()]

        def ci(name):
            return [arr(row) for row in self.ci95(name)]

        return {
            "schema_version": 1,
            "stimulus_ids": list(map(str, self.stimulus_ids)),
            "subject_ids": list(map(str, self.subject_ids)),
            "content_ids": list(map(str, self.content_ids)),
            "quality_scores": arr(self.q), "quality_scores_ci95": ci("q"),
            "subject_bias": arr(self.b), "subject_bias_ci95": ci("b"),
            "subject_inconsistency": arr(self.v), "subject_inconsistency_ci95": ci("v"),
            "content_ambiguity": arr(self.a), "content_ambiguity_ci95": ci("a"),
            "loglik": self.loglik, "iterations": self.iterations, "converged": self.converged,
            "numerical_flag": self.numerical_flag,
        }


def plain_mos(ratings: RatingsTable) -> np.ndarray:
    if ratings.scores.size == 0 or np.all(np.isnan(ratings.scores)):
        raise ValueError("no ratings")
    return np.nanmean(ratings.scores, axis=1)


def _loglik(x, mask, q, b, var):
    r = np.where(mask, x - q[:, None] - b[None, :], 0.0)
    terms = -0.5 * (LOG_2PI + np.log(var) + r * r / var)
    return float(np.sum(np.where(mask, terms, 0.0)))


def _newton_variance(u, fixed, resid2, weight_mask, floor, axis, group=None, n_groups=None, max_steps=30):
    """Raise the log-likelihood in u (a variance) per group by safeguarded Newton steps.

    ll(u) = -1/2 sum [log(u + fixed) + r^2 / (u + fixed)] over the group's ratings.
    """

    def reduce(t):
        t = np.where(weight_mask, t, 0.0)
        if group is None:
            return t.sum(axis=axis)
        return np.bincount(group, weights=t.sum(axis=1), minlength=n_groups)

    def expand(vals):
        return vals[None, :] if group is None else vals[group][:, None]

    def ll(uu):
        tot = expand(uu) + fixed
        return reduce(-0.5 * (np.log(tot) + resid2 / tot))

    u = u.copy()
    for _ in range(max_steps):
        tot = expand(u) + fixed
        g = reduce(0.5 * (resid2 / tot ** 2 - 1.0 / tot))
        h = reduce(0.5 / tot ** 2 - resid2 / tot ** 3)
        # Newton where concave, otherwise a gradient step scaled to the current variance
        step = np.where(h < 0, -g / np.where(h < 0, h, -1.0), np.sign(g) * np.maximum(u, floor))
        base = ll(u)
        cand = np.maximum(u + step, floor)
        for _ in range(40):
            better = ll(cand) >= base
            if np.all(better):
                break
            cand = np.where(better, cand, np.maximum(u + 0.5 * (cand - u), floor))
        cand = np.where(ll(cand) >= base, cand, u)
        done = np.abs(cand - u) <= 1e-12 * np.maximum(1.0, u)
        u = cand
        if np.all(done):
            break
    return u


def estimate(ratings: RatingsTable, max_iter: int = 500, tol: float = 1e-8, v_floor: float = 1e-3,
             with_ambiguity: bool = True) -> MOSEstimate:
    x = np.asarray(ratings.scores, dtype=np.float64)
    mask = ~np.isnan(x)
    E, S = x.shape
    per_subject = mask.sum(axis=0)
    per_stimulus = mask.sum(axis=1)
    if E == 0 or S == 0 or np.any(per_subject < 2) or np.any(per_stimulus < 2):
        raise UnderdeterminedError(
            "every subject must rate >= 2 stimuli and every stimulus needs >= 2 ratings"
        )
    contents = sorted(set(ratings.content_ids), key=str)
    c_idx = {c: i for i, c in enumerate(contents)}
    group = np.array([c_idx[c] for c in ratings.content_ids])
    C = len(contents)
    xz = np.where(mask, x, 0.0)
    floor_u = v_floor ** 2

    q = plain_mos(ratings)
    b = np.zeros(S)
    r0 = np.where(mask, x - q[:, None], 0.0)
    u_v = np.maximum(0.5 * (r0 ** 2).sum(axis=0) / per_subject, floor_u)
    if with_ambiguity:
        u_a = 0.5 * np.bincount(group, weights=(r0 ** 2).sum(axis=1), minlength=C) / \
            np.maximum(np.bincount(group, weights=per_stimulus, minlength=C), 1)
    else:
        u_a = np.zeros(C)

    def variance():
        return u_v[None, :] + u_a[group][:, None]

    history = [_loglik(x, mask, q, b, variance())]
    best = (history[0], q, b, u_v, u_a)
    converged = False
    flag = False
    it = 0
    for it in range(1, max_iter + 1):
        old = np.concatenate([q, b, np.sqrt(u_v), np.sqrt(u_a)])
        w = np.where(mask, 1.0 / variance(), 0.0)
        q = (w * (xz - b[None, :])).sum(axis=1) / w.sum(axis=1)
        b = (w * (xz - q[:, None])).sum(axis=0) / w.sum(axis=0)
        resid2 = np.where(mask, (x - q[:, None] - b[None, :]) ** 2, 0.0)
        u_v = _newton_variance(u_v, u_a[group][:, None], resid2, mask, floor_u, axis=0)
        if with_ambiguity:
            u_a = _newton_variance(u_a, u_v[None, :], resid2, mask, 0.0, axis=None,
                                   group=group, n_groups=C)
        # gauge: shifting q up and b down by the same constant leaves every mean unchanged
        shift = b.mean()
        b = b - shift
        q = q + shift
        ll = _loglik(x, mask, q, b, variance())
        if ll < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            flag = True
        history.append(ll)
        if ll > best[0]:
            best = (ll, q, b, u_v, u_a)
        new = np.concatenate([q, b, np.sqrt(u_v), np.sqrt(u_a)])
        if np.max(np.abs(new - old)) < tol:
            converged = True
            break

    if flag:
        _, q, b, u_v, u_a = best
    var = variance()
    w = np.where(mask, 1.0 / var, 0.0)
    resid2 = np.where(mask, (x - q[:, None] - b[None, :]) ** 2, 0.0)
    v, a = np.sqrt(u_v), np.sqrt(u_a)
    q_se = 1.0 / np.sqrt(w.sum(axis=1))
    b_se = 1.0 / np.sqrt(w.sum(axis=0))
    # observed information of a standard deviation s entering through var = s^2 + other:
    # -d2ll/ds2 = sum 1/var - 2 s^2/var^2 - r^2/var^2 + 4 s^2 r^2/var^3
    info_terms_v = np.where(mask, (1.0 / var - 2.0 * v[None, :] ** 2 / var ** 2)
                            - resid2 * (1.0 / var ** 2 - 4.0 * v[None, :] ** 2 / var ** 3), 0.0)
    v_info = info_terms_v.sum(axis=0)
    a_e = a[group][:, None]
    info_terms_a = np.where(mask, (1.0 / var - 2.0 * a_e ** 2 / var ** 2)
                            - resid2 * (1.0 / var ** 2 - 4.0 * a_e ** 2 / var ** 3), 0.0)
    a_info = np.bincount(group, weights=info_terms_a.sum(axis=1), minlength=C)
    with np.errstate(divide="ignore", invalid="ignore"):
        v_se = np.where(v_info > 0, 1.0 / np.sqrt(np.where(v_info > 0, v_info, 1.0)), np.inf)
        a_se = np.where(a_info > 0, 1.0 / np.sqrt(np.where(a_info > 0, a_info, 1.0)), np.inf)
    if not with_ambiguity:
        a_se = np.zeros(C)
    return MOSEstimate(list(ratings.stimulus_ids), list(ratings.subject_ids), contents,
                       q, b, v, a, q_se, b_se, v_se, a_se, _loglik(x, mask, q, b, var), it, converged, history, flag)
