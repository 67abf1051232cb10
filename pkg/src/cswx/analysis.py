"""Distance matrices, diversity, semivariograms and metric checks."""
from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .cswx import UnalignableError, cswx_distance
from .grammar import Node, random_branch_permutation
from .rcswx import rcswx_distance
from .scoring import ScoringMatrix, load_scoring, preset

METHODS = {"cswx": cswx_distance, "rcswx": rcswx_distance}


def distance_fn(method: str) -> Callable[[Node, Node, ScoringMatrix], float]:
    try:
        return METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose cswx or rcswx") from None


@dataclass
class DistanceMatrix:
    values: np.ndarray
    labels: list[str]
    method: str = "rcswx"
    scoring: str = "sm0"

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("distance matrix must be square")
        if len(self.labels) != v.shape[0]:
            raise ValueError("one label per row required")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["", *self.labels])
        for lab, row in zip(self.labels, self.values):
            w.writerow([lab, *map(repr, row.tolist())])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, method: str = "", scoring: str = "") -> DistanceMatrix:
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        labels = rows[0][1:]
        values = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float)
        return cls(values, labels, method, scoring)


def pairwise_distance_matrix(trees: Sequence[Node], method: str = "rcswx",
                             m: ScoringMatrix | None = None, labels: Sequence[str] | None = None,
                             workers: int = 1) -> DistanceMatrix:
    """Upper triangle computed once per unordered pair and mirrored.

    With ``workers > 1`` pairs are spread over a thread pool; each task
    writes only its own (i, j) entry.
    """
    m = m or preset("sm0")
    fn = distance_fn(method)
    n = len(trees)
    out = np.zeros((n, n))
    pairs = list(itertools.combinations(range(n), 2))

    def task(pair: tuple[int, int]) -> None:
        i, j = pair
        try:
            out[i, j] = fn(trees[i], trees[j], m)
        except UnalignableError as exc:
            raise UnalignableError(f"pair ({i}, {j}): {exc}") from exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(task, pairs))
    else:
        for p in pairs:
            task(p)
    iu = np.triu_indices(n, 1)
    out[iu[1], iu[0]] = out[iu]
    labels = list(labels) if labels is not None else [f"t{k}" for k in range(n)]
    return DistanceMatrix(out, labels, method, m.name)


def population_diversity(trees: Sequence[Node], method: str = "rcswx",
                         m: ScoringMatrix | None = None) -> float:
    if len(trees) < 2:
        raise ValueError("diversity needs at least two trees")
    d = pairwise_distance_matrix(trees, method, m).values
    return float(d[np.triu_indices(len(trees), 1)].mean())


# -- semivariogram -------------------------------------------------------------

@dataclass(frozen=True)
class VariogramBin:
    h: float  # mean distance of the pairs in the bin
    gamma: float
    count: int


def empirical_semivariogram(dist, fitness, bins: int = 30) -> list[VariogramBin]:
    """Half mean squared fitness difference per equal-width distance bin."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    d = dist.values if isinstance(dist, DistanceMatrix) else np.asarray(dist, dtype=float)
    f = np.asarray(fitness, dtype=float)
    if f.shape != (d.shape[0],):
        raise ValueError(f"{f.size} fitness values for a {d.shape[0]}x{d.shape[0]} matrix")
    iu = np.triu_indices(len(f), 1)
    h = d[iu]
    sq = (f[iu[0]] - f[iu[1]]) ** 2
    hmax = float(h.max()) if h.size else 0.0
    edges = np.linspace(0.0, hmax if hmax > 0 else 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, h, side="right") - 1, 0, bins - 1)
    count = np.bincount(idx, minlength=bins)
    hsum = np.bincount(idx, weights=h, minlength=bins)
    ssum = np.bincount(idx, weights=sq, minlength=bins)
    return [VariogramBin(float(hsum[b] / count[b]), float(ssum[b] / (2 * count[b])), int(count[b]))
            for b in range(bins) if count[b]]


def spherical(h, nugget: float, sill: float, rng_: float) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    r = np.minimum(h / rng_, 1.0)
    return nugget + (sill - nugget) * (1.5 * r - 0.5 * r ** 3)


class VariogramFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class SemivariogramModel:
    nugget: float
    sill: float
    range: float
    residual: float
    degenerate: bool = False

    def __call__(self, h) -> np.ndarray:
        return spherical(h, self.nugget, self.sill, self.range)

    def to_dict(self) -> dict:
        return {"nugget": self.nugget, "sill": self.sill, "range": self.range,
                "residual": self.residual, "degenerate": self.degenerate}


def _weighted_residual(params, h, g, w) -> float:
    return float(np.sum(w * (spherical(h, *params) - g) ** 2))


def fit_spherical(points: Sequence[VariogramBin], starts: int = 8,
                  flat_tol: float = 1e-6) -> SemivariogramModel:
    """Count-weighted least squares with nugget >= 0, sill >= nugget, range > 0.

    Parametrised as (nugget, partial sill, range) so the bounds are boxes. A
    fit whose partial sill is negligible against the data scale has no
    identifiable range and is flagged ``degenerate``.
    """
    if len(points) < 4:
        raise ValueError(f"need at least 4 populated bins, got {len(points)}")
    h = np.array([p.h for p in points], dtype=float)
    g = np.array([p.gamma for p in points], dtype=float)
    w = np.array([p.count for p in points], dtype=float)
    sw = np.sqrt(w / w.sum())
    scale = float(np.max(np.abs(g)))
    hmax = float(h.max()) if h.max() > 0 else 1.0
    if scale == 0.0:
        return SemivariogramModel(0.0, 0.0, hmax, 0.0, degenerate=True)

    def resid(x):
        return sw * (spherical(h, x[0], x[0] + x[1], x[2]) - g)

    lo = [0.0, 0.0, 1e-9 * hmax]
    hi = [np.inf, np.inf, np.inf]
    best = None
    failures = []
    for k in range(starts):
        a0 = hmax * (k + 1) / (starts + 1)
        n0 = float(max(g.min(), 0.0)) * (0.5 if k % 2 else 1.0)
        x0 = [n0, max(float(g.max()) - n0, scale * 1e-3), a0]
        sol = least_squares(resid, x0, bounds=(lo, hi), x_scale=[scale, scale, hmax],
                            xtol=1e-12, ftol=1e-12, gtol=1e-12)
        if sol.status <= 0:
            failures.append(f"start {k}: {sol.message}")
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise VariogramFitError("spherical fit did not converge: " + "; ".join(failures))
    nugget, psill, a = (float(v) for v in best.x)
    residual = 2.0 * float(best.cost)
    degenerate = psill <= flat_tol * scale or float(np.ptp(g)) <= flat_tol * scale
    return SemivariogramModel(nugget, nugget + psill, a, residual, degenerate)


def model_residual(points: Sequence[VariogramBin], nugget: float, sill: float, rng_: float) -> float:
    """The objective minimised by :func:`fit_spherical`, for arbitrary parameters."""
    h = np.array([p.h for p in points])
    g = np.array([p.gamma for p in points])
    w = np.array([p.count for p in points], dtype=float)
    return _weighted_residual((nugget, sill, rng_), h, g, w / w.sum())


def planted_variogram_points(nugget: float, sill: float, rng_: float, noise: float, n: int,
                             rng: np.random.Generator, hmax: float | None = None) -> list[VariogramBin]:
    """``n`` lags drawn uniformly on [0, hmax] with the spherical model plus
    Gaussian noise; each point has unit weight."""
    hmax = hmax if hmax is not None else 2.0 * rng_
    h = rng.uniform(0.0, hmax, n)
    g = spherical(h, nugget, sill, rng_) + rng.normal(0.0, noise, n)
    return [VariogramBin(float(a), float(b), 1) for a, b in zip(h, g)]


def spherical_field(coords: np.ndarray, nugget: float, sill: float, rng_: float,
                    rng: np.random.Generator, samples: int = 1) -> np.ndarray:
    """Gaussian field draws with spherical covariance (valid up to 3-D)."""
    d = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1))
    cov = (sill - nugget) - (spherical(d, 0.0, sill - nugget, rng_))
    cov[np.diag_indices_from(cov)] += nugget
    evals, evecs = np.linalg.eigh(cov)
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    return (root @ rng.standard_normal((len(coords), samples))).T


# -- metric axioms -------------------------------------------------------------

@dataclass
class AxiomReport:
    method: str
    scoring: str
    pairs: int = 0
    triples: int = 0
    permutations: int = 0
    negative: int = 0
    identity: int = 0
    asymmetric: int = 0
    triangle: int = 0
    permutation_positive: int = 0
    worst_triangle: float = 0.0  # most negative d(x,y)+d(y,z)-d(x,z)
    worst_asymmetry: float = 0.0
    worst_permutation: float = 0.0
    examples: list = field(default_factory=list)

    @property
    def violations(self) -> int:
        """Axiom failures. Positive permutation distances only count for the
        branch-order invariant method; for the plain one they are expected."""
        base = self.negative + self.identity + self.asymmetric + self.triangle
        return base + (self.permutation_positive if self.method == "rcswx" else 0)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def summary(self) -> str:
        return (f"{self.method}/{self.scoring}: pairs={self.pairs} triples={self.triples} "
                f"perms={self.permutations} negative={self.negative} identity={self.identity} "
                f"asymmetric={self.asymmetric} triangle={self.triangle} "
                f"perm_positive={self.permutation_positive} worst_triangle={self.worst_triangle:.6g}")


def metric_axiom_check(sampler: Callable[[np.random.Generator], Node], n: int, method: str = "rcswx",
                       m: ScoringMatrix | None = None, rng: np.random.Generator | None = None,
                       permutations: int | None = None, slack: float = 1e-9) -> AxiomReport:
    if n < 1:
        raise ValueError("n must be >= 1")
    m = m or preset("sm0")
    rng = rng if rng is not None else np.random.default_rng(0)
    fn = distance_fn(method)
    rep = AxiomReport(method, m.name)
    for _ in range(n):
        x, y = sampler(rng), sampler(rng)
        dxy, dyx, dxx = fn(x, y, m), fn(y, x, m), fn(x, x, m)
        rep.pairs += 1
        rep.negative += int(dxy < 0)
        rep.identity += int(dxx != 0)
        if dxy != dyx:
            rep.asymmetric += 1
            rep.worst_asymmetry = max(rep.worst_asymmetry, abs(dxy - dyx))
    for _ in range(n):
        x, y, z = sampler(rng), sampler(rng), sampler(rng)
        dxy, dyz, dxz = fn(x, y, m), fn(y, z, m), fn(x, z, m)
        rep.triples += 1
        for gap in (dxy + dyz - dxz, dxy + dxz - dyz, dxz + dyz - dxy):
            rep.worst_triangle = min(rep.worst_triangle, gap)
            if gap < -slack:
                rep.triangle += 1
                rep.examples.append((x, y, z))
    for _ in range(permutations if permutations is not None else n):
        x = sampler(rng)
        d = fn(x, random_branch_permutation(x, rng), m)
        rep.permutations += 1
        if d != 0:
            rep.permutation_positive += 1
            rep.worst_permutation = max(rep.worst_permutation, d)
    return rep


# -- scoring sensitivity -------------------------------------------------------

@dataclass
class SensitivityReport:
    presets: list[str]
    distances: np.ndarray  # (pairs, presets)
    pearson: np.ndarray  # (presets, presets)
    r2_vs_first: dict[str, float]

    def lowest_r2(self) -> str:
        return min(self.r2_vs_first, key=self.r2_vs_first.get)


def scoring_sensitivity(pairs: Sequence[tuple[Node, Node]], presets: Sequence[str] = ("sm0", "sm1", "sm2", "sm3"),
                        method: str = "rcswx") -> SensitivityReport:
    if len(pairs) < 20:
        raise ValueError("sensitivity needs at least 20 pairs")
    fn = distance_fn(method)
    mats = [load_scoring(p) for p in presets]
    d = np.array([[fn(a, b, m) for m in mats] for a, b in pairs])
    r = np.corrcoef(d, rowvar=False)
    r2 = {}
    for k in range(1, len(presets)):
        slope, icpt = np.polyfit(d[:, 0], d[:, k], 1)
        pred = slope * d[:, 0] + icpt
        ss_res = float(np.sum((d[:, k] - pred) ** 2))
        ss_tot = float(np.sum((d[:, k] - d[:, k].mean()) ** 2))
        r2[presets[k]] = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return SensitivityReport(list(presets), d, r, r2)
