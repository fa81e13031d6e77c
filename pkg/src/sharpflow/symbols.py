"""Flow laws as symbol maps lam -> zeta(lam), tables and their checks."""
from __future__ import annotations

import bisect
import logging
import math
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .coefficients import (
    CoefficientSet,
    ModelConstants,
    ScalarFunction,
    compute_constants,
    config_hash,
    parse_config,
)
from .mode_solver import DEFAULT_CELLS, solve_mode
from .oracle import (
    ClosedFormCase,
    zeta_affine,
    zeta_epsilon,
    zeta_general_tied,
    zeta_reference,
)

log = logging.getLogger(__name__)

LAW_IDS = ("surface_diffusion", "intermediate", "vpmcf", "sqrt_lb",
           "fractional_closed", "fractional_numeric", "epsilon_family")
# laws whose symbol comes from a coefficient set and is therefore bounded by
# surface diffusion; sqrt_lb and vpmcf are limiting shapes
DOMINATED_LAWS = ("surface_diffusion", "intermediate", "fractional_closed",
                  "fractional_numeric", "epsilon_family")

# default coefficient sets: constant coupling for the classical laws,
# affine tied coupling n = 2 + u for the fractional ones
ISD_CONFIG = {"m_tilde": {"type": "poly", "coeffs": [1.0]}, "i": 1,
              "n": {"type": "constant"}, "a2tau": {"type": "poly", "coeffs": [1.0]}}
FRACTIONAL_CONFIG = {"m_tilde": {"type": "poly", "coeffs": [1.0]}, "i": 1,
                     "n": {"type": "affine", "beta0": 1.0, "beta1": 1.0},
                     "a2tau": {"type": "tied", "a_tilde": 1.0}}

INTERP_LOG_GAP = 0.05


def max_threads():
    env = os.environ.get("SHARPFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer SHARPFLOW_THREADS=%r", env)
    return os.cpu_count() or 1


class SymbolCache:
    """Per-lam numeric solves with log-log interpolation between close nodes.

    A query between two cached nodes less than ``INTERP_LOG_GAP`` apart in
    log(lam) is interpolated linearly in log-log; anything else triggers a
    fresh solve that is then cached. Identical keys written by two threads
    hold identical values, so the lock only protects the containers.
    """

    def __init__(self, coeffs: CoefficientSet, n_cells=DEFAULT_CELLS):
        self.coeffs = coeffs
        self.n_cells = n_cells
        self._keys = []
        self._vals = {}
        self._lock = threading.Lock()
        self.solves = 0

    def _solve(self, lam):
        z = solve_mode(self.coeffs, lam, n_cells=self.n_cells).zeta
        with self._lock:
            if lam not in self._vals:
                bisect.insort(self._keys, lam)
                self.solves += 1
            self._vals[lam] = z
        return z

    def exact(self, lam):
        """Solve (or reuse) at exactly ``lam``."""
        lam = float(lam)
        hit = self._vals.get(lam)
        return hit if hit is not None else self._solve(lam)

    def __call__(self, lam):
        lam = float(lam)
        if lam <= 0:
            return 0.0
        with self._lock:
            hit = self._vals.get(lam)
            j = bisect.bisect_left(self._keys, lam)
            lo = self._keys[j - 1] if j > 0 else None
            hi = self._keys[j] if j < len(self._keys) else None
        if hit is not None:
            return hit
        if lo is not None and hi is not None and math.log(hi / lo) < INTERP_LOG_GAP:
            t = math.log(lam / lo) / math.log(hi / lo)
            zl, zh = self._vals[lo], self._vals[hi]
            return math.exp((1 - t) * math.log(zl) + t * math.log(zh))
        return self._solve(lam)

    def prefill(self, lmin, lmax, threads=None):
        """Seed a log grid on [lmin, lmax] fine enough for interpolation."""
        count = int(math.ceil(math.log(lmax / lmin) / (0.8 * INTERP_LOG_GAP))) + 1
        grid = np.exp(np.linspace(math.log(lmin), math.log(lmax), max(count, 2)))
        todo = [float(x) for x in grid if float(x) not in self._vals]
        with ThreadPoolExecutor(max_workers=threads or max_threads()) as ex:
            list(ex.map(self._solve, todo))


_CACHES = {}
_CACHES_LOCK = threading.Lock()


def shared_cache(coeffs, n_cells=DEFAULT_CELLS):
    """Cache shared by every law built from the same config and mesh size."""
    key = (coeffs.config_hash(), n_cells)
    with _CACHES_LOCK:
        if key not in _CACHES:
            _CACHES[key] = SymbolCache(coeffs, n_cells)
        return _CACHES[key]


@dataclass(frozen=True, eq=False)
class FlowLaw:
    """A symbol lam -> zeta(lam) with zeta(0) = 0, tagged by its law."""

    id: str
    evaluator: Callable
    constants: ModelConstants
    provenance: str
    eps: Optional[float] = None
    cache: Optional[SymbolCache] = field(default=None, repr=False)

    @property
    def label(self):
        return f"epsilon_family({self.eps!r})" if self.id == "epsilon_family" else self.id

    def __call__(self, lam):
        arr = np.asarray(lam, dtype=float)
        out = np.zeros(arr.shape)
        pos = arr > 0
        if np.any(pos):
            out[pos] = self.evaluator(arr[pos])
        return float(out) if out.ndim == 0 else out

    def prepare(self, lmin, lmax):
        """Hint the range of eigenvalues about to be queried."""
        if self.cache is not None and lmax > 0:
            self.cache.prefill(max(lmin, 1e-8), lmax)


def _vectorize(scalar_fn):
    def ev(arr):
        return np.array([scalar_fn(float(x)) for x in np.ravel(arr)]).reshape(np.shape(arr))
    return ev


def parse_law_id(text):
    """Split "epsilon_family(0.01)" or "epsilon_family:0.01" into (id, eps)."""
    m = re.fullmatch(r"epsilon_family[(:]([^()]+)\)?", text.strip())
    if m:
        return "epsilon_family", float(m.group(1))
    if text not in LAW_IDS:
        raise ValueError(f"unknown law {text!r}; choose from {', '.join(LAW_IDS)}")
    return text, None


def default_config_for(law_id):
    if law_id in ("surface_diffusion", "intermediate", "vpmcf", "epsilon_family"):
        return parse_config(ISD_CONFIG)
    return parse_config(FRACTIONAL_CONFIG)


def isd_limit_coefficients(coeffs):
    """Constant-coupling set reached by the epsilon family as eps -> 0.

    A2tau = n^4 m_tilde (1-u^2)^(i-1) tends to m_tilde (1-u^2)^(i-1).
    """
    a2 = coeffs.m_tilde * ScalarFunction.poly([1.0, 0.0, -1.0]) ** (coeffs.i - 1)
    return CoefficientSet(coeffs.m_tilde, coeffs.i, ScalarFunction.constant(1.0), a2tau=a2)


def epsilon_coefficients(coeffs, eps):
    """Coefficient set n = 1 + eps u, A2tau = n^4 m_tilde (tied, a_tilde = eps^-2)."""
    n = ScalarFunction.poly([1.0, eps])
    return CoefficientSet(coeffs.m_tilde, coeffs.i, n, a_tilde=eps ** -2)


def make_law(law, coeffs: Optional[CoefficientSet] = None, eps=None, n_cells=DEFAULT_CELLS):
    """Build a FlowLaw.

    Args:
        law: a law id, optionally "epsilon_family(eps)".
        coeffs: coefficient set; defaults to the shipped one for the law.
        eps: parameter of the epsilon family.
        n_cells: mesh size for fractional_numeric.
    """
    law_id, parsed_eps = parse_law_id(law)
    eps = parsed_eps if eps is None else eps
    if coeffs is None:
        coeffs = default_config_for(law_id)
    consts = compute_constants(coeffs)
    prov = coeffs.config_hash()
    if law_id in ("surface_diffusion", "intermediate", "vpmcf", "sqrt_lb"):
        return FlowLaw(law_id, lambda x: zeta_reference(law_id, consts, x), consts, prov)
    if law_id == "epsilon_family":
        if eps is None:
            raise ValueError("epsilon_family needs eps")
        a1 = consts.alpha1
        return FlowLaw(law_id, lambda x: zeta_epsilon(eps, a1, x, consts.sigma), consts,
                       prov, eps=float(eps))
    if law_id == "fractional_closed":
        case = ClosedFormCase.from_coefficients(coeffs)
        if case.affine:
            return FlowLaw(law_id, lambda x: zeta_affine(case, x), consts, prov)
        return FlowLaw(law_id, _vectorize(lambda x: zeta_general_tied(case, x)), consts, prov)
    cache = shared_cache(coeffs, n_cells)
    return FlowLaw(law_id, _vectorize(cache), consts, prov, cache=cache)


# -- tables ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SymbolTable:
    lambdas: np.ndarray
    zetas: np.ndarray
    law: str
    config_hash: str
    failed: np.ndarray
    messages: tuple
    grid: dict

    @property
    def ok(self):
        return ~self.failed

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("lambda,zeta,law,config_hash\n")
            for lam, z in zip(self.lambdas, self.zetas):
                fh.write(f"{float(lam)!r},{float(z)!r},{self.law},{self.config_hash}\n")

    def interpolate(self, lam):
        """Log-log linear interpolation; outside the table the power law of the
        nearest decade is extended with a warning."""
        lam = float(lam)
        x = np.log(self.lambdas[self.ok])
        y = np.log(self.zetas[self.ok])
        lx = math.log(lam)
        if x[0] <= lx <= x[-1]:
            return float(np.exp(np.interp(lx, x, y)))
        log.warning("extrapolating %s beyond the tabulated range at lambda=%g", self.law, lam)
        above = lx > x[-1]
        idx = np.flatnonzero(x >= x[-1] - math.log(10) if above else x <= x[0] + math.log(10))
        if idx.size < 2:
            idx = np.arange(x.size)[-2:] if above else np.arange(2)
        slope, icpt = np.polyfit(x[idx], y[idx], 1)
        return float(np.exp(icpt + slope * lx))


def log_grid(lmin, lmax, points):
    if not (lmin > 0 and lmax > lmin):
        raise ValueError("need 0 < lmin < lmax")
    if points < 2:
        raise ValueError("need at least two points")
    grid = np.logspace(math.log10(lmin), math.log10(lmax), points)
    grid[0], grid[-1] = lmin, lmax
    return grid


def tabulate(law: FlowLaw, lmin, lmax, points, threads=None) -> SymbolTable:
    """Tabulate zeta on a log grid with both endpoints included.

    Numeric laws solve rows in parallel; a row whose solve fails is kept
    with zeta = nan and its message.
    """
    grid = log_grid(lmin, lmax, points)
    failed = np.zeros(points, dtype=bool)
    msgs = [""] * points

    def row(j):
        try:
            if law.cache is not None:
                return law.cache.exact(grid[j])
            return float(law(grid[j]))
        except Exception as exc:  # noqa: BLE001 - recorded per row
            failed[j] = True
            msgs[j] = f"{type(exc).__name__}: {exc}"
            return float("nan")

    zetas = None
    if law.cache is None:
        try:
            zetas = np.asarray(law(grid), dtype=float)
        except Exception:  # noqa: BLE001 - retried row by row below
            zetas = None
    if zetas is None:
        with ThreadPoolExecutor(max_workers=threads or max_threads()) as ex:
            zetas = np.array(list(ex.map(row, range(points))))
    return SymbolTable(grid, zetas, law.label, law.provenance, failed, tuple(msgs),
                       {"lmin": float(lmin), "lmax": float(lmax), "points": int(points),
                        "spacing": "log"})


@dataclass(frozen=True)
class TableReport:
    positivity: bool
    dominance: bool
    zero_mode: Optional[bool]
    min_margin: float
    worst_lambda: float
    failed_rows: int
    violations: tuple

    @property
    def passed(self):
        return self.positivity and self.dominance and self.zero_mode is not False \
            and self.failed_rows == 0


def verify_table(table: SymbolTable, constants: ModelConstants, law: Optional[FlowLaw] = None,
                 rel_tol=1e-12) -> TableReport:
    """Positivity, dominance zeta <= (sigma/delta) lam, and zeta(0) = 0.

    The margin reported is min over rows of 1 - zeta / ((sigma/delta) lam).
    """
    if table.lambdas.size == 0:
        raise ValueError("empty table")
    ok = table.ok
    lam, z = table.lambdas[ok], table.zetas[ok]
    bound = constants.sigma_over_delta * lam
    pos = z > 0
    margin = 1.0 - z / bound
    dom = margin >= -rel_tol
    viol = []
    for j in np.flatnonzero(~pos):
        viol.append(("positivity", float(lam[j]), float(z[j])))
    for j in np.flatnonzero(~dom):
        viol.append(("dominance", float(lam[j]), float(z[j])))
    zero = None
    if law is not None:
        zero = law(0.0) == 0.0
    j = int(np.argmin(margin))
    return TableReport(bool(pos.all()), bool(dom.all()), zero, float(margin[j]), float(lam[j]),
                       int(table.failed.sum()), tuple(viol))


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    residual: float
    rows: int


def fit_exponent(table: SymbolTable, window) -> ExponentFit:
    """Least-squares slope of log zeta against log lam inside ``window``."""
    lo, hi = window
    sel = table.ok & (table.lambdas >= lo * (1 - 1e-12)) & (table.lambdas <= hi * (1 + 1e-12))
    if sel.sum() < 4:
        raise ValueError("the window must contain at least four rows")
    x, y = np.log(table.lambdas[sel]), np.log(table.zetas[sel])
    if np.ptp(x) == 0:
        raise ValueError("degenerate window")
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    resid = float(np.sqrt(res[0] / sel.sum())) if res.size else 0.0
    return ExponentFit(float(coef[0]), resid, int(sel.sum()))


@dataclass(frozen=True)
class RemainderDecay:
    lambdas: np.ndarray
    remainders: np.ndarray
    exponent: float
    fractional: bool


def remainder_decay(law: FlowLaw, constants: ModelConstants, lambdas) -> RemainderDecay:
    """Relative remainder |zeta/(sigma eta sqrt(lam)) - 1| and its decay.

    The exponent is fitted over the largest decade of the grid. A remainder
    that does not fall below 1/2 at the top of the grid marks a
    non-fractional shape.
    """
    if constants.eta is None:
        raise ValueError("the remainder needs eta (monotone coupling)")
    lam = np.sort(np.asarray(lambdas, dtype=float))
    z = law(lam)
    rem = np.abs(z / (constants.sigma * constants.eta * np.sqrt(lam)) - 1.0)
    sel = lam >= lam[-1] / 10.0 * (1 - 1e-12)
    if sel.sum() < 2:
        sel[-2:] = True
    good = sel & (rem > 0)
    exponent = float(np.polyfit(np.log(lam[good]), np.log(rem[good]), 1)[0]) \
        if good.sum() >= 2 else float("-inf")
    return RemainderDecay(lam, rem, exponent, bool(rem[-1] < 0.5))


__all__ = [
    "FlowLaw", "SymbolCache", "SymbolTable", "TableReport", "ExponentFit", "RemainderDecay",
    "make_law", "tabulate", "verify_table", "fit_exponent", "remainder_decay", "config_hash",
    "LAW_IDS", "DOMINATED_LAWS", "ISD_CONFIG", "FRACTIONAL_CONFIG", "parse_law_id",
    "epsilon_coefficients", "isd_limit_coefficients", "default_config_for", "log_grid",
    "max_threads",
]
