"""Problem description: coefficient catalog, impulse set, domain, validation.

A game is specified by a JSON-compatible document with the fixed top-level
keys ``domain``, ``drift``, ``vol``, ``running_cost``, ``bequest``,
``intervention_cost``, ``impulse_set``, ``impulse_response``, ``cost_floor``.
Coefficients come from a closed catalog of parametric families so that
evaluation is total and deterministic on [0, T] x closure(S).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, SpecError

COEFFICIENT_KINDS = ("constant", "affine", "scaled-power", "tabulated-grid")

_DOC_KEYS = (
    "domain",
    "drift",
    "vol",
    "running_cost",
    "bequest",
    "intervention_cost",
    "impulse_set",
    "impulse_response",
    "cost_floor",
)

_ENTRY_KEYS = ("kind", "params", "knots", "decay")


@dataclass(frozen=True)
class Coefficient:
    """One scalar-valued coefficient from the catalog.

    Every kind may carry a ``decay`` rate d >= 0, multiplying the spatial
    part by exp(-d t); this is the natural family for a bequest that fades
    with time and keeps intervention costs non-increasing in t.

    kinds and their params:
      constant        [v]
      affine          [a0, a_t, b_1 .. b_p]      a0 + a_t*t + <b, x>
      scaled-power    [offset, scale, power]     offset + scale*|x|**power
      tabulated-grid  values at ``knots``        piecewise-linear in x (1-D),
                                                 clamped beyond the end knots
    """

    kind: str
    params: tuple[float, ...]
    knots: tuple[float, ...] | None = None
    decay: float = 0.0

    def __call__(self, t, x) -> np.ndarray:
        """Evaluate at time t (scalar or batch) and states x (..., p)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        t = np.asarray(t, dtype=float)
        p = np.asarray(self.params, dtype=float)
        if self.kind == "constant":
            base = np.full(x.shape[:-1], p[0])
        elif self.kind == "affine":
            base = p[0] + p[1] * t + x @ p[2:]
        elif self.kind == "scaled-power":
            r = np.linalg.norm(x, axis=-1)
            base = p[0] + p[1] * r ** p[2]
        elif self.kind == "tabulated-grid":
            base = np.interp(x[..., 0], np.asarray(self.knots), p)
        else:  # pragma: no cover - rejected at load time
            raise SpecError(f"unknown coefficient kind {self.kind!r}")
        if self.decay:
            base = base * np.exp(-self.decay * t)
        return base + np.zeros(np.broadcast_shapes(base.shape, np.shape(t)))


@dataclass(frozen=True)
class VectorCoefficient:
    """Stack of per-component coefficients; evaluates to shape (..., n)."""

    components: tuple[Coefficient, ...]

    def __call__(self, t, x) -> np.ndarray:
        return np.stack([c(t, x) for c in self.components], axis=-1)


@dataclass(frozen=True)
class MatrixCoefficient:
    """Row-major grid of coefficients; evaluates to shape (..., p, m)."""

    rows: tuple[tuple[Coefficient, ...], ...]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.rows[0])

    def __call__(self, t, x) -> np.ndarray:
        return np.stack(
            [np.stack([c(t, x) for c in row], axis=-1) for row in self.rows],
            axis=-2,
        )


@dataclass(frozen=True)
class DomainSpec:
    """Open box S = (lower, upper) with finite horizon T."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    horizon: float

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def contains(self, x) -> np.ndarray:
        """Strict interior membership, batched over the leading axes."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.logical_and(x > lo, x < hi).all(axis=-1)


@dataclass(frozen=True)
class ImpulseSet:
    """Finite list of impulse vectors, kept in lexicographic order.

    The canonical order is what breaks ties when the intervention operator
    has several minimisers.
    """

    impulses: np.ndarray  # (n, p), possibly n = 0

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.impulses, dtype=float))
        if z.size == 0:
            z = z.reshape(0, z.shape[-1] if z.ndim > 1 else 1)
        order = np.lexsort(z.T[::-1])
        object.__setattr__(self, "impulses", z[order])

    def __len__(self) -> int:
        return self.impulses.shape[0]

    def __iter__(self):
        return iter(self.impulses)

    def index_of(self, z) -> int:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        hits = np.where((self.impulses == z).all(axis=1))[0]
        if hits.size == 0:
            raise DomainError(f"impulse {z.tolist()} is not in the impulse set")
        return int(hits[0])


@dataclass(frozen=True)
class ImpulseResponse:
    """State update Gamma(x, z); translation is x + z."""

    kind: str = "translation"
    matrix: np.ndarray | None = None
    offset: np.ndarray | None = None

    def __call__(self, x, z) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.kind == "translation":
            return x + z
        return x @ np.asarray(self.matrix).T + z + np.asarray(self.offset)


@dataclass(frozen=True)
class ProblemSpec:
    """Full game description; immutable and safe to share across threads."""

    domain: DomainSpec
    drift: VectorCoefficient
    vol: MatrixCoefficient
    running_cost: Coefficient
    bequest: Coefficient
    intervention_cost: Coefficient
    impulse_response: ImpulseResponse
    impulse_set: ImpulseSet
    cost_floor: float

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    @property
    def noise_dimension(self) -> int:
        return self.vol.shape[1]

    def mu(self, t, x) -> np.ndarray:
        return self.drift(t, x)

    def sigma(self, t, x) -> np.ndarray:
        return self.vol(t, x)

    def f(self, t, x) -> np.ndarray:
        return self.running_cost(t, x)

    def G(self, t, x) -> np.ndarray:
        return self.bequest(t, x)

    def cost(self, t, z) -> np.ndarray:
        return self.intervention_cost(t, z)


@dataclass(frozen=True)
class ValidationReport:
    """Empirical check of the standing assumptions on a deterministic lattice.

    Lipschitz and growth entries are sup estimates over probe pairs; the
    ``checks`` values are True/False, or None when the quantifier is vacuous
    (e.g. no pair of impulses sums back into the set).
    """

    n_probe: int
    lipschitz: dict
    growth: dict
    checks: dict
    details: dict

    @property
    def all_passed(self) -> bool:
        return all(v is not False for v in self.checks.values())


# ---------------------------------------------------------------------------
# document parsing


def _reject_unknown(mapping: Mapping, allowed: Sequence[str], where: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise SpecError(f"unknown key {key!r} in {where}")


def _parse_coefficient(entry, where: str) -> Coefficient:
    if not isinstance(entry, Mapping):
        raise SpecError(f"{where} must be an object with 'kind' and 'params'")
    _reject_unknown(entry, _ENTRY_KEYS, where)
    try:
        kind = entry["kind"]
        params = entry["params"]
    except KeyError as exc:
        raise SpecError(f"missing key {exc.args[0]!r} in {where}") from None
    if kind not in COEFFICIENT_KINDS:
        raise SpecError(f"unknown coefficient kind {kind!r} in {where}")
    params = tuple(float(v) for v in np.atleast_1d(params))
    decay = float(entry.get("decay", 0.0))
    if decay < 0:
        raise SpecError(f"negative decay in {where}")
    knots = None
    if kind == "tabulated-grid":
        if "knots" not in entry:
            raise SpecError(f"tabulated-grid entry {where} needs 'knots'")
        knots = tuple(float(v) for v in entry["knots"])
        if len(knots) != len(params):
            raise SpecError(f"knots/params length mismatch in {where}")
        if len(knots) < 2 or np.any(np.diff(knots) <= 0):
            raise SpecError(f"knots not strictly increasing in {where}")
    elif "knots" in entry:
        raise SpecError(f"'knots' only applies to tabulated-grid ({where})")
    if kind == "constant" and len(params) != 1:
        raise SpecError(f"constant entry {where} takes a single parameter")
    if kind == "scaled-power" and len(params) != 3:
        raise SpecError(f"scaled-power entry {where} takes [offset, scale, power]")
    return Coefficient(kind=kind, params=params, knots=knots, decay=decay)


def _parse_vector(entry, p: int, where: str) -> VectorCoefficient:
    if isinstance(entry, Mapping):
        comp = _parse_coefficient(entry, where)
        if comp.kind == "affine" and len(comp.params) != 2 + p:
            raise SpecError(f"affine entry {where} needs {2 + p} parameters")
        if p == 1:
            return VectorCoefficient((comp,))
        if comp.kind == "constant":
            # a single scalar constant broadcasts to every component
            return VectorCoefficient(tuple(comp for _ in range(p)))
        raise SpecError(f"{where} needs one entry per component in dimension {p}")
    entries = list(entry)
    if len(entries) != p:
        raise SpecError(f"{where} needs {p} entries, got {len(entries)}")
    return VectorCoefficient(
        tuple(_parse_coefficient(e, f"{where}[{i}]") for i, e in enumerate(entries))
    )


def _parse_matrix(entry, p: int, where: str) -> MatrixCoefficient:
    if isinstance(entry, Mapping):
        comp = _parse_coefficient(entry, where)
        if p == 1:
            return MatrixCoefficient(((comp,),))
        if comp.kind == "constant":
            # scalar constant -> diagonal volatility
            zero = Coefficient("constant", (0.0,))
            rows = tuple(
                tuple(comp if i == j else zero for j in range(p)) for i in range(p)
            )
            return MatrixCoefficient(rows)
        raise SpecError(f"{where} needs a row per state component in dimension {p}")
    rows = [list(row) for row in entry]
    if len(rows) != p or any(len(r) != len(rows[0]) for r in rows):
        raise SpecError(f"{where} must be a {p}-row matrix of entries")
    return MatrixCoefficient(
        tuple(
            tuple(
                _parse_coefficient(e, f"{where}[{i}][{j}]") for j, e in enumerate(row)
            )
            for i, row in enumerate(rows)
        )
    )


def _parse_domain(entry) -> DomainSpec:
    if not isinstance(entry, Mapping):
        raise SpecError("'domain' must be an object")
    _reject_unknown(entry, ("lower", "upper", "horizon"), "domain")
    try:
        lower = tuple(float(v) for v in np.atleast_1d(entry["lower"]))
        upper = tuple(float(v) for v in np.atleast_1d(entry["upper"]))
        horizon = float(entry["horizon"])
    except KeyError as exc:
        raise SpecError(f"missing key {exc.args[0]!r} in domain") from None
    if len(lower) != len(upper):
        raise SpecError("domain lower/upper dimension mismatch")
    if not all(lo < hi for lo, hi in zip(lower, upper)):
        raise SpecError("domain requires lower < upper componentwise")
    if horizon <= 0:
        raise SpecError("domain horizon must be positive")
    return DomainSpec(lower=lower, upper=upper, horizon=horizon)


def _parse_response(entry, p: int) -> ImpulseResponse:
    if entry == "translation":
        return ImpulseResponse("translation")
    if isinstance(entry, Mapping):
        _reject_unknown(entry, ("kind", "matrix", "offset"), "impulse_response")
        kind = entry.get("kind")
        if kind == "translation":
            return ImpulseResponse("translation")
        if kind == "custom-affine":
            matrix = np.asarray(entry.get("matrix", np.eye(p)), dtype=float)
            offset = np.asarray(entry.get("offset", np.zeros(p)), dtype=float)
            if matrix.shape != (p, p) or offset.shape != (p,):
                raise SpecError("custom-affine matrix/offset shape mismatch")
            return ImpulseResponse("custom-affine", matrix=matrix, offset=offset)
    raise SpecError("impulse_response must be 'translation' or a custom-affine object")


def _cost_probe_times(horizon: float, n: int = 33) -> np.ndarray:
    return np.linspace(0.0, horizon, n)


def load_spec(document: Mapping) -> ProblemSpec:
    """Build a ProblemSpec from a parsed document, validating as we go."""
    if not isinstance(document, Mapping):
        raise SpecError("problem document must be a key-value mapping")
    _reject_unknown(document, _DOC_KEYS, "document")
    missing = [k for k in _DOC_KEYS if k not in document]
    if missing:
        raise SpecError(f"missing key {missing[0]!r} in document")

    domain = _parse_domain(document["domain"])
    p = domain.dimension

    drift = _parse_vector(document["drift"], p, "drift")
    vol = _parse_matrix(document["vol"], p, "vol")
    running_cost = _parse_coefficient(document["running_cost"], "running_cost")
    bequest = _parse_coefficient(document["bequest"], "bequest")
    cost = _parse_coefficient(document["intervention_cost"], "intervention_cost")

    raw_z = document["impulse_set"]
    z = np.asarray(raw_z, dtype=float)
    if z.size == 0:
        impulse_set = ImpulseSet(np.zeros((0, p)))
    else:
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[1] != p:
            raise SpecError("impulse_set entries must match the state dimension")
        if len(np.unique(z, axis=0)) != len(z):
            raise SpecError("impulse_set entries must be distinct")
        impulse_set = ImpulseSet(z)

    response = _parse_response(document["impulse_response"], p)

    floor = float(document["cost_floor"])
    if floor <= 0:
        raise SpecError("cost floor violated: cost_floor must be positive")
    if len(impulse_set):
        times = _cost_probe_times(domain.horizon)
        costs = cost(times[:, None], impulse_set.impulses[None, :, :])
        if costs.min() < floor - 1e-12:
            raise SpecError(
                "cost floor violated: min intervention cost "
                f"{costs.min():.6g} < cost_floor {floor:.6g}"
            )

    return ProblemSpec(
        domain=domain,
        drift=drift,
        vol=vol,
        running_cost=running_cost,
        bequest=bequest,
        intervention_cost=cost,
        impulse_response=response,
        impulse_set=impulse_set,
        cost_floor=floor,
    )


def read_spec(path) -> ProblemSpec:
    """Load a problem document from a JSON file."""
    with open(path) as handle:
        return load_spec(json.load(handle))


def impulse_response(spec: ProblemSpec, x, z) -> np.ndarray:
    """Apply one impulse from the set; the result may leave the domain."""
    spec.impulse_set.index_of(z)  # membership guard
    return spec.impulse_response(
        np.atleast_1d(np.asarray(x, dtype=float)),
        np.atleast_1d(np.asarray(z, dtype=float)),
    )


# ---------------------------------------------------------------------------
# assumption validation


def _probe_lattice(domain: DomainSpec, n_probe: int) -> np.ndarray:
    p = domain.dimension
    per_axis = max(2, int(round(n_probe ** (1.0 / p))))
    axes = [
        np.linspace(domain.lower[i], domain.upper[i], per_axis) for i in range(p)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _pairwise_lipschitz(fn, times, pts) -> float:
    diffs = pts[:, None, :] - pts[None, :, :]
    dist = np.linalg.norm(diffs, axis=-1)
    mask = dist > 0
    worst = 0.0
    for t in times:
        vals = np.asarray(fn(t, pts), dtype=float)
        if vals.ndim == 1:
            dval = np.abs(vals[:, None] - vals[None, :])
        else:
            flat = vals.reshape(len(pts), -1)
            dval = np.linalg.norm(flat[:, None, :] - flat[None, :, :], axis=-1)
        with np.errstate(invalid="ignore"):
            quot = np.where(mask, dval / np.where(mask, dist, 1.0), 0.0)
        worst = max(worst, float(quot.max()))
    return worst


def _growth_bound(fn, times, pts) -> float:
    scale = 1.0 + np.linalg.norm(pts, axis=-1)
    worst = 0.0
    for t in times:
        vals = np.asarray(fn(t, pts), dtype=float)
        mag = np.abs(vals) if vals.ndim == 1 else np.linalg.norm(
            vals.reshape(len(pts), -1), axis=-1
        )
        worst = max(worst, float((mag / scale).max()))
    return worst


def validate_assumptions(spec: ProblemSpec, n_probe: int) -> ValidationReport:
    """Probe the standing assumptions on a deterministic lattice.

    Pure: the probe lattice depends only on (spec, n_probe), so repeated
    calls return identical reports. Failures are report entries, never
    exceptions; the caller decides what is fatal.
    """
    if n_probe < 2:
        raise SpecError("n_probe must be at least 2")
    pts = _probe_lattice(spec.domain, n_probe)
    times = np.linspace(0.0, spec.domain.horizon, min(n_probe, 8))

    lipschitz = {
        "drift": _pairwise_lipschitz(spec.mu, times, pts),
        "vol": _pairwise_lipschitz(spec.sigma, times, pts),
        "running_cost": _pairwise_lipschitz(spec.f, times, pts),
        "bequest": _pairwise_lipschitz(spec.G, times, pts),
    }
    growth = {
        "drift": _growth_bound(spec.mu, times, pts),
        "vol": _growth_bound(spec.sigma, times, pts),
    }

    checks: dict = {}
    details: dict = {}
    z = spec.impulse_set.impulses
    cost_times = np.linspace(0.0, spec.domain.horizon, n_probe)

    if len(spec.impulse_set) == 0:
        checks["a3_subadditive"] = None
        checks["a3_time_monotone"] = None
        checks["a4_cost_floor"] = True
        details["a4_cost_floor"] = "vacuous: empty impulse set"
        return ValidationReport(n_probe, lipschitz, growth, checks, details)

    costs = spec.cost(cost_times[:, None], z[None, :, :])  # (nt, nz)

    # A.3(i): c(t, z+z') <= c(t, z) + c(t, z') whenever z+z' is in the set
    sub_ok: bool | None = None
    worst_gap = 0.0
    for i in range(len(z)):
        for j in range(len(z)):
            s = z[i] + z[j]
            hit = np.where((z == s).all(axis=1))[0]
            if hit.size == 0:
                continue
            k = hit[0]
            gap = float((costs[:, k] - costs[:, i] - costs[:, j]).max())
            worst_gap = max(worst_gap, gap)
            ok = gap <= 1e-12
            sub_ok = ok if sub_ok is None else (sub_ok and ok)
    checks["a3_subadditive"] = sub_ok
    details["a3_subadditive"] = (
        "vacuous: no impulse pair sums into the set"
        if sub_ok is None
        else f"max violation {worst_gap:.3g}"
    )

    # A.3(ii): c non-increasing in t for each impulse
    increments = np.diff(costs, axis=0)
    mono_ok = bool((increments <= 1e-12).all())
    checks["a3_time_monotone"] = mono_ok
    details["a3_time_monotone"] = f"max increment {float(increments.max()):.3g}"

    # A.4: costs stay above the declared floor
    floor_ok = bool(costs.min() >= spec.cost_floor)
    checks["a4_cost_floor"] = floor_ok
    details["a4_cost_floor"] = (
        f"min cost {float(costs.min()):.6g} vs floor {spec.cost_floor:.6g}"
    )

    return ValidationReport(n_probe, lipschitz, growth, checks, details)
