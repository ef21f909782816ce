"""Negative-gradient flow on implicit surfaces, and connecting-orbit shooting.

The integrator is a Dormand-Prince 5(4) embedded pair on the tangentially
projected vector field, with Newton reprojection onto the surface after every
accepted step.  Trajectories advance in batches (shared vectorized field
evaluations, per-row adaptive step size); each row stops independently when a
stop rule fires.

Stop rules and landing classification are configured through a FlowProblem:
critical points carry capture balls (and side axes so a trajectory records
which way it passes a saddle), critical circles carry capture tubes.  A circle
may also carry a slow-drift rule: once a trajectory has collapsed onto a
normally attracting critical circle, the remaining motion is the one
dimensional descent of the circle function, which is continued analytically
instead of being integrated through the stiff regime.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .curves import CircleGeometry, TrigPolynomial, wrap_angle
from .geometry import ScalarField, SurfaceModel, project_batch, tangential_gradient

# Dormand-Prince 5(4) tableau
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


class IndexMismatch(Exception):
    """Negative-eigenvalue count disagrees with the declared index."""


class AmbiguousTransition(Exception):
    """A bisection bracket contains more than two landing classes."""


@dataclass(frozen=True)
class FlowSettings:
    rtol: float = 1e-10
    atol: float = 1e-12
    h_init: float = 1e-3
    h_max: float = 5.0
    grad_min: float = 1e-9
    t_budget: float = 2000.0
    max_steps: int = 60000
    f_floor: Optional[float] = None

    def refined(self, factor: float = 0.5) -> "FlowSettings":
        return replace(self, rtol=self.rtol * factor, atol=self.atol * factor)


@dataclass(frozen=True)
class DriftRule:
    """Slow descent of `aux` along a normally attracting critical circle.

    crit_params maps circle parameters of the critical points of aux to the
    keys of the corresponding generators.
    """

    aux: TrigPolynomial
    crit_params: tuple[tuple[float, str], ...]
    u_accept: float = 1e-7


@dataclass(frozen=True)
class PointObject:
    key: str
    location: np.ndarray
    capture_radius: float
    side_axis: Optional[np.ndarray] = None  # unit vector splitting passages
    accept_radius: float = 0.0  # > 0: terminate as converged inside this ball


@dataclass(frozen=True)
class CircleObject:
    key: str
    geometry: CircleGeometry
    capture_radius: float
    cell_params: tuple[float, ...] = ()  # parameters cutting the circle into cells
    drift: Optional[DriftRule] = None
    collapse_distance: float = 1e-8


@dataclass(frozen=True)
class FlowProblem:
    surface: SurfaceModel
    fieldfn: ScalarField
    points: tuple[PointObject, ...] = ()
    circles: tuple[CircleObject, ...] = ()
    settings: FlowSettings = FlowSettings()


@dataclass(frozen=True)
class DriftArc:
    circle_key: str
    u_from: float
    u_to: float  # unwrapped: the sweep is u_to - u_from


@dataclass(frozen=True)
class LandingLabel:
    kind: str  # "point" | "circle" | "escaped" | "budget"
    key: Optional[str] = None
    u: Optional[float] = None


@dataclass
class Trajectory:
    points: np.ndarray
    times: np.ndarray
    terminal_status: str  # "converged" | "escaped" | "budget"
    landing: Optional[LandingLabel] = None
    passages: tuple = ()  # ordered (object_key, side) events
    drift_arcs: tuple[DriftArc, ...] = ()

    def end(self) -> np.ndarray:
        return self.points[-1]


# ---------------------------------------------------------------------------
# batched integration
# ---------------------------------------------------------------------------

class _Row:
    __slots__ = ("pts", "ts", "inside", "min_dist", "passages", "done")

    def __init__(self, x0, n_points):
        self.pts = [np.array(x0, dtype=float)]
        self.ts = [0.0]
        self.inside = [False] * n_points
        self.min_dist = [np.inf] * n_points
        self.passages = []
        self.done: Optional[Trajectory] = None


def _finish(row: _Row, status: str, landing: Optional[LandingLabel],
            drift_arcs: tuple[DriftArc, ...] = ()) -> Trajectory:
    return Trajectory(points=np.array(row.pts), times=np.array(row.ts),
                      terminal_status=status, landing=landing,
                      passages=tuple(row.passages), drift_arcs=drift_arcs)


def _classify_converged(problem: FlowProblem, x: np.ndarray, row: _Row) -> Trajectory:
    for c in problem.circles:
        if float(c.geometry.distance(x)) < c.capture_radius:
            return _finish(row, "converged",
                           LandingLabel("circle", c.key, float(c.geometry.param(x))))
    best, bd = None, np.inf
    for p in problem.points:
        d = float(np.linalg.norm(x - p.location))
        if d < p.capture_radius and d < bd:
            best, bd = p, d
    if best is not None:
        return _finish(row, "converged", LandingLabel("point", best.key))
    return _finish(row, "budget", LandingLabel("budget"))


def _drift_continuation(circ: CircleObject, x: np.ndarray, row: _Row) -> Trajectory:
    """Finish a trajectory that has collapsed onto a drifting circle."""
    rule = circ.drift
    u0 = float(circ.geometry.param(x))
    crit = rule.crit_params
    gaps = np.array([abs(wrap_angle(u0 - uc)) for uc, _ in crit])
    nearest = int(np.argmin(gaps))
    if gaps[nearest] < rule.u_accept:
        uc, key = crit[nearest]
        return _finish(row, "converged", LandingLabel("point", key, uc))
    direction = -1.0 if float(rule.aux.deriv(u0)) > 0 else 1.0
    # first critical parameter reached drifting downhill (necessarily a min)
    best_sweep, u_land, key_land = np.inf, None, None
    for uc, key in crit:
        sweep = (direction * (uc - u0)) % (2 * np.pi)
        if 1e-12 < sweep < best_sweep:
            best_sweep, u_land, key_land = sweep, uc, key
    if u_land is None:
        return _finish(row, "budget", LandingLabel("budget"))
    row.passages.append((circ.key, direction))
    arc = DriftArc(circ.key, u0, u0 + direction * best_sweep)
    return _finish(row, "converged", LandingLabel("point", key_land, u_land),
                   drift_arcs=(arc,))


def integrate_batch(problem: FlowProblem, x0: np.ndarray,
                    settings: Optional[FlowSettings] = None) -> list[Trajectory]:
    """Flow every row of x0 under minus the tangential gradient until a stop
    rule fires; returns one Trajectory per row."""
    st = settings or problem.settings
    surface, fld = problem.surface, problem.fieldfn
    X = project_batch(surface, np.atleast_2d(np.asarray(x0, dtype=float)))
    n = X.shape[0]
    rows = [_Row(X[i], len(problem.points)) for i in range(n)]
    for i in range(n):
        if not np.all(np.isfinite(X[i])):
            rows[i].done = _finish(rows[i], "escaped", LandingLabel("escaped"))

    h = np.full(n, st.h_init)
    t = np.zeros(n)
    nsteps = np.zeros(n, dtype=int)
    active = np.array([r.done is None for r in rows])

    def rhs(Y):
        return -tangential_gradient(surface, fld, Y)

    if np.any(active):
        g0 = np.linalg.norm(rhs(X), axis=-1)
        for i in np.nonzero(active & (g0 < st.grad_min))[0]:
            rows[i].done = _classify_converged(problem, X[i], rows[i])
            active[i] = False

    while np.any(active):
        idx = np.nonzero(active)[0]
        Y = X[idx]
        hh = h[idx][:, None]
        ks = []
        for s in range(7):
            Z = Y if s == 0 else Y + hh * sum(a * k for a, k in zip(_DP_A[s], ks))
            ks.append(rhs(Z))
        y5 = Y + hh * sum(b * k for b, k in zip(_DP_B5, ks))
        y4 = Y + hh * sum(b * k for b, k in zip(_DP_B4, ks))
        scale = st.atol + st.rtol * np.linalg.norm(Y, axis=-1)
        err = np.linalg.norm(y5 - y4, axis=-1) / scale
        accept = err <= 1.0
        with np.errstate(divide="ignore"):
            fac = 0.9 * np.power(np.maximum(err, 1e-16), -0.2)
        h[idx] = np.minimum(h[idx] * np.clip(fac, 0.2, 5.0), st.h_max)

        acc = idx[accept]
        if not acc.size:
            continue
        Xn = project_batch(surface, y5[accept])
        dt = hh[accept, 0]
        finite = np.all(np.isfinite(Xn), axis=-1)
        inbox = np.zeros(len(acc), dtype=bool)
        inbox[finite] = surface.in_bounding_box(Xn[finite])
        gn = np.full(len(acc), np.inf)
        gn[finite] = np.linalg.norm(rhs(Xn[finite]), axis=-1)
        fvals = fld.value(Xn) if st.f_floor is not None else None
        pdist = (np.stack([np.linalg.norm(Xn - p.location, axis=-1)
                           for p in problem.points], axis=1)
                 if problem.points else np.empty((len(acc), 0)))
        cdist = (np.stack([c.geometry.distance(Xn) for c in problem.circles], axis=1)
                 if problem.circles else np.empty((len(acc), 0)))

        for j, i in enumerate(acc):
            row = rows[i]
            if not (finite[j] and inbox[j]):
                row.done = _finish(row, "escaped", LandingLabel("escaped"))
                active[i] = False
                continue
            x = Xn[j]
            X[i] = x
            t[i] += dt[j]
            nsteps[i] += 1
            row.pts.append(x.copy())
            row.ts.append(t[i])
            for k, p in enumerate(problem.points):
                d = pdist[j, k]
                if d < row.min_dist[k]:
                    row.min_dist[k] = d
                if p.accept_radius > 0 and d < p.accept_radius:
                    row.done = _finish(row, "converged", LandingLabel("point", p.key))
                    break
                if d < p.capture_radius:
                    row.inside[k] = True
                elif row.inside[k] and d > 1.25 * p.capture_radius:
                    row.inside[k] = False
                    side = 0.0
                    if p.side_axis is not None:
                        side = float(np.sign((x - p.location) @ p.side_axis))
                    row.passages.append((p.key, side))
                    row.min_dist[k] = np.inf
            if row.done is not None:
                active[i] = False
                continue
            for k, c in enumerate(problem.circles):
                if c.drift is not None and cdist[j, k] < c.collapse_distance:
                    row.done = _drift_continuation(c, x, row)
                    break
            if row.done is not None:
                active[i] = False
                continue
            if gn[j] < st.grad_min:
                row.done = _classify_converged(problem, x, row)
            elif st.f_floor is not None and fvals[j] < st.f_floor:
                row.done = _finish(row, "converged", LandingLabel("budget"))
            elif t[i] > st.t_budget or nsteps[i] > st.max_steps:
                row.done = _finish(row, "budget", LandingLabel("budget"))
            if row.done is not None:
                active[i] = False
    return [r.done for r in rows]


def integrate(problem: FlowProblem, x0,
              settings: Optional[FlowSettings] = None) -> Trajectory:
    return integrate_batch(problem, np.asarray(x0, dtype=float)[None, :], settings)[0]


# ---------------------------------------------------------------------------
# unstable-manifold seeding
# ---------------------------------------------------------------------------

def unstable_seeds(surface: SurfaceModel, hessian: np.ndarray, basis: tuple,
                   location: np.ndarray, expected_index: int,
                   delta: float, count: int) -> np.ndarray:
    """Points at geodesic distance ~delta from `location` in the span of the
    negative eigenvectors of the given tangential Hessian, projected to the
    surface.  Raises IndexMismatch when the count of negative eigenvalues
    disagrees with expected_index.
    """
    w, V = np.linalg.eigh(hessian)
    scale = max(np.max(np.abs(w)), 1e-300)
    neg = np.nonzero(w < -1e-8 * scale)[0]
    if len(neg) != expected_index:
        raise IndexMismatch(
            f"expected {expected_index} negative eigenvalues, found {len(neg)}")
    if expected_index == 0:
        return np.empty((0, 3))
    t1, t2 = basis
    if expected_index == 1:
        v = V[:, neg[0]]
        d3 = v[0] * t1 + v[1] * t2
        return project_batch(surface, np.stack([location + delta * d3,
                                                location - delta * d3]))
    ang = np.linspace(0, 2 * np.pi, count, endpoint=False)
    d3 = np.cos(ang)[:, None] * t1 + np.sin(ang)[:, None] * t2
    return project_batch(surface, location + delta * d3)


# ---------------------------------------------------------------------------
# seed families and shooting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeedFamily:
    """One-parameter family of initial conditions for shooting.

    periodic: the parameter lives on a circle of circumference hi - lo.
    discrete_params: finitely many members; no scanning or bisection happens.
    """

    param_to_point: Callable[[float], np.ndarray]
    lo: float = 0.0
    hi: float = 1.0
    periodic: bool = False
    discrete_params: Optional[tuple[float, ...]] = None
    label: str = ""

    def scan_params(self, n: int) -> np.ndarray:
        if self.discrete_params is not None:
            return np.array(self.discrete_params, dtype=float)
        if self.periodic:
            # golden-ratio phase offset avoids hitting symmetric orbits exactly
            off = 0.381966011 * (self.hi - self.lo) / n
            return self.lo + off + (self.hi - self.lo) * np.arange(n) / n
        inner = (np.arange(n) + 0.5) / n
        return self.lo + (self.hi - self.lo) * inner


@dataclass(frozen=True)
class ShootTarget:
    """Landing condition for connecting orbits.

    kind "point": converge to the named critical point.
    kind "circle_param": land on the named circle at parameter u, exactly.
    kind "circle_basin": land on the named circle inside the open arc swept
        counterclockwise from basin[0] to basin[1] (for discrete families).
    """

    kind: str
    key: str
    u: Optional[float] = None
    basin: Optional[tuple[float, float]] = None

    def satisfied(self, traj: Trajectory, u_accept: float = 1e-6) -> bool:
        lab = traj.landing
        if lab is None or traj.terminal_status != "converged":
            return False
        if self.kind == "point":
            return lab.kind == "point" and lab.key == self.key
        if lab.kind != "circle" or lab.key != self.key:
            return False
        if self.kind == "circle_param":
            return abs(wrap_angle(lab.u - self.u)) < u_accept
        lo, hi = self.basin
        sweep = (hi - lo) % (2 * np.pi) or 2 * np.pi
        return 0.0 < (lab.u - lo) % (2 * np.pi) < sweep


@dataclass
class ShootResult:
    parameter: float
    trajectory: Trajectory
    landing: LandingLabel


@dataclass
class ShootOutcome:
    results: list[ShootResult]
    continuum: bool = False
    continuum_intervals: list[tuple[float, float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _classification(traj: Trajectory, target: ShootTarget,
                    circle_cells: dict[str, list[float]]) -> tuple:
    """Hashable landing class used to detect brackets during scans."""
    lab = traj.landing
    if lab is None or traj.terminal_status != "converged":
        tail: tuple = (traj.terminal_status,)
    elif lab.kind == "point":
        tail = ("point", lab.key)
    else:
        cells = circle_cells.get(lab.key, [])
        cell = int(np.searchsorted(cells, lab.u % (2 * np.pi))) if cells else 0
        tail = ("circle", lab.key, cell)
        if target.kind == "circle_param" and lab.key == target.key:
            tail = tail + (int(np.sign(wrap_angle(lab.u - target.u))),)
    return tuple(traj.passages) + tail


def _diverges_at_target(cls_a: tuple, cls_b: tuple, target_key: str) -> bool:
    """First difference between the classes is a flipped side at the target."""
    for ea, eb in zip(cls_a, cls_b):
        if ea == eb:
            continue
        return (isinstance(ea, tuple) and isinstance(eb, tuple)
                and len(ea) == 2 and len(eb) == 2
                and ea[0] == eb[0] == target_key and ea[1] == -eb[1])
    return False


def shoot_connecting_orbits(problem: FlowProblem, family: SeedFamily,
                            target: ShootTarget, n_scan: int = 64,
                            bisect_tol: float = 1e-12,
                            u_accept: float = 1e-6,
                            settings: Optional[FlowSettings] = None) -> ShootOutcome:
    """Scan the seed family, bisect every landing-class change, and return the
    isolated orbits that reach the target (sorted and deduplicated).

    If the target condition holds on an open parameter interval the outcome is
    flagged as a continuum instead: the moduli space is not zero dimensional
    there and isolated-orbit extraction would be meaningless.
    """
    st = settings or problem.settings
    circle_cells = {c.key: sorted(c.cell_params) for c in problem.circles}

    params = family.scan_params(n_scan)
    seeds = np.stack([family.param_to_point(p) for p in params])
    trajs = integrate_batch(problem, seeds, st)
    out = ShootOutcome(results=[])

    if family.discrete_params is not None:
        for p, tr in zip(params, trajs):
            if target.satisfied(tr, u_accept):
                out.results.append(ShootResult(float(p), tr, tr.landing))
        out.results.sort(key=lambda r: r.parameter)
        return out

    classes = [_classification(tr, target, circle_cells) for tr in trajs]
    sat = [target.satisfied(tr, u_accept) for tr in trajs]
    span = family.hi - family.lo

    brackets = []
    npairs = len(params) if family.periodic else len(params) - 1
    for i in range(npairs):
        j = (i + 1) % len(params)
        a = float(params[i])
        b = float(params[j]) if j != 0 else float(params[0]) + span
        if sat[i] and sat[j]:
            out.continuum = True
            out.continuum_intervals.append((a, b))
        elif classes[i] != classes[j]:
            brackets.append([a, b, classes[i], classes[j]])
    if out.continuum:
        return out

    finals = _bisect_all(problem, family, target, circle_cells, brackets,
                         bisect_tol, u_accept, st)
    out.results.extend(finals)
    out.results.sort(key=lambda r: r.parameter)
    dedup: list[ShootResult] = []
    for r in out.results:
        if dedup and abs(r.parameter - dedup[-1].parameter) <= 10 * bisect_tol:
            continue
        if family.periodic and dedup:
            d = abs(r.parameter - dedup[0].parameter) % span
            if min(d, span - d) <= 10 * bisect_tol:
                continue
        dedup.append(r)
    out.results = dedup
    return out


def _bisect_all(problem, family, target, circle_cells, brackets,
                tol, u_accept, st) -> list[ShootResult]:
    """Advance all brackets in lockstep, one batched integration per round."""
    results: list[ShootResult] = []
    open_brackets = [b for b in brackets if abs(b[1] - b[0]) > tol]
    settled = []
    while open_brackets:
        mids = np.array([0.5 * (b[0] + b[1]) for b in open_brackets])
        seeds = np.stack([family.param_to_point(m) for m in mids])
        trajs = integrate_batch(problem, seeds, st)
        still = []
        for b, m, tr in zip(open_brackets, mids, trajs):
            if target.satisfied(tr, u_accept):
                results.append(ShootResult(float(m), tr, tr.landing))
                continue
            cls_m = _classification(tr, target, circle_cells)
            if cls_m == b[2]:
                b[0] = m
            elif cls_m == b[3]:
                b[1] = m
            else:
                raise AmbiguousTransition(
                    f"three landing classes inside bracket around {m} of "
                    f"{family.label or 'seed family'}")
            if abs(b[1] - b[0]) > tol:
                still.append(b)
            else:
                settled.append(b)
        open_brackets = still

    for b in settled:
        m = 0.5 * (b[0] + b[1])
        tr = integrate_batch(problem, family.param_to_point(m)[None, :], st)[0]
        if target.satisfied(tr, u_accept):
            results.append(ShootResult(float(m), tr, tr.landing))
            continue
        # saddle connection: the classes flip sides at the target and the
        # limiting trajectory genuinely approaches it
        if target.kind == "point" and _diverges_at_target(b[2], b[3], target.key):
            pobj = next(p for p in problem.points if p.key == target.key)
            d = np.linalg.norm(tr.points - pobj.location, axis=1)
            k = int(np.argmin(d))
            if d[k] < 0.5 * pobj.capture_radius:
                cut = Trajectory(
                    points=np.vstack([tr.points[: k + 1], pobj.location]),
                    times=np.append(tr.times[: k + 1], tr.times[k]),
                    terminal_status="converged",
                    landing=LandingLabel("point", target.key),
                    passages=tuple(pp for pp in tr.passages if pp[0] != target.key),
                    drift_arcs=tr.drift_arcs)
                results.append(ShootResult(float(m), cut, cut.landing))
    return results
