"""Zero-number diagnostics and behavior classification.

N(t) counts sign changes of u(.,t) - U* on [0,1]; it is nonincreasing for
data below c_p and must drop at every transition time. Classification labels
the time axis with C (classical up to x=0) and L (positive boundary trace)
intervals, and types the transition events: C->L is gradient blow-up with
loss of boundary conditions, L->C is a recovery, a singular instant inside a
C stretch is blow-up without loss, and an L->L passage through a single
instant of recovered boundary value is a bounce.

The discriminator between a bounce and a short classical window is the
gradient singularity: through a bounce the near-boundary slope stays
saturated, whereas a classical window regularizes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Params, singular_steady
from .grid import Field

__all__ = [
    "SignChangeCount",
    "Transition",
    "ClassificationReport",
    "AuditRecord",
    "ClassificationError",
    "sign_changes",
    "banded_sign_changes",
    "intersection_number",
    "classify",
    "zero_number_audit",
]

BAND_REL = 1e-6
BAND_FLOOR = 1e-12


class ClassificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SignChangeCount:
    count: int
    locations: tuple
    band: float


def default_band(v: np.ndarray) -> float:
    m = float(np.max(np.abs(v))) if v.size else 0.0
    return max(BAND_REL * m, BAND_FLOOR)


def banded_sign_changes(v: np.ndarray, band: float, x: Optional[np.ndarray] = None) -> SignChangeCount:
    """Count strict sign alternations of the samples, ignoring |v| <= band."""
    if band < 0:
        raise ValueError("dead band must be nonnegative")
    v = np.asarray(v, dtype=float)
    keep = np.abs(v) > band
    signs = np.sign(v[keep])
    idx = np.nonzero(keep)[0]
    locations = []
    count = 0
    for j in range(1, signs.size):
        if signs[j] != signs[j - 1]:
            count += 1
            if x is not None:
                locations.append(0.5 * (x[idx[j - 1]] + x[idx[j]]))
            else:
                locations.append(0.5 * (idx[j - 1] + idx[j]))
    return SignChangeCount(count=count, locations=tuple(locations), band=band)


def sign_changes(v, band: Optional[float] = None) -> SignChangeCount:
    """Sign changes of a Field or raw samples with the module's dead band."""
    if isinstance(v, Field):
        values, x = v.values, v.x
    else:
        values, x = np.asarray(v, dtype=float), None
    b = default_band(values) if band is None else band
    return banded_sign_changes(values, b, x=x)


def intersection_number(
    fld: Field,
    params: Params,
    b: float = 1.0,
    band: Optional[float] = None,
    k: Optional[float] = None,
    config=None,
) -> int:
    """Sign changes of u - U* on [0,b].

    When a truncation level ``k`` is supplied and its boundary layer is
    saturated, the count starts above the layer: the Dirichlet rows of the
    truncated problem force u_k < U* in a thin collar that the limit solution
    does not have (its profile there is trace + U* + O(x^2) > U*).
    """
    if not 0 < b <= 1.0:
        raise ValueError("restriction endpoint must satisfy 0 < b <= 1")
    x = fld.x
    u = fld.values
    x_start = x[1]
    if k is not None:
        g = fld.gradient()
        nb = (x > 0) & (x <= 0.05)
        sat = nb & (g >= 0.8 * math.sqrt(k))
        if np.any(sat):
            x_start = max(x_start, 3.0 * float(np.max(x[sat])))
    sel = (x >= x_start) & (x <= b)
    v = u[sel] - singular_steady(params, x[sel])
    bnd = default_band(v) if band is None else band
    return banded_sign_changes(v, bnd).count


@dataclass(frozen=True)
class Transition:
    t: float
    kind: str  # GBU_with_LBC | GBU_no_LBC | recovery | bouncing
    N_before: int
    N_after: int


@dataclass
class ClassificationReport:
    transitions: list
    intervals: list  # (t_lo, t_hi, 'C'|'L')
    first_GBU: Optional[float]
    final_regularization: Optional[float]
    N0: int
    phi_sup: float
    N_drops: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def labels(self) -> str:
        return "".join(lab for _, _, lab in self.intervals)

    def l_intervals(self):
        return [iv for iv in self.intervals if iv[2] == "L"]

    def events(self, kind: str):
        return [tr for tr in self.transitions if tr.kind == kind]


def _runs(flags: np.ndarray):
    """Maximal constant runs of a boolean series as (start, end_inclusive, value)."""
    runs = []
    start = 0
    for i in range(1, flags.size):
        if flags[i] != flags[start]:
            runs.append((start, i - 1, bool(flags[start])))
            start = i
    runs.append((start, flags.size - 1, bool(flags[start])))
    return runs


def _refine_crossing(traj, i_lo: int, i_hi: int, rising: bool, rounds: int = 2) -> float:
    """Sharpen a threshold crossing between diagnostic indices by dense re-solve."""
    import dataclasses

    from .core import TruncationLevel
    from .solver import evolve_truncated

    cfg = traj.config
    t_lo, t_hi = float(traj.times[i_lo]), float(traj.times[i_hi])
    try:
        pos = int(np.searchsorted(traj.snapshot_index, i_lo, "right")) - 1
        start = traj.field(int(traj.snapshot_index[max(pos, 0)]))
    except (KeyError, IndexError, ValueError):
        return 0.5 * (t_lo + t_hi)
    level = TruncationLevel(k=traj.k, variant=traj.variant)
    for _ in range(rounds):
        ts = np.linspace(t_lo, t_hi, 17)
        ts = ts[ts > start.time + 1e-15]
        if ts.size < 3:
            break
        sub_cfg = dataclasses.replace(cfg, t_end=float(ts[-1]), snapshot_stride=1)
        sub = evolve_truncated(start, level, sub_cfg, traj.params, t0=start.time, diag_times=ts)
        above = sub.trace > sub.lbc_thresholds()
        want = above if rising else ~above
        if not np.any(want) or np.argmax(want) == 0:
            break
        j = int(np.argmax(want))
        t_lo, t_hi = float(sub.times[j - 1]), float(sub.times[j])
    return 0.5 * (t_lo + t_hi)


def _sat_series(traj) -> np.ndarray:
    return traj.supgrad_left >= traj.config.sat_frac * math.sqrt(traj.k)


def _lbc_flags(traj, off_factor: float = 0.6, off_persist: int = 3) -> np.ndarray:
    """Thresholded trace with hysteresis: on above thr, off only after
    ``off_persist`` consecutive samples below ``off_factor``*thr.

    The trace estimate can drop out for a sample or two while the boundary
    layer forms or the fit window shifts; persistence keeps that noise from
    splitting an episode.
    """
    thr = traj.lbc_thresholds()
    on = traj.trace > thr
    off = traj.trace < off_factor * thr
    flags = np.zeros(traj.times.size, dtype=bool)
    state = bool(on[0])
    low = 0
    for i in range(traj.times.size):
        if state:
            low = low + 1 if off[i] else 0
            if low >= off_persist:
                state = False
                low = 0
                # retroactively mark the dropout samples as off
                flags[max(0, i - off_persist + 1) : i] = False
        else:
            if on[i]:
                state = True
                low = 0
        flags[i] = state
    return flags


def _interior_dips(tr: np.ndarray, thr: np.ndarray, depth_frac: float = 0.25,
                   edge_frac: float = 0.1) -> list:
    """Indices of deep interior dips of an episode's trace.

    A dip must fall below depth_frac of the smaller flanking maximum and sit
    away from the episode edges (formation flicker lives at the edges).
    """
    n = tr.size
    if n < 7:
        return []
    lo = max(int(edge_frac * n), 2)
    hi = n - lo
    dips = []
    i = lo
    while i < hi:
        left_max = float(np.max(tr[:i]))
        right_max = float(np.max(tr[i:]))
        level = depth_frac * min(left_max, right_max)
        if tr[i] <= level:
            j = i
            while j < hi and tr[j] <= level:
                j += 1
            dips.append(i + int(np.argmin(tr[i:j])))
            i = j + 1
        else:
            i += 1
    return dips


def _merge_fragments(runs, t, frag_samples: int = 5, max_gap_samples: int = 3):
    """Bridge episode-formation flicker: a sub-resolution dropout next to a
    fragmentary L run is estimator noise, not structure.

    Genuine structure is never at sample scale: neighboring episodes and the
    classical windows between them span many diagnostic samples (episode
    durations scale with their bump's eps^2 and the diagnostic grid is
    densified around every planned window), and a bounce joins two full
    episodes. So merging requires BOTH a gap of at most ``max_gap_samples``
    samples and a fragmentary side (at most ``frag_samples`` samples).
    """
    merged = True
    while merged and len(runs) > 1:
        merged = False
        for r in range(len(runs) - 2):
            a, b, val = runs[r]
            if not val or not runs[r + 2][2]:
                continue
            ga, gb, _ = runs[r + 1]
            gap_n = gb - ga + 1
            left_n = b - a + 1
            right_n = runs[r + 2][1] - runs[r + 2][0] + 1
            if gap_n <= max_gap_samples and min(left_n, right_n) <= frag_samples:
                runs[r : r + 3] = [(a, runs[r + 2][1], True)]
                merged = True
                break
    return runs


def classify(traj, params: Params, bounce_max_frac: float = 0.6, refine: bool = True,
             dip_depth_frac: float = 0.25) -> ClassificationReport:
    """Label C/L intervals and type all transition events of a trajectory."""
    if not traj.converged:
        raise ClassificationError("refusing to classify an unconverged trajectory")
    t = traj.times
    thr = traj.lbc_thresholds()
    lbc = _lbc_flags(traj)
    sat = _sat_series(traj)
    phi_sup = float(np.max(np.abs(traj.fields[0])))
    N0 = int(traj.N[0])

    runs = _merge_fragments(_runs(lbc), t)
    # resolve C gaps between L runs: bounce (slope stays saturated, short gap)
    # or a genuine classical window
    kinds = []
    for r, (a, b, val) in enumerate(runs):
        if val:
            kinds.append("L")
            continue
        is_gap = 0 < r < len(runs) - 1
        if is_gap:
            left_dur = t[runs[r - 1][1]] - t[runs[r - 1][0]]
            right_dur = t[runs[r + 1][1]] - t[runs[r + 1][0]]
            gap_dur = t[min(b + 1, t.size - 1)] - t[max(a - 1, 0)]
            short = gap_dur <= bounce_max_frac * min(left_dur, right_dur)
            still_singular = bool(np.all(sat[a : b + 1]))
            if short and still_singular:
                kinds.append("bounce")
                continue
        kinds.append("C")

    transitions = []

    def n_around(i_left: int, i_right: int):
        nb = int(traj.N[max(i_left - 1, 0)])
        na = int(traj.N[min(i_right + 1, t.size - 1)])
        return nb, na

    for r, (a, b, val) in enumerate(runs):
        kind_here = kinds[r]
        if kind_here == "bounce":
            i_dip = a + int(np.argmin(traj.trace[a : b + 1]))
            nb, na = n_around(a, b)
            transitions.append(Transition(float(t[i_dip]), "bouncing", nb, na))
            continue
        if kind_here == "L":
            if r > 0 and kinds[r - 1] == "C":
                t_ev = float(t[runs[r - 1][1]] + t[a]) / 2.0
                if refine:
                    t_ev = _refine_crossing(traj, runs[r - 1][1], a, rising=True)
                nb, na = n_around(runs[r - 1][1], a)
                transitions.append(Transition(t_ev, "GBU_with_LBC", nb, na))
            # deep interior dips of the episode are bounces the hysteresis
            # bridged (the trace touches ~0 inside a merged L stretch)
            for i_rel in _interior_dips(traj.trace[a : b + 1], thr[a : b + 1], dip_depth_frac):
                i_dip = a + i_rel
                nb, na = n_around(i_dip, i_dip)
                transitions.append(Transition(float(t[i_dip]), "bouncing", nb, na))
            continue
        # C run: recovery at its left edge, then blow-up instants without
        # loss (saturation fires while the trace stays down)
        if r > 0 and kinds[r - 1] == "L":
            t_ev = float(t[runs[r - 1][1]] + t[a]) / 2.0
            if refine:
                t_ev = _refine_crossing(traj, runs[r - 1][1], a, rising=False)
            nb, na = n_around(runs[r - 1][1], a)
            transitions.append(Transition(t_ev, "recovery", nb, na))
        inside = sat[a : b + 1]
        pad = 1
        core = np.zeros_like(inside)
        if inside.size > 2 * pad:
            core[pad:-pad] = inside[pad:-pad]
        if np.any(core):
            j = a + int(np.argmax(traj.supgrad_left[a : b + 1] * core))
            nb, na = n_around(j, j)
            transitions.append(Transition(float(t[j]), "GBU_no_LBC", nb, na))

    transitions.sort(key=lambda tr: tr.t)
    intervals = []
    cursor = float(traj.t0)
    for tr in transitions:
        intervals.append((cursor, tr.t, _label_before(tr)))
        cursor = tr.t
    tail = _label_after(transitions[-1]) if transitions else _tail_label(lbc)
    intervals.append((cursor, float(t[-1]), tail))

    # N before/after as the stable count on the flanking intervals: the
    # discrete drop smears over a few samples around each transition, so read
    # the median over each interval's middle half instead of adjacent samples
    def interval_count(lo: float, hi: float) -> int:
        mid_lo, mid_hi = lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo)
        sel = (t >= mid_lo) & (t <= mid_hi)
        if not np.any(sel):
            sel = (t >= lo) & (t <= hi)
        return int(np.median(traj.N[sel])) if np.any(sel) else 0

    counts = [interval_count(lo, hi) for lo, hi, _ in intervals]
    transitions = [
        Transition(tr.t, tr.kind, counts[i], counts[i + 1])
        for i, tr in enumerate(transitions)
    ]

    first_gbu = transitions[0].t if transitions else None
    final_reg = None
    for tr in reversed(transitions):
        if tr.kind in ("recovery", "GBU_no_LBC"):
            final_reg = tr.t
            break
    drops = [tr.N_before - tr.N_after for tr in transitions]
    report = ClassificationReport(
        transitions=transitions,
        intervals=intervals,
        first_GBU=first_gbu,
        final_regularization=final_reg,
        N0=N0,
        phi_sup=phi_sup,
        N_drops=drops,
    )
    if phi_sup <= params.c_p and len(transitions) > N0:
        report.notes.append(
            f"transition count {len(transitions)} exceeds N(0)={N0} despite small data"
        )
    return report


def _label_before(tr: Transition) -> str:
    return {"GBU_with_LBC": "C", "GBU_no_LBC": "C", "recovery": "L", "bouncing": "L"}[tr.kind]


def _label_after(tr: Transition) -> str:
    return {"GBU_with_LBC": "L", "GBU_no_LBC": "C", "recovery": "C", "bouncing": "L"}[tr.kind]


def _tail_label(lbc: np.ndarray) -> str:
    return "L" if lbc[-1] else "C"


@dataclass
class AuditRecord:
    monotone_checked: bool
    passed: bool
    violations: list
    transition_drops: list
    nonmonotone_witness: Optional[tuple] = None
    notes: list = field(default_factory=list)


def zero_number_audit(traj, params: Params, transitions=None, hysteresis: int = 1) -> AuditRecord:
    """Check the intersection-number laws along a trajectory.

    For data with sup <= c_p: N nonincreasing (up to grid flicker within
    ``hysteresis`` steps of a transition) and N drops >= 1 across each
    transition. For larger data monotonicity is skipped and the audit instead
    looks for the non-monotone witness t1 < t2 with N(t1)=0, N(t2)=1.
    """
    N = traj.N
    t = traj.times
    phi_sup = float(np.max(np.abs(traj.fields[0])))
    small_data = phi_sup <= params.c_p

    if not small_data:
        witness = None
        zeros = np.nonzero(N == 0)[0]
        for i in zeros:
            later = np.nonzero(N[i + 1 :] == 1)[0]
            if later.size:
                witness = (float(t[i]), float(t[i + 1 + later[0]]))
                break
        rec = AuditRecord(
            monotone_checked=False,
            passed=witness is not None,
            violations=[],
            transition_drops=[],
            nonmonotone_witness=witness,
        )
        if witness is None:
            rec.notes.append("no time pair with N=0 then N=1 found")
        return rec

    trans_idx = []
    if transitions is not None:
        trans_idx = [int(np.argmin(np.abs(t - tr.t))) for tr in transitions]
    else:
        thr = traj.lbc_thresholds()
        lbc = traj.trace > thr
        trans_idx = list(np.nonzero(np.diff(lbc.astype(int)) != 0)[0])
        sat = _sat_series(traj)
        trans_idx += list(np.nonzero(np.diff(sat.astype(int)) != 0)[0])

    violations = []
    for i in range(1, N.size):
        if N[i] > N[i - 1]:
            near = any(abs(i - j) <= hysteresis + 1 for j in trans_idx)
            if not near:
                violations.append((float(t[i]), int(N[i - 1]), int(N[i])))

    drops = []
    if transitions is not None:
        for tr in transitions:
            drops.append((tr.t, tr.N_before - tr.N_after))

    passed = not violations and all(d >= 1 for _, d in drops)
    return AuditRecord(
        monotone_checked=True,
        passed=passed,
        violations=violations,
        transition_drops=drops,
    )
