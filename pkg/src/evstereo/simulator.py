"""Exact event-driven simulation of current-based LIF neurons over the
stereo topology.

Model per neuron: a single signed synaptic drive s decays with tau_s; the
membrane v leaks with tau_m and integrates g*s, where the gain g normalizes
a lone EPSP of weight w to peak exactly at w. Between events both evolve in
closed form, so there is no time-step discretization anywhere. Additive
synapses add their weight to s on delivery; saturating synapses (retina to
coincidence) re-arm their own decayed contribution to exactly w, which caps
any single afferent's drive at one EPSP regardless of its firing rate.

Threshold crossings are predicted analytically: v(dt) is a two-exponential
(or critically damped) curve with at most one interior maximum, so the first
integer microsecond with v >= theta is found by closed-form argmax plus
integer bisection. Spikes are stamped at that microsecond; simultaneous
crossings and zero-delay cascades resolve in ascending neuron id, giving
bit-identical spike records for identical inputs.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from heapq import heappop, heappush

import numpy as np

from .events import StereoEventStream
from .topology import Population, Topology

SPIKE_CSV_HEADER = "t_us,neuron_id,population"


@dataclass(frozen=True)
class NeuronParams:
    """Resolved LIF parameters of one population."""

    tau_m: float
    tau_s: float
    threshold: float
    reset: float
    refractory_us: int
    v_floor: float

    def validate(self) -> None:
        if not (self.tau_m > 0 and self.tau_s > 0):
            raise ValueError("tau_m and tau_s must be > 0")
        if not all(map(math.isfinite, (self.tau_m, self.tau_s, self.threshold, self.reset, self.v_floor))):
            raise ValueError("non-finite neuron parameter")
        if not self.threshold > self.reset:
            raise ValueError("threshold must exceed reset")
        if self.threshold <= 0:
            raise ValueError("threshold must be > 0")
        if self.refractory_us < 0:
            raise ValueError("refractory must be >= 0")
        if self.v_floor >= self.threshold:
            raise ValueError("v_floor must lie below threshold")

    @property
    def gain(self) -> float:
        """Drive gain normalizing a unit-weight EPSP to unit peak."""
        tm, ts = self.tau_m, self.tau_s
        if tm == ts:
            return math.e / tm
        a = tm * ts / (tm - ts)
        t_star = math.log(tm / ts) * a
        return 1.0 / (a * (math.exp(-t_star / tm) - math.exp(-t_star / ts)))


@dataclass
class LifParams:
    """Base LIF parameters plus optional per-population overrides.

    The defaults give coincidence neurons a fast membrane with slow
    saturating retinal synapses (so one eye alone can never fire them) and
    disparity neurons a slower integrating membrane.
    """

    tau_m: float = 2000.0
    tau_s: float = 10000.0
    threshold: float = 1.0
    reset: float = 0.0
    refractory_us: int = 1000
    v_floor: float = -1.0
    overrides: dict[Population, dict[str, float]] = field(
        default_factory=lambda: {Population.DISPARITY: {"tau_m": 10000.0, "tau_s": 5000.0}}
    )

    def for_population(self, population: Population) -> NeuronParams:
        values = {
            "tau_m": self.tau_m,
            "tau_s": self.tau_s,
            "threshold": self.threshold,
            "reset": self.reset,
            "refractory_us": self.refractory_us,
            "v_floor": self.v_floor,
        }
        values.update(self.overrides.get(population, {}))
        params = NeuronParams(
            tau_m=float(values["tau_m"]),
            tau_s=float(values["tau_s"]),
            threshold=float(values["threshold"]),
            reset=float(values["reset"]),
            refractory_us=int(values["refractory_us"]),
            v_floor=float(values["v_floor"]),
        )
        params.validate()
        return params


@dataclass
class MismatchModel:
    """Optional seeded emulation of analog device mismatch: multiplicative
    Gaussian jitter on synaptic weights and per-neuron thresholds."""

    seed: int = 0
    weight_sigma: float = 0.0
    threshold_sigma: float = 0.0

    @property
    def enabled(self) -> bool:
        return self.weight_sigma > 0 or self.threshold_sigma > 0


@dataclass
class SpikeRecord:
    times: np.ndarray  # int64, sorted by (t, neuron_id)
    neuron_ids: np.ndarray  # int64
    populations: np.ndarray  # int8 Population codes, parallel to times
    duration_us: int
    input_events: int
    deliveries: int
    counts: dict[Population, int]

    def __len__(self) -> int:
        return len(self.times)

    def for_population(self, *populations: Population) -> np.ndarray:
        """Boolean mask selecting spikes of the given populations."""
        mask = np.zeros(len(self.times), dtype=bool)
        for p in populations:
            mask |= self.populations == int(p)
        return mask


@dataclass
class RateMatrix:
    """Instantaneous firing rates r[n][i] over non-overlapping windows
    [i*dt, (i+1)*dt), in Hz."""

    window_us: int
    neuron_ids: np.ndarray
    rates_hz: np.ndarray  # shape (n_neurons, n_windows)

    @property
    def n_windows(self) -> int:
        return self.rates_hz.shape[1]


def window_count(duration_us: int, window_us: int) -> int:
    """Windows tiling [0, duration] so the final timestamp always lands in
    the last window."""
    if window_us <= 0:
        raise ValueError("window length must be > 0")
    return duration_us // window_us + 1


def window_centers_us(n_windows: int, window_us: int) -> np.ndarray:
    return np.arange(n_windows, dtype=np.float64) * window_us + window_us / 2


# ---------------------------------------------------------------- engine


class _Engine:
    """State and closed-form update machinery for one simulation run."""

    def __init__(self, topology: Topology, params: LifParams, mismatch: MismatchModel | None):
        n = topology.n_neurons
        self.topology = topology
        pop_params = {p: params.for_population(p) for p in Population}

        # per-neuron parameter arrays (plain lists: fastest scalar access)
        tau_m = [0.0] * n
        tau_s = [0.0] * n
        gain = [0.0] * n
        theta = [0.0] * n
        reset = [0.0] * n
        refr = [0] * n
        floor = [0.0] * n
        equal_tau = [False] * n
        coef = [0.0] * n  # g*tau_m*tau_s/(tau_s - tau_m) for the biexponential
        for nid in range(n):
            pp = pop_params[topology.population_of(nid)]
            tau_m[nid] = pp.tau_m
            tau_s[nid] = pp.tau_s
            g = pp.gain
            gain[nid] = g
            theta[nid] = pp.threshold
            reset[nid] = pp.reset
            refr[nid] = pp.refractory_us
            floor[nid] = pp.v_floor
            eq = pp.tau_m == pp.tau_s
            equal_tau[nid] = eq
            coef[nid] = 0.0 if eq else g * pp.tau_m * pp.tau_s / (pp.tau_s - pp.tau_m)

        if mismatch is not None and mismatch.enabled:
            rng = np.random.default_rng(mismatch.seed)
            if mismatch.threshold_sigma > 0:
                jitter = 1.0 + mismatch.threshold_sigma * rng.standard_normal(n)
                for nid in range(n):
                    theta[nid] = max(theta[nid] * float(jitter[nid]), reset[nid] + 1e-9)

        self.tau_m, self.tau_s, self.gain = tau_m, tau_s, gain
        self.theta, self.reset_v, self.refr, self.floor = theta, reset, refr, floor
        self.equal_tau, self.coef = equal_tau, coef

        # efferent adjacency in CSR form
        order = np.argsort(topology.syn_pre, kind="stable")
        self.adj_post = topology.syn_post[order].tolist()
        weights = topology.syn_weight[order] * topology.syn_sign[order]
        if mismatch is not None and mismatch.enabled and mismatch.weight_sigma > 0:
            rng_w = np.random.default_rng(mismatch.seed + 1)
            weights = weights * np.maximum(1.0 + mismatch.weight_sigma * rng_w.standard_normal(len(weights)), 0.0)
        self.adj_weight = weights.tolist()
        self.adj_sat = topology.syn_saturating[order].tolist()
        pre_sorted = topology.syn_pre[order]
        starts = np.searchsorted(pre_sorted, np.arange(n + 1))
        self.adj_start = starts.tolist()

        # per-synapse state for saturating synapses (value at last arming time)
        m = topology.n_synapses
        self.sat_value = [0.0] * m
        self.sat_time = [0] * m

        # neuron state
        self.v = [0.0] * n
        self.s = [0.0] * n
        self.t_last = [0] * n
        self.refr_until = [-1] * n
        self.stamp = [0] * n

        self.deliveries = 0
        self.spike_t: list[int] = []
        self.spike_id: list[int] = []

    # -------------------------------------------------------- closed form

    def _v_at(self, nid: int, v0: float, s0: float, dt: float) -> float:
        """Membrane after dt with no further input (no floor, no refractory)."""
        if self.equal_tau[nid]:
            em = math.exp(-dt / self.tau_m[nid])
            return (v0 + self.gain[nid] * s0 * dt) * em
        a = self.coef[nid] * s0
        return (v0 - a) * math.exp(-dt / self.tau_m[nid]) + a * math.exp(-dt / self.tau_s[nid])

    def advance(self, nid: int, t: int) -> None:
        """Advance neuron state to time t, handling refractory pinning and
        the membrane floor at update instants."""
        t0 = self.t_last[nid]
        if t == t0:
            return
        ru = self.refr_until[nid]
        if ru > t0:
            tr = ru if ru < t else t
            self.s[nid] *= math.exp(-(tr - t0) / self.tau_s[nid])
            self.v[nid] = self.reset_v[nid]
            t0 = tr
        if t > t0:
            v = self._v_at(nid, self.v[nid], self.s[nid], t - t0)
            fl = self.floor[nid]
            self.v[nid] = v if v > fl else fl
            self.s[nid] *= math.exp(-(t - t0) / self.tau_s[nid])
        self.t_last[nid] = t

    def predict_crossing(self, nid: int) -> int | None:
        """Smallest integer t with v(t) >= theta absent further input, or
        None. For refractory neurons the search starts at the microsecond
        refractoriness ends, from the reset potential."""
        t0 = self.t_last[nid]
        ru = self.refr_until[nid]
        theta = self.theta[nid]
        if ru > t0:
            v0 = self.reset_v[nid]
            s0 = self.s[nid] * math.exp(-(ru - t0) / self.tau_s[nid])
            base = ru
        else:
            v0, s0, base = self.v[nid], self.s[nid], t0
        if v0 >= theta:
            return base
        g = self.gain[nid]
        tm, ts = self.tau_m[nid], self.tau_s[nid]
        # with a non-positive initial slope the trajectory either decays or
        # rises toward 0 from below; neither path reaches theta > max(v0, 0)
        if g * s0 - v0 / tm <= 0.0:
            return None
        # continuous argmax of the rising-then-falling trajectory
        if self.equal_tau[nid]:
            if s0 == 0.0:
                return None
            t_peak = tm - v0 / (g * s0)
        else:
            a = self.coef[nid] * s0
            b = v0 - a
            # v'(dt)=0  =>  exp(dt*(1/ts-1/tm)) = -(a*tm)/(b*ts)
            ratio = -(a * tm) / (b * ts) if b != 0.0 else 0.0
            if ratio <= 0.0:
                # no interior critical point: rising toward 0 from below
                return None
            t_peak = math.log(ratio) / (1.0 / ts - 1.0 / tm)
        if t_peak <= 0.0 or not math.isfinite(t_peak):
            return None
        kf = math.floor(t_peak)
        kc = kf + 1
        if self._v_at(nid, v0, s0, kf) >= theta:
            lo, hi = 1, kf  # v is monotone rising on [0, t_peak]
            while lo < hi:
                mid = (lo + hi) // 2
                if self._v_at(nid, v0, s0, mid) >= theta:
                    hi = mid
                else:
                    lo = mid + 1
            return base + lo
        if self._v_at(nid, v0, s0, kc) >= theta:
            return base + kc
        return None


def simulate(
    topology: Topology,
    stream: StereoEventStream,
    params: LifParams | None = None,
    mismatch: MismatchModel | None = None,
    duration_us: int | None = None,
) -> SpikeRecord:
    """Run the event-driven simulation and record every spike of every
    non-retina population."""
    if stream.geometry.width != topology.retina_width or stream.geometry.height != topology.retina_height:
        raise ValueError(
            f"stream geometry {stream.geometry.width}x{stream.geometry.height} does not match "
            f"retina {topology.retina_width}x{topology.retina_height}"
        )
    params = params or LifParams()
    eng = _Engine(topology, params, mismatch)

    # map input events to retina neuron ids
    separated = topology.n_channels == 2
    ev_t = stream.t.tolist()
    retina_of = topology.id_of_retina
    ev_src = [
        retina_of(int(sd), int(xx), int(yy), int(pp) if separated else 0)
        for xx, yy, pp, sd in zip(stream.x.tolist(), stream.y.tolist(), stream.p.tolist(), stream.side.tolist())
    ]

    heap: list[tuple[int, int, int]] = []  # (t_pred, neuron_id, stamp)
    dirty: list[int] = []
    in_dirty = [False] * topology.n_neurons

    adj_start, adj_post = eng.adj_start, eng.adj_post
    adj_weight, adj_sat = eng.adj_weight, eng.adj_sat
    sat_value, sat_time = eng.sat_value, eng.sat_time
    tau_s = eng.tau_s
    n_events = len(ev_t)

    def mark_dirty(nid: int) -> None:
        eng.stamp[nid] += 1
        if not in_dirty[nid]:
            in_dirty[nid] = True
            dirty.append(nid)

    def deliver_from(pre: int, t: int) -> None:
        lo, hi = adj_start[pre], adj_start[pre + 1]
        for k in range(lo, hi):
            post = adj_post[k]
            eng.advance(post, t)
            w = adj_weight[k]
            if adj_sat[k]:
                lingering = sat_value[k] * math.exp(-(t - sat_time[k]) / tau_s[post])
                eng.s[post] += w - lingering
                sat_value[k] = w
                sat_time[k] = t
            else:
                eng.s[post] += w
            mark_dirty(post)
        eng.deliveries += hi - lo

    i_evt = 0
    while True:
        if dirty:
            for nid in dirty:
                in_dirty[nid] = False
                pred = eng.predict_crossing(nid)
                if pred is not None:
                    heappush(heap, (pred, nid, eng.stamp[nid]))
            dirty.clear()
        while heap and heap[0][2] != eng.stamp[heap[0][1]]:
            heappop(heap)
        t_ext = ev_t[i_evt] if i_evt < n_events else None
        if heap and (t_ext is None or heap[0][0] <= t_ext):
            t_sp, nid, _ = heappop(heap)
            eng.advance(nid, t_sp)
            # stamp matched, so the state is exactly the predicted one
            eng.spike_t.append(t_sp)
            eng.spike_id.append(nid)
            eng.v[nid] = eng.reset_v[nid]
            eng.refr_until[nid] = t_sp + eng.refr[nid]
            mark_dirty(nid)  # may cross again once refractoriness ends
            deliver_from(nid, t_sp)
        elif t_ext is not None:
            deliver_from(ev_src[i_evt], t_ext)
            i_evt += 1
        else:
            break

    times = np.array(eng.spike_t, dtype=np.int64)
    ids = np.array(eng.spike_id, dtype=np.int64)
    pops = np.array([int(topology.population_of(int(nid))) for nid in ids], dtype=np.int8)
    counts = {
        p: int(np.sum(pops == int(p)))
        for p in (Population.COINC_EXC, Population.COINC_INH, Population.DISPARITY)
    }
    dur = stream.duration if duration_us is None else duration_us
    if len(times):
        dur = max(dur, int(times.max()))
    return SpikeRecord(
        times=times,
        neuron_ids=ids,
        populations=pops,
        duration_us=dur,
        input_events=len(stream),
        deliveries=eng.deliveries,
        counts=counts,
    )


# ---------------------------------------------------------------- rates


def instantaneous_rates(
    record: SpikeRecord,
    window_us: int,
    population: Population,
    topology: Topology,
    n_windows: int | None = None,
) -> RateMatrix:
    """Windowed spike counts divided by the window length, in Hz."""
    if n_windows is None:
        n_windows = window_count(record.duration_us, window_us)
    ids = topology.population_ids(population)
    offset = int(ids[0]) if len(ids) else 0
    rates = np.zeros((len(ids), n_windows), dtype=np.float64)
    mask = record.for_population(population)
    if mask.any():
        rows = record.neuron_ids[mask] - offset
        cols = record.times[mask] // window_us
        keep = cols < n_windows  # spikes past the analysis horizon are dropped
        np.add.at(rates, (rows[keep], cols[keep]), 1.0)
    rates /= window_us * 1e-6
    return RateMatrix(window_us=window_us, neuron_ids=ids, rates_hz=rates)


# ---------------------------------------------------------------- spike CSV


def write_spike_csv(record: SpikeRecord, path: str) -> None:
    rows = [SPIKE_CSV_HEADER]
    names = POPULATION_CODE_NAMES
    for i in range(len(record.times)):
        rows.append(f"{record.times[i]},{record.neuron_ids[i]},{names[int(record.populations[i])]}")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")
    os.replace(tmp, path)


POPULATION_CODE_NAMES = {int(p): p.name for p in Population}
POPULATION_NAME_CODES = {p.name: int(p) for p in Population}


def read_spike_csv(path: str, topology: Topology, duration_us: int | None = None) -> SpikeRecord:
    """Load a spike CSV back into a SpikeRecord. Input-event and delivery
    counters are not stored in the CSV and read back as zero."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != SPIKE_CSV_HEADER:
        raise ValueError(f"{path}: expected header '{SPIKE_CSV_HEADER}'")
    n = len(lines) - 1
    times = np.empty(n, dtype=np.int64)
    ids = np.empty(n, dtype=np.int64)
    pops = np.empty(n, dtype=np.int8)
    for i, line in enumerate(lines[1:]):
        t_s, id_s, pop_s = line.split(",")
        times[i] = int(t_s)
        ids[i] = int(id_s)
        pops[i] = POPULATION_NAME_CODES[pop_s]
    dur = duration_us if duration_us is not None else (int(times.max()) if n else 0)
    counts = {
        p: int(np.sum(pops == int(p)))
        for p in (Population.COINC_EXC, Population.COINC_INH, Population.DISPARITY)
    }
    return SpikeRecord(
        times=times, neuron_ids=ids, populations=pops, duration_us=dur,
        input_events=0, deliveries=0, counts=counts,
    )
