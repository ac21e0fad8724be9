"""Shared test oracles.

`membrane_trace` and `reference_simulate` re-implement the documented neuron
semantics by independent means (kernel superposition and 1-microsecond
stepping respectively); they deliberately share no code with the event-driven
engine so they can serve as oracles for it.
"""

import math

import numpy as np

from evstereo.simulator import LifParams
from evstereo.topology import Population, Topology


def kernel_gain(tau_m: float, tau_s: float) -> float:
    if tau_m == tau_s:
        return math.e / tau_m
    a = tau_m * tau_s / (tau_m - tau_s)
    t_star = math.log(tau_m / tau_s) * a
    return 1.0 / (a * (math.exp(-t_star / tau_m) - math.exp(-t_star / tau_s)))


def epsp_kernel(dt: float, tau_m: float, tau_s: float) -> float:
    """Peak-normalized response at dt after a unit-weight input spike."""
    if dt < 0:
        return 0.0
    g = kernel_gain(tau_m, tau_s)
    if tau_m == tau_s:
        return g * dt * math.exp(-dt / tau_m)
    a = tau_m * tau_s / (tau_m - tau_s)
    return g * a * (math.exp(-dt / tau_m) - math.exp(-dt / tau_s))


def membrane_trace(arrivals, tau_m, tau_s, t_grid):
    """Superposed membrane trace (no reset): arrivals = [(t, weight), ...]."""
    return np.array(
        [sum(w * epsp_kernel(t - ta, tau_m, tau_s) for ta, w in arrivals) for t in t_grid]
    )


def first_crossing_us(arrivals, tau_m, tau_s, theta, horizon_us):
    """First integer microsecond at which the superposed trace reaches theta."""
    for t in range(0, horizon_us + 1):
        v = sum(w * epsp_kernel(t - ta, tau_m, tau_s) for ta, w in arrivals if ta <= t)
        if v >= theta:
            return t
    return None


def reference_simulate(topology: Topology, stream, params: LifParams, horizon_us: int):
    """1-microsecond-stepped reference implementation of the neuron model.

    Exact exponential decay per step; spike condition checked at every
    integer microsecond; deliveries (external and from same-step spikes)
    apply after the step's spike check, mirroring the current-based rule
    that an arrival at t cannot influence v(t).
    """
    n = topology.n_neurons
    pops = [topology.population_of(i) for i in range(n)]
    pp = {p: params.for_population(p) for p in Population}
    tau_m = np.array([pp[p].tau_m for p in pops])
    tau_s = np.array([pp[p].tau_s for p in pops])
    gain = np.array([kernel_gain(pp[p].tau_m, pp[p].tau_s) for p in pops])
    theta = np.array([pp[p].threshold for p in pops])
    reset = np.array([pp[p].reset for p in pops])
    refr = np.array([pp[p].refractory_us for p in pops])
    floor = np.array([pp[p].v_floor for p in pops])

    dm = np.exp(-1.0 / tau_m)
    ds = np.exp(-1.0 / tau_s)
    equal = tau_m == tau_s
    # one-step update v' = (v - c*s)*dm + c*s*ds for distinct taus
    c = np.where(equal, 0.0, gain * tau_m * tau_s / np.where(equal, 1.0, tau_s - tau_m))

    v = np.zeros(n)
    s = np.zeros(n)
    refr_until = np.full(n, -1, dtype=np.int64)

    # synapse tables grouped by presynaptic neuron
    syn_by_pre: dict[int, list[int]] = {}
    for k in range(topology.n_synapses):
        syn_by_pre.setdefault(int(topology.syn_pre[k]), []).append(k)
    sat_value = np.zeros(topology.n_synapses)
    sat_time = np.zeros(topology.n_synapses, dtype=np.int64)

    events_at: dict[int, list[int]] = {}
    separated = topology.n_channels == 2
    for i in range(len(stream)):
        rid = topology.id_of_retina(
            int(stream.side[i]), int(stream.x[i]), int(stream.y[i]),
            int(stream.p[i]) if separated else 0,
        )
        events_at.setdefault(int(stream.t[i]), []).append(rid)

    def deliver(pre: int, t: int) -> None:
        for k in syn_by_pre.get(pre, ()):
            post = int(topology.syn_post[k])
            w = float(topology.syn_weight[k]) * int(topology.syn_sign[k])
            if topology.syn_saturating[k]:
                lingering = sat_value[k] * math.exp(-(t - sat_time[k]) / tau_s[post])
                s[post] += w - lingering
                sat_value[k] = w
                sat_time[k] = t
            else:
                s[post] += w

    spikes = []
    for t in range(0, horizon_us + 1):
        can_fire = (v >= theta) & (t >= refr_until)
        for nid in np.flatnonzero(can_fire):
            spikes.append((t, int(nid)))
            v[nid] = reset[nid]
            refr_until[nid] = t + refr[nid]
        for nid in np.flatnonzero(can_fire):
            deliver(int(nid), t)
        for rid in events_at.get(t, ()):
            deliver(rid, t)
        # advance t -> t+1
        v_next = np.where(equal, (v + gain * s) * dm, (v - c * s) * dm + c * s * ds)
        v = np.where(t + 1 <= refr_until, reset, np.maximum(v_next, floor))
        s = s * ds
    return spikes
