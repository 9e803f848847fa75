"""Packet-level discrete-event simulator of the chain.

Model, per node:

* Poisson sources at N1 (flow 1, rate gamma_1) and Nk (flow 2, rate gamma_k).
* One transceiver.  Service (= airtime) is exponential with mean 1/mu.
* Carrier sensing lags by delta: a transmission started at ``s`` by a node
  within two hops is sensed busy on ``[s + delta, end + delta)``.  A node
  whose head-of-line packet finds the channel sensed busy waits until it is
  sensed idle plus an exponential re-sense delay (mean 1/mu unless set) and
  checks again.  Without that delay every node deferring on the same
  transmission restarts at the same instant and they all collide.
  Retransmissions and back-to-back packets start immediately if the channel
  is sensed idle.
* Reception i -> j is lost when j itself, or another neighbour of j, is on
  the air while the packet is arriving at j.  Non-neighbours of the receiver
  never collide with it.
* ACKs are instantaneous and reliable.  A failed packet returns to the head
  of its queue until it has been sent ``beta`` times (once without
  retransmission).
* With coding, relays XOR an arriving native packet with the oldest waiting
  opposite-flow packet with probability p_mix.  Coded packets sit in a queue
  served ahead of the native one (non-preemptive).  A receiver can decode a
  coded packet only if its history holds the partner packet.

Event trace lines (optional) have the fixed schema::

    time_s event_type node packet_id flow kind attempt outcome

``event_type`` is one of gen, start, defer, end, ack, arrive;
``packet_id`` is ``a`` for natives and ``a^b`` for a coded pair (flow-1 id
first); ``flow`` is 1, 2 or ``*`` for a coded transmission; ``kind`` is
``native``/``coded``; ``outcome`` is ``-`` or one of ok, collision, retry,
drop, queued, coded, delivered, undecodable.
"""
from __future__ import annotations

import heapq
import math
import random
from collections import OrderedDict, deque
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, TextIO, Tuple

import numpy as np
from scipy import stats

from .errors import ConfigError, ReplicationError, SimulationInstabilityError
from .topology import ChainTopology, ModelParams, Scenario

# event priorities for identical timestamps
TX_END, ACK, ARRIVAL, SERVICE = 0, 1, 2, 3

SENSE_HOPS = 2


@dataclass(frozen=True)
class SimOptions:
    horizon_s: float = 170.0
    warmup_s: float = 10.0
    seed: int = 42
    queue_cap: int = 100_000
    history_cap: int = 100_000
    # mean extra wait after a deferral before re-sensing; None -> 1/mu, 0 -> 1-persistent
    defer_mean_s: Optional[float] = None

    def __post_init__(self):
        if not (self.horizon_s > 0 and math.isfinite(self.horizon_s)):
            raise ConfigError(f"horizon must be a positive number, got {self.horizon_s}")
        if not (0 <= self.warmup_s < self.horizon_s):
            raise ConfigError(f"need 0 <= warmup < horizon, got warmup={self.warmup_s}")
        if self.defer_mean_s is not None and not self.defer_mean_s >= 0:
            raise ConfigError(f"defer_mean_s must be >= 0, got {self.defer_mean_s}")
        if self.queue_cap < 1 or self.history_cap < 1:
            raise ConfigError("queue_cap and history_cap must be >= 1")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")


@dataclass
class LinkCounts:
    attempts: int = 0
    successes: int = 0
    collisions: int = 0


@dataclass
class FlowLedger:
    """Whole-run packet accounting for one flow (counts components of coded packets)."""
    generated: int = 0
    delivered: int = 0
    dropped: int = 0
    undecodable: int = 0
    in_queue: int = 0
    in_flight: int = 0

    def balance(self) -> int:
        return self.generated - (self.delivered + self.dropped + self.undecodable
                                 + self.in_queue + self.in_flight)


@dataclass
class SimResult:
    theta: float
    links: Dict[Tuple[int, int], LinkCounts]
    mean_queue: Dict[int, float]
    departures: Dict[int, float]   # transmissions/s per node after warm-up
    replications: int = 1
    ci_halfwidth: float = 0.0
    thetas: List[float] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    flows: Dict[int, FlowLedger] = field(default_factory=dict)
    delivered: int = 0
    coded_tx: int = 0
    events: int = 0

    @property
    def stderr(self) -> float:
        n = len(self.thetas)
        if n < 2:
            return 0.0
        return float(np.std(self.thetas, ddof=1) / math.sqrt(n))


class Packet:
    __slots__ = ("pid", "flow", "attempts", "seq")

    def __init__(self, pid, flow):
        self.pid = pid
        self.flow = flow
        self.attempts = 0
        self.seq = 0


class Coded:
    __slots__ = ("a", "b")  # a: flow-1 component, b: flow-2 component

    def __init__(self, a, b):
        self.a = a
        self.b = b


class _Node:
    __slots__ = ("idx", "q", "coded", "state", "txlog", "history", "area", "last_t", "tx_count",
                 "current")

    def __init__(self, idx):
        self.idx = idx
        self.q = {1: deque(), 2: deque()}   # native queue, split by flow, ordered by seq
        self.coded = deque()
        self.state = 0                      # 0 idle, 1 waiting for idle channel, 2 transmitting
        self.txlog = deque(maxlen=4)        # (start, end) of recent transmissions
        self.history = OrderedDict()
        self.area = 0.0
        self.last_t = 0.0
        self.tx_count = 0
        self.current = None

    def qlen(self):
        return len(self.q[1]) + len(self.q[2]) + len(self.coded)


class _Run:
    def __init__(self, topo: ChainTopology, scenario: Scenario, params: ModelParams,
                 opts: SimOptions, trace: Optional[TextIO] = None):
        self.k = k = topo.k
        self.sc = scenario
        self.delta = params.delta
        self.mu = params.mu
        self.opts = opts
        self.horizon = opts.horizon_s
        self.warmup = opts.warmup_s
        self.max_attempts = scenario.max_attempts
        self.coding = scenario.coding
        self.pmix = scenario.p_mix
        self.rng = random.Random(int(opts.seed))
        self.trace = trace
        dm = opts.defer_mean_s if opts.defer_mean_s is not None else 1.0 / params.mu
        self.defer_rate = 1.0 / dm if dm > 0 else 0.0

        self.nodes = [None] + [_Node(i) for i in range(1, k + 1)]
        self.sense = [None] + [[y for y in range(max(1, i - SENSE_HOPS), min(k, i + SENSE_HOPS) + 1)
                                if y != i] for i in range(1, k + 1)]
        self.links = {}
        self.interferers = {}
        for i in range(1, k):
            for a, b in ((i, i + 1), (i + 1, i)):
                self.links[(a, b)] = LinkCounts()
                self.interferers[(a, b)] = [x for x in (b - 1, b + 1) if 1 <= x <= k and x != a]

        self.sources = [(1, 1, params.gamma_1)]
        if scenario.flows == 2 and params.gamma_k > 0:
            self.sources.append((k, 2, params.gamma_k))

        self.heap = []
        self.seq = 0
        self.pid = 0
        self.qseq_tail = 0
        self.qseq_head = 0
        self.now = 0.0
        self.flows = {1: FlowLedger(), 2: FlowLedger()}
        self.delivered_post = 0
        self.coded_tx = 0
        self.events = 0

    # -- plumbing ---------------------------------------------------------
    def push(self, t, prio, node, kind, payload=None):
        self.seq += 1
        heapq.heappush(self.heap, (t, prio, node, self.seq, kind, payload))

    def log(self, etype, node, pid, flow, kind, attempt, outcome):
        self.trace.write(f"{self.now:.9f} {etype} {node} {pid} {flow} {kind} {attempt} {outcome}\n")

    def touch(self, nd):
        t = self.now
        if t > self.warmup:
            lo = nd.last_t if nd.last_t > self.warmup else self.warmup
            nd.area += nd.qlen() * (t - lo)
        nd.last_t = t

    def remember(self, nd, pid):
        h = nd.history
        h[pid] = None
        if len(h) > self.opts.history_cap:
            h.popitem(last=False)

    def check_cap(self, nd):
        n = nd.qlen()
        if n > self.opts.queue_cap:
            raise SimulationInstabilityError(nd.idx, n, self.now)

    # -- queueing ---------------------------------------------------------
    def enqueue_tail(self, nd, pkt):
        self.qseq_tail += 1
        pkt.seq = self.qseq_tail
        nd.q[pkt.flow].append(pkt)

    def enqueue_head(self, nd, pkt):
        self.qseq_head -= 1
        pkt.seq = self.qseq_head
        nd.q[pkt.flow].appendleft(pkt)

    def try_code(self, nd, pkt):
        """Pair pkt with the oldest opposite-flow native packet; None if not coded."""
        if not self.coding or nd.idx == 1 or nd.idx == self.k:
            return None
        other = nd.q[3 - pkt.flow]
        if not other or self.rng.random() >= self.pmix:
            return None
        mate = other.popleft()
        return Coded(pkt, mate) if pkt.flow == 1 else Coded(mate, pkt)

    def accept(self, nd, pkt, head=False):
        """Hand a native packet to a node's encoder / queues."""
        self.touch(nd)
        c = self.try_code(nd, pkt)
        if c is not None:
            if head:
                nd.coded.appendleft(c)
            else:
                nd.coded.append(c)
            outcome = "coded"
        else:
            (self.enqueue_head if head else self.enqueue_tail)(nd, pkt)
            outcome = "queued"
        self.check_cap(nd)
        return outcome

    def head_packet(self, nd):
        if nd.coded:
            return nd.coded.popleft()
        q1, q2 = nd.q[1], nd.q[2]
        if q1 and (not q2 or q1[0].seq < q2[0].seq):
            return q1.popleft()
        if q2:
            return q2.popleft()
        return None

    # -- channel ----------------------------------------------------------
    def sensed_until(self, x, t):
        """Latest end+delta among transmissions x senses at t, or None if idle."""
        d = self.delta
        until = None
        for y in self.sense[x]:
            for s, e in self.nodes[y].txlog:
                if s + d <= t < e + d:
                    if until is None or e + d > until:
                        until = e + d
        return until

    def collided(self, i, j, t, e):
        d = self.delta
        for s, ex in self.nodes[j].txlog:       # half duplex at the receiver
            if s < e + d and t + d < ex:
                return True
        for x in self.interferers[(i, j)]:
            for s, ex in self.nodes[x].txlog:
                if s < e and t < ex:
                    return True
        return False

    def kick(self, nd):
        if nd.state == 0 and nd.qlen():
            self.try_start(nd)

    def try_start(self, nd):
        t = self.now
        until = self.sensed_until(nd.idx, t)
        if until is not None:
            nd.state = 1
            if self.defer_rate:
                until += self.rng.expovariate(self.defer_rate)
            self.push(until, SERVICE, nd.idx, "try")
            if self.trace:
                self.log("defer", nd.idx, "-", "-", "-", "-", f"{until:.9f}")
            return
        self.touch(nd)
        pkt = self.head_packet(nd)
        airtime = self.rng.expovariate(self.mu)
        end = t + airtime
        nd.state = 2
        nd.current = pkt
        nd.txlog.append((t, end))
        if isinstance(pkt, Coded):
            pkt.a.attempts += 1
            pkt.b.attempts += 1
            if self.trace:
                self.log("start", nd.idx, f"{pkt.a.pid}^{pkt.b.pid}", "*", "coded",
                         max(pkt.a.attempts, pkt.b.attempts), "-")
        else:
            pkt.attempts += 1
            if self.trace:
                self.log("start", nd.idx, pkt.pid, pkt.flow, "native", pkt.attempts, "-")
        self.push(end, TX_END, nd.idx, "end", (t, end))

    # -- event handlers ---------------------------------------------------
    def on_source(self, node, flow, rate):
        self.pid += 1
        pkt = Packet(self.pid, flow)
        self.flows[flow].generated += 1
        nd = self.nodes[node]
        self.remember(nd, pkt.pid)
        self.touch(nd)
        self.enqueue_tail(nd, pkt)
        self.check_cap(nd)
        if self.trace:
            self.log("gen", node, pkt.pid, flow, "native", 0, "queued")
        nxt = self.now + self.rng.expovariate(rate)
        if nxt <= self.horizon:
            self.push(nxt, ARRIVAL, node, "src", (flow, rate))
        self.kick(nd)

    def on_tx_end(self, i, span):
        t, e = span
        nd = self.nodes[i]
        pkt = nd.current
        post = e > self.warmup
        if post:
            nd.tx_count += 1
        if isinstance(pkt, Coded):
            self.coded_tx += 1
            parts = ((pkt.a, i + 1, pkt.b.pid), (pkt.b, i - 1, pkt.a.pid))
        else:
            parts = ((pkt, i + 1 if pkt.flow == 1 else i - 1, None),)
        outcomes = []
        for comp, j, partner in parts:
            lost = self.collided(i, j, t, e)
            if post:
                lc = self.links[(i, j)]
                lc.attempts += 1
                if lost:
                    lc.collisions += 1
                else:
                    lc.successes += 1
            outcomes.append((comp, not lost))
            if self.trace:
                self.log("end", i, comp.pid, comp.flow, "coded" if partner else "native",
                         comp.attempts, "collision" if lost else "ok")
            if not lost:
                self.push(e, ARRIVAL, j, "rx", (comp, partner))
        self.push(e, ACK, i, "ack", outcomes)

    def on_ack(self, i, outcomes):
        nd = self.nodes[i]
        nd.state = 0
        nd.current = None
        failed = [c for c, ok in outcomes if not ok]
        for comp in failed:
            if comp.attempts >= self.max_attempts:
                self.flows[comp.flow].dropped += 1
                if self.trace:
                    self.log("ack", i, comp.pid, comp.flow, "native", comp.attempts, "drop")
            else:
                outcome = None
                if len(failed) == 2 and all(c.attempts < self.max_attempts for c in failed):
                    # both halves of a coded packet lost: resend the pair as is
                    if comp.flow == 1:
                        self.touch(nd)
                        nd.coded.appendleft(Coded(failed[0], failed[1]))
                        outcome = "retry"
                    else:
                        continue
                else:
                    outcome = self.accept(nd, comp, head=True)
                if self.trace:
                    self.log("ack", i, comp.pid, comp.flow, "native", comp.attempts, outcome)
        self.kick(nd)

    def on_rx(self, j, payload):
        comp, partner = payload
        nd = self.nodes[j]
        post = self.now > self.warmup
        if partner is not None and partner not in nd.history:
            self.flows[comp.flow].undecodable += 1
            if self.trace:
                self.log("arrive", j, comp.pid, comp.flow, "coded", comp.attempts, "undecodable")
            return
        kind = "coded" if partner is not None else "native"
        if (comp.flow == 1 and j == self.k) or (comp.flow == 2 and j == 1):
            self.flows[comp.flow].delivered += 1
            if post:
                self.delivered_post += 1
            self.remember(nd, comp.pid)
            if self.trace:
                self.log("arrive", j, comp.pid, comp.flow, kind, comp.attempts, "delivered")
            return
        self.remember(nd, comp.pid)
        comp.attempts = 0
        outcome = self.accept(nd, comp)
        if self.trace:
            self.log("arrive", j, comp.pid, comp.flow, kind, 0, outcome)
        self.kick(nd)

    def on_try(self, i):
        nd = self.nodes[i]
        if nd.state != 1:
            return
        nd.state = 0
        self.kick(nd)

    # -- main loop --------------------------------------------------------
    def run(self) -> SimResult:
        for node, flow, rate in self.sources:
            if rate > 0:
                self.push(self.rng.expovariate(rate), ARRIVAL, node, "src", (flow, rate))
        heap = self.heap
        pop = heapq.heappop
        horizon = self.horizon
        while heap and heap[0][0] <= horizon:
            t, _, node, _, kind, payload = pop(heap)
            self.now = t
            self.events += 1
            if kind == "end":
                self.on_tx_end(node, payload)
            elif kind == "ack":
                self.on_ack(node, payload)
            elif kind == "rx":
                self.on_rx(node, payload)
            elif kind == "src":
                self.on_source(node, *payload)
            else:
                self.on_try(node)
        self.now = horizon
        return self.result()

    def result(self) -> SimResult:
        span = self.horizon - self.warmup
        mean_q = {}
        for i in range(1, self.k + 1):
            nd = self.nodes[i]
            self.touch(nd)
            mean_q[i] = nd.area / span
            for f in (1, 2):
                self.flows[f].in_queue += len(nd.q[f])
            for c in nd.coded:
                self.flows[1].in_queue += 1
                self.flows[2].in_queue += 1
            if nd.state == 2:
                cur = nd.current
                if isinstance(cur, Coded):
                    self.flows[1].in_flight += 1
                    self.flows[2].in_flight += 1
                else:
                    self.flows[cur.flow].in_flight += 1
        theta = self.delivered_post / span
        return SimResult(
            theta=theta,
            links=self.links,
            mean_queue=mean_q,
            departures={i: self.nodes[i].tx_count / span for i in range(1, self.k + 1)},
            thetas=[theta],
            seeds=[int(self.opts.seed)],
            flows=self.flows,
            delivered=self.delivered_post,
            coded_tx=self.coded_tx,
            events=self.events,
        )


def simulate(topo: ChainTopology, scenario: Scenario, params: ModelParams,
             opts: SimOptions = SimOptions(), trace: Optional[TextIO] = None) -> SimResult:
    return _Run(topo, scenario, params, opts, trace).run()


def replication_seed(master: int, index: int) -> int:
    """Seed of replication ``index``: first 64-bit word of SeedSequence(master, spawn_key=(index,))."""
    ss = np.random.SeedSequence(int(master), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _one(args):
    topo, scenario, params, opts = args
    try:
        return simulate(topo, scenario, params, opts)
    except Exception as exc:  # reported per seed by the caller
        return exc


def aggregate(results: List[SimResult], confidence: float = 0.95) -> SimResult:
    thetas = [r.theta for r in results]
    n = len(thetas)
    mean = float(np.mean(thetas))
    half = 0.0
    if n > 1:
        sd = float(np.std(thetas, ddof=1))
        half = float(stats.t.ppf(0.5 + confidence / 2, n - 1) * sd / math.sqrt(n))
    links = {}
    for l in results[0].links:
        links[l] = LinkCounts(sum(r.links[l].attempts for r in results),
                              sum(r.links[l].successes for r in results),
                              sum(r.links[l].collisions for r in results))
    flows = {}
    for f in (1, 2):
        flows[f] = FlowLedger(*(sum(getattr(r.flows[f], name) for r in results)
                                for name in ("generated", "delivered", "dropped", "undecodable",
                                             "in_queue", "in_flight")))
    nodes = results[0].mean_queue.keys()
    return SimResult(
        theta=mean,
        links=links,
        mean_queue={i: float(np.mean([r.mean_queue[i] for r in results])) for i in nodes},
        departures={i: float(np.mean([r.departures[i] for r in results])) for i in nodes},
        replications=n,
        ci_halfwidth=half,
        thetas=thetas,
        seeds=[s for r in results for s in r.seeds],
        flows=flows,
        delivered=sum(r.delivered for r in results),
        coded_tx=sum(r.coded_tx for r in results),
        events=sum(r.events for r in results),
    )


def run_replications(topo: ChainTopology, scenario: Scenario, params: ModelParams,
                     opts: SimOptions = SimOptions(), n_reps: int = 10,
                     workers: int = 1) -> SimResult:
    """Independent runs seeded by ``replication_seed(opts.seed, i)``; Student-t 95% CI.

    ``workers > 1`` farms replications out to processes; results are collected
    in replication order, so the aggregate does not depend on ``workers``.
    """
    if isinstance(n_reps, bool) or not isinstance(n_reps, int) or n_reps < 1:
        raise ConfigError(f"n_reps must be an integer >= 1, got {n_reps!r}")
    jobs = [(topo, scenario, params, replace(opts, seed=replication_seed(opts.seed, i)))
            for i in range(n_reps)]
    if workers > 1 and n_reps > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_one, jobs))
    else:
        out = [_one(j) for j in jobs]
    failures = [(j[3].seed, r) for j, r in zip(jobs, out) if isinstance(r, Exception)]
    if failures:
        raise ReplicationError(failures)
    return aggregate(out)
