"""Site fabric: workload profiles, links, batch queues and execution.

Everything a job does on the fabric is synthetic but exactly timed:

    runtime  = events * per_event_cpu_seconds_at_1ghz * (1000 / cpu_mhz)
    transfer = sum over hops of (latency + size / bandwidth)

with all arithmetic in Fractions and a single rounding to milliseconds per
scheduled instant.  File content is never materialised; a job's outputs
are (name, size, checksum) triples fully determined by the workload
profile, dataset, job index and event count, so reruns anywhere agree
byte-for-byte on what they claim to have produced.

Routes are at most one WAN hop plus the destination LAN: endpoints are
sites, broker hosts and the user-interface host, and a pair without an
explicit link falls back to the topology's default WAN parameters when
configured, otherwise there is no route.  Links are not contended.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import partial
from typing import Callable

from . import vomgmt
from .jdl import JobDescription
from .simcore import Kernel, SimEvent
from .units import KB, MB, fmt_quantity, to_millis


class FabricError(Exception):
    pass


class NoRoute(FabricError):
    pass


class AuthorizationDenied(FabricError):
    def __init__(self, denial: vomgmt.Denial):
        self.denial = denial
        super().__init__(f"AuthorizationDenied({denial})")


# --------------------------------------------------------------------------
# workload profiles

@dataclass(frozen=True)
class WorkloadProfile:
    """What one event of a given application costs and produces."""

    name: str
    per_event_cpu_1ghz: Fraction       # CPU seconds per event on a 1 GHz core
    output_bytes_per_event: Fraction
    monitor_every_events: int = 10
    registers_output: bool = False     # data product -> close SE + catalogue
    data_extension: str = "dat"

    def validate(self) -> None:
        if self.per_event_cpu_1ghz <= 0 or self.output_bytes_per_event <= 0:
            raise FabricError(f"profile {self.name}: per-event figures must be positive")
        if self.monitor_every_events < 1:
            raise FabricError(f"profile {self.name}: monitor_every_events must be >= 1")

    def runtime_s(self, events: int, cpu_mhz: int) -> Fraction:
        return events * self.per_event_cpu_1ghz * Fraction(1000, cpu_mhz)

    def output_size(self, events: int) -> int:
        return int(events * self.output_bytes_per_event + Fraction(1, 2))


def builtin_profiles() -> dict:
    """The three applications every site has installed, plus the fallback
    used when a description names something unknown."""
    return {
        "atlsim": WorkloadProfile("atlsim", Fraction(150), Fraction(180 * KB),
                                  data_extension="zebra"),
        "cmkin": WorkloadProfile("cmkin", Fraction(1, 2), Fraction(50 * KB),
                                 registers_output=True, data_extension="ntpl"),
        "cmsim": WorkloadProfile("cmsim", Fraction(350), Fraction(9, 5) * MB,
                                 registers_output=True, data_extension="fz"),
        "custom": WorkloadProfile("custom", Fraction(1), Fraction(KB)),
    }


def content_checksum(profile: str, dataset: str, job_index: int, events: int,
                     filename: str = "") -> int:
    """Stable 64-bit stand-in for the checksum of a produced file."""
    key = "\x1f".join((profile, dataset, str(job_index), str(events), filename))
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class OutputFile:
    name: str
    size_bytes: int
    checksum: int
    is_data: bool


STDOUT_BASE_BYTES = 1024
STDOUT_BYTES_PER_EVENT = 16
STDERR_BYTES = 512
SANDBOX_INPUT_FILE_BYTES = 4 * KB
SANDBOX_AUX_FILE_BYTES = 8 * KB


def data_file_name(jd: JobDescription, profile: WorkloadProfile) -> str:
    """Name of the data product.

    Factory jobs follow the fixed catalogue convention: the generator
    writes <dataset>_<n>.ntpl, the detector step writes
    <dataset>_<n>_<seed>.fz.  Sandbox-returning applications use the first
    OutputSandbox entry; anything else falls back to a name derived from
    the profile and seed."""
    tag = jd.production_tag()
    if tag is not None:
        dataset, index = tag
        if profile.name == "cmsim":
            return f"{dataset}_{index}_{jd.job_seed}.{profile.data_extension}"
        return f"{dataset}_{index}.{profile.data_extension}"
    if not profile.registers_output and jd.output_sandbox:
        return jd.output_sandbox[0]
    return f"{profile.name}_{jd.job_seed}.{profile.data_extension}"


def build_outputs(jd: JobDescription, profile: WorkloadProfile) -> list:
    """Deterministic manifest of everything the job leaves on its node."""
    tag = jd.production_tag() or ("", jd.job_seed)
    dataset, index = tag
    mark = partial(content_checksum, profile.name, dataset, index, jd.events)
    outputs = [
        OutputFile(jd.std_output, STDOUT_BASE_BYTES + STDOUT_BYTES_PER_EVENT * jd.events,
                   mark(jd.std_output), False),
        OutputFile(jd.std_error, STDERR_BYTES, mark(jd.std_error), False),
    ]
    data_name = data_file_name(jd, profile)
    outputs.append(OutputFile(data_name, profile.output_size(jd.events),
                              mark(data_name), True))
    for name in jd.output_sandbox:
        if name == data_name:
            continue
        outputs.append(OutputFile(name, SANDBOX_AUX_FILE_BYTES, mark(name), False))
    return outputs


# --------------------------------------------------------------------------
# network

SITE_EP = "site"
RB_EP = "rb"
UI_EP = "ui"


def endpoint(kind: str, ident: str = "") -> str:
    return f"{kind}:{ident}" if ident else kind


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    bandwidth: Fraction  # bytes/s
    latency: Fraction    # seconds


class Network:
    """Named WAN links, per-site LAN parameters and optional WAN defaults."""

    DEFAULT_LAN_BANDWIDTH = Fraction(100 * MB)
    DEFAULT_LAN_LATENCY = Fraction(1, 1000)

    def __init__(self, kernel: Kernel):
        self.kernel = kernel
        self._links: dict[frozenset, Link] = {}
        self.default_wan: "tuple[Fraction, Fraction] | None" = None
        self._lan: dict[str, tuple] = {}

    def set_lan(self, site_id: str, bandwidth: Fraction, latency: Fraction) -> None:
        self._lan[site_id] = (bandwidth, latency)

    def lan_params(self, site_id: str) -> tuple:
        return self._lan.get(site_id, (self.DEFAULT_LAN_BANDWIDTH, self.DEFAULT_LAN_LATENCY))

    def add_link(self, a: str, b: str, bandwidth: Fraction, latency: Fraction) -> None:
        self._links[frozenset((a, b))] = Link(a, b, bandwidth, latency)

    def _wan(self, a: str, b: str):
        link = self._links.get(frozenset((a, b)))
        if link is not None:
            return (link.bandwidth, link.latency)
        return self.default_wan

    def hops(self, frm: str, to: str, lan_to: bool) -> list:
        """Hop parameter list for a transfer; raises NoRoute when the two
        endpoints have neither a link nor a WAN default."""
        if frm == to:
            site = to.split(":", 1)[1] if to.startswith("site:") else None
            if site is not None and lan_to:
                return [self.lan_params(site)]
            return []
        wan = self._wan(frm, to)
        if wan is None:
            raise NoRoute(f"no route between {frm} and {to}")
        route = [wan]
        if lan_to and to.startswith("site:"):
            route.append(self.lan_params(to.split(":", 1)[1]))
        return route

    def duration_s(self, size_bytes: int, hops: list) -> Fraction:
        total = Fraction(0)
        for bandwidth, latency in hops:
            total += latency + Fraction(size_bytes) / bandwidth
        return total

    def transfer(self, size_bytes: int, frm: str, to: str, *, lan_to: bool,
                 what: str, on_done: Callable[[], None]) -> SimEvent:
        """Schedule a transfer; `on_done` runs at completion, after the
        trace entry is emitted."""
        duration = self.duration_s(size_bytes, self.hops(frm, to, lan_to))
        finish_at = self.kernel.now() + duration

        def complete():
            self.kernel.emit("net", "transfer-complete", what=what, frm=frm,
                             to=to, bytes=size_bytes, secs=fmt_quantity(duration))
            on_done()

        return self.kernel.schedule("transfer-complete", complete, finish_at)


# --------------------------------------------------------------------------
# sites and computing elements

@dataclass
class Site:
    site_id: str
    region: str               # EU or US
    outbound: bool = True     # worker nodes may open outbound connections
    ce_ids: list = field(default_factory=list)
    se_ids: list = field(default_factory=list)

    @property
    def endpoint(self) -> str:
        return endpoint(SITE_EP, self.site_id)


@dataclass
class WorkerNode:
    index: int
    busy: "FabricJob | None" = None


@dataclass
class FabricJob:
    """The fabric-facing face of one job; the broker fills the callbacks."""

    job_id: str
    proxy: vomgmt.Proxy
    description: JobDescription
    profile: WorkloadProfile
    on_dispatched: Callable[["WorkerNode"], None]
    on_auth_denied: Callable[[vomgmt.Denial], None]
    on_exec_complete: Callable[[list, int], None]
    cpu_total_s: Fraction = Fraction(0)
    events_done: int = 0

    def remaining_cpu_s(self) -> Fraction:
        done = Fraction(self.events_done, self.description.events)
        return self.cpu_total_s * (1 - done)


class ComputingElement:
    """One batch queue over identical worker nodes, FIFO, work-conserving:
    a free node with a non-empty queue dispatches in the same instant."""

    def __init__(self, record, site: Site, kernel: Kernel, vo: vomgmt.VoManager,
                 monitor_hook: "Callable | None" = None):
        self.record = record
        self.site = site
        self.kernel = kernel
        self.vo = vo
        self.monitor_hook = monitor_hook
        self.wns = [WorkerNode(i) for i in range(record.wn_count)]
        self.queue: deque = deque()
        self.running: dict[str, FabricJob] = {}
        self.fail_next_execs = 0  # scenario-driven failure injection

    @property
    def ce_id(self) -> str:
        return self.record.ce_id

    def _free_wn(self) -> "WorkerNode | None":
        for wn in self.wns:
            if wn.busy is None:
                return wn
        return None

    # -- queueing ------------------------------------------------------

    def enqueue(self, job: FabricJob) -> None:
        denial = self.vo.authorize(self.site.site_id, job.proxy, self.kernel.now_ms)
        if denial is not None:
            self.kernel.emit(self.ce_id, "enqueue-denied", job=job.job_id, reason=str(denial))
            raise AuthorizationDenied(denial)
        job.cpu_total_s = job.profile.runtime_s(job.description.events, self.record.cpu_mhz)
        self.queue.append(job)
        self.record.jobs_queued += 1
        self.kernel.emit(self.ce_id, "enqueued", job=job.job_id,
                         depth=self.record.jobs_queued)
        self.try_dispatch()

    def try_dispatch(self) -> None:
        while self.queue:
            wn = self._free_wn()
            if wn is None:
                return
            job = self.queue.popleft()
            self.record.jobs_queued -= 1
            # authorization is re-checked when the job actually starts
            denial = self.vo.authorize(self.site.site_id, job.proxy, self.kernel.now_ms)
            if denial is not None:
                self.kernel.emit(self.ce_id, "dispatch-denied", job=job.job_id,
                                 reason=str(denial))
                job.on_auth_denied(denial)
                continue
            wn.busy = job
            self.record.jobs_running += 1
            self.running[job.job_id] = job
            self.kernel.emit(self.ce_id, "dispatched", job=job.job_id, wn=wn.index)
            job.on_dispatched(wn)

    # -- execution -----------------------------------------------------

    def execute(self, job: FabricJob) -> None:
        if job.job_id not in self.running:
            raise FabricError(f"{job.job_id} is not running on {self.ce_id}")
        events = job.description.events
        runtime = job.profile.runtime_s(events, self.record.cpu_mhz)
        start = self.kernel.now()
        step = job.profile.monitor_every_events
        for k in range(step, events, step):
            at = start + runtime * Fraction(k, events)
            self.kernel.schedule("monitor-tick", partial(self._tick, job, k), at)
        self.kernel.emit(self.ce_id, "exec-start", job=job.job_id,
                         events=events, runtime_s=fmt_quantity(runtime))
        self.kernel.schedule("job-finish", partial(self._exec_done, job), start + runtime)

    def _tick(self, job: FabricJob, events_done: int) -> None:
        if job.job_id not in self.running:
            return
        job.events_done = events_done
        if self.monitor_hook is not None:
            self.monitor_hook(job.job_id, events_done, self.site.outbound)

    def _exec_done(self, job: FabricJob) -> None:
        if job.job_id not in self.running:
            return
        job.events_done = job.description.events
        exit_code = 0
        if self.fail_next_execs > 0:
            self.fail_next_execs -= 1
            exit_code = 1
        outputs = build_outputs(job.description, job.profile)
        self.kernel.emit(self.ce_id, "exec-complete", job=job.job_id, exit=exit_code)
        job.on_exec_complete(outputs, exit_code)

    def finish(self, job: FabricJob) -> None:
        """Release the worker node once every output leg is over."""
        for wn in self.wns:
            if wn.busy is job:
                wn.busy = None
                break
        if job.job_id in self.running:
            del self.running[job.job_id]
            self.record.jobs_running -= 1
        self.kernel.emit(self.ce_id, "wn-freed", job=job.job_id)
        self.try_dispatch()

    # -- load tap for the information index ---------------------------

    def ett_components(self) -> tuple:
        running = [job.remaining_cpu_s() for job in self.running.values()]
        queued = [job.cpu_total_s for job in self.queue]
        return running, queued


class Fabric:
    """All sites and computing elements plus the profile registry."""

    def __init__(self, kernel: Kernel, network: Network, vo: vomgmt.VoManager):
        self.kernel = kernel
        self.network = network
        self.vo = vo
        self.sites: dict[str, Site] = {}
        self.ces: dict[str, ComputingElement] = {}
        self.profiles: dict[str, WorkloadProfile] = builtin_profiles()
        self.monitor_hook: "Callable | None" = None

    def add_site(self, site: Site) -> None:
        self.sites[site.site_id] = site

    def add_ce(self, record) -> ComputingElement:
        site = self.sites[record.site_id]
        ce = ComputingElement(record, site, self.kernel, self.vo,
                              monitor_hook=self._tick_fanout)
        self.ces[record.ce_id] = ce
        site.ce_ids.append(record.ce_id)
        return ce

    def _tick_fanout(self, job_id: str, events_done: int, outbound: bool) -> None:
        if self.monitor_hook is not None:
            self.monitor_hook(job_id, events_done, outbound)

    def set_profile(self, profile: WorkloadProfile) -> None:
        profile.validate()
        self.profiles[profile.name] = profile

    def profile_for(self, jd: JobDescription) -> WorkloadProfile:
        return self.profiles.get(jd.job_profile, self.profiles["custom"])

    def site_endpoint(self, site_id: str) -> str:
        return self.sites[site_id].endpoint
