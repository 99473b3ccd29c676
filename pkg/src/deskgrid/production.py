"""Monte Carlo production layer: requests, job factory and bookkeeping.

A production request asks for N events of one step (CMKIN generation or
CMSIM detector simulation) split into ceil(N / events_per_job) jobs, the
last one carrying the remainder.  The factory walks each assignment
through declare -> create -> submit: create writes one description file
per job (generation jobs carry no input data; simulation jobs each name
their generator ntuple and the replica catalogue), submit hands them to a
resource broker all-or-nothing under the caller's proxy and opens one
bookkeeping record per job.

Bookkeeping follows the journal model: while a job runs, its monitor
ticks update events_done -- but only if the worker node has outbound
connectivity; when it ends, the final status, exit status and output file
are always recorded (the journal travels back with the sandbox).
events_done never goes backwards: a regressive update is logged and
ignored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import broker as broker_mod
from .vomgmt import Proxy

STEP_CMKIN = "CMKIN"
STEP_CMSIM = "CMSIM"
STEPS = (STEP_CMKIN, STEP_CMSIM)

REQ_NEW = "NEW"
REQ_DECLARED = "DECLARED"
REQ_CREATED = "CREATED"
REQ_SUBMITTED = "SUBMITTED"
REQ_COMPLETE = "COMPLETE"

BOSS_SUBMITTED = "submitted"
BOSS_RUNNING = "running"
BOSS_FINISHED = "finished"
BOSS_FAILED = "failed"

#: seed given to job n of any dataset
JOB_SEED_BASE = 2000


def job_seed_for(dataset: str, index: int) -> int:
    return JOB_SEED_BASE + index - 1


class ProductionError(Exception):
    pass


class UnknownAssignment(ProductionError):
    pass


class WrongState(ProductionError):
    pass


class MissingUpstream(ProductionError):
    pass


class JobsStillRunning(ProductionError):
    pass


class UnknownBossId(ProductionError):
    pass


@dataclass
class ProductionRequest:
    assignment_id: int
    dataset: str
    step: str
    total_events: int
    events_per_job: int
    rb_id: str
    default_se: "str | None" = None
    status: str = REQ_NEW
    jdl_texts: list = field(default_factory=list)
    scheduler_jobs: list = field(default_factory=list)  # broker job ids
    boss_ids: list = field(default_factory=list)
    summary: "dict | None" = None

    @property
    def job_count(self) -> int:
        return math.ceil(self.total_events / self.events_per_job)

    def split_events(self) -> list:
        """Per-job event counts; they always sum to total_events."""
        full, remainder = divmod(self.total_events, self.events_per_job)
        counts = [self.events_per_job] * full
        if remainder:
            counts.append(remainder)
        return counts


@dataclass
class BossJobRecord:
    boss_id: int
    scheduler_job_id: str
    job_type: str          # cmkin | cmsim
    dataset: str
    events_declared: int
    input_file: str = "-"
    output_file: str = "-"
    status: str = BOSS_SUBMITTED
    exit_status: "int | None" = None
    events_done: int = 0


class RefDb:
    """Request registry.  Simulation requests require a COMPLETE generation
    request for the same dataset; completion is judged when a summary is
    posted, never automatically."""

    def __init__(self):
        self.requests: dict[int, ProductionRequest] = {}
        self._next_id = 1

    def create_request(self, dataset: str, step: str, total_events: int,
                       events_per_job: int, rb_id: str,
                       default_se: "str | None" = None) -> ProductionRequest:
        if step not in STEPS:
            raise ProductionError(f"unknown step {step!r}")
        if total_events < 1 or events_per_job < 1:
            raise ProductionError("event counts must be positive")
        if step == STEP_CMSIM and not self._has_complete_cmkin(dataset):
            raise MissingUpstream(
                f"no COMPLETE {STEP_CMKIN} request for dataset {dataset!r}")
        request = ProductionRequest(self._next_id, dataset, step,
                                    total_events, events_per_job, rb_id,
                                    default_se=default_se)
        self.requests[self._next_id] = request
        self._next_id += 1
        return request

    def _has_complete_cmkin(self, dataset: str):
        return any(r.step == STEP_CMKIN and r.dataset == dataset
                   and r.status == REQ_COMPLETE
                   for r in self.requests.values())

    def upstream_of(self, request: ProductionRequest) -> ProductionRequest:
        for r in sorted(self.requests.values(), key=lambda r: r.assignment_id):
            if (r.step == STEP_CMKIN and r.dataset == request.dataset
                    and r.status == REQ_COMPLETE):
                return r
        raise MissingUpstream(request.dataset)

    def get(self, assignment_id: int) -> ProductionRequest:
        request = self.requests.get(assignment_id)
        if request is None:
            raise UnknownAssignment(str(assignment_id))
        return request

    def dump(self) -> str:
        lines = []
        for aid in sorted(self.requests):
            r = self.requests[aid]
            summary = r.summary or {}
            lines.append(
                f"{aid}\t{r.dataset}\t{r.step}\ttotal={r.total_events}"
                f"\tper_job={r.events_per_job}\tjobs={r.job_count}"
                f"\tstatus={r.status}"
                f"\tok={summary.get('jobs_ok', '-')}"
                f"\tfailed={summary.get('jobs_failed', '-')}"
                f"\tevents_done={summary.get('total_events_done', '-')}"
                f"\tlfns={len(summary['lfns']) if summary else '-'}")
        return "".join(line + "\n" for line in lines)


class BossDb:
    """Per-job bookkeeping records keyed by an integer id."""

    def __init__(self, emit=None):
        self.records: dict[int, BossJobRecord] = {}
        self.by_scheduler: dict[str, int] = {}
        self.violations: list = []
        self._emit = emit or (lambda *a, **k: None)
        self._next_id = 1

    def open_record(self, scheduler_job_id: str, job_type: str, dataset: str,
                    events_declared: int, input_file: str = "-") -> BossJobRecord:
        record = BossJobRecord(self._next_id, scheduler_job_id, job_type,
                               dataset, events_declared, input_file=input_file)
        self.records[self._next_id] = record
        self.by_scheduler[scheduler_job_id] = self._next_id
        self._next_id += 1
        return record

    def get(self, boss_id: int) -> BossJobRecord:
        record = self.records.get(boss_id)
        if record is None:
            raise UnknownBossId(str(boss_id))
        return record

    def update_events_done(self, boss_id: int, value: int) -> None:
        record = self.get(boss_id)
        if value < record.events_done:
            # never roll the counter back; note the attempt and move on
            self.violations.append((boss_id, record.events_done, value))
            self._emit("boss", "monotonicity-violation", boss=boss_id,
                       have=record.events_done, got=value)
            return
        record.events_done = value

    def for_scheduler_job(self, job_id: str) -> "BossJobRecord | None":
        boss_id = self.by_scheduler.get(job_id)
        return None if boss_id is None else self.records[boss_id]

    def query(self, status: "str | None" = None, job_type: "str | None" = None,
              dataset: "str | None" = None) -> list:
        out = []
        for boss_id in sorted(self.records):
            r = self.records[boss_id]
            if status is not None and r.status != status:
                continue
            if job_type is not None and r.job_type != job_type:
                continue
            if dataset is not None and r.dataset != dataset:
                continue
            out.append(r)
        return out

    HEADER = "boss_id\tstatus\texit_status\tinput_file\toutput_file\tevents_declared\tevents_done"

    def dump(self, rows: "list | None" = None) -> str:
        rows = self.query() if rows is None else rows
        lines = [self.HEADER]
        for r in rows:
            exit_status = "-" if r.exit_status is None else str(r.exit_status)
            lines.append(f"{r.boss_id}\t{r.status}\t{exit_status}"
                         f"\t{r.input_file}\t{r.output_file}"
                         f"\t{r.events_declared}\t{r.events_done}")
        return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class FilterSpec:
    """Which keys of a job's monitoring stream feed its bookkeeping record,
    and when: `runtime_keys` are applied from monitor ticks as they arrive,
    `final_keys` from the journal at the end."""

    job_type: str
    runtime_keys: tuple = ("events_done",)
    final_keys: tuple = ("exit_status", "output_file", "events_done")


FILTERS = {
    "cmkin": FilterSpec("cmkin"),
    "cmsim": FilterSpec("cmsim"),
}


class ProductionManager:
    """Drives assignments through declare/create/submit and keeps the
    bookkeeping database in step with the running jobs."""

    def __init__(self, kernel, refdb: RefDb, boss: BossDb, brokers: dict,
                 datagrid, site_of_ce, default_vo: str):
        self.kernel = kernel
        self.refdb = refdb
        self.boss = boss
        self.brokers = brokers
        self.datagrid = datagrid
        self.site_of_ce = site_of_ce  # ce_id -> Site
        self.default_vo = default_vo

    # -- assignment steps ---------------------------------------------

    def declare(self, assignment_id: int) -> dict:
        request = self.refdb.get(assignment_id)
        if request.status != REQ_NEW:
            raise WrongState(f"assignment {assignment_id} is {request.status}")
        request.status = REQ_DECLARED
        seeds = [job_seed_for(request.dataset, n) for n in range(1, request.job_count + 1)]
        workspace = {
            "assignment": assignment_id,
            "dataset": request.dataset,
            "step": request.step,
            "jobs": [{"index": n, "events": events, "seed": seed}
                     for n, (events, seed) in enumerate(zip(request.split_events(), seeds), start=1)],
        }
        self.kernel.emit("factory", "declared", assignment=assignment_id,
                         jobs=request.job_count)
        return workspace

    def create(self, assignment_id: int) -> list:
        request = self.refdb.get(assignment_id)
        if request.status != REQ_DECLARED:
            raise WrongState(f"assignment {assignment_id} is {request.status}")
        if request.step == STEP_CMSIM:
            upstream = self.refdb.upstream_of(request)
            if request.job_count > upstream.job_count:
                raise MissingUpstream(
                    f"assignment {assignment_id} wants {request.job_count} inputs, "
                    f"upstream produced {upstream.job_count}")
        texts = [self._job_text(request, n, events)
                 for n, events in enumerate(request.split_events(), start=1)]
        request.jdl_texts = texts
        request.status = REQ_CREATED
        self.kernel.emit("factory", "created", assignment=assignment_id,
                         jobs=len(texts))
        return texts

    def _job_text(self, request: ProductionRequest, index: int, events: int) -> str:
        dataset = request.dataset
        seed = job_seed_for(dataset, index)
        lines = [
            f"# factory job {index}/{request.job_count} of assignment {request.assignment_id}",
            f'Executable = "{request.step.lower()}";',
            'StdOutput = "std.out";',
            'StdError = "std.err";',
            f'InputSandbox = {{"{dataset}_{index}.cards"}};',
            'Requirements = Member("CMS", other.RunTimeEnvironment);',
            f'VirtualOrganisation = "{self.default_vo}";',
            f"Events = {events};",
            f"JobSeed = {seed};",
            f'Dataset = "{dataset}";',
            f"JobIndex = {index};",
        ]
        if request.step == STEP_CMSIM:
            lines.insert(6, f'InputData = {{"lfn:{dataset}_{index}.ntpl"}};')
            lines.insert(7, f'ReplicaCatalog = "{self.datagrid.rc.catalog_id}";')
        if request.default_se is not None:
            lines.append(f'DefaultSE = "{request.default_se}";')
        return "".join(line + "\n" for line in lines)

    def submit(self, assignment_id: int, proxy: Proxy) -> list:
        """Submit every job of the assignment; refuses as a whole when the
        proxy is not valid now."""
        request = self.refdb.get(assignment_id)
        if request.status != REQ_CREATED:
            raise WrongState(f"assignment {assignment_id} is {request.status}")
        if not proxy.valid_at(self.kernel.now_ms):
            raise broker_mod.ProxyExpired(f"{proxy.user_dn}: proxy expired")
        rb = self.brokers.get(request.rb_id)
        if rb is None:
            raise ProductionError(f"unknown resource broker {request.rb_id!r}")
        job_type = request.step.lower()
        for index, (text, events) in enumerate(
                zip(request.jdl_texts, request.split_events()), start=1):
            job_id = rb.submit(text, proxy)
            input_file = (f"{request.dataset}_{index}.ntpl"
                          if request.step == STEP_CMSIM else "-")
            record = self.boss.open_record(job_id, job_type, request.dataset,
                                           events, input_file=input_file)
            request.scheduler_jobs.append(job_id)
            request.boss_ids.append(record.boss_id)
        request.status = REQ_SUBMITTED
        self.kernel.emit("factory", "submitted", assignment=assignment_id,
                         jobs=len(request.scheduler_jobs), rb=request.rb_id)
        return list(request.boss_ids)

    # -- summaries -----------------------------------------------------

    def post_summary(self, assignment_id: int) -> dict:
        """Collects the assignment's outcome; flips the request COMPLETE
        only when every job ended DONE_OK."""
        request = self.refdb.get(assignment_id)
        if request.status not in (REQ_SUBMITTED, REQ_COMPLETE):
            raise WrongState(f"assignment {assignment_id} is {request.status}")
        rb = self.brokers[request.rb_id]
        outcomes = []
        for job_id in request.scheduler_jobs:
            record = rb.jobs[job_id]
            if record.state not in broker_mod.TERMINAL_STATES:
                raise JobsStillRunning(f"{job_id} is {record.state}")
            outcomes.append(record)
        jobs_ok = sum(1 for r in outcomes if r.outcome() == broker_mod.DONE_OK)
        jobs_failed = len(outcomes) - jobs_ok
        lfns = sorted(lfn for r in outcomes for lfn in r.registered_lfns)
        events_done = sum(self.boss.records[b].events_done for b in request.boss_ids)
        summary = {
            "jobs_ok": jobs_ok,
            "jobs_failed": jobs_failed,
            "total_events_done": events_done,
            "lfns": lfns,
        }
        request.summary = summary
        if jobs_failed == 0:
            request.status = REQ_COMPLETE
        self.kernel.emit("factory", "summary", assignment=assignment_id,
                         ok=jobs_ok, failed=jobs_failed, status=request.status)
        return summary

    # -- hooks from the fabric and the brokers ------------------------

    def on_monitor_tick(self, job_id: str, events_done: int, outbound: bool) -> None:
        record = self.boss.for_scheduler_job(job_id)
        if record is None:
            return
        if not outbound:
            return  # nothing phones home from an isolated worker node
        if record.status == BOSS_SUBMITTED:
            record.status = BOSS_RUNNING
        spec = FILTERS[record.job_type]
        if "events_done" in spec.runtime_keys:
            self.boss.update_events_done(record.boss_id, events_done)

    def on_job_transition(self, job_record, old_state: str, new_state: str) -> None:
        record = self.boss.for_scheduler_job(job_record.job_id)
        if record is None:
            return
        if new_state == broker_mod.RUNNING:
            site = self.site_of_ce(job_record.matched_ce)
            if site is not None and site.outbound:
                record.status = BOSS_RUNNING
            return
        if new_state == broker_mod.DONE_OK:
            record.status = BOSS_FINISHED
            record.exit_status = 0
            record.events_done = record.events_declared
            if job_record.registered_lfns:
                record.output_file = job_record.registered_lfns[0]
            return
        if new_state == broker_mod.DONE_FAILED:
            record.status = BOSS_FAILED
            record.exit_status = 1
            return
        if new_state == broker_mod.ABORTED:
            record.status = BOSS_FAILED
            record.exit_status = None
