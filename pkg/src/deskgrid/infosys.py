"""Information index: published resource records and traversal estimates.

Computing elements publish which information schema flavors they speak.
A query is always for one flavor, so resources only ever surface to
brokers of that flavor; Condor-managed elements cannot publish the EDG
flavor at all (the publisher does not report the data that schema needs)
unless the record carries an explicit override.

The estimated traversal time of an element is the CPU backlog a newly
arriving job would see:

    ETT = (sum of remaining CPU seconds of running jobs
           + sum of estimated CPU seconds of queued jobs) / wn_count

computed exactly (Fractions), with per-job CPU estimates scaled by the
element's clock.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

LRMS_KINDS = ("PBS", "LSF", "CONDOR")
SCHEMA_FLAVORS = ("EDG", "GLUE", "GLOBUS_ONLY")
QUERY_FLAVORS = ("EDG", "GLUE")


class InfoSysError(Exception):
    pass


class InvariantViolation(InfoSysError):
    pass


class UnknownCE(InfoSysError):
    pass


class UnknownSE(InfoSysError):
    pass


@dataclass
class CERecord:
    ce_id: str
    site_id: str
    lrms: str
    schema_flavors: tuple
    run_time_environment: tuple
    wn_count: int
    cpu_mhz: int
    authorized_vos: tuple
    close_ses: tuple
    jobs_running: int = 0
    jobs_queued: int = 0
    allow_condor_edg: bool = False

    def validate(self) -> None:
        if self.lrms not in LRMS_KINDS:
            raise InvariantViolation(f"{self.ce_id}: unknown LRMS {self.lrms!r}")
        bad = [f for f in self.schema_flavors if f not in SCHEMA_FLAVORS]
        if bad or not self.schema_flavors:
            raise InvariantViolation(f"{self.ce_id}: bad schema flavors {self.schema_flavors!r}")
        if self.lrms == "CONDOR" and "EDG" in self.schema_flavors and not self.allow_condor_edg:
            raise InvariantViolation(
                f"{self.ce_id}: a Condor-managed element cannot publish the EDG "
                f"flavor (no publisher support); set allow_condor_edg to override")
        if self.wn_count < 1:
            raise InvariantViolation(f"{self.ce_id}: wn_count must be at least 1")
        if self.cpu_mhz < 1:
            raise InvariantViolation(f"{self.ce_id}: cpu_mhz must be positive")
        if not 0 <= self.jobs_running <= self.wn_count:
            raise InvariantViolation(f"{self.ce_id}: jobs_running out of range")
        if self.jobs_queued < 0:
            raise InvariantViolation(f"{self.ce_id}: jobs_queued negative")


@dataclass
class SERecord:
    se_id: str
    site_id: str
    capacity_bytes: int
    used_bytes: int = 0
    close_ces: tuple = ()

    def validate(self) -> None:
        if self.capacity_bytes < 0 or not 0 <= self.used_bytes <= self.capacity_bytes:
            raise InvariantViolation(f"{self.se_id}: used/capacity out of range")


class InformationIndex:
    """Registry of published records plus live load taps for ETT."""

    def __init__(self):
        self.ces: dict[str, CERecord] = {}
        self.ses: dict[str, SERecord] = {}
        self._load_taps: dict[str, object] = {}

    def publish_ce(self, record: CERecord) -> None:
        record.validate()
        self.ces[record.ce_id] = record  # republish replaces by id

    def publish_se(self, record: SERecord) -> None:
        record.validate()
        self.ses[record.se_id] = record

    def bind_load_tap(self, ce_id: str, tap) -> None:
        """`tap.ett_components()` must return (running remaining CPU s,
        queued estimated CPU s) as two lists of Fractions."""
        self._load_taps[ce_id] = tap

    def query(self, flavor: str, vo: str) -> list[CERecord]:
        """Elements speaking `flavor` that authorize `vo`, sorted by id."""
        if flavor not in QUERY_FLAVORS:
            raise InfoSysError(f"queries must use one of {QUERY_FLAVORS}, not {flavor!r}")
        hits = [ce for ce in self.ces.values()
                if flavor in ce.schema_flavors and vo in ce.authorized_vos]
        return sorted(hits, key=lambda ce: ce.ce_id)

    def estimated_traversal_time(self, ce_id: str) -> Fraction:
        """ETT in seconds; an element with no load tap is idle."""
        record = self.ces.get(ce_id)
        if record is None:
            raise UnknownCE(ce_id)
        tap = self._load_taps.get(ce_id)
        if tap is None:
            return Fraction(0)
        running, queued = tap.ett_components()
        total = sum(running, Fraction(0)) + sum(queued, Fraction(0))
        return total / record.wn_count

    def closeness_errors(self) -> list[str]:
        """CE<->SE closeness must be declared on both sides."""
        problems = []
        for ce in self.ces.values():
            for se_id in ce.close_ses:
                se = self.ses.get(se_id)
                if se is None:
                    problems.append(f"{ce.ce_id}: close SE {se_id} is not published")
                elif ce.ce_id not in se.close_ces:
                    problems.append(f"{ce.ce_id}: {se_id} does not list it back")
        for se in self.ses.values():
            for ce_id in se.close_ces:
                ce = self.ces.get(ce_id)
                if ce is None:
                    problems.append(f"{se.se_id}: close CE {ce_id} is not published")
                elif se.se_id not in ce.close_ses:
                    problems.append(f"{se.se_id}: {ce_id} does not list it back")
        return problems
