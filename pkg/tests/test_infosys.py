from fractions import Fraction

import pytest

from deskgrid.infosys import (CERecord, InformationIndex, InfoSysError,
                              InvariantViolation, SERecord, UnknownCE)


def ce(ce_id="ce_x", **kw):
    base = dict(ce_id=ce_id, site_id="x", lrms="PBS", schema_flavors=("EDG",),
                run_time_environment=("CMS",), wn_count=2, cpu_mhz=1000,
                authorized_vos=("testvo",), close_ses=("se_x",))
    base.update(kw)
    return CERecord(**base)


class FakeTap:
    def __init__(self, running, queued):
        self._r = [Fraction(x) for x in running]
        self._q = [Fraction(x) for x in queued]

    def ett_components(self):
        return self._r, self._q


def test_ett_is_backlog_over_node_count():
    index = InformationIndex()
    index.publish_ce(ce(wn_count=3))
    index.bind_load_tap("ce_x", FakeTap([300, 100], [200]))
    # (300 + 100 + 200) / 3 nodes
    assert index.estimated_traversal_time("ce_x") == Fraction(200)


def test_ett_exact_fraction_no_float_drift():
    index = InformationIndex()
    index.publish_ce(ce(wn_count=1))
    index.bind_load_tap("ce_x", FakeTap([Fraction(125, 2)], []))
    assert index.estimated_traversal_time("ce_x") == Fraction(125, 2)


def test_ett_without_tap_is_idle_and_unknown_ce_raises():
    index = InformationIndex()
    index.publish_ce(ce())
    assert index.estimated_traversal_time("ce_x") == 0
    with pytest.raises(UnknownCE):
        index.estimated_traversal_time("ce_ghost")


def test_condor_cannot_publish_edg_flavor():
    index = InformationIndex()
    with pytest.raises(InvariantViolation, match="Condor"):
        index.publish_ce(ce(lrms="CONDOR", schema_flavors=("EDG",)))
    # globus-only publishing is fine, and so is the explicit override
    index.publish_ce(ce(ce_id="ce_c1", lrms="CONDOR", schema_flavors=("GLOBUS_ONLY",)))
    index.publish_ce(ce(ce_id="ce_c2", lrms="CONDOR", schema_flavors=("EDG",),
                        allow_condor_edg=True))


def test_record_validation_limits():
    index = InformationIndex()
    with pytest.raises(InvariantViolation):
        index.publish_ce(ce(lrms="SGE"))
    with pytest.raises(InvariantViolation):
        index.publish_ce(ce(schema_flavors=()))
    with pytest.raises(InvariantViolation):
        index.publish_ce(ce(wn_count=0))
    with pytest.raises(InvariantViolation):
        index.publish_ce(ce(jobs_running=3))  # above wn_count


def test_query_filters_by_flavor_and_vo_and_sorts():
    index = InformationIndex()
    index.publish_ce(ce(ce_id="ce_b", schema_flavors=("EDG", "GLUE")))
    index.publish_ce(ce(ce_id="ce_a", schema_flavors=("EDG",)))
    index.publish_ce(ce(ce_id="ce_g", schema_flavors=("GLUE",)))
    index.publish_ce(ce(ce_id="ce_v", authorized_vos=("othervo",)))
    assert [r.ce_id for r in index.query("EDG", "testvo")] == ["ce_a", "ce_b"]
    assert [r.ce_id for r in index.query("GLUE", "testvo")] == ["ce_b", "ce_g"]
    with pytest.raises(InfoSysError):
        index.query("GLOBUS_ONLY", "testvo")


def test_republish_replaces_record():
    index = InformationIndex()
    index.publish_ce(ce(cpu_mhz=1000))
    index.publish_ce(ce(cpu_mhz=1400))
    assert index.ces["ce_x"].cpu_mhz == 1400


def test_closeness_must_be_mutual():
    index = InformationIndex()
    index.publish_ce(ce(close_ses=("se_x",)))
    index.publish_se(SERecord("se_x", "x", 1024, close_ces=()))
    problems = index.closeness_errors()
    assert any("does not list it back" in p for p in problems)
    index.publish_se(SERecord("se_x", "x", 1024, close_ces=("ce_x",)))
    assert index.closeness_errors() == []
    index.publish_se(SERecord("se_y", "y", 1024, close_ces=("ce_ghost",)))
    assert any("not published" in p for p in index.closeness_errors())
