import pytest

from deskgrid.grid import Grid
from deskgrid.topology import parse_topology

# Two sites, two computing elements, everything deliberately small enough
# to predict transfer and runtime figures by hand:
#   ce_alpha: PBS, EDG, 2 nodes at 1000 MHz, close to se_alpha
#   ce_beta:  LSF, EDG+GLUE, 1 node at 2000 MHz, close to se_beta
#   alpha<->beta link 20 MB/s at 0.1 s, everything else on the 10 MB/s
#   default WAN at 0.05 s; LANs at the built-in 100 MB/s and 1 ms.
MINI_TOPOLOGY = """\
[general]
replica_catalog = rc_test
default_wan_bandwidth = 10 MB/s
default_wan_latency = 0.05

[vo testvo]
/C=XX/CN=alice
/C=XX/CN=bob

[vo othervo]
/C=XX/CN=carol
/C=XX/CN=alice

[site alpha]
region = EU
accept_vos = testvo othervo

[ce ce_alpha]
site = alpha
lrms = PBS
flavors = EDG
wn_count = 2
cpu_mhz = 1000
tags = CMS ATLAS-3.2.1 CMS-1.2
close_ses = se_alpha

[se se_alpha]
site = alpha
capacity = 1 GB

[site beta]
region = US
accept_vos = testvo

[ce ce_beta]
site = beta
lrms = LSF
flavors = EDG GLUE
wn_count = 1
cpu_mhz = 2000
tags = CMS
close_ses = se_beta

[se se_beta]
site = beta
capacity = 1 GB

[broker rb_test]
flavor = EDG

[broker rb_glue]
flavor = GLUE

[link site:alpha site:beta]
bandwidth = 20 MB/s
latency = 0.1
"""


def make_mini(seed: int = 1) -> Grid:
    return Grid(parse_topology(MINI_TOPOLOGY, "<mini>"), seed=seed)


@pytest.fixture
def mini() -> Grid:
    return make_mini()


@pytest.fixture
def alice(mini):
    """A valid proxy on the mini grid, installed as the session proxy."""
    return mini.proxy_init("/C=XX/CN=alice", "testvo")


CMKIN_SMALL = """\
Executable = "cmkin";
Requirements = Member("CMS", other.RunTimeEnvironment);
VirtualOrganisation = "testvo";
Events = 50;
JobSeed = 101;
"""
