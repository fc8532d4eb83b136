"""Self-contained network-security testbed for a two-tank pumped process.

Everything runs on one simulated clock: a Modbus/TCP slave backed by a
soft PLC, a polling master, a screening gateway with packet capture and
a signature IDS, a low-interaction honeypot that answers network scans,
and a catalog of scripted attacks that emit replayable pcap and alert
datasets.  The ``testbed`` and ``attack`` console scripts front the
same machinery; ``load_topology`` builds the wired plant for scripting.
"""

from tankbed.orchestrator import Topology, TopologyError, load_topology, \
    run_all, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Topology",
    "TopologyError",
    "load_topology",
    "run_all",
    "run_scenario",
    "__version__",
]
