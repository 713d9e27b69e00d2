"""Discrete-event comparison of two priority-aware wireless MAC schemes.

`priomac` simulates a single-hop star of sensor nodes sharing one radio
channel with a sink, under two medium-access protocols:

* a synchronous slot-stealing TDMA scheme (``ssmac``) where urgent packets
  signal an emergency between scheduled slots and steal a deadline-ordered
  transmission phase, and
* an asynchronous CSMA/CA scheme (``frogmac``) that fragments low-priority
  packets so urgent traffic can seize the channel between fragments.

Everything is integer-microsecond and fully deterministic per seed.
"""

from .kernel import Engine, RngStream, SimTime

__all__ = ["Engine", "RngStream", "SimTime"]
__version__ = "0.1.0"
