"""Memory-centric profiling stack.

Subpackages cover the fixed-layout sample-packet codec (`codec`), the
aux/ring buffer transport and trace file format (`transport`, `tracefile`),
a deterministic simulator of the hardware sampling pipeline (`sampler`),
session/configuration/annotation handling (`profiler`), and the metric and
sensitivity-sweep layer (`analysis`).  `cli` ties them together as the
``nmo`` command.
"""

__version__ = "0.1.0"
