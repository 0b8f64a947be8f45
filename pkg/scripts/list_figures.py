#!/usr/bin/env python3
"""List the figures `pdeicl plotdata` can emit"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from pdeicl.plotdata import CONFIG_FIGURES, METRIC_FIGURES, RECORD_FIGURES

print("=== PDE-ICL plot data figures ===")
for name, (axis, prefixes) in METRIC_FIGURES.items():
    print(f"  {name}: metrics.csv, axis {axis}, metrics {', '.join(p.rstrip('.') for p in prefixes)}")
for name in RECORD_FIGURES:
    print(f"  {name}: records.jsonl")
for name in CONFIG_FIGURES:
    print(f"  {name}: run manifest + trial seed")
