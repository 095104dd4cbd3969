"""How long does a failure take to disturb a distant probe region?

Heat moves at most one cell per step, so a tile far from the failure keeps
matching the fault-free run for a while. compare() reports the first
iteration at which each metric departs from the reference.
"""
import tempfile
from pathlib import Path

from resilient_stencil import compare, parse_config, run

base = """
dims = 8x8
cells = 16x16
iterations = 150
probe_region = 4:7,4:7
"""
with tempfile.TemporaryDirectory() as tmp:
    ref, faulty = Path(tmp) / "ref.csv", Path(tmp) / "faulty.csv"
    run(parse_config(base), ref)
    run(parse_config(base + "faults = 8@20\n"), faulty)
    for tol in (1e-12, 1e-9, 1e-6):
        print(f"tolerance {tol:g}:", ", ".join(compare(faulty, ref, tol).lines()))
