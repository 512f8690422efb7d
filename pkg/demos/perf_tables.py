"""Cost sheets and the roofline: how storage layout moves the bottom line.

Reproduces the bundled reference sheets' derived rows, then prices the
same scenario with the analytic ledger in both cache regimes.
"""
from dataclasses import replace

from sembox.perf_model import (BUBBLE_CONFIG, Calibration, MachineModel,
                               PRESET_SHEETS, emit_table, model_table,
                               sheet_table, working_set_bytes)

machine = MachineModel()
print(f"machine: {machine.bandwidth/1e9:.1f} GB/s stream, "
      f"{machine.peak_flops/1e9:.1f} GF/s peak, ridge at "
      f"{machine.ridge_intensity:.2f} flops/byte\n")

for name in ("table1", "table2", "table3"):
    sheet = PRESET_SHEETS[name]
    print(emit_table(sheet_table(sheet, machine), sheet.description))

# the analytic ledger prices the same bubble scenario from first principles
base = replace(BUBBLE_CONFIG, calibration=Calibration())
ws_mb = working_set_bytes(base) / 2**20
print(f"bubble working set per node: {ws_mb:.0f} MiB "
      f"(L2 is {machine.l2_bytes / 2**20:.0f} MiB, so repricing applies)\n")
print(emit_table(model_table(base, machine, penalized=False),
                 "analytic ledger, cache-friendly"))
print(emit_table(model_table(base, machine, penalized=True),
                 "analytic ledger, random access repriced"))
print("note the winner flips from pure unique-point storage to the hybrid")
