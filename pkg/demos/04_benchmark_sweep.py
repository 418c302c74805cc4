"""A desk-scale rendition of the performance experiments.

Three mini-sweeps: the two constructions across result sizes (their cost
ratio shrinks as the search itself starts to dominate the boundary
overhead), branching factor against tree size, and the price of integrity
mode.  Medians over a few hundred window-sampled queries per cell; wire up
bigger numbers through the CLI (`hsbt bench`) if you have the patience.
"""

import random

from hsbt.bench import BENCH_CSV_HEADER, DeploymentCache, WorkloadCell, row_to_csv, run_cell

cache = DeploymentCache(seed=42)
rng = random.Random(43)
REPS = 201

print("== constructions vs result size (n=50k, b=10) ==")
print(BENCH_CSV_HEADER)
ratios = {}
for result_size in (1, 16, 256, 4096):
    medians = {}
    for construction in (1, 2):
        row = run_cell(
            WorkloadCell(n=50_000, branching=10, result_size=result_size,
                         construction=construction, reps=REPS),
            cache, rng,
        )
        medians[construction] = row["median_micros"]
        print(row_to_csv(row))
    ratios[result_size] = medians[2] / medians[1]
print("streamed/resident ratio by result size:",
      {r: f"{v:.2f}x" for r, v in ratios.items()})

print("\n== branching factor vs tree size (streamed, result 100) ==")
print(BENCH_CSV_HEADER)
for n in (10_000, 100_000):
    for b in (10, 25, 50, 100):
        row = run_cell(
            WorkloadCell(n=n, branching=b, result_size=100, construction=2, reps=REPS),
            cache, rng,
        )
        print(row_to_csv(row))

print("\n== integrity overhead (n=100k, b=100, result 100) ==")
plain = run_cell(
    WorkloadCell(n=100_000, branching=100, result_size=100, construction=2, reps=REPS),
    cache, rng,
)
protected = run_cell(
    WorkloadCell(n=100_000, branching=100, result_size=100, construction=2, reps=REPS,
                 integrity=True),
    cache, rng,
)
print(row_to_csv(plain))
print(row_to_csv(protected))
print(f"integrity costs {protected['median_micros'] - plain['median_micros']:.0f}us "
      f"({protected['median_micros'] / plain['median_micros']:.2f}x) at this cell")
