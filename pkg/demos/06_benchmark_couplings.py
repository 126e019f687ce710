"""Desk-scale version of the coupling-efficiency benchmark.

Four arms (Gibbs vs Metropolis coupling, uniform vs local-mode start)
across a dimension sweep; records land in a CSV ready for plotting, and
a text summary prints the headline: Gibbs meeting times explode with
dimension while mode-initialized Metropolis stays at tau = 1.
"""

from spindbm.bench import (ALL_ARMS, emit_csv, format_summary,
                           run_coupling_sweep, summarize)

records = run_coupling_sweep(dims=(1, 5, 10, 25, 50), replicates=40,
                             arms=ALL_ARMS, seed=0,
                             tau_max_mh=10_000, tau_max_gibbs=20_000)
emit_csv(records, "bench_demo.csv")
print(f"wrote {len(records)} records to bench_demo.csv\n")
print(format_summary(summarize(records)))
print("\n(total = search iterations + coupling time; truncated runs count at tau_max)")
