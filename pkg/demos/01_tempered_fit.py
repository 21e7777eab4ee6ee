"""Fit an overfitted mixture with prior parallel tempering.

Draws Sim 2 (three groups, one of them wide), fits K=10 components on the
refined ladder and shows how the number of occupied components falls as
the Dirichlet concentration shrinks along the ladder.

    python3 demos/01_tempered_fit.py [iterations]
"""

import sys

import numpy as np

from zmix import data, model, sampler

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 6000

sim = data.builtin_sim(2, n=200, seed=0)
ds = data.generate_simulation(sim)
print("Sim 2: weights", sim.weights, "means", sim.means, "variances", sim.variances)

hyper = model.Hyperparams.from_data(ds.values, K=10)
print(f"prior: l={hyper.l:.3f} a={hyper.a} b={hyper.b:.3f} tau={hyper.tau}")

cfg = sampler.RunConfig(K=10, iterations=iterations, burn_in=iterations // 4, seed=1,
                        ladder=sampler.build_ladder("refined"))
trace = sampler.zmix_run(ds, cfg, hyper)

# alive counts per chain: crowded at large alpha, sparse at the target
print(f"\n{'alpha':>12} {'median alive':>13} {'swap rate':>10}")
rates = trace.swap_rates
for j, a in enumerate(cfg.ladder.alphas):
    r = f"{rates[j]:.3f}" if j < rates.size else ""
    print(f"{a:>12.4g} {np.median(trace.alive_counts[j]):>13.1f} {r:>10}")

dist = sampler.alive_count_distribution(trace)
print("\ntarget chain alive-count distribution:",
      {k: round(v, 3) for k, v in dist.items()})
print("modal count:", sampler.modal_alive_count(trace))
