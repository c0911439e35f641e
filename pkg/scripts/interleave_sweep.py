"""Edge recovery of both session graphs as thread interleaving grows."""

import argparse

import numpy as np

from rignn.synth import SynthSpec, dependency_recovery, generate


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sessions", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    print("p_interleave  AIG prec  AIG rec  RIG prec  RIG rec")
    for prob in np.linspace(0.0, 1.0, 6):
        c = generate(SynthSpec(session_count=args.sessions, interleave_prob=float(prob), seed=args.seed))
        r = dependency_recovery(c.sessions, c.truth, c.topics)
        print(f"{prob:12.1f}  {r['aig']['precision']:8.3f}  {r['aig']['recall']:7.3f}  "
              f"{r['rig']['precision']:8.3f}  {r['rig']['recall']:7.3f}")


if __name__ == "__main__":
    main()
