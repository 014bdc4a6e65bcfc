"""KPM xApp end to end: data, training, the two defenses and attack sweeps.

Runs at a reduced scale so it finishes in a few minutes on a laptop CPU::

    python demos/kpm_pipeline.py --out /tmp/oransim-demo

The printed table has one row per (model, attack) and one column per epsilon.
"""

from __future__ import annotations

import argparse

from oransim import harness


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo-out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples", type=int, default=1500, help="training samples per class")
    args = ap.parse_args()

    cfg = harness.config_from_pairs({
        "out": args.out, "seed": str(args.seed), "variants": "kpm",
        "data.kpm.counts": f"{args.samples},{args.samples}",
        "attack.eps": "0,0.02,0.04,0.06,0.08,0.1", "attack.max_samples": "300",
    })
    X, y = harness.ensure_dataset(cfg, "kpm")
    print(f"dataset: {len(y)} windows of shape {X.shape[1:]}")

    harness.train_undefended(cfg, "kpm")
    harness.train_distilled(cfg, "kpm")
    harness.train_advtrained(cfg, "kpm")

    sweeps = harness.run_sweeps(cfg)
    eps = [e for e, _ in next(iter(sweeps.values()))]
    print(f"{'model':<24}" + "".join(f"{e:>7g}" for e in eps))
    for (variant, role, kind), rows in sorted(sweeps.items()):
        print(f"{role + '/' + kind:<24}" + "".join(f"{a:7.3f}" for _, a in rows))
    print(f"sweep CSVs written under {args.out}/sweep")


if __name__ == "__main__":
    main()
