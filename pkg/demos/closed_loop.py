"""Closed-loop jamming scenario with and without an SDL attacker.

Uses the KPM models from ``kpm_pipeline.py`` (run that first with the same
``--out``). KPM windows sit far apart in feature space, so an epsilon=0.1
attacker barely moves this loop. ``--variant spec`` uses spectrogram models
trained with ``oransim train/distill --set variants=spec``, where the attack
collapses jam-phase throughput. The RAN, RIC and xApp run on a virtual clock, so the run is
deterministic; pass ``--live`` to use a loopback socket and wall time instead::

    python demos/closed_loop.py --out /tmp/oransim-demo --seeds 3
"""

from __future__ import annotations

import argparse

from oransim import harness


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo-out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--variant", choices=("kpm", "spec"), default="kpm")
    ap.add_argument("--live", action="store_true")
    args = ap.parse_args()

    cfg = harness.config_from_pairs({
        "out": args.out, "seed": str(args.seed), "variants": args.variant, "loop.variant": args.variant,
        "loop.seeds": str(args.seeds), "mode": "live" if args.live else "det",
        "loop.conditions": ("no_attack,attack,defended,advtrained" if args.variant == "kpm"
                            else "no_attack,attack,defended"),
    })
    rep = harness.run_closed_loop(cfg)
    print(f"{'condition':<12}{'tput jam':>10}{'bler jam':>10}{'decision acc':>14}")
    for cond, s in rep.summary.items():
        print(f"{cond:<12}{s['jam.throughput_mean']:10.3f}{s['jam.bler_mean']:10.3f}"
              f"{s['decision_accuracy']:14.3f}")
    ref = rep.pooled("no_attack", "throughput_mbps")
    for cond in rep.traces:
        if cond != "no_attack":
            ks = harness.ks_distance(rep.pooled(cond, "throughput_mbps"), ref)
            print(f"KS distance {cond} vs no_attack (jam-phase throughput): {ks:.3f}")
    for path, t in rep.timing.items():
        print(f"timing {path}: {t.row()}")
    print(f"traces and CDFs written under {args.out}/loop/{args.variant}")


if __name__ == "__main__":
    main()
