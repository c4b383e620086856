#!/usr/bin/env python3
"""Write configs/paper-default: a 20-ad market with sampled learning data and the default experiment.

The market holds one draw of the experiment's first trial: true rates from
the actual priors, 100,000 learning calls per ad, uniform estimation prior.
Rerunning with the same seed reproduces the files byte for byte.
"""

import argparse
import json
from pathlib import Path

from adfolio.posterior import sample_rate, simulate_learning
from adfolio.simulator import PHASE_LEARNING, PHASE_RATE, ExperimentConfig, stream

ROOT = Path(__file__).resolve().parent.parent


def market_dict(cfg: ExperimentConfig, trial: int = 0) -> dict:
    ads = []
    for i, (ad, prior) in enumerate(zip(cfg.ads(), cfg.actual_priors())):
        rate = sample_rate(prior, stream(cfg.master_seed, trial, i, PHASE_RATE))
        rec = simulate_learning(rate, cfg.learning_calls, stream(cfg.master_seed, trial, i, PHASE_LEARNING))
        ads.append({
            "id": ad.id,
            "bid": ad.bid,
            "price_type": ad.price_type.value,
            "learning": {"impressions": rec.impressions, "responses": rec.responses},
            "prior": {"kind": "uniform01"},
        })
    return {"m": cfg.m, "ads": ads}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=ROOT / "configs" / "paper-default")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = ExperimentConfig(master_seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "market.json").write_text(json.dumps(market_dict(cfg), indent=2) + "\n", encoding="utf-8")
    exp = cfg.to_dict()
    # quadrature and solver settings stay at their defaults
    del exp["quadrature"], exp["solver"]
    (args.out / "experiment.json").write_text(json.dumps(exp, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {args.out}/market.json and experiment.json")


if __name__ == "__main__":
    main()
