"""Importance-weight degeneracy: Bagging members scored on the training data
against the target-loss ensemble scored relative to its own targets."""

import argparse
import json

from uqnet.baselines import bagging_degeneracy_report, train_bagging
from uqnet.config import surrogate_preset, toy_preset
from uqnet.ensemble import importance_weights
from uqnet.experiments import prepare, run_method


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--preset", choices=("surrogate", "toy"), default="surrogate")
    p.add_argument("--n", type=int, default=10000, help="dataset size")
    p.add_argument("--members", type=int, default=20)
    p.add_argument("--ensemble", action="store_true", help="also build the 20x20 target-loss ensemble")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    cfg = surrogate_preset() if args.preset == "surrogate" else toy_preset()
    cfg.seed = args.seed
    cfg.dataset.n = args.n
    prep = prepare(cfg)
    bag = train_bagging(prep.fit, prep.val, prep.arch, prep.train_config(), args.members)
    rep = bagging_degeneracy_report(bag, prep.train, prep.train_config().loss_sigma_f)
    print("bagging", json.dumps(rep.to_dict()))
    if args.ensemble:
        res = run_method(prep, prep.test.inputs[:1])
        print("target-loss ensemble", json.dumps(importance_weights(res["ensemble"], converged_only=True).to_dict()))


if __name__ == "__main__":
    main()
