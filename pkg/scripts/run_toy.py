"""Toy problem: method pdfs at x = -2, 2, 5 next to the brute-force oracle,
Bagging and local quantile regression, plus the doubled-size comparison."""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import load_frozen  # noqa: E402

from uqnet.config import toy_preset  # noqa: E402
from uqnet.ensemble import importance_weights  # noqa: E402
from uqnet.experiments import prepare, run_baselines, run_method, scaled_spec  # noqa: E402
from uqnet.pdf import wasserstein1  # noqa: E402


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-double", action="store_true", help="skip the 40/40/40/40 comparison")
    p.add_argument("--out", default="runs/toy")
    args = p.parse_args()

    cfg = toy_preset()
    cfg.seed = args.seed
    X = np.array([[-2.0], [2.0], [5.0]])
    prep = prepare(cfg)
    res = run_method(prep, X)
    base = run_baselines(prep, X)
    rep = importance_weights(res["ensemble"], converged_only=True)
    print(f"{len(res['ensemble'])} members, {res['ensemble'].converged_fraction:.0%} converged, "
          f"max |w*M - 1| = {rep.deviation_from_uniform:.2%}")
    big = run_method(prep, X, spec=scaled_spec(res["spec"], 2)) if not args.no_double else None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    oracle = load_frozen()["toy"]
    rows = []
    print(f"{'x':>5} {'mean':>8} {'std':>7} {'oracle mean':>12} {'oracle std':>11} {'bag std':>8} {'qr std':>7} {'W1/std 2x':>9}")
    for i, x in enumerate(X[:, 0]):
        pdf, o = res["pdfs"][i], oracle[repr(float(x))]
        pdf.to_csv(out / f"pdf_x{x:+g}.csv")
        base["quantile_pdfs"][i].to_csv(out / f"quantile_pdf_x{x:+g}.csv")
        row = {
            "x": float(x),
            "mean": pdf.mean(),
            "std": pdf.std(),
            "q025": pdf.quantile(0.025),
            "q975": pdf.quantile(0.975),
            "oracle_mean": o["mc_mean"],
            "oracle_std": o["mc_std"],
            "bagging_std": float(np.std(base["bagging_outputs"][i])),
            "quantile_std": base["quantile_pdfs"][i].std(),
        }
        if big is not None:
            row["w1_double_over_std"] = wasserstein1(pdf, big["pdfs"][i]) / pdf.std()
        rows.append(row)
        print(f"{x:5g} {row['mean']:8.3f} {row['std']:7.3f} {row['oracle_mean']:12.3f} {row['oracle_std']:11.3f} "
              f"{row['bagging_std']:8.4f} {row['quantile_std']:7.3f} {row.get('w1_double_over_std', float('nan')):9.2%}")
    (out / "summary.json").write_text(json.dumps({"rows": rows, "weights": rep.to_dict()}, indent=2) + "\n")


if __name__ == "__main__":
    main()
