"""Run every scheduling policy (plus the centralized and local-only references)
on one scenario and print a median table.

    python scripts/run_baselines.py --config configs/fairness.json --seeds 0-9 --out runs/baselines
"""
import argparse
from pathlib import Path

from bodyfed.config import ScenarioConfig
from bodyfed.harness import POLICIES, run_experiment

COLUMNS = ("final_macro_f1", "final_worst_location_f1", "mean_success_rate", "cum_energy_j",
           "final_disparity", "rounds_to_target")


def parse_seeds(text: str) -> list[int]:
    if "-" in text:
        lo, hi = text.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/default.json")
    ap.add_argument("--seeds", default="0-4")
    ap.add_argument("--out", default="runs/baselines")
    ap.add_argument("--policies", default=",".join(p for p in POLICIES if p != "none"))
    args = ap.parse_args()

    base = ScenarioConfig.load(args.config).to_dict()
    seeds = parse_seeds(args.seeds)
    cells = [("federated", p) for p in args.policies.split(",")]
    cells += [("centralized", "-"), ("local_only", "-")]

    print(f"{'policy':<14}" + "".join(f"{c:>26}" for c in COLUMNS))
    for mode, policy in cells:
        doc = {**base, "mode": mode}
        if policy != "-":
            doc["policy"] = policy
        cfg = ScenarioConfig.from_dict(doc)
        name = policy if mode == "federated" else mode
        summ = run_experiment(cfg, seeds, Path(args.out) / name)
        med = summ["median"]
        cells_txt = []
        for c in COLUMNS:
            v = med.get(c, "")
            cells_txt.append(f"{v:>26.6g}" if isinstance(v, float) else f"{str(v):>26}")
        print(f"{name:<14}" + "".join(cells_txt))


if __name__ == "__main__":
    main()
