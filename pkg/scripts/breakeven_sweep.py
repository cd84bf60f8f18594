"""FL vs raw-streaming energy across horizons and compression schemes.

Analytic numbers only; for measured link statistics use `bodyfed breakeven --run-dir`.
"""
import argparse

from bodyfed.config import ScenarioConfig
from bodyfed.energy import crossing_horizon, fl_energy, stream_energy
from bodyfed.harness import analytic_breakeven_spec

SCHEMES = (("dense_fp32", 32), ("quantize_q", 16), ("quantize_q", 8), ("quantize_q", 4),
           ("top_k", 32), ("sign", 1))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/default.json")
    ap.add_argument("--horizons", default="60,600,3600,86400")
    args = ap.parse_args()
    base = ScenarioConfig.load(args.config)
    horizons = [float(h) for h in args.horizons.split(",")]

    print(f"{'scheme':<14}{'E_FL [J]':>12}{'T* [s]':>12}"
          + "".join(f"{f'ratio@{h:g}s':>16}" for h in horizons))
    for scheme, q in SCHEMES:
        doc = base.to_dict()
        doc["learning"].update(scheme=scheme, q=q if scheme == "quantize_q" else 8)
        spec = analytic_breakeven_spec(ScenarioConfig.from_dict(doc))
        e_fl = fl_energy(spec)
        label = f"{scheme}/{q}" if scheme == "quantize_q" else scheme
        ratios = "".join(f"{e_fl / stream_energy(spec, h):>16.4g}" for h in horizons)
        print(f"{label:<14}{e_fl:>12.3e}{crossing_horizon(spec):>12.2f}{ratios}")


if __name__ == "__main__":
    main()
