#!/usr/bin/env python3
"""
Directional replication runs on synthetic data.

    cycle        variant (a) against variant (b), bimodal 8/6-dim task
    modalities   variant (e) against the best bimodal variant (a) direction
    separability 2-D embedding separation of trained (e) against untrained (e)

Each experiment averages over several seeds and writes its per-seed numbers
and the verdict to <output-dir>/experiments.json.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from statistics import mean


def check_environment():
    """Check that the required packages are importable."""
    in_venv = hasattr(sys, 'real_prefix') or (
        hasattr(sys, 'base_prefix') and sys.base_prefix != sys.prefix
    )
    if not in_venv:
        print("WARNING: no virtual environment is active; using the system interpreter")

    missing_packages = []
    for module, package in (("numpy", "numpy"), ("scipy", "scipy"), ("sklearn", "scikit-learn"),
                            ("pandas", "pandas"), ("pydantic_settings", "pydantic-settings"), ("tqdm", "tqdm")):
        try:
            __import__(module)
        except ImportError:
            missing_packages.append(package)

    if missing_packages:
        print(f"ERROR: Missing required packages: {', '.join(missing_packages)}")
        print("\nPlease install dependencies:")
        print("  pip install -r requirements.txt")
        sys.exit(1)

    print("Environment check passed")


# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from tqdm import tqdm  # noqa: E402

from app.services.ablation import run_session, session_config  # noqa: E402
from app.services.datasets import MultimodalDataset, SynthSpec, synth_generate  # noqa: E402
from app.services.evaluation import pooled_representations  # noqa: E402
from app.services.mctn import VariantSpec, build_variant, load_bundle  # noqa: E402
from app.services.metrics import export_embeddings_2d, separability, sign_class  # noqa: E402
from app.services.trainer import TrainConfig  # noqa: E402

logger = logging.getLogger("experiments")

MARGIN = 0.02


def label_range(dataset: MultimodalDataset) -> float:
    labels = [s.label for s in dataset.samples]
    return max(labels) - min(labels)


def heldout_mae(spec: VariantSpec, dataset: MultimodalDataset, config: TrainConfig, run_dir: Path) -> float:
    return run_session(spec, dataset, config, run_dir).reports["test"].report.mae


def cycle_experiment(args, config: TrainConfig, out_dir: Path) -> dict:
    """Cyclic translation (a) should not trail one-way translation (b)."""
    rows = []
    for seed in tqdm(args.seeds, desc="cycle"):
        data = synth_generate(SynthSpec(name="cycle", n=args.n, length=args.L, dims=[8, 6], seed=seed))
        seeded = config.model_copy(update={"seed": seed})
        row = {"seed": seed, "range": label_range(data)}
        for variant in ("a", "b"):
            spec = VariantSpec(id=variant, source="language", target1="visual")
            row[variant] = heldout_mae(spec, data, seeded, out_dir / f"seed{seed}" / spec.slug())
        rows.append(row)
        logger.info(f"cycle seed {seed}: MAE a={row['a']:.4f} b={row['b']:.4f}")

    mae_a, mae_b = mean(r["a"] for r in rows), mean(r["b"] for r in rows)
    allowance = MARGIN * mean(r["range"] for r in rows)
    return {"runs": rows, "mean_mae_a": mae_a, "mean_mae_b": mae_b, "allowance": allowance,
            "passed": mae_a <= mae_b + allowance}


def modalities_experiment(args, config: TrainConfig, out_dir: Path) -> dict:
    """The trimodal hierarchy (e) should match or beat the best bimodal (a)."""
    rows = []
    for seed in tqdm(args.seeds, desc="modalities"):
        data = synth_generate(SynthSpec(name="modalities", n=args.n, length=args.L, dims=[8, 6, 4], seed=seed))
        seeded = config.model_copy(update={"seed": seed})
        run_dir = out_dir / f"seed{seed}"
        row = {"seed": seed, "range": label_range(data)}
        e = VariantSpec(id="e", source="language", target1="visual", target2="acoustic")
        row["e"] = heldout_mae(e, data, seeded, run_dir / e.slug())
        for target in ("visual", "acoustic"):
            a = VariantSpec(id="a", source="language", target1=target)
            row[a.slug()] = heldout_mae(a, data, seeded, run_dir / a.slug())
        rows.append(row)

    bimodal = {k: mean(r[k] for r in rows) for k in rows[0] if k.startswith("a_")}
    best_key = min(bimodal, key=bimodal.get)
    mae_e = mean(r["e"] for r in rows)
    allowance = MARGIN * mean(r["range"] for r in rows)
    return {"runs": rows, "mean_mae_e": mae_e, "best_bimodal": best_key, "best_bimodal_mae": bimodal[best_key],
            "allowance": allowance, "passed": mae_e <= bimodal[best_key] + allowance}


def _separation(bundle, data: MultimodalDataset, batch_size: int) -> float:
    samples = data.split("test")
    labels = [s.label for s in samples]
    frame = export_embeddings_2d(pooled_representations(bundle, samples, batch_size), labels)
    return separability(frame[["x", "y"]].to_numpy(), sign_class(labels))


def separability_experiment(args, config: TrainConfig, out_dir: Path) -> dict:
    """Trained (e) embeddings should separate the sign classes better than random ones."""
    rows = []
    for seed in tqdm(args.seeds, desc="separability"):
        data = synth_generate(SynthSpec(name="separability", n=args.n, length=args.L, dims=[8, 6, 4], seed=seed))
        seeded = session_config(config.model_copy(update={"seed": seed}), data)
        spec = VariantSpec(id="e", source="language", target1="visual", target2="acoustic")
        untrained = build_variant(spec, data.dims(), seeded)
        trained = run_session(spec, data, seeded, out_dir / f"seed{seed}" / spec.slug())
        row = {
            "seed": seed,
            "untrained": _separation(untrained, data, seeded.batch_size),
            "trained": _separation(load_bundle(trained.checkpoint), data, seeded.batch_size),
        }
        rows.append(row)
        logger.info(f"separability seed {seed}: trained={row['trained']:.3f} untrained={row['untrained']:.3f}")

    trained_mean, untrained_mean = mean(r["trained"] for r in rows), mean(r["untrained"] for r in rows)
    return {"runs": rows, "mean_trained": trained_mean, "mean_untrained": untrained_mean,
            "passed": trained_mean > untrained_mean}


EXPERIMENTS = {
    "cycle": cycle_experiment,
    "modalities": modalities_experiment,
    "separability": separability_experiment,
}


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--experiments", default=",".join(EXPERIMENTS), help="Comma-separated subset to run")
    parser.add_argument("--seeds", default="0,1,2,3,4", help="Comma-separated seeds")
    parser.add_argument("--n", type=int, default=500)
    parser.add_argument("--L", type=int, default=10)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--output-dir", type=Path, dest="output_dir", default=Path("runs/experiments"))
    args = parser.parse_args(argv)
    args.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    return args


def main(argv=None):
    check_environment()
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    config = TrainConfig(epochs=args.epochs, batch_size=32, model_dim=16, hidden_dim=16, attention_dim=16,
                         learning_rate=1e-3, patience=10)
    results = {}
    for name in [e.strip() for e in args.experiments.split(",") if e.strip()]:
        if name not in EXPERIMENTS:
            print(f"ERROR: unknown experiment '{name}' (choose from {', '.join(EXPERIMENTS)})")
            return 2
        results[name] = EXPERIMENTS[name](args, config, args.output_dir / name)
        print(f"{name:<13} {'PASS' if results[name]['passed'] else 'FAIL'}")

    args.output_dir.mkdir(parents=True, exist_ok=True)
    (args.output_dir / "experiments.json").write_text(json.dumps(results, indent=2), encoding="utf-8")
    print(f"\nResults written to {args.output_dir / 'experiments.json'}")
    return 0 if all(r["passed"] for r in results.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
