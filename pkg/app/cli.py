"""
Command-line entry point.

    python -m app train    --dataset data/manifest.json --variant a --source language --target1 visual
    python -m app eval     --checkpoint runs/x/checkpoint.json --dataset data/manifest.json --export-embeddings
    python -m app ablate   --dataset data/manifest.json --jobs 4
    python -m app gradcheck
    python -m app synth    --n 500 --L 10 --dims 8,6,4 --seed 7 --output-dir data/synth
    python -m app align    --spec raw/align.json --output-dir data/aligned
    python -m app serve    --checkpoint runs/x/checkpoint.json

Options come from an optional flat JSON file (``--config``) overridden by
flags; the effective configuration is written to ``config.echo.json`` in the
output directory. Application errors exit with status 1 after a one-line
diagnostic and a JSON payload on stderr; usage errors exit with status 2.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import Field, ValidationError

from app.core.config import settings
from app.core.exceptions import (
    AppBaseException,
    ConfigException,
    GradientCheckException,
    UnknownModalityException,
)
from app.services.ablation import run_ablation, run_session
from app.services.datasets import (
    AlignSpec,
    SynthSpec,
    align_dataset,
    attach_modalities,
    load_dataset_cached,
    save_dataset,
    synth_generate,
)
from app.services.evaluation import corrupt_targets, evaluate_split, pooled_representations
from app.services.gradcheck_suite import run_gradcheck_suite
from app.services.mctn import VariantId, VariantSpec, load_bundle
from app.services.metrics import export_embeddings_2d, separability, sign_class
from app.services.trainer import TrainConfig

logger = logging.getLogger(__name__)

VARIANT_IDS = ("a", "b", "c", "d", "e", "f", "g", "h", "i")
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class RunConfig(TrainConfig):
    """Training options plus the dataset, topology and output location of one command."""
    dataset: Optional[Path] = None
    variant: VariantId = "a"
    source: Optional[str] = None
    target1: Optional[str] = None
    target2: Optional[str] = None
    level1: str = "b"
    inputs: Optional[List[str]] = None
    outputs: Optional[List[str]] = None
    output_dir: Path = Field(default_factory=lambda: settings.output_dir)

    def variant_spec(self, modalities: Sequence[str]) -> VariantSpec:
        """
        The VariantSpec of this run; unset roles default to the dataset's
        modalities in manifest order.

        Raises:
            VariantSpecException: If the roles are invalid
            UnknownModalityException: If a role is not a dataset modality
        """
        defaults = list(modalities)
        source = self.source or defaults[0]
        rest = [m for m in defaults if m != source]
        target1 = self.target1 or (rest[0] if rest else None)
        rest = [m for m in rest if m != target1]
        trimodal = self.variant in ("e", "f", "g", "h", "i")
        target2 = self.target2 or (rest[0] if trimodal and rest else None)
        for role in (source, target1, target2):
            if role is not None and role not in modalities:
                raise UnknownModalityException(
                    f"Modality '{role}' is not in the dataset",
                    details={"modality": role, "available": list(modalities)}
                )
        return VariantSpec.parse(
            id=self.variant, source=source, target1=target1, target2=target2,
            level1=self.level1, inputs=self.inputs, outputs=self.outputs,
        )


# ---------------------------------------------------------------------------
# Configuration plumbing
# ---------------------------------------------------------------------------

def _split_list(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


def read_config_file(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigException(f"Config file not found: {path}", details={"path": str(path)})
    except json.JSONDecodeError as e:
        raise ConfigException(f"Config file is not valid JSON: {str(e)}", details={"path": str(path)})
    if not isinstance(raw, dict):
        raise ConfigException("Config file must hold a flat JSON object", details={"path": str(path)})
    return raw


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge the config file with the command-line overrides (flags win).

    Raises:
        ConfigException: If the merged values fail validation
    """
    values = read_config_file(getattr(args, "config", None))
    overrides = {
        "dataset": getattr(args, "dataset", None),
        "variant": getattr(args, "variant", None),
        "source": getattr(args, "source", None),
        "target1": getattr(args, "target1", None),
        "target2": getattr(args, "target2", None),
        "level1": getattr(args, "level1", None),
        "inputs": _split_list(getattr(args, "inputs", None)),
        "outputs": _split_list(getattr(args, "outputs", None)),
        "output_dir": getattr(args, "output_dir", None),
        "seed": getattr(args, "seed", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "learning_rate": getattr(args, "learning_rate", None),
        "optimizer": getattr(args, "optimizer", None),
        "patience": getattr(args, "patience", None),
        "max_grad_norm": getattr(args, "max_grad_norm", None),
        "model_dim": getattr(args, "model_dim", None),
        "hidden_dim": getattr(args, "hidden_dim", None),
        "attention_dim": getattr(args, "attention_dim", None),
        "lambda_t": getattr(args, "lambda_t", None),
        "lambda_c": getattr(args, "lambda_c", None),
        "lambda_t1": getattr(args, "lambda_t1", None),
        "lambda_c1": getattr(args, "lambda_c1", None),
        "lambda_t2": getattr(args, "lambda_t2", None),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "no_teacher_forcing", False):
        values["teacher_forcing"] = False
    if getattr(args, "no_cycle", False):
        values["use_cycle"] = False
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigException(
            f"Invalid configuration at {'.'.join(str(p) for p in first['loc'])}: {first['msg']}",
            details={"errors": [{"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]} for err in e.errors()]}
        )


def echo_config(config: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.echo.json").write_text(config.model_dump_json(indent=2), encoding="utf-8")


def _require_dataset(config: RunConfig) -> Path:
    if config.dataset is None:
        raise ConfigException("A dataset manifest is required (--dataset or \"dataset\" in the config file)")
    return config.dataset


def _print_json(payload: Any) -> None:
    print(json.dumps(payload, indent=2))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    config = build_run_config(args)
    dataset = load_dataset_cached(_require_dataset(config))
    spec = config.variant_spec(dataset.modality_names)
    out_dir = Path(config.output_dir)
    echo_config(config, out_dir)
    result = run_session(spec, dataset, config, out_dir)
    _print_json(result.report_dict())
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    bundle = load_bundle(Path(args.checkpoint))
    manifest = Path(args.dataset)
    dataset = load_dataset_cached(manifest, bundle.input_modalities)
    bundle.check_dataset(dataset)
    # Target frames only feed the diagnostic losses.
    dataset = attach_modalities(dataset, manifest, bundle.spec.roles)
    if args.corrupt_targets:
        dataset = corrupt_targets(dataset, bundle.input_modalities, args.corrupt_targets, seed=args.seed)

    out_dir = Path(args.output_dir) if args.output_dir else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    result = evaluate_split(bundle, dataset, args.split, args.batch_size)
    report = {
        "variant": bundle.spec.id,
        "title": bundle.spec.title,
        "direction": bundle.spec.direction,
        "checkpoint": str(args.checkpoint),
        **result.to_dict(),
    }

    if args.export_embeddings:
        samples = dataset.split(args.split)
        pooled = pooled_representations(bundle, samples, args.batch_size)
        frame = export_embeddings_2d(pooled, result.labels, result.ids)
        frame.to_csv(out_dir / "embeddings.csv", index=False)
        classes = result.labels.astype(int) if bundle.task == "classification" else sign_class(result.labels)
        try:
            report["separability"] = separability(frame[["x", "y"]].to_numpy(), classes)
        except AppBaseException as e:
            logger.warning(f"Separability unavailable: {e.message}")
            report["separability"] = None
        logger.info(f"Embeddings written to {out_dir / 'embeddings.csv'}")

    (out_dir / "report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    _print_json(report)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = build_run_config(args)
    dataset = load_dataset_cached(_require_dataset(config))
    out_dir = Path(config.output_dir)
    echo_config(config, out_dir)
    outcome = run_ablation(
        dataset, config, out_dir,
        variants=_split_list(args.variants),
        sources=_split_list(args.sources),
        jobs=args.jobs,
    )
    print((out_dir / "table.txt").read_text(encoding="utf-8"), end="")
    if outcome.failed:
        print(f"{len(outcome.errors)} run(s) failed: {', '.join(sorted(outcome.errors))}", file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    threshold = args.threshold if args.threshold is not None else settings.gradcheck_threshold
    eps = args.eps if args.eps is not None else settings.gradcheck_eps
    results = run_gradcheck_suite(eps=eps, seed=args.seed, variants=_split_list(args.variants) or [])
    width = max(len(name) for name in results)
    for name, error in results.items():
        flag = "" if error < threshold else "  FAIL"
        print(f"{name:<{width}}  {error:.3e}{flag}")
    failing = {name: error for name, error in results.items() if error >= threshold}
    if failing:
        raise GradientCheckException(
            f"{len(failing)} component(s) exceed the gradient error threshold {threshold:g}",
            details={"failing": failing, "threshold": threshold}
        )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        spec = SynthSpec(
            name=args.name,
            n=args.n,
            length=args.L,
            dims=[int(d) for d in _split_list(args.dims)],
            noise=args.noise,
            seed=args.seed,
            latent_dim=args.latent_dim,
            task=args.task,
            shared_maps=args.shared_maps,
            variable_length=not args.fixed_length,
        )
    except (ValidationError, ValueError) as e:
        raise ConfigException(f"Invalid synthetic dataset spec: {str(e).splitlines()[0]}")
    dataset = synth_generate(spec)
    manifest = save_dataset(dataset, Path(args.output_dir))
    _print_json({"manifest": str(manifest), "samples": len(dataset), "readout_correlations": dataset.readout_correlations})
    return 0


def cmd_align(args: argparse.Namespace) -> int:
    spec_path = Path(args.spec)
    raw = read_config_file(spec_path)
    try:
        spec = AlignSpec.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigException(
            f"Invalid alignment spec at {'.'.join(str(p) for p in first['loc'])}: {first['msg']}",
            details={"path": str(spec_path)}
        )
    dataset = align_dataset(spec, spec_path.parent)
    manifest = save_dataset(dataset, Path(args.output_dir))
    _print_json({"manifest": str(manifest), "samples": len(dataset), "max_length": dataset.max_length})
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from app.core.models import ModelManager
    from app.main import app

    ModelManager.get_instance().load_bundle(Path(args.checkpoint) if args.checkpoint else None)
    uvicorn.run(app, host=args.host or settings.api_host, port=args.port or settings.api_port)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="Flat JSON config file; flags override its values")
    p.add_argument("--dataset", type=Path, help="Dataset manifest.json")
    p.add_argument("--output-dir", type=Path, dest="output_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--patience", type=int)
    p.add_argument("--max-grad-norm", type=float, dest="max_grad_norm")
    p.add_argument("--model-dim", type=int, dest="model_dim")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--attention-dim", type=int, dest="attention_dim")
    for name in ("t", "c", "t1", "c1", "t2"):
        p.add_argument(f"--lambda-{name}", type=float, dest=f"lambda_{name}")
    p.add_argument("--no-teacher-forcing", action="store_true", dest="no_teacher_forcing")
    p.add_argument("--no-cycle", action="store_true", dest="no_cycle", help="Drop the cycle loss of variants a and e")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mctn", description="Multimodal cyclic translation networks")
    parser.add_argument("--verbose", "-v", action="store_true", help="DEBUG logging")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Train one variant")
    _add_training_flags(train)
    train.add_argument("--variant", choices=VARIANT_IDS)
    train.add_argument("--source")
    train.add_argument("--target1")
    train.add_argument("--target2")
    train.add_argument("--level1", choices=("b", "c"), help="Level-1 mode of variant f")
    train.add_argument("--inputs", help="Comma-separated input modalities of variant h")
    train.add_argument("--outputs", help="Comma-separated output modalities of variant h")
    train.set_defaults(handler=cmd_train)

    evaluate = sub.add_parser("eval", help="Evaluate a checkpoint from source modalities only")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--dataset", type=Path, required=True)
    evaluate.add_argument("--split", choices=("train", "valid", "test"), default="test")
    evaluate.add_argument("--output-dir", type=Path, dest="output_dir")
    evaluate.add_argument("--batch-size", type=int, dest="batch_size", default=settings.batch_size)
    evaluate.add_argument("--export-embeddings", action="store_true", dest="export_embeddings")
    evaluate.add_argument("--corrupt-targets", choices=("noise", "drop"), dest="corrupt_targets")
    evaluate.add_argument("--seed", type=int, default=settings.seed)
    evaluate.set_defaults(handler=cmd_eval)

    ablate = sub.add_parser("ablate", help="Run the ablation matrix")
    _add_training_flags(ablate)
    ablate.add_argument("--jobs", type=int, default=1)
    ablate.add_argument("--variants", help="Comma-separated subset of variant ids")
    ablate.add_argument("--sources", help="Comma-separated subset of source modalities")
    ablate.set_defaults(handler=cmd_ablate)

    gradcheck = sub.add_parser("gradcheck", help="Check gradients against central differences")
    gradcheck.add_argument("--eps", type=float)
    gradcheck.add_argument("--threshold", type=float)
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--variants", default="a,e", help="Variant graphs to check (comma-separated, empty for none)")
    gradcheck.set_defaults(handler=cmd_gradcheck)

    synth = sub.add_parser("synth", help="Generate a synthetic aligned dataset")
    synth.add_argument("--name", default="synthetic")
    synth.add_argument("--n", type=int, default=500)
    synth.add_argument("--L", type=int, default=10)
    synth.add_argument("--dims", default="8,6")
    synth.add_argument("--noise", type=float, default=0.1)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--latent-dim", type=int, dest="latent_dim", default=4)
    synth.add_argument("--task", choices=("regression", "classification"), default="regression")
    synth.add_argument("--shared-maps", action="store_true", dest="shared_maps")
    synth.add_argument("--fixed-length", action="store_true", dest="fixed_length")
    synth.add_argument("--output-dir", type=Path, dest="output_dir", required=True)
    synth.set_defaults(handler=cmd_synth)

    align = sub.add_parser("align", help="Align raw streams to word intervals and write a dataset")
    align.add_argument("--spec", type=Path, required=True, help="Alignment spec JSON")
    align.add_argument("--output-dir", type=Path, dest="output_dir", required=True)
    align.set_defaults(handler=cmd_align)

    serve = sub.add_parser("serve", help="Serve a checkpoint over HTTP")
    serve.add_argument("--checkpoint", type=Path)
    serve.add_argument("--host")
    serve.add_argument("--port", type=int)
    serve.set_defaults(handler=cmd_serve)
    return parser


def setup_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.handler(args)
    except AppBaseException as e:
        print(f"error: {e.message}", file=sys.stderr)
        print(json.dumps(e.to_dict(), default=str), file=sys.stderr)
        return 1
