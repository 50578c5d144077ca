"""
Gradient-check suite: every autodiff primitive plus the full training graphs of
variants (a) and (e) at tiny dimensions.
"""
import logging
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from app.core import autodiff as ad
from app.core.autodiff import Tensor
from app.core.gradcheck import grad_check
from app.services.datasets import Batch, SynthSpec, synth_generate
from app.services.losses import LossWeights, coupled_objective_tensor, prediction_loss
from app.services.mctn import ModelConfig, VariantSpec, build_variant

logger = logging.getLogger(__name__)

Case = Tuple[Callable[[Sequence[Tensor]], Tensor], List[Tensor]]


def primitive_cases(seed: int = 0) -> Dict[str, Case]:
    """One small scalar-valued function per primitive, with its parameters."""
    rng = np.random.default_rng(seed)

    def p(*shape: int) -> Tensor:
        return Tensor.parameter(rng.normal(size=shape))

    def reducer() -> Callable[[Tensor], Tensor]:
        w_rng = np.random.default_rng(rng.integers(1 << 31))
        cache: Dict[Tuple[int, ...], Tensor] = {}

        def reduce(out: Tensor) -> Tensor:
            if out.shape not in cache:
                cache[out.shape] = Tensor(w_rng.normal(size=out.shape))
            return ad.sum_(ad.mul(out, cache[out.shape]))
        return reduce

    cases: Dict[str, Case] = {}

    def unary(name: str, fn: Callable[[Tensor], Tensor], *shape: int) -> None:
        r = reducer()
        cases[name] = (lambda ps, fn=fn, r=r: r(fn(ps[0])), [p(*shape)])

    def binary(name: str, fn: Callable[[Tensor, Tensor], Tensor], shape_a, shape_b) -> None:
        r = reducer()
        cases[name] = (lambda ps, fn=fn, r=r: r(fn(ps[0], ps[1])), [p(*shape_a), p(*shape_b)])

    binary("matmul", ad.matmul, (3, 4), (4, 2))
    binary("add", ad.add, (3, 4), (4,))
    binary("sub", ad.sub, (3, 4), (3, 4))
    binary("mul", ad.mul, (3, 4), (3, 4))
    unary("scale", lambda a: ad.scale(a, 0.7), 3, 4)
    unary("tanh", ad.tanh, 3, 4)
    unary("sigmoid", ad.sigmoid, 3, 4)
    unary("softmax", lambda a: ad.softmax(a, axis=-1), 3, 4)
    binary("concat", lambda a, b: ad.concat([a, b], axis=-1), (3, 2), (3, 4))
    binary("stack", lambda a, b: ad.stack([a, b], axis=1), (3, 4), (3, 4))
    unary("slice", lambda a: ad.slice_(a, (slice(None), 1)), 3, 4, 2)
    unary("reshape", lambda a: ad.reshape(a, (4, 3)), 3, 4)
    unary("expand", lambda a: ad.expand(a, 1, 3), 3, 4)
    mask = rng.random((3, 4)) < 0.5
    binary("where", lambda a, b: ad.where(mask, a, b), (3, 4), (3, 4))
    cases["sum"] = (lambda ps: ad.sum_(ad.tanh(ps[0])), [p(3, 4)])
    cases["mean"] = (lambda ps: ad.mean(ad.tanh(ps[0])), [p(3, 4)])
    target = Tensor(rng.normal(size=(3, 4)))
    frame_mask = np.ones((3, 4), dtype=bool)
    frame_mask[2] = False
    cases["mse"] = (lambda ps: ad.mse(ps[0], target, frame_mask), [p(3, 4)])
    cases["mae"] = (lambda ps: ad.mae(ps[0], target), [p(3, 4)])
    labels = np.eye(4)[rng.integers(0, 4, size=3)]
    cases["cross_entropy"] = (lambda ps: ad.cross_entropy(ad.softmax(ps[0], axis=-1), labels), [p(3, 4)])
    return cases


def variant_case(variant: str, seed: int = 0) -> Case:
    """
    The coupled objective of a freshly built bundle on two tiny synthetic
    samples, as a function of all bundle parameters.
    """
    trimodal = variant in ("e", "f", "g", "h", "i")
    data = synth_generate(SynthSpec(
        name="gradcheck", n=4, length=3, dims=[3, 2, 2] if trimodal else [3, 2],
        seed=seed, latent_dim=2, check_samples=2,
    ))
    names = data.modality_names
    spec = VariantSpec(id=variant, source=names[0], target1=names[1], target2=names[2] if trimodal else None)
    config = ModelConfig(model_dim=2, hidden_dim=3, attention_dim=2, seed=seed, init_scale=0.5)
    bundle = build_variant(spec, data.dims(), config)
    batch = Batch.from_samples(data.samples[:2], spec.roles)
    plan = bundle.loss_plan()
    weights = LossWeights(lambda_t=1.0, lambda_c=1.0, lambda_t1=1.0, lambda_c1=1.0, lambda_t2=1.0)

    def objective(_: Sequence[Tensor]) -> Tensor:
        result = bundle.forward(batch, teacher_forcing=True, use_cycle=True)
        parts = dict(result.losses)
        parts["l_p"] = prediction_loss(result.prediction, batch.labels, bundle.task)
        return coupled_objective_tensor(parts, weights, bundle.arity, plan)

    return objective, bundle.parameters()


def run_gradcheck_suite(eps: float = 1e-4, seed: int = 0, variants: Sequence[str] = ("a", "e")) -> Dict[str, float]:
    """Max relative gradient error per primitive and per variant graph."""
    results: Dict[str, float] = {}
    for name, (fn, params) in primitive_cases(seed).items():
        results[name] = grad_check(fn, params, eps)
    for variant in variants:
        fn, params = variant_case(variant, seed)
        count = sum(p.size for p in params)
        results[f"variant_{variant}"] = grad_check(fn, params, eps)
        logger.info(f"Variant ({variant}) graph: {count} parameters, max relative error {results[f'variant_{variant}']:.3e}")
    return results
