import logging
from typing import List, Tuple

import pandas as pd

from .adapter import AdapterLayer, GateState
from .config_schema import FouraConfig
from .foura_response import GradcheckResponse
from .foura_schema import Axis, GateMode, TransformKind
from .prng import Xoshiro256StarStar, derive_seed
from .trainer import grad_check

logger = logging.getLogger(__name__)

TOLERANCE = 1e-5
EPS = 1e-5
K1, K2, TOKENS, RANK = 6, 5, 4, 2
SCALE = 0.5


def combinations() -> List[Tuple[str, TransformKind, Axis]]:
    """LoRA plus every gated transform on both axes, soft gates."""
    combos = [('lora', TransformKind.none, Axis.embedding)]
    for transform in (TransformKind.identity, TransformKind.dft, TransformKind.dct):
        for axis in (Axis.embedding, Axis.token):
            combos.append((f"{transform.value}-{axis.value}-soft", transform, axis))
    return combos


def probe_layer(transform: TransformKind, axis: Axis, rng: Xoshiro256StarStar) -> AdapterLayer:
    # b is random (not zero as at initialization) so every factor carries gradient
    gate = None
    if transform != TransformKind.none:
        gate = GateState(g1=rng.normal((RANK, RANK), SCALE), g2=rng.normal((RANK, RANK), SCALE),
                         b1=rng.normal((RANK,), SCALE), b2=rng.normal((RANK,), SCALE), mode=GateMode.soft)
    return AdapterLayer(w0=rng.normal((K1, K2), SCALE), a=rng.normal((RANK, K1), SCALE),
                        b=rng.normal((K2, RANK), SCALE), alpha=1.0, transform=transform, axis=axis, gate=gate)


def check_gradients(config: FouraConfig,
                    seed: int = None,
                    corrupt: bool = False,
                    api_response: GradcheckResponse = None) -> GradcheckResponse:
    """
    Run the finite-difference check on every combination.

    Parameters:
        -seed: int
            -seed for the probe layers and inputs (defaults to train.seed)
        -corrupt: bool
            -perturb the matmul adjoint so the check must fail
    """
    seed = config.train.seed if seed is None else seed
    response = api_response if api_response is not None else GradcheckResponse(config=config)

    rows = []
    for ix, (label, transform, axis) in enumerate(combinations()):
        rng = Xoshiro256StarStar(derive_seed(seed, ix))
        layer = probe_layer(transform, axis, rng)
        z = rng.normal((TOKENS, K1))
        err = grad_check(layer, z, eps=EPS, corrupt=corrupt)
        rows.append({'combination': label, 'max_rel_err': err, 'passed': bool(err < TOLERANCE)})
        logger.info(f"{label}: max relative error {err:.3g}")

    df = pd.DataFrame(rows, columns=['combination', 'max_rel_err', 'passed'])
    response.update_data(results=df)
    if not response.passed:
        worst = df.loc[df['max_rel_err'].idxmax()]
        logger.error(f"Gradient check failed; worst combination {worst['combination']} "
                     f"(max relative error {worst['max_rel_err']:.3g})")
    if response.auto_save:
        response.save()
    return response
