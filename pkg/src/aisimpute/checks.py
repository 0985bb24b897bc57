"""End-to-end finite-difference check of the full model loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CONTINUOUS, CYCLICAL, DISCRETE, Attr
from .corruption import MaskConfig, apply_masks
from .ingest import compute_norm_stats
from .model import TERMS, Batch, LossWeights, Model, ModelConfig, loss_terms, make_batch
from .numeric import ops
from .numeric.gradcheck import GradCheckResult, grad_check
from .synthetic import synthetic_fleet

# one guaranteed target per term group: (step, attributes)
_FORCED = ((3, (Attr.LON, Attr.LAT, Attr.TIME)), (2, CYCLICAL + (Attr.SPEED,)),
           (4, CONTINUOUS), (5, DISCRETE))


@dataclass
class EndToEndCheck:
    result: GradCheckResult
    terms: dict[str, float]
    n_params: int

    @property
    def max_rel_error(self) -> float:
        return self.result.max_rel_error


def gradcheck_batch(seed: int = 0, T: int = 8, n_seqs: int = 2) -> tuple[Batch, object]:
    """A small synthetic batch in which every loss term has targets."""
    seqs = synthetic_fleet(n_seqs, T, seed)
    stats = compute_norm_stats(seqs)
    out = []
    for s in apply_masks_all(seqs, seed):
        tgt = s.target_mask.copy()
        tgt[:, [Attr.LON, Attr.LAT]] = False  # keep coordinate anchors visible
        for t, attrs in _FORCED:
            for a in attrs:
                tgt[min(t, s.T - 1), a] = True
        out.append(s.with_targets(tgt & s.obs_mask))
    return make_batch(out), stats


def apply_masks_all(seqs, seed: int):
    return [apply_masks(s, MaskConfig(0.3, seed)) for s in seqs]


def end_to_end_gradcheck(seed: int = 0, n_coords: int = 200, eps: float = 1e-4,
                         config: ModelConfig | None = None) -> EndToEndCheck:
    """Max relative error between tape and central-difference gradients of the total loss."""
    batch, stats = gradcheck_batch(seed)
    cfg = config or ModelConfig(seed=seed, reservoir_seed=seed)
    model = Model(cfg, stats)
    weights = LossWeights()

    def f(p):
        # weighted terms as a vector: their sum is total_loss
        terms = loss_terms(model.forward(p, batch), batch, stats)
        return ops.stack([terms[k] * getattr(weights, k) for k in TERMS])

    terms = {k: float(v.data) for k, v in loss_terms(model.forward(model.params, batch), batch, stats).items()}
    res = grad_check(f, model.params, eps=eps, n_coords=n_coords, seed=seed)
    return EndToEndCheck(res, terms, sum(v.size for v in model.params.values()))
