"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from skillseg.diffcore.tensor import Tensor, backward


def grad_check(build, inputs: dict[str, np.ndarray], step: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None,
               rel_floor: float = 1e-3, extra_steps: tuple = ()) -> float:
    """Compare reverse-mode gradients against central differences.

    ``build`` maps a dict of leaf Tensors (one per entry of ``inputs``) to a
    scalar Tensor and must be deterministic: any noise it uses has to be
    frozen inside the closure. Checks every coordinate, or ``max_coords``
    uniformly sampled ones per input. Returns the worst relative error
    |ad - fd| / max(|ad|, |fd|, rel_floor).

    ``extra_steps`` adds alternative stencil widths; a coordinate scores its
    best stencil. On deep graphs one width cannot serve every coordinate
    (roundoff noise wants a wider stencil, curvature a narrower one); a wrong
    gradient still fails at every width.
    """
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}

    def evaluate(arrs) -> float:
        out = build({k: Tensor(v.copy()) for k, v in arrs.items()})
        if out.data.shape != ():
            raise ValueError("grad_check needs a scalar-output graph")
        return float(out.data)

    leaves = {k: Tensor(v.copy()) for k, v in arrays.items()}
    out = build(leaves)
    if out.data.shape != ():
        raise ValueError("grad_check needs a scalar-output graph")
    backward(out)

    worst = 0.0
    for name, arr in arrays.items():
        flat_grad = (leaves[name].grad if leaves[name].grad is not None
                     else np.zeros_like(arr)).ravel()
        n = arr.size
        if max_coords is not None and n > max_coords:
            idxs = rng.choice(n, size=max_coords, replace=False)
        else:
            idxs = range(n)
        for i in idxs:
            ad = flat_grad[i]
            best = None
            for h in (step, *extra_steps):
                perturbed = {k: v for k, v in arrays.items()}
                plus = arr.copy().ravel()
                plus[i] += h
                perturbed[name] = plus.reshape(arr.shape)
                f_plus = evaluate(perturbed)
                minus = arr.copy().ravel()
                minus[i] -= h
                perturbed[name] = minus.reshape(arr.shape)
                f_minus = evaluate(perturbed)
                fd = (f_plus - f_minus) / (2.0 * h)
                rel = abs(ad - fd) / max(abs(ad), abs(fd), rel_floor)
                best = rel if best is None else min(best, rel)
            worst = max(worst, best)
    return worst
