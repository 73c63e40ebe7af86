"""Adam descent variants with non-increasing loss histories.

Plain Adam can transiently increase the objective, but the solvers here
promise a non-increasing history.  ``adam_minimize`` enforces it per step: a
proposed step is accepted only if it does not raise the loss, retried at half
the scale otherwise, with a momentum restart when no scale of the momentum
direction descends.  ``adam_descend_best`` lets the raw iterates run free on
a decayed schedule (better on sharp l1-style valleys) and reports the running
best instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

ACCEPT_SLACK = 1e-12
MAX_BACKTRACKS = 30


@dataclass
class AdamResult:
    x: np.ndarray
    loss: float
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)


def adam_minimize(
    loss_and_grad,
    x0: np.ndarray,
    lr: float = 0.1,
    max_iter: int = 2000,
    tol: float = 1e-6,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    project=None,
    callback=None,
    max_scale: float = 8.0,
    accept_slack: float = ACCEPT_SLACK,
    patience: int = 3,
) -> AdamResult:
    """Minimize a smooth objective with projected, monotone-safeguarded Adam.

    loss_and_grad(x) -> (loss, grad).  ``project`` (e.g. a non-negativity
    clamp) is applied to every candidate before its loss is evaluated, so the
    recorded history is the loss of the feasible iterates.  The trust scale
    multiplying the step grows (up to ``max_scale``) while steps keep being
    accepted and halves on rejection, which lets the descent cover a distant
    start quickly yet stay monotone.

    ``accept_slack`` bounds the tolerated per-step increase relative to the
    loss magnitude; raise it toward the forward evaluation's rounding noise
    (e.g. ~3e-7 for float32 models) or genuinely descending steps get
    rejected once their true improvement falls below that noise.
    Convergence requires a relative loss change below ``tol`` on ``patience``
    consecutive full-trust steps, so an emergency-backtracked micro-step
    cannot masquerade as a converged one.  Non-finite losses raise
    NumericalError carrying the iteration index.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    if project is not None:
        x = project(x)
    loss, grad = loss_and_grad(x)
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss at initialization", iteration=0)

    beta1, beta2 = betas
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    age = 0  # moment age, reset on momentum restarts
    scale = 1.0
    history = [float(loss)]
    calm = 0

    def try_step(direction, start_scale, it):
        trial = start_scale
        for _ in range(MAX_BACKTRACKS):
            candidate = x - (lr * trial) * direction
            if project is not None:
                candidate = project(candidate)
            cand_loss, cand_grad = loss_and_grad(candidate)
            if not np.isfinite(cand_loss):
                raise NumericalError("non-finite loss during descent", iteration=it)
            if cand_loss <= loss + accept_slack * max(1.0, abs(loss)):
                return candidate, float(cand_loss), cand_grad, trial
            trial *= 0.5
        return None

    for it in range(1, max_iter + 1):
        age += 1
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        mhat = m / (1.0 - beta1**age)
        vhat = v / (1.0 - beta2**age)
        direction = mhat / (np.sqrt(vhat) + eps)

        entry_scale = scale
        accepted = try_step(direction, scale, it)
        if accepted is None and age > 1:
            # The momentum direction ascends at every scale: restart moments
            # and retry along the plain (sign-normalized) gradient.
            m = (1.0 - beta1) * grad
            v = (1.0 - beta2) * grad * grad
            age = 1
            direction = grad / (np.sqrt(grad * grad) + eps)
            accepted = try_step(direction, 1.0, it)
        if accepted is None:
            # Projected-stationary: even infinitesimal gradient steps ascend
            # beyond the evaluation noise.
            history.append(float(loss))
            if callback is not None:
                callback(it, x, loss)
            return AdamResult(x, loss, it, True, history)

        candidate, cand_loss, cand_grad, used_scale = accepted
        rel_change = abs(loss - cand_loss) / max(abs(loss), 1e-30)
        x, loss, grad = candidate, cand_loss, cand_grad
        scale = min(max_scale, used_scale * 1.25)
        history.append(float(loss))
        if callback is not None:
            callback(it, x, loss)
        full_trust = used_scale >= 0.25 * entry_scale
        if rel_change < tol and full_trust:
            calm += 1
            if calm >= patience:
                return AdamResult(x, loss, it, True, history)
        else:
            calm = 0

    return AdamResult(x, loss, max_iter, False, history)


def adam_descend_best(
    loss_and_grad,
    x0: np.ndarray,
    lr: float = 0.1,
    max_iter: int = 4000,
    tol: float = 0.5,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    cosine_decay: bool = True,
) -> AdamResult:
    """Vanilla Adam on a cosine-decayed schedule, tracking the best iterate.

    Sharp l1-style valleys defeat monotone line searches (the safeguarded
    variant zigzag-crawls), while free Adam momentum rides them well at the
    cost of transient loss increases.  The raw iterates run free for the
    whole schedule and the ESTIMATE is the best iterate seen, so the
    returned history (the estimate's loss after each iteration) is
    non-increasing by construction.

    Smoothed-l1 objectives settle onto a nonzero floor, so convergence is
    judged floor-tolerantly: the run converged if the last tenth of the
    schedule shaved off no more than the fraction ``tol`` of the loss (it
    stopped making structural progress), or if the loss is essentially zero.
    """
    beta1, beta2 = betas
    x = np.array(x0, dtype=np.float64, copy=True)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_loss = np.inf
    best_x = x.copy()
    history = []

    for it in range(1, max_iter + 1):
        loss, grad = loss_and_grad(x)
        if not np.isfinite(loss):
            raise NumericalError("non-finite loss during descent", iteration=it)
        if loss < best_loss:
            best_loss = float(loss)
            best_x = x.copy()
        history.append(best_loss)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        step_lr = lr * (0.5 * (1.0 + np.cos(np.pi * it / max_iter)) if cosine_decay else 1.0)
        x = x - step_lr * (m / (1.0 - beta1**it)) / (np.sqrt(v / (1.0 - beta2**it)) + eps)

    loss, _ = loss_and_grad(x)
    if np.isfinite(loss) and loss < best_loss:
        best_loss = float(loss)
        best_x = x.copy()
        history.append(best_loss)

    tail = history[-max(3, max_iter // 10) :]
    drop_fraction = (tail[0] - tail[-1]) / max(abs(tail[0]), 1e-30)
    settled = drop_fraction <= tol or best_loss <= 1e-9 * max(history[0], 1e-30)
    return AdamResult(best_x, best_loss, max_iter, settled, history)
