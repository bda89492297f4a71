"""Numerical checks of the identities relating performance, parameter and distribution matching.

Every check works on the last linear layer ``W`` (F×C) of a fixed feature extractor trained with
the squared loss ``l(F, W) = ‖Y − FW‖²``, whose gradient is ``∇_W l = 2Fᵀ(FW − Y)``. Instances are
drawn in float64 from per-trial generators, so reports do not depend on ``jobs``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import torch
import torch.nn.functional as F
from typing_extensions import Literal

from distillkit.errors import ArgumentError
from distillkit.utils.helpers import digest, stream_seed
from distillkit.utils.validate import validate_choice, validate_positive

logger = logging.getLogger("distillkit.theory")

DTYPE = torch.float64
TINY = 1e-300
MAX_RESAMPLES = 100
"""Rank-deficient draws allowed per trial before giving up."""

GRAD_FACTOR = 2.0
"""Factor of the squared-loss gradient."""

DEFAULT_TOLERANCE = {1: 1e-8, 2: 1e-6, 3: 0.0}
"""Relative tolerance of each proposition's assertion."""

WeightMode = Literal["zero", "random"]


class PropDims(NamedTuple):
    """Instance dimensions."""

    features: int = 4
    """Feature dimension F."""
    classes: int = 2
    """Number of classes C."""
    real: int = 12
    """Real samples N."""
    synthetic: int = 3
    """Synthetic samples M."""

    def validate(self) -> None:
        """Check every dimension is positive."""
        for name, value in self._asdict().items():
            validate_positive(name, value)


class PropReport(NamedTuple):
    """Outcome of one proposition check."""

    proposition: int
    """Proposition number (1, 2 or 3)."""
    trials: int
    """Number of instances checked."""
    max_violation: float
    """Largest relative violation over all trials."""
    tolerance: float
    """Tolerance the violation is compared with."""
    passed: bool
    """True iff ``max_violation <= tolerance``."""
    constant: float
    """Constant of the checked relation, with the squared-loss gradient factor included."""
    digests: Tuple[str, ...] = ()
    """Digest of every checked instance."""
    resampled: int = 0
    """Rank-deficient instances that were redrawn."""
    informational: Dict[str, float] = {}
    """Measured quantities that are reported without being asserted."""

    def summary(self) -> str:
        """Human-readable one-line result.

        >>> PropReport(3, 10, 0.0, 0.0, True, 8.0).summary()
        'Proposition 3: PASS over 10 trials (max violation 0.000e+00, tolerance 0.000e+00, constant 8)'
        """
        verdict = "PASS" if self.passed else "FAIL"
        line = (
            f"Proposition {self.proposition}: {verdict} over {self.trials} trials "
            f"(max violation {self.max_violation:.3e}, tolerance {self.tolerance:.3e}, constant {self.constant:g})"
        )
        if self.resampled:
            line += f", {self.resampled} resampled"
        for key, value in sorted(self.informational.items()):
            line += f"; {key} {value:.3e}"
        return line


class _Trial(NamedTuple):
    violation: float
    digest: str
    resampled: int
    informational: Dict[str, float]


def _generator(seed: int, proposition: int, trial: int) -> torch.Generator:
    return torch.Generator().manual_seed(stream_seed(seed, f"prop{proposition}:{trial}"))


def _onehot(count: int, classes: int, generator: torch.Generator) -> torch.Tensor:
    return F.one_hot(torch.randint(classes, (count,), generator=generator), classes).to(DTYPE)


def _relative(difference: float, scale: float) -> float:
    return abs(difference) / max(abs(scale), TINY)


def squared_loss_grad(features: torch.Tensor, labels: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Gradient of ``‖Y − FW‖²`` w.r.t. W by explicit differentiation.

    >>> squared_loss_grad(torch.eye(2), torch.eye(2), torch.zeros(2, 2)).tolist()
    [[-2.0, 0.0], [0.0, -2.0]]
    """
    weights = weights.detach().clone().requires_grad_(True)
    loss = (labels - features @ weights).pow(2).sum()
    (grad,) = torch.autograd.grad(loss, weights)
    return grad


def optimal_weights(features: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Minimum-norm least-squares ``W* = F⁺Y``.

    Equals ``Fᵀ(FFᵀ)⁻¹Y`` for full row rank and ``(FᵀF)⁻¹FᵀY`` for full column rank.
    """
    return torch.linalg.pinv(features) @ labels


def prop1_trial(dims: PropDims, generator: torch.Generator) -> _Trial:
    """Check ``‖W*_S − W*_T‖² = ‖𝓜(F_t W*_S − Y_t)‖²`` with ``𝓜 = (F_tᵀF_t)⁻¹F_tᵀ`` on one instance."""
    resampled = 0
    while True:
        real = torch.randn(dims.real, dims.features, generator=generator, dtype=DTYPE)
        if int(torch.linalg.matrix_rank(real)) == dims.features:
            break
        resampled += 1
        if resampled > MAX_RESAMPLES:
            raise ArgumentError(f"could not draw full-rank real features for {dims}")
    syn = torch.randn(dims.synthetic, dims.features, generator=generator, dtype=DTYPE)
    real_labels = _onehot(dims.real, dims.classes, generator)
    syn_labels = _onehot(dims.synthetic, dims.classes, generator)

    mapping = torch.linalg.solve(real.T @ real, real.T)
    w_syn = optimal_weights(syn, syn_labels)
    w_real = mapping @ real_labels
    residual = real @ w_syn - real_labels
    param_loss = float((w_syn - w_real).pow(2).sum())
    mapped = float((mapping @ residual).pow(2).sum())
    violation = _relative(param_loss - mapped, max(param_loss, mapped))

    # zero performance residual gives zero parameter distance
    exact_labels = real @ w_syn
    exact_param = float((w_syn - mapping @ exact_labels).pow(2).sum())
    scale = float(w_syn.pow(2).sum())
    violation = max(violation, _relative(exact_param, scale))

    perf_loss = float(residual.pow(2).sum())
    operator_bound = float(torch.linalg.matrix_norm(mapping, ord=2)) ** 2 * perf_loss
    return _Trial(
        violation=violation,
        digest=digest(real, syn, real_labels, syn_labels),
        resampled=resampled,
        informational={"operator_bound_slack": operator_bound - param_loss},
    )


def _class_batches(
    count: int, classes: int, generator: torch.Generator, features: int
) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    per_class = max(1, count // classes)
    batches = []
    for class_id in range(classes):
        samples = torch.randn(per_class, features, generator=generator, dtype=DTYPE)
        labels = F.one_hot(torch.full((per_class,), class_id), classes).to(DTYPE)
        batches.append((samples, labels))
    return batches


def prop2_trial(dims: PropDims, generator: torch.Generator, weights: WeightMode = "zero") -> _Trial:
    """Compare per-class last-layer gradient matching with first-moment matching on one instance.

    At ``W = 0`` every prediction is 0, so the class-c gradient is ``−2 e_c μ_c`` and
    ``Σ_c ‖G_s,c − G_t,c‖² = 4 Σ_c ‖μ_s,c − μ_t,c‖²`` exactly.
    """
    real = _class_batches(dims.real, dims.classes, generator, dims.features)
    syn = _class_batches(dims.synthetic, dims.classes, generator, dims.features)
    if weights == "zero":
        w = torch.zeros(dims.features, dims.classes, dtype=DTYPE)
    else:
        w = torch.randn(dims.features, dims.classes, generator=generator, dtype=DTYPE)
    grad_gap = 0.0
    moment_gap = 0.0
    for (syn_x, syn_y), (real_x, real_y) in zip(syn, real):
        syn_grad = squared_loss_grad(syn_x, syn_y, w) / syn_x.shape[0]
        real_grad = squared_loss_grad(real_x, real_y, w) / real_x.shape[0]
        grad_gap += float((syn_grad - real_grad).pow(2).sum())
        moment_gap += float((syn_x.mean(dim=0) - real_x.mean(dim=0)).pow(2).sum())
    expected = GRAD_FACTOR ** 2 * moment_gap
    violation = _relative(grad_gap - expected, max(grad_gap, expected))
    tensors = [tensor for batch in real + syn for tensor in batch]
    return _Trial(violation, digest(w, *tensors), 0, {})


def prop3_trial(dims: PropDims, generator: torch.Generator, weights: WeightMode = "random") -> _Trial:
    """Check the second-moment upper bound of gradient matching on one instance.

    With ``A = F_sᵀF_s/M − F_tᵀF_t/N`` and ``B = F_sᵀY_s/M − F_tᵀY_t/N`` the gradient gap is
    ``4‖AW − B‖²`` and is bounded by ``8(‖A‖²‖W‖² + ‖B‖²)``. The form without the factor 2 of
    ``(a + b)² ≤ 2(a² + b²)`` is counted, not asserted.
    """
    real = torch.randn(dims.real, dims.features, generator=generator, dtype=DTYPE)
    syn = torch.randn(dims.synthetic, dims.features, generator=generator, dtype=DTYPE)
    real_labels = _onehot(dims.real, dims.classes, generator)
    syn_labels = _onehot(dims.synthetic, dims.classes, generator)
    if weights == "zero":
        w = torch.zeros(dims.features, dims.classes, dtype=DTYPE)
    else:
        w = torch.randn(dims.features, dims.classes, generator=generator, dtype=DTYPE)
    lhs, rhs = gradient_gap_bound(syn, syn_labels, real, real_labels, w)
    violation = max(0.0, lhs - rhs) / max(rhs, TINY)
    tight_form = 1.0 if lhs > rhs / 2.0 else 0.0
    return _Trial(violation, digest(real, syn, real_labels, syn_labels, w), 0, {"tight_form_violations": tight_form})


def gradient_gap_bound(
    syn: torch.Tensor, syn_labels: torch.Tensor, real: torch.Tensor, real_labels: torch.Tensor, w: torch.Tensor
) -> Tuple[float, float]:
    """(gradient gap, second-moment bound) of one explicit instance.

    >>> x = torch.eye(2, dtype=torch.float64)
    >>> gradient_gap_bound(x, x, x, x, torch.ones(2, 2, dtype=torch.float64))
    (0.0, 0.0)
    """
    lhs = float(
        (squared_loss_grad(syn, syn_labels, w) / syn.shape[0] - squared_loss_grad(real, real_labels, w) / real.shape[0])
        .pow(2)
        .sum()
    )
    second = syn.T @ syn / syn.shape[0] - real.T @ real / real.shape[0]
    first = syn.T @ syn_labels / syn.shape[0] - real.T @ real_labels / real.shape[0]
    rhs = 2.0 * GRAD_FACTOR ** 2 * (float(second.pow(2).sum()) * float(w.pow(2).sum()) + float(first.pow(2).sum()))
    return lhs, rhs


def _run(
    proposition: int,
    trial_fn: Callable[[torch.Generator], _Trial],
    trials: int,
    tol: float,
    constant: float,
    seed: int,
    jobs: int,
) -> PropReport:
    validate_positive("trials", trials)
    validate_positive("jobs", jobs)

    def one(index: int) -> _Trial:
        return trial_fn(_generator(seed, proposition, index))

    if jobs == 1:
        results = [one(index) for index in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(one, range(trials)))
    max_violation = max(result.violation for result in results)
    informational: Dict[str, float] = {}
    for result in results:
        for key, value in result.informational.items():
            if key.endswith("_violations"):
                informational[key] = informational.get(key, 0.0) + value
            else:
                informational[key] = min(informational.get(key, math.inf), value)
    report = PropReport(
        proposition=proposition,
        trials=trials,
        max_violation=max_violation,
        tolerance=tol,
        passed=max_violation <= tol,
        constant=constant,
        digests=tuple(result.digest for result in results),
        resampled=sum(result.resampled for result in results),
        informational=informational,
    )
    logger.info(report.summary())
    return report


def verify_prop1(
    dims: PropDims = PropDims(), trials: int = 1000, tol: Optional[float] = None, seed: int = 0, jobs: int = 1
) -> PropReport:
    """Performance matching of the linear head equals optimal parameter matching through 𝓜.

    Asserts the residual-form identity on every trial and that a zero performance residual gives a
    zero parameter distance. The operator-norm bound ``‖𝓜‖₂² · L_perf ≥ L_param`` is reported as
    its smallest slack.
    """
    dims.validate()
    if dims.real < dims.features:
        raise ArgumentError(f"need N >= F for a full-rank 𝓜, got N={dims.real}, F={dims.features}")
    return _run(
        1, lambda gen: prop1_trial(dims, gen), trials, DEFAULT_TOLERANCE[1] if tol is None else tol, 1.0, seed, jobs
    )


def verify_prop2(
    dims: PropDims = PropDims(),
    trials: int = 1000,
    tol: Optional[float] = None,
    seed: int = 0,
    jobs: int = 1,
    weights: WeightMode = "zero",
) -> PropReport:
    """Per-class gradient matching equals 4× first-moment matching at ``W = 0``.

    With ``weights="random"`` the relative gap is measured and reported with an infinite
    tolerance, so the report always passes.
    """
    dims.validate()
    validate_choice("weights", weights, ("zero", "random"))
    if weights == "random":
        tol = math.inf
    elif tol is None:
        tol = DEFAULT_TOLERANCE[2]
    return _run(2, lambda gen: prop2_trial(dims, gen, weights), trials, tol, GRAD_FACTOR ** 2, seed, jobs)


def verify_prop3(
    dims: PropDims = PropDims(features=8, classes=3),
    trials: int = 1000,
    tol: Optional[float] = None,
    seed: int = 0,
    jobs: int = 1,
    weights: WeightMode = "random",
) -> PropReport:
    """Second-moment matching bounds gradient matching from above on every trial."""
    dims.validate()
    validate_choice("weights", weights, ("zero", "random"))
    return _run(
        3,
        lambda gen: prop3_trial(dims, gen, weights),
        trials,
        DEFAULT_TOLERANCE[3] if tol is None else tol,
        2.0 * GRAD_FACTOR ** 2,
        seed,
        jobs,
    )


VERIFIERS = {1: verify_prop1, 2: verify_prop2, 3: verify_prop3}
