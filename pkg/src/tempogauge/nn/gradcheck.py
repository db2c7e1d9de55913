"""Central finite-difference checks for the hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .functional import softmax_cce
from .layers import Activation, AvgPoolTime, BatchNorm, BRNN, Dense, Dropout, Flatten, Sequential


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self):
        for name, err in self.errors.items():
            yield f"{name:<24s} {err:.3e} {'ok' if err < self.tolerance else 'FAIL'}"
        for name in self.skipped:
            yield f"{name:<24s} skipped"


def relative_error(a, b) -> float:
    """``||a - b|| / (||a|| + ||b||)``, zero when both vanish."""
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)


def grad_check(fragment, x, tolerance=1e-4, targets=None, step=1e-5, rng=None,
               training=True, max_entries=None) -> GradCheckReport:
    """Compare analytic gradients of ``fragment`` with central differences.

    ``fragment`` is a :class:`Layer` or :class:`Sequential` holding float64
    parameters. The scalar being differentiated is ``sum(out * w)`` for a
    fixed random ``w``, or the softmax cross-entropy against ``targets``
    when given. Stochastic layers (dropout with p > 0) cannot be checked
    and are bypassed, then listed in ``skipped``.

    ``max_entries`` limits how many coordinates per block are perturbed
    (sampled without replacement); None checks all of them.
    """
    rng = rng or np.random.default_rng(0)
    x = np.asarray(x, dtype=np.float64)
    named = list(fragment) if isinstance(fragment, Sequential) else [("layer", fragment)]
    report = GradCheckReport(tolerance=tolerance)

    layers = []
    for name, layer in named:
        if training and layer.stochastic:
            report.skipped.append(name)
            continue
        for p in layer.params.values():
            if p.dtype != np.float64:
                raise TypeError("gradient checks need float64 parameters")
        layers.append((name, layer))

    def run(inp):
        for _, layer in layers:
            inp = layer.forward(inp, training=training)
        return inp

    out = run(x)
    weights = rng.standard_normal(out.shape)

    def loss_and_grad(out):
        if targets is not None:
            loss, _, dlogits = softmax_cce(out, targets)
            return loss, dlogits
        return float((out * weights).sum()), weights

    _, dout = loss_and_grad(out)
    dx = dout
    for _, layer in reversed(layers):
        dx = layer.backward(dx)

    def loss_at():
        return loss_and_grad(run(x))[0]

    blocks = [("input", x, dx)]
    for name, layer in layers:
        for pname, p in layer.params.items():
            blocks.append((f"{name}.{pname}", p, layer.grads[pname].copy()))

    for label, arr, analytic in blocks:
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at()
            flat[i] = orig - step
            down = loss_at()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * step)
        report.errors[label] = relative_error(analytic.reshape(-1)[idx], numeric)
    return report


def standard_suite(rng=None, max_entries=None) -> dict[str, GradCheckReport]:
    """Checks every layer type in float64, plus the full 3-layer recurrent stack."""
    rng = rng or np.random.default_rng(1234)
    f64 = np.float64
    suite = {}

    suite["dense"] = grad_check(Dense(6, 4, rng, f64), rng.standard_normal((5, 6)),
                                max_entries=max_entries)

    bn = BatchNorm(4, dtype=f64)
    bn.params["gamma"][:] = rng.uniform(0.5, 1.5, 4)
    bn.params["beta"][:] = rng.standard_normal(4)
    suite["batch_norm"] = grad_check(bn, rng.standard_normal((6, 3, 4)) * 2 + 1,
                                     max_entries=max_entries)
    suite["batch_norm_2d"] = grad_check(BatchNorm(5, dtype=f64), rng.standard_normal((7, 5)),
                                        max_entries=max_entries)

    for name in ("elu", "tanh", "softmax"):
        suite[name] = grad_check(Activation(name), rng.standard_normal((4, 7)),
                                 max_entries=max_entries)

    targets = np.eye(9)[rng.integers(0, 9, 5)]
    suite["softmax_cce"] = grad_check(Sequential([]), rng.standard_normal((5, 9)),
                                      targets=targets)
    suite["dense_softmax_cce"] = grad_check(Sequential([("dense", Dense(6, 9, rng, f64))]),
                                            rng.standard_normal((5, 6)), targets=targets)

    suite["avg_pool_time"] = grad_check(AvgPoolTime(5), rng.standard_normal((2, 17, 3)))
    suite["brnn_small"] = grad_check(BRNN(3, 2, rng, f64), rng.standard_normal((1, 7, 3)))

    stack = Sequential([
        ("brnn1", BRNN(40, 25, rng, f64)),
        ("brnn2", BRNN(50, 25, rng, f64)),
        ("brnn3", BRNN(50, 25, rng, f64)),
    ])
    suite["brnn_stack"] = grad_check(stack, rng.standard_normal((2, 16, 40)),
                                     max_entries=max_entries)

    head = Sequential([
        ("pool", AvgPoolTime(5)),
        ("bn", BatchNorm(6, dtype=f64)),
        ("dropout", Dropout(0.5)),
        ("flatten", Flatten()),
        ("dense1", Dense(18, 8, rng, f64)),
        ("elu1", Activation("elu")),
        ("dense2", Dense(8, 5, rng, f64)),
    ])
    suite["head"] = grad_check(head, rng.standard_normal((4, 16, 6)),
                               targets=np.eye(5)[rng.integers(0, 5, 4)],
                               max_entries=max_entries)
    return suite

