"""Central finite-difference verification of analytic gradients.

All checks run in float64 (`precision("f64")`); callers build the function
under test inside that context so parameters are allocated at full precision.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor,
                            eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central| / max(1, |central|).

    `f` must be scalar-valued and deterministic. Analytic gradients come from
    one backward pass; each coordinate is then probed with a central
    difference at +-eps.
    """
    x.grad = None
    out = f(x)
    if out.size != 1:
        raise ValueError(f"finite_difference_check: f must be scalar-valued, got {out.shape}")
    out.backward()
    if x.grad is None:
        analytic = np.zeros_like(x.data)
    else:
        analytic = x.grad.copy()

    worst = 0.0
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        central = (fp - fm) / (2.0 * eps)
        if not np.isfinite(central) or not np.isfinite(analytic.flat[i]):
            raise FloatingPointError(
                f"finite_difference_check: non-finite value at coordinate {i} "
                f"(central={central}, analytic={analytic.flat[i]})")
        err = abs(analytic.flat[i] - central) / max(1.0, abs(central))
        if err > worst:
            worst = err
    return worst


def check_coords(f: Callable[[], "Tensor"], params: list[Tensor],
                 eps: float = 1e-5, max_coords_per_tensor: int | None = None,
                 rng: np.random.Generator | None = None) -> float:
    """Finite-difference several tensors feeding one closure.

    Used for network-level checks where `f` closes over its inputs. When
    `max_coords_per_tensor` is set, a random subset of coordinates is probed
    (large weight tensors); otherwise every coordinate is.
    """
    for p in params:
        p.grad = None
    out = f()
    if out.size != 1:
        raise ValueError(f"check_coords: f must be scalar-valued, got {out.shape}")
    out.backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
             for p in params]

    worst = 0.0
    for p, analytic in zip(params, grads):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords_per_tensor is not None and flat.size > max_coords_per_tensor:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_coords_per_tensor, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            central = (fp - fm) / (2.0 * eps)
            if not np.isfinite(central) or not np.isfinite(analytic.flat[i]):
                raise FloatingPointError(
                    f"check_coords: non-finite value at coordinate {i}")
            err = abs(analytic.flat[i] - central) / max(1.0, abs(central))
            if err > worst:
                worst = err
    return worst


def gradcheck_suite(seeds=range(20), eps: float = 1e-5,
                    coords_per_tensor: int = 40) -> dict[str, float]:
    """Max relative finite-difference error for every candidate operation at
    both strides, the mixed-edge forward (input and architecture parameters),
    the loss primitives, and a full 2-cell super-network.

    Runs in float64. Each seed probes a different random coordinate subset of
    the larger tensors, so the union across seeds covers them densely.
    Returns {check name: worst error across seeds}.
    """
    from . import ops
    from .catalog import ALL_KINDS, instantiate_op
    from .cell import MixedEdge, edge_mix_forward, full_schema, init_alphas
    from .optim import ParamStore
    from .supernet import SearchNetConfig, build_supernet
    from .tensor import Tensor, mul, precision, softmax, tsum

    results: dict[str, float] = {}

    def record(name: str, err: float) -> None:
        results[name] = max(results.get(name, 0.0), err)

    with precision("f64"):
        for seed in seeds:
            rng = np.random.default_rng([int(seed), 100])
            cap = coords_per_tensor

            # candidate operations at both strides
            for kind in ALL_KINDS:
                for stride in (1, 2):
                    store = ParamStore()
                    op = instantiate_op(kind, 4, stride, False, store, "op", rng)
                    x = Tensor(rng.standard_normal((2, 4, 6, 6)), requires_grad=True)
                    r = Tensor(rng.standard_normal(op(x, True).shape))

                    def f(_op=op, _x=x, _r=r):
                        return tsum(mul(_op(_x, True), _r))

                    name = f"op/{kind.op_name}/s{stride}"
                    record(name, check_coords(f, [x], eps, cap, rng))
                    params = list(store.params.values())
                    if params:
                        record(name + "/params", check_coords(f, params, eps, cap, rng))

            # mixed edge: input and alpha
            store = ParamStore()
            cands = [ALL_KINDS[i] for i in (0, 1, 3, 4)]
            branch_ops = [instantiate_op(k, 4, 1, False, store, f"b{k}", rng)
                          for k in cands]
            alpha = Tensor(rng.standard_normal(len(cands)) * 0.3, requires_grad=True)
            me = MixedEdge((0, 2), cands, alpha)
            x = Tensor(rng.standard_normal((2, 4, 6, 6)), requires_grad=True)
            r = Tensor(rng.standard_normal((2, 4, 6, 6)))

            def fe():
                return tsum(mul(edge_mix_forward(me, branch_ops, x, True), r))

            record("edge_mix/x", check_coords(fe, [x], eps, cap, rng))
            record("edge_mix/alpha", check_coords(fe, [alpha], eps))

            # loss primitives
            logits = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
            labels = rng.integers(0, 3, size=4)
            record("cross_entropy", finite_difference_check(
                lambda t: ops.cross_entropy(t, labels), logits, eps))
            a = Tensor(rng.standard_normal(6), requires_grad=True)
            rs = Tensor(rng.standard_normal(6))
            record("softmax", finite_difference_check(
                lambda t: tsum(mul(softmax(t), rs)), a, eps))

            # full 2-cell super-network: input, all alphas, sampled weights
            schema = full_schema(2)
            store = ParamStore()
            cfg = SearchNetConfig(cells=2, channels=4, nodes=2, num_classes=3,
                                  input_size=8)
            net = build_supernet(cfg, schema, store, rng)
            alphas = init_alphas(schema, rng)
            xin = Tensor(rng.standard_normal((1, 3, 8, 8)), requires_grad=True)
            ylab = rng.integers(0, 3, size=1)

            def fn():
                return ops.cross_entropy(net.forward(xin, alphas, True), ylab)

            record("supernet/input", check_coords(fn, [xin], eps, cap, rng))
            alpha_tensors = [m.alpha for m in alphas.normal + alphas.reduce]
            record("supernet/alpha", check_coords(fn, alpha_tensors, eps))
            names = sorted(store.params)
            picked = rng.choice(len(names), size=min(16, len(names)), replace=False)
            weights = [store.params[names[i]] for i in picked]
            record("supernet/weights", check_coords(fn, weights, eps, 3, rng))

    return results
