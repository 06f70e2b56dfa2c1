#!/usr/bin/env python3
"""A tour of the float32 reverse-mode engine.

Builds a few small graphs, runs backward, and checks every gradient against
central finite differences -- the same verifier the test suite trusts.
"""
import numpy as np

from ditlab import ndgrad as ng

print("== values and gradients ==")
x = ng.Node(np.array([1.0, 2.0, 3.0], np.float32), requires_grad=True)
y = ng.sum_all(ng.mul(x, x))  # sum of squares
ng.backward(y)
print(f"f(x) = sum(x^2) at {x.value}  ->  {float(y.value):.1f}")
print(f"grad = 2x                ->  {x.grad}")

print("\n== a softmax row always sums to one, even with huge logits ==")
logits = ng.constant(np.array([1000.0, 0.0, -500.0], np.float32))
probs = ng.softmax_lastdim(logits)
print(f"softmax([1000, 0, -500]) = {probs.value}  (sum {probs.value.sum():.6f})")

print("\n== cosine similarity is scale-invariant ==")
a = np.array([3.0, 4.0], np.float32)
b = np.array([4.0, 3.0], np.float32)
for lam in (1.0, 0.5, 10.0):
    c = ng.cosine_sim_lastdim(ng.constant(a * lam), ng.constant(b))
    print(f"cos({lam:>4} * a, b) = {float(c.value):.6f}")

print("\n== finite-difference verification ==")
cases = {
    "sum(x^2)": lambda x: ng.sum_all(ng.mul(x, x)),
    "sum(silu(x))": lambda x: ng.sum_all(ng.silu(x)),
    "sum(W @ softmax(x))": lambda x: ng.sum_all(
        ng.mul(ng.softmax_lastdim(x), ng.constant(np.linspace(1, 2, 4, dtype=np.float32)))
    ),
}
rng = ng.Rng(0)
for name, f in cases.items():
    err = ng.finite_diff_check(f, rng.uniform((2, 4), 0.25, 1.25), h=5e-3)
    print(f"{name:24s} max rel err vs central differences: {err:.2e}")

print("\n== gradients accumulate across fan-out; double backward is refused ==")
x = ng.Node(np.float32(3.0), requires_grad=True)
root = ng.add(ng.mul(x, x), ng.scale(x, 4.0))  # x^2 + 4x
ng.backward(root)
print(f"d/dx (x^2 + 4x) at 3 = {float(x.grad):.1f} (expected 10)")
try:
    ng.backward(root)
except Exception as e:
    print(f"second backward -> {type(e).__name__}: {e}")

print("\n== deterministic, splittable randomness ==")
r = ng.Rng(42)
print("split('data')  :", r.split("data").normal((3,)))
print("split('data')  :", ng.Rng(42).split("data").normal((3,)), "(identical)")
print("split('model') :", r.split("model").normal((3,)), "(independent)")
