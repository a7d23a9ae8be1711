"""Reference solutions of the deterministic agent system for the contract fixtures.

Y_i' = -[(1/(n-1)) sum_{j != i} c*(Y_j - Y_i) + w_i],  Y_i(T) = xi_i,
with c(a) = kappa a^2 / 2 on [0, a_max], integrated backward by classical RK4
on a grid ten times finer than the output grid.
"""
import json
import sys


def conj(y, kappa, a_max):
    if y <= 0.0:
        return 0.0
    if y <= kappa * a_max:
        return y * y / (2.0 * kappa)
    return a_max * y - 0.5 * kappa * a_max * a_max


def solve(xi, w, kappa, a_max, horizon, n_steps, refine):
    n = len(xi)

    def f(y):
        return [
            sum(conj(y[j] - y[i], kappa, a_max) for j in range(n) if j != i) / (n - 1) + w[i]
            for i in range(n)
        ]

    fine = n_steps * refine
    h = horizon / fine
    y = list(xi)
    out = {n_steps: list(y)}
    for step in range(1, fine + 1):
        k1 = f(y)
        k2 = f([a + h / 2 * b for a, b in zip(y, k1)])
        k3 = f([a + h / 2 * b for a, b in zip(y, k2)])
        k4 = f([a + h * b for a, b in zip(y, k3)])
        y = [a + h / 6 * (p + 2 * q + 2 * r + s) for a, p, q, r, s in zip(y, k1, k2, k3, k4)]
        if step % refine == 0:
            out[n_steps - step // refine] = list(y)
    return [out[k] for k in range(n_steps + 1)]


def main():
    for name, steps in (("n3", (100, 200)), ("n2", (200,))):
        write(name, steps)


def write(name, steps):
    spec = json.load(open(f"contracts_{name}.json"))
    xi = [c["xi"] for c in spec["contracts"]]
    w = [c["wage"] for c in spec["contracts"]]
    for n_steps in steps:
        rows = solve(xi, w, 1.0, 2.0, 1.0, n_steps, 10)
        with open(f"ode_oracle_{name}_{n_steps}.csv", "w") as fh:
            fh.write("step," + ",".join(f"Y_{i + 1}" for i in range(len(xi))) + "\n")
            for k, y in enumerate(rows):
                fh.write(f"{k}," + ",".join(repr(v) for v in y) + "\n")


if __name__ == "__main__":
    sys.exit(main())
