#!/usr/bin/env python3
"""Independent evaluation of the per-step contrast arithmetic.

Plain float math with no shared code path; the numbers it prints are frozen
into the Rust tests (unit tests in `logits`/`decoder` and the acceptance suite).
"""
import json
import math
import sys


def softmax(xs):
    hi = max(xs)
    ex = [math.exp(x - hi) for x in xs]
    s = sum(ex)
    return [e / s for e in ex]


def kl(p, q):
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)


def jsd(p, q):
    m = [(a + b) / 2 for a, b in zip(p, q)]
    return 0.5 * (kl(p, m) + kl(q, m))


def step(base, txt, knn, alpha_tau=1.0, beta_d=0.1, beta_nn=0.1):
    l_delta = [b - t for b, t in zip(base, txt)]
    p_star = max(softmax(l_delta))
    alpha_d = beta_d * math.exp(p_star)
    alpha_nn = beta_nn * math.exp(1 - p_star)
    k = len(knn)
    combined = []
    for i, b in enumerate(base):
        knn_sum = sum(col[i] for col in knn)
        combined.append((alpha_tau + alpha_d + alpha_nn) * b - alpha_nn / k * knn_sum - alpha_d * txt[i])
    return l_delta, p_star, alpha_d, alpha_nn, combined


def main_json(arg):
    """`--json '{"base": [...], "txt": [...], "knn": [[...]]}'` -> full-precision JSON."""
    req = json.loads(arg)
    l_delta, p_star, a_d, a_nn, comb = step(req["base"], req["txt"], req["knn"])
    print(json.dumps({"l_delta": l_delta, "p_star": p_star, "alpha_d": a_d, "alpha_nn": a_nn,
                      "combined": comb, "argmax": comb.index(max(comb))}))


if __name__ == "__main__" and len(sys.argv) == 3 and sys.argv[1] == "--json":
    main_json(sys.argv[2])
elif __name__ == "__main__":
    l_delta, p_star, a_d, a_nn, comb = step([10.0, 10.2], [5.0, 5.0], [[4.0, 9.8]])
    print("worked step: l_delta", l_delta, "p*", f"{p_star:.6f}", "alpha_d", f"{a_d:.6f}",
          "alpha_nn", f"{a_nn:.6f}", "combined", [f"{c:.4f}" for c in comb],
          "token", "AB"[comb.index(max(comb))])
    for m in (50, 2):
        p = 1.0 / m
        print(f"uniform m={m}: p*={p} alpha_d={0.1 * math.exp(p):.6f} alpha_nn={0.1 * math.exp(1 - p):.6f}")
    print("alpha_d bounds m=50:", 0.1 * math.exp(0.02), 0.1 * math.e, "alpha_nn upper:", 0.1 * math.exp(0.98))
    print("jsd([.5,.5],[1,0]) =", f"{jsd([0.5, 0.5], [1.0, 0.0]):.6f}", " ln2 =", math.log(2))
    print("k=1 contrast 10/8/6:", 1.2 * 10 - 0.1 * 8 - 0.1 * 6)
