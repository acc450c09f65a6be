"""Direct formula transcription of the distillation losses in pure Python.

Shares no code with the library: plain lists, ``math`` and explicit loops.
Running this module regenerates ``frozen_losses.json``.
"""

import json
import math
import os

FLOOR = 1e-12


def softmax(z, t=1.0):
    top = max(v / t for v in z)
    e = [math.exp(v / t - top) for v in z]
    s = sum(e)
    return [v / s for v in e]


def log_floor(p):
    return math.log(max(p, FLOOR))


def l1_cls(probs, label):
    return sum(-log_floor(row[label]) for row in probs) / len(probs)


def l1_reg(pairs, y):
    return sum(0.5 * ((mu - y) ** 2 / var + math.log(var)) for mu, var in pairs) / len(pairs)


def member_mean(rows):
    k = len(rows[0])
    return [sum(r[j] for r in rows) / len(rows) for j in range(k)]


def l2_cls(teacher_logits, student_logits, t=1.0):
    pt = member_mean([softmax(z, t) for z in teacher_logits])
    ps = member_mean([softmax(z, t) for z in student_logits])
    return -sum(a * log_floor(b) for a, b in zip(pt, ps))


def aggregate(pairs):
    n = len(pairs)
    mu = sum(p[0] for p in pairs) / n
    ale = sum(p[1] for p in pairs) / n
    epi = sum((p[0] - mu) ** 2 for p in pairs) / n
    return mu, ale + epi


def kl_part(mt, vt, ms, vs):
    return 0.5 * ((vt + (mt - ms) ** 2) / vs + math.log(vs))


def l2_reg(teacher_pairs, student_pairs):
    mt, vt = aggregate(teacher_pairs)
    ms, vs = aggregate(student_pairs)
    return kl_part(mt, vt, ms, vs)


def l3_cls(teacher_logits, student_logits, t=1.0):
    m = len(student_logits)
    total = 0.0
    for n, z in enumerate(teacher_logits):
        pt = softmax(z, t)
        ps = softmax(student_logits[n % m], t)
        total += -sum(a * log_floor(b) for a, b in zip(pt, ps))
    return total / len(teacher_logits)


def l3_reg(teacher_pairs, student_pairs):
    m = len(student_pairs)
    total = 0.0
    for n, (mt, vt) in enumerate(teacher_pairs):
        ms, vs = student_pairs[n % m]
        total += kl_part(mt, vt, ms, vs)
    return total / len(teacher_pairs)


def cosine(a, b):
    na = math.sqrt(sum(v * v for v in a))
    nb = math.sqrt(sum(v * v for v in b))
    if na < FLOOR or nb < FLOOR:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def l4(layers):
    """``layers[l][m][node]`` is the incoming weight vector of one node."""
    total = 0.0
    for heads in layers:
        n_heads, n_nodes = len(heads), len(heads[0])
        for m in range(n_heads):
            cos_sum = 0.0
            for j in range(n_nodes):
                mean = [sum(heads[h][j][i] for h in range(n_heads)) / n_heads for i in range(len(heads[0][j]))]
                cos_sum += cosine(heads[m][j], mean)
            total += 0.5 * (1.0 + cos_sum / n_nodes)
    return total


def total(alpha, beta, lam, t_ind, t_mean, l1, l2, l3, l4_value):
    s_ind = t_ind**2 if t_ind > 1 else 1.0
    s_mean = t_mean**2 if t_mean > 1 else 1.0
    return (1 - alpha) * l1 + alpha * ((1 - beta) * s_mean * l2 + beta * s_ind * l3) + lam * l4_value


U3 = [0.0, 0.0, 0.0]

# name -> (callable, args, hand value or None)
CASES = {
    "l1_cls_perfect": (l1_cls, ([[1.0, 0.0, 0.0]], 0), 0.0),
    "l1_cls_two_heads": (l1_cls, ([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25]], 0), (-math.log(0.5) - math.log(0.25)) / 2),
    "l1_cls_uniform": (l1_cls, ([[1 / 3, 1 / 3, 1 / 3]], 2), math.log(3)),
    "l1_reg_exact": (l1_reg, ([(1.5, 1.0)], 1.5), 0.0),
    "l1_reg_unit_residual": (l1_reg, ([(1.0, 1.0)], 0.0), 0.5),
    "l1_reg_two_exact": (l1_reg, ([(0.3, 1.0), (0.3, 1.0)], 0.3), 0.0),
    "l2_cls_uniform": (l2_cls, ([U3, U3], [U3, U3, U3]), math.log(3)),
    "l2_cls_skewed": (l2_cls, ([U3], [[math.log(2.0), 0.0, 0.0]]), (math.log(2) + 2 * math.log(4)) / 3),
    "l2_reg_identical": (l2_reg, ([(0.7, 1.0)], [(0.7, 1.0)]), 0.5),
    "l2_reg_gap": (l2_reg, ([(1.0, 1.0)], [(0.0, 1.0)]), 1.0),
    "l2_reg_aggregated": (l2_reg, ([(0.0, 1.0), (2.0, 1.0)], [(1.0, 2.0)]), 0.5 * (1.0 + math.log(2.0))),
    "l3_cls_matched_uniform": (l3_cls, ([U3, U3], [U3, U3]), math.log(3)),
    "l3_reg_matched": (l3_reg, ([(0.0, 1.0), (3.0, 1.0)], [(0.0, 1.0), (3.0, 1.0)]), 0.5),
    "l3_reg_gap": (l3_reg, ([(2.0, 1.0)], [(0.0, 1.0)]), 2.5),
    "l4_identical": (l4, ([[[[1.0, 2.0]], [[1.0, 2.0]], [[1.0, 2.0]]], [[[0.5]], [[0.5]], [[0.5]]]],), 6.0),
    "l4_orthogonal": (l4, ([[[[1.0, 0.0]], [[0.0, 1.0]]]],), 1.0 + 1.0 / math.sqrt(2.0)),
    "l4_opposite": (l4, ([[[[1.0, 0.0]], [[-1.0, 0.0]]]],), 1.0),
    "total_mixed": (total, (0.9, 0.5, 2.0, 1.0, 1.0, 1.0, 2.0, 3.0, 4.0), 10.35),
    "total_hydra": (total, (1.0, 1.0, 0.0, 3.0, 1.0, 1.0, 2.0, 3.0, 4.0), 27.0),
    "total_alpha_zero": (total, (0.0, 0.5, 2.0, 1.0, 1.0, 1.0, 2.0, 3.0, 4.0), 9.0),
}


def evaluate_all():
    return {name: fn(*args) for name, (fn, args, _) in CASES.items()}


if __name__ == "__main__":
    here = os.path.dirname(os.path.abspath(__file__))
    with open(os.path.join(here, "frozen_losses.json"), "w") as fh:
        json.dump(evaluate_all(), fh, indent=2, sort_keys=True)
        fh.write("\n")
