"""Reference BLEU for the regression constants in the metrics tests.

Order N = min(4, len(cand), len(ref)), uniform weights, clipped n-gram
precision, zero precisions replaced by 1e-9, brevity penalty
exp(1 - r/c) for candidates shorter than the reference.
"""
import math
from collections import Counter


def ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu(cand, ref, eps=1e-9):
    order = min(4, len(cand), len(ref))
    logs = []
    for n in range(1, order + 1):
        c, r = ngrams(cand, n), ngrams(ref, n)
        hit = sum(min(k, r[g]) for g, k in c.items())
        p = hit / sum(c.values())
        logs.append(math.log(p if p > 0 else eps))
    bp = 1.0 if len(cand) > len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * math.exp(sum(logs) / order)


if __name__ == "__main__":
    cases = [
        (list("CCO"), list("CCN")),
        (list("CCO"), list("CCO")),
        (list("CC"), list("CCO")),
        (["C", "C", "(", "=", "O", ")", "O"], ["C", "C", "(", "=", "O", ")", "N"]),
        (["c", "1", "c", "c", "c", "c", "c", "1"], ["c", "1", "c", "c", "c", "c", "c", "1", "O"]),
        (["O"], ["N", "N"]),
    ]
    for c, r in cases:
        print("".join(c), "".join(r), repr(bleu(c, r)))
