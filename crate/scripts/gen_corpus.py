"""Generates the bundled toy corpus of simple organic molecules.

Molecules are assembled from ring and chain cores with optional
substituents. The output is raw SMILES, one per line; `divmol ingest`
canonicalizes and deduplicates it.

    python3 scripts/gen_corpus.py --count 1300 --seed 7 > data/raw.smi
"""
import argparse
import random

CORES = [
    "c1ccc(X)cc1X",
    "c1cc(X)ccc1X",
    "c1ccc(X)c(X)c1",
    "c1ccncc1X",
    "c1cc(X)ncc1X",
    "c1ccoc1X",
    "c1ccsc1X",
    "c1cc[nH]c1X",
    "c1cnc(X)nc1",
    "C1CCC(X)CC1X",
    "C1CCN(X)CC1",
    "C1CCOC(X)C1",
    "C1CC(X)CN1X",
    "C1CC1X",
    "C1CCC1X",
    "C1CCCC1X",
    "O=C1CCC(X)CC1",
    "c1ccc2ccccc2c1X",
    "c1ccc2[nH]ccc2c1X",
    "CCX",
    "CCCX",
    "CC(X)CX",
    "CC(C)(X)CX",
    "CCCCX",
    "C=CCX",
    "CC(=O)CX",
    "OCC(X)CX",
    "NCCX",
]

CHAIN_SUBS = [
    "C", "CC", "CCC", "C(C)C", "O", "N", "OC", "OCC", "NC", "N(C)C",
    "C(=O)O", "C(=O)N", "C(=O)OC", "C(=O)C", "C#N", "F", "Cl", "Br",
    "CO", "CN", "CCO", "CCN", "NC(=O)C", "C(F)(F)F", "CC(=O)O", "C=O",
    "S(=O)(=O)N", "SC", "OC(=O)C", "C(N)=O", "C=C", "C#C", "NC(N)=O",
    "CCCO", "CC(C)O", "C(O)CO", "NO", "N=O",
]

RING_SUBS = [
    "c2ccccc2", "C2CC2", "C2CCCCC2", "c2ccncc2", "C2CCNCC2",
    "C2CCOCC2", "c2ccco2", "Cc2ccccc2", "Oc2ccccc2", "C2CCCC2",
    "N2CCCC2", "N2CCOCC2",
]


def fill(core, rng):
    ring_used = False
    out = core
    while "X" in out:
        i = out.index("X")
        branch = i > 0 and out[i - 1] == "(" and i + 1 < len(out) and out[i + 1] == ")"
        r = rng.random()
        if r < 0.4:
            sub = ""
        elif r < 0.55 and not ring_used:
            sub = rng.choice(RING_SUBS)
            ring_used = True
        else:
            sub = rng.choice(CHAIN_SUBS)
        if branch:
            out = out[: i - 1] + (f"({sub})" if sub else "") + out[i + 2:]
        else:
            out = out[:i] + sub + out[i + 1:]
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=1300)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    seen = set()
    tries = 0
    while len(seen) < args.count and tries < 200000:
        tries += 1
        s = fill(rng.choice(CORES), rng)
        if len(s) < 2 or s in seen:
            continue
        seen.add(s)
        print(s)


if __name__ == "__main__":
    main()
