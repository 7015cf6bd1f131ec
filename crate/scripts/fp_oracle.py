"""Independent trace of the circular fingerprint pipeline for CCO (radius 2, 2048 bits)."""
import struct

OFF, PRIME, MASK = 0xcbf29ce484222325, 0x100000001b3, (1 << 64) - 1


def fnv(fields):
    h = OFF
    for v in fields:
        for b in struct.pack("<q", v if v < (1 << 63) else v - (1 << 64)) + b"\x1f":
            h ^= b
            h = (h * PRIME) & MASK
    return h


# (atomic number, degree, H, charge, ring, aromatic)
atoms = [(6, 1, 3, 0, 0, 0), (6, 2, 2, 0, 0, 0), (8, 1, 1, 0, 0, 0)]
nbrs = [[1], [0, 2], [1]]
ids = [fnv(a) for a in atoms]
allids = list(ids)
for r in (1, 2):
    new = []
    for i in range(3):
        env = sorted((1, ids[j]) for j in nbrs[i])
        f = [r, ids[i]]
        for code, j in env:
            f += [code, j]
        new.append(fnv(f))
    ids = new
    allids += ids
bits = sorted({i % 2048 for i in allids})
print("ids", [hex(i) for i in allids])
print("bits", bits, "popcount", len(bits))
