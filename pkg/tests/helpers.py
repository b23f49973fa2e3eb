"""Shared builders for tests."""

import random

from statefuzz.tlsh import TlshDigest


def random_digest(r: random.Random) -> TlshDigest:
    return TlshDigest(r.randrange(256), r.randrange(256), r.randrange(256),
                      bytes(r.randrange(256) for _ in range(32)))


def perturb(d: TlshDigest, r: random.Random, n_codes: int) -> TlshDigest:
    body = bytearray(d.body)
    for _ in range(n_codes):
        i = r.randrange(128)
        shift = 2 * (i % 4)
        body[i // 4] = (body[i // 4] & ~(3 << shift)) | (r.randrange(4) << shift)
    l_value = (d.l_value + r.choice((0, 0, 0, 1, -1))) % 256
    checksum = d.checksum if r.random() < 0.7 else r.randrange(256)
    return TlshDigest(checksum, l_value, d.q_ratios, bytes(body))


def clustered_digests(seed: int, n: int, n_centers: int = 40) -> list[TlshDigest]:
    """Digests grouped around a few centers so every radius has hits, plus exact duplicates."""
    r = random.Random(seed)
    centers = [random_digest(r) for _ in range(n_centers)]
    out = []
    for _ in range(n):
        c = r.choice(centers)
        out.append(c if r.random() < 0.05 else perturb(c, r, r.randrange(0, 40)))
    return out
