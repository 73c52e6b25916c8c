#! /usr/bin/python3
import crc32c
import numpy as np


class RngState(object):
    """A (seed, stream) pair naming an independent random sub-stream.

Every consumer of randomness asks for its own named stream, so the
values it sees do not depend on what other consumers did first (or on
which worker thread got there first).  Stream names are hashed with
CRC32C rather than hash(), which is salted per process.

    """
    def __init__(self, seed: int, stream: str = 'root'):
        if seed < 0 or seed >= 1 << 64:
            raise ValueError("seed {} is not a 64-bit unsigned integer".format(seed))
        self.seed = seed
        self.stream = stream

    def child(self, name: str) -> 'RngState':
        """A sub-stream of this one: streams nest like paths"""
        return RngState(self.seed, "{}/{}".format(self.stream, name))

    def generator(self) -> np.random.Generator:
        """A fresh numpy Generator; identical for identical (seed, stream)"""
        key = crc32c.crc32c(self.stream.encode('utf-8'))
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, key])))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RngState) and (self.seed, self.stream) == (other.seed, other.stream)

    def __repr__(self) -> str:
        return "RngState({}, {!r})".format(self.seed, self.stream)


def test_rng_streams() -> None:
    a = RngState(7).child('augment')
    assert np.array_equal(a.generator().random(5), RngState(7, 'root/augment').generator().random(5))
    assert not np.array_equal(a.generator().random(5), RngState(7).child('synth').generator().random(5))
