"""Receptor lock/key pairs used for substance addressing and resource access.

Keys compare by identity: only the registry creates them, so a key built
elsewhere with a copied token never matches.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass


class Lock:
    __slots__ = ("token", "descriptor")

    def __init__(self, token: int, descriptor: tuple[str, str]):
        self.token = token
        self.descriptor = descriptor

    def __eq__(self, other):
        return isinstance(other, Lock) and other.token == self.token

    def __hash__(self):
        return hash(("lock", self.token))

    def __repr__(self):
        return f"Lock({self.token}, {self.descriptor[0]}/{self.descriptor[1]})"


class Key:
    __slots__ = ("token", "descriptor")

    def __init__(self, token: int, descriptor: tuple[str, str]):
        self.token = token
        self.descriptor = descriptor

    def __repr__(self):
        return f"Key({self.token}, {self.descriptor[0]}/{self.descriptor[1]})"


@dataclass(frozen=True)
class Receptor:
    lock: Lock
    key: Key
    descriptor: tuple[str, str]


class UnmintedLock(ValueError):
    pass


class ReceptorRegistry:
    def __init__(self):
        self._tokens = itertools.count(1)
        self._keys: dict[int, Key] = {}
        self._channels: dict[tuple[str, str], Receptor] = {}

    def mint(self, entity_type: str, status_tag: str = "") -> Receptor:
        token = next(self._tokens)
        descriptor = (entity_type, status_tag)
        lock, key = Lock(token, descriptor), Key(token, descriptor)
        self._keys[token] = key
        return Receptor(lock, key, descriptor)

    def channel(self, entity_type: str, status_tag: str = "*") -> Receptor:
        """Shared receptor addressing every entity of one type/status."""
        descriptor = (entity_type, status_tag)
        rec = self._channels.get(descriptor)
        if rec is None:
            rec = self._channels[descriptor] = self.mint(entity_type, status_tag)
        return rec

    def match(self, lock: Lock, key: Key) -> bool:
        return self._keys.get(lock.token) is key

    def is_minted(self, lock: Lock) -> bool:
        return lock.token in self._keys

    def is_genuine(self, key: Key) -> bool:
        return self._keys.get(key.token) is key

    def authenticate(self, key: Key, entity_type: str) -> bool:
        return self.is_genuine(key) and key.descriptor[0] == entity_type

    def any_match(self, locks, keys) -> bool:
        genuine = self._keys
        for lock in locks:
            k = genuine.get(lock.token)
            if k is not None:
                for key in keys:
                    if key is k:
                        return True
        return False
