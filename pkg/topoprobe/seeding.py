"""
Именованные подпотоки случайности от одного зерна сценария.
"""
import hashlib
import random
from typing import Union

Name = Union[str, int]


def derive_seed(master: int, *names: Name) -> int:
    """
    Выводит 64-битное зерно подпотока из главного зерна и имён.

    Args:
        master: Главное зерно сценария
        *names: Имена подпотока, например ("ensemble", "ER", 7)

    Returns:
        Детерминированное зерно подпотока
    """
    material = ":".join([str(master), *(str(name) for name in names)]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


def make_rng(master: int, *names: Name) -> random.Random:
    """Возвращает random.Random для именованного подпотока."""
    return random.Random(derive_seed(master, *names))
