"""
Пакет симуляции ретрансляции транзакций и вывода топологии через сирот.
"""

__version__ = "1.0.0"
