"""
Cell datatypes of exported trace tables, as distinct from: 1) numpy arrays held by RunTrace,
2) values parsed from scenario files
"""
from abc import ABCMeta
from typing import Any, Tuple

from .constants import REAL_SIGNIFICANT_DIGITS
from .dataexchange import SampleFlag


class DataType:
    """
    This is a datatype of a trace table cell.

    This provides an interface to provide serde of implemented type
    to and from the text of a CSV cell.
    """

    __metaclass__ = ABCMeta
    typename = "Untyped"

    @staticmethod
    def serialize(value) -> str:
        """
        serialize argument `value` to cell text
        """
        raise NotImplementedError

    @staticmethod
    def deserialize(text: str) -> Any:
        """
        deserialize argument cell text to value (of given type)
        """
        raise NotImplementedError

    @staticmethod
    def is_valid_term(term) -> bool:
        """
        return True if term can be converted
        to datatype
        """
        raise NotImplementedError


class Integer(DataType):
    typename = "Integer"

    @staticmethod
    def serialize(value: int) -> str:
        return str(int(value))

    @staticmethod
    def deserialize(text: str) -> int:
        return int(text)

    @staticmethod
    def is_valid_term(term) -> bool:
        return isinstance(term, int) and not isinstance(term, bool)


class Real(DataType):
    """
    Represents a double. 17 significant digits round-trip every finite double;
    nan and inf are written as such.
    """

    typename = "Real"

    @staticmethod
    def serialize(value: float) -> str:
        return format(float(value), f".{REAL_SIGNIFICANT_DIGITS}g")

    @staticmethod
    def deserialize(text: str) -> float:
        return float(text)

    @staticmethod
    def is_valid_term(term) -> bool:
        return isinstance(term, (int, float)) and not isinstance(term, bool)


class FlagSet(DataType):
    """
    Tuple of sample flags, written as names joined by "|"; empty for no flags
    """

    typename = "FlagSet"
    separator = "|"

    @staticmethod
    def serialize(value: Tuple[SampleFlag, ...]) -> str:
        return FlagSet.separator.join(flag.name for flag in value)

    @staticmethod
    def deserialize(text: str) -> Tuple[SampleFlag, ...]:
        if not text:
            return ()
        return tuple(SampleFlag[name] for name in text.split(FlagSet.separator))

    @staticmethod
    def is_valid_term(term) -> bool:
        return isinstance(term, tuple) and all(isinstance(flag, SampleFlag) for flag in term)
