from __future__ import annotations

"""
Logical schema (column name, column type) of exported trace tables.

The cell encoding is in datatypes.py; reading and writing rows is in serde.py.
docs/trace-format.md lists the resulting columns.
"""

from typing import List, Optional, Type

from .datatypes import DataType, FlagSet, Integer, Real


class Column:
    """
    Represents a column in a schema
    """

    def __init__(self, name: str, datatype: Type[DataType]):
        self.name = name.lower()
        self.datatype = datatype

    def __str__(self):
        return f"Column[{self.name}, {self.datatype.typename}]"

    def __repr__(self):
        return self.__str__()


class SimpleSchema:
    """
    Ordered columns of one trace table.

    NOTE: once constructed a schema should be treated as read-only
    """

    def __init__(self, name: str = None, columns: List[Column] = None):
        self.name = name
        self.cols = columns or []

    @property
    def columns(self) -> List[Column]:
        return self.cols

    @property
    def header(self) -> List[str]:
        return [col.name for col in self.cols]

    def __str__(self):
        body = " ".join(self.header)
        return f"Schema({str(self.name)}, {str(body)})"

    def __repr__(self):
        return str(self)

    def get_column_by_name(self, name: str) -> Optional[Column]:
        name = name.lower()
        for column in self.columns:
            if column.name == name:
                return column
        return None

    def has_column(self, name: str) -> bool:
        return self.get_column_by_name(name) is not None

    def group(self, prefix: str) -> List[str]:
        """
        names of the indexed columns <prefix>_0, <prefix>_1, ... in order
        """
        names = []
        while self.has_column(f"{prefix}_{len(names)}"):
            names.append(f"{prefix}_{len(names)}")
        return names


def _indexed(prefix: str, count: int, datatype: Type[DataType] = Real) -> List[Column]:
    return [Column(f"{prefix}_{i}", datatype) for i in range(count)]


def sample_schema(state_dim: int, input_dim: int, margin_count: int) -> SimpleSchema:
    """
    One row per sample:
    k, t, x_*, xhat_*, u_*, ustar_*, znorm, wk, margin_*, flags
    """
    columns = [Column("k", Integer), Column("t", Real)]
    columns += _indexed("x", state_dim)
    columns += _indexed("xhat", state_dim)
    columns += _indexed("u", input_dim)
    columns += _indexed("ustar", input_dim)
    columns += [Column("znorm", Real), Column("wk", Real)]
    columns += _indexed("margin", margin_count)
    columns += [Column("flags", FlagSet)]
    return SimpleSchema("samples", columns)


def fine_schema(state_dim: int, input_dim: int) -> SimpleSchema:
    """
    One row per integration substep: t, x_*, u_*, znorm
    """
    columns = [Column("t", Real)]
    columns += _indexed("x", state_dim)
    columns += _indexed("u", input_dim)
    columns += [Column("znorm", Real)]
    return SimpleSchema("fine", columns)


def _count_indexed(header: List[str], prefix: str) -> int:
    return sum(1 for name in header if name.startswith(prefix + "_") and name[len(prefix) + 1 :].isdigit())


def sample_schema_from_header(header: List[str]) -> SimpleSchema:
    """
    Recover the dimensions from a sample table header and rebuild its schema
    """
    return sample_schema(_count_indexed(header, "x"), _count_indexed(header, "u"), _count_indexed(header, "margin"))


def fine_schema_from_header(header: List[str]) -> SimpleSchema:
    return fine_schema(_count_indexed(header, "x"), _count_indexed(header, "u"))
