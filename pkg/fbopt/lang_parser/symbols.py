from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, List

from lark import Token, Transformer, ast_utils

from .visitor import Visitor


# symbol class


class Symbol(ast_utils.Ast):
    """
    The root of AST hierarchy
    """

    def accept(self, visitor: Visitor) -> Any:
        return visitor.visit(self)


@dataclass
class Document(Symbol):
    statements: List[Any]


@dataclass
class DottedKey(Symbol):
    parts: List[str]

    def __str__(self):
        return ".".join(self.parts)


@dataclass
class TableHeader(Symbol):
    key: DottedKey


@dataclass
class ArrayTableHeader(Symbol):
    key: DottedKey


@dataclass
class Assignment(Symbol):
    key: DottedKey
    value: Any


@dataclass
class Literal(Symbol):
    value: Any


@dataclass
class ArrayValue(Symbol):
    items: List[Any]


class ToAst(Transformer):
    """
    Convert parse tree to AST.
    Anonymous punctuation ("[", "=", ",") and _NL are filtered by lark; every rule
    handler receives only the meaningful children.
    """

    @staticmethod
    def document(args) -> Document:
        return Document(list(args))

    @staticmethod
    def table_header(args) -> TableHeader:
        return TableHeader(args[0])

    @staticmethod
    def array_table_header(args) -> ArrayTableHeader:
        return ArrayTableHeader(args[0])

    @staticmethod
    def assignment(args) -> Assignment:
        return Assignment(args[0], args[1])

    @staticmethod
    def dotted_key(args) -> DottedKey:
        return DottedKey([str(arg) for arg in args])

    @staticmethod
    def number(args) -> Literal:
        return args[0]

    @staticmethod
    def string(args) -> Literal:
        return args[0]

    @staticmethod
    def boolean(args) -> Literal:
        return args[0]

    @staticmethod
    def array(args) -> ArrayValue:
        return ArrayValue(list(args))

    # terminals

    def SIGNED_NUMBER(self, arg: Token) -> Literal:
        text = str(arg)
        if any(ch in text for ch in ".eE"):
            return Literal(float(text))
        return Literal(int(text))

    def ESCAPED_STRING(self, arg: Token) -> Literal:
        # json decoding handles the escapes ESCAPED_STRING admits
        return Literal(json.loads(str(arg)))

    def TRUE(self, arg: Token) -> Literal:
        return Literal(True)

    def FALSE(self, arg: Token) -> Literal:
        return Literal(False)

    def IDENTIFIER(self, arg: Token) -> str:
        return str(arg)
