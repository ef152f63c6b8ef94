from __future__ import annotations
import logging
from typing import Any, Dict, List

from lark import Lark
from lark.exceptions import UnexpectedInput  # root of all lark exceptions

from .grammar import GRAMMAR
from .symbols import (
    ArrayTableHeader,
    ArrayValue,
    Assignment,
    Document,
    DottedKey,
    Literal,
    TableHeader,
    ToAst,
)
from .utils import ParseError
from .visitor import Visitor


logger = logging.getLogger(__name__)


class ScenarioFrontEnd:
    """
    Parser for scenario files, based on lark definition
    """

    def __init__(self, raise_exception=False):
        self.parser = None
        # parse tree generated by Lark
        self.parse_tree = None
        # abstract syntax tree, output of parse tree being transformed
        self.tree = None
        self.exc = None  # exception
        self.is_succ = False
        self.raise_exception = raise_exception
        self._init()

    def _init(self):
        self.parser = Lark(GRAMMAR, parser="earley", start="document", debug=True)

    def error_summary(self):
        if self.exc is not None:
            return str(self.exc)

    def is_success(self):
        return self.is_succ

    def get_parsed(self) -> Document:
        return self.tree

    def parse(self, text: str):
        # a trailing newline keeps the last statement terminated like the others
        if not text.endswith("\n"):
            text = text + "\n"
        try:
            self.parse_tree = self.parser.parse(text)
            transformer = ToAst()
            self.tree = transformer.transform(self.parse_tree)
            self.is_succ = True
            self.exc = None
        except UnexpectedInput as e:
            logger.debug(f"scenario parse failed at line {e.line}, column {e.column}")
            self.exc = e
            self.parse_tree = None
            self.tree = None
            self.is_succ = False
            if self.raise_exception:
                raise


class DocumentBuilder(Visitor):
    """
    Folds a scenario AST into nested dicts.
    [a.b] opens (creating as needed) the table a.b; [[a.b]] appends a new table to the
    list a.b; assignments land in the most recently opened table. Redefining a key or a
    table is an error.
    """

    def __init__(self):
        self.root: Dict[str, Any] = {}
        self.current: Dict[str, Any] = self.root
        self.defined_tables = set()

    def build(self, document: Document) -> Dict[str, Any]:
        self.root = {}
        self.current = self.root
        self.defined_tables = set()
        document.accept(self)
        return self.root

    def _descend(self, table: Dict[str, Any], parts: List[str], path: str) -> Dict[str, Any]:
        for part in parts:
            child = table.setdefault(part, {})
            if isinstance(child, list):
                if not child or not isinstance(child[-1], dict):
                    raise ParseError(f"[{path}] descends into a non-table array")
                child = child[-1]
            elif not isinstance(child, dict):
                raise ParseError(f"[{path}] descends into the value of key [{part}]")
            table = child
        return table

    def visit_document(self, document: Document):
        for statement in document.statements:
            statement.accept(self)

    def visit_table_header(self, header: TableHeader):
        path = str(header.key)
        if path in self.defined_tables:
            raise ParseError(f"table [{path}] defined twice")
        self.defined_tables.add(path)
        self.current = self._descend(self.root, header.key.parts, path)

    def visit_array_table_header(self, header: ArrayTableHeader):
        path = str(header.key)
        parent = self._descend(self.root, header.key.parts[:-1], path)
        tables = parent.setdefault(header.key.parts[-1], [])
        if not isinstance(tables, list):
            raise ParseError(f"[[{path}]] conflicts with a table or value of the same name")
        table = {}
        tables.append(table)
        self.current = table

    def visit_assignment(self, assignment: Assignment):
        parts = assignment.key.accept(self)
        target = self._descend(self.current, parts[:-1], str(assignment.key))
        if parts[-1] in target:
            raise ParseError(f"key [{assignment.key}] assigned twice")
        target[parts[-1]] = assignment.value.accept(self)

    def visit_dotted_key(self, key: DottedKey) -> List[str]:
        return key.parts

    def visit_literal(self, literal: Literal):
        return literal.value

    def visit_array_value(self, array: ArrayValue) -> list:
        return [item.accept(self) for item in array.items]


def parse_document(text: str) -> Dict[str, Any]:
    """
    Parse scenario text into nested dicts.
    Raises ParseError on syntax or structure errors.
    """
    frontend = ScenarioFrontEnd()
    frontend.parse(text)
    if not frontend.is_success():
        raise ParseError(f"parse failed due to: [{frontend.error_summary()}]")
    return DocumentBuilder().build(frontend.get_parsed())
