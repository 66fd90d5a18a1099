"""Recursive-descent parser for MiniSrv (see docs/minisrv.md).

No error recovery: the first token or grammar violation raises ParseError.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..model import Location
from .nodes import (
    Assign,
    BinOp,
    BoolLit,
    Call,
    CallStmt,
    ConstDef,
    Decorator,
    FuncDef,
    If,
    IntLit,
    Member,
    MiniSrvAst,
    Name,
    Param,
    Return,
    StrLit,
)

KEYWORDS = {"const", "fn", "if", "else", "return", "true", "false"}
PUNCT = ("==", "!=", "<=", ">=", "&&", "||", "@", "(", ")", "{", "}", ",", ".", "=", "<", ">", "+")
DECORATOR_NAMES = {"route", "auth"}


class ParseError(Exception):
    def __init__(self, location: Location, message: str, expected: str = ""):
        self.location = location
        self.message = message
        self.expected = expected
        suffix = f" (expected {expected})" if expected else ""
        super().__init__(f"{location}: {message}{suffix}")


@dataclass
class Token:
    kind: str  # "ident" | "int" | "string" | punctuation text | "eof"
    text: str
    line: int
    col: int
    start: int
    end: int


def _tokenize(text: str, file: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        start, start_line, start_col = i, line, col
        if ch == '"':
            i += 1
            while i < n and text[i] != '"' and text[i] != "\n":
                i += 1
            if i >= n or text[i] != '"':
                raise ParseError(Location(file, start_line, start_col), "unterminated string literal", '"')
            i += 1
            tok = Token("string", text[start:i], start_line, start_col, start, i)
        elif ch.isdigit():
            while i < n and text[i].isdigit():
                i += 1
            tok = Token("int", text[start:i], start_line, start_col, start, i)
        elif ch.isalpha() or ch == "_":
            while i < n and (text[i].isalnum() or text[i] == "_"):
                i += 1
            tok = Token("ident", text[start:i], start_line, start_col, start, i)
        else:
            for p in PUNCT:
                if text.startswith(p, i):
                    i += len(p)
                    tok = Token(p, p, start_line, start_col, start, i)
                    break
            else:
                raise ParseError(Location(file, start_line, start_col), f"unexpected character {ch!r}")
        col = start_col + (i - start)
        tokens.append(tok)
    tokens.append(Token("eof", "", line, col, n, n))
    return tokens


class _Parser:
    def __init__(self, text: str, file: str):
        self.text = text
        self.file = file
        self.tokens = _tokenize(text, file)
        self.pos = 0

    # -- token plumbing ------------------------------------------------

    @property
    def cur(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def error(self, message: str, expected: str = "", tok: Token | None = None) -> ParseError:
        tok = tok or self.cur
        line = max(1, tok.line)
        col = max(1, tok.col)
        return ParseError(Location(self.file, line, col), message, expected)

    def eat(self, kind: str, expected: str | None = None) -> Token:
        tok = self.cur
        if tok.kind != kind:
            shown = tok.text or "end of input"
            raise self.error(f"unexpected {shown!r}", expected or kind)
        self.pos += 1
        return tok

    def at(self, kind: str) -> bool:
        return self.cur.kind == kind

    def at_keyword(self, word: str) -> bool:
        return self.cur.kind == "ident" and self.cur.text == word

    # -- grammar -------------------------------------------------------

    def parse_file(self) -> MiniSrvAst:
        ast = MiniSrvAst(file=self.file, text=self.text)
        while not self.at("eof"):
            if self.at_keyword("const"):
                ast.items.append(self.const_def())
            elif self.at("@") or self.at_keyword("fn"):
                ast.items.append(self.func_def())
            else:
                raise self.error(f"unexpected {self.cur.text!r}", "'const', 'fn' or a decorator")
        return ast

    def const_def(self) -> ConstDef:
        kw = self.eat("ident")  # const
        name = self.eat("ident", "constant name")
        if name.text in KEYWORDS:
            raise self.error("keyword cannot name a constant", "identifier", name)
        self.eat("=", "'='")
        value = self.literal()
        return ConstDef(kw.line, kw.col, (kw.start, value.span[1]), name.text, value)

    def func_def(self) -> FuncDef:
        decorators = []
        while self.at("@"):
            decorators.append(self.decorator())
        fn = self.cur
        if not self.at_keyword("fn"):
            raise self.error(f"unexpected {self.cur.text!r}", "'fn'")
        self.pos += 1
        name = self.eat("ident", "function name")
        self.eat("(", "'('")
        params: list[Param] = []
        if not self.at(")"):
            while True:
                p = self.eat("ident", "parameter name")
                params.append(Param(p.line, p.col, (p.start, p.end), p.text))
                if self.at(","):
                    self.pos += 1
                    continue
                break
        self.eat(")", "')'")
        body, end = self.block()
        return FuncDef(fn.line, fn.col, (fn.start, end), name.text, decorators, params, body)

    def decorator(self) -> Decorator:
        at = self.eat("@")
        name = self.eat("ident", "decorator name")
        if name.text not in DECORATOR_NAMES:
            raise self.error(f"unknown decorator {name.text!r}", "'route' or 'auth'", name)
        self.eat("(", "'('")
        args = []
        if not self.at(")"):
            while True:
                args.append(self.decorator_arg())
                if self.at(","):
                    self.pos += 1
                    continue
                break
        close = self.eat(")", "')'")
        dec = Decorator(at.line, at.col, (at.start, close.end), name.text, args)
        self._check_decorator(dec)
        return dec

    def _check_decorator(self, dec: Decorator) -> None:
        if dec.name == "route":
            ok = len(dec.args) == 2 and all(isinstance(a, StrLit) for a in dec.args)
            if not ok:
                raise ParseError(
                    Location(self.file, dec.line, dec.col),
                    "@route takes (method, path) string literals",
                    '@route("METHOD", "/path")',
                )
        else:  # auth
            ok = len(dec.args) == 1 and isinstance(dec.args[0], Name)
            if not ok:
                raise ParseError(
                    Location(self.file, dec.line, dec.col),
                    "@auth takes one check-function name",
                    "@auth(check_fn)",
                )

    def decorator_arg(self):
        tok = self.cur
        if tok.kind in ("int", "string") or tok.text in ("true", "false"):
            return self.literal()
        if tok.kind == "ident":
            self.pos += 1
            return Name(tok.line, tok.col, (tok.start, tok.end), tok.text)
        raise self.error(f"unexpected {tok.text!r}", "literal or identifier")

    def block(self) -> tuple[list, int]:
        self.eat("{", "'{'")
        stmts = []
        while not self.at("}"):
            if self.at("eof"):
                raise self.error("unexpected end of input", "'}'")
            stmts.append(self.statement())
        close = self.eat("}")
        return stmts, close.end

    def statement(self):
        if self.at_keyword("if"):
            return self.if_stmt()
        if self.at_keyword("return"):
            return self.return_stmt()
        if self.at("ident") and self.cur.text not in KEYWORDS:
            # assignment (IDENT '=') or a bare call statement
            if self.peek().kind == "=":
                target = self.eat("ident")
                self.eat("=")
                value = self.expr()
                return Assign(target.line, target.col, (target.start, _end(value)), target.text, value)
            call = self.path_call(require_call=True)
            return CallStmt(call.line, call.col, call.span, call)
        raise self.error(f"unexpected {self.cur.text or 'end of input'!r}", "statement")

    def if_stmt(self) -> If:
        kw = self.cur
        self.pos += 1
        cond = self.expr()
        then_body, end = self.block()
        else_body: list = []
        if self.at_keyword("else"):
            self.pos += 1
            else_body, end = self.block()
        return If(kw.line, kw.col, (kw.start, end), cond, (cond.span[0], cond.span[1]), then_body, else_body)

    def return_stmt(self) -> Return:
        kw = self.cur
        self.pos += 1
        if self.cur.kind in ("int", "string") or self.at("(") or (
            self.at("ident") and self.cur.text not in (KEYWORDS - {"true", "false"})
        ):
            value = self.expr()
            return Return(kw.line, kw.col, (kw.start, _end(value)), value)
        return Return(kw.line, kw.col, (kw.start, kw.end), None)

    # expressions, loosest binding first: || then && then comparison then +

    def expr(self):
        node = self.and_expr()
        while self.at("||"):
            self.pos += 1
            rhs = self.and_expr()
            node = BinOp(node.line, node.col, (node.span[0], _end(rhs)), "||", node, rhs)
        return node

    def and_expr(self):
        node = self.cmp_expr()
        while self.at("&&"):
            self.pos += 1
            rhs = self.cmp_expr()
            node = BinOp(node.line, node.col, (node.span[0], _end(rhs)), "&&", node, rhs)
        return node

    def cmp_expr(self):
        node = self.add_expr()
        if self.cur.kind in ("==", "!=", "<", "<=", ">", ">="):
            op = self.cur
            self.pos += 1
            rhs = self.add_expr()
            node = BinOp(node.line, node.col, (node.span[0], _end(rhs)), op.kind, node, rhs)
        return node

    def add_expr(self):
        node = self.primary()
        while self.at("+"):
            self.pos += 1
            rhs = self.primary()
            node = BinOp(node.line, node.col, (node.span[0], _end(rhs)), "+", node, rhs)
        return node

    def primary(self):
        tok = self.cur
        if tok.kind in ("int", "string") or tok.text in ("true", "false"):
            return self.literal()
        if tok.kind == "(":
            self.pos += 1
            node = self.expr()
            self.eat(")", "')'")
            return node
        if tok.kind == "ident" and tok.text not in KEYWORDS:
            return self.path_call(require_call=False)
        raise self.error(f"unexpected {tok.text or 'end of input'!r}", "expression")

    def literal(self):
        tok = self.cur
        if tok.kind == "int":
            self.pos += 1
            return IntLit(tok.line, tok.col, (tok.start, tok.end), int(tok.text))
        if tok.kind == "string":
            self.pos += 1
            return StrLit(tok.line, tok.col, (tok.start, tok.end), tok.text[1:-1])
        if tok.kind == "ident" and tok.text in ("true", "false"):
            self.pos += 1
            return BoolLit(tok.line, tok.col, (tok.start, tok.end), tok.text == "true")
        raise self.error(f"unexpected {tok.text!r}", "literal")

    def path_call(self, require_call: bool):
        """Parse ``ident(.ident)*`` optionally followed by a call."""
        first = self.eat("ident")
        parts = [first.text]
        end = first.end
        while self.at("."):
            self.pos += 1
            attr = self.eat("ident", "attribute name")
            parts.append(attr.text)
            end = attr.end
        if self.at("("):
            self.pos += 1
            args = []
            if not self.at(")"):
                while True:
                    args.append(self.expr())
                    if self.at(","):
                        self.pos += 1
                        continue
                    break
            close = self.eat(")", "')'")
            return Call(first.line, first.col, (first.start, close.end), ".".join(parts), args)
        if require_call:
            raise self.error(f"unexpected {self.cur.text or 'end of input'!r}", "'(' or '='")
        if len(parts) == 1:
            return Name(first.line, first.col, (first.start, end), parts[0])
        return Member(first.line, first.col, (first.start, end), parts[0], tuple(parts[1:]))


def _end(node) -> int:
    return node.span[1]


def parse_source(text: str, service_name: str, file: str) -> MiniSrvAst:
    """Parse MiniSrv source text; raises ParseError on the first violation."""
    del service_name  # parsing is service-independent; kept for call symmetry
    return _Parser(text, file).parse_file()


def parse_expression(text: str, file: str = "<expr>"):
    """Parse a standalone MiniSrv expression (used for guard translation)."""
    parser = _Parser(text, file)
    expr = parser.expr()
    if not parser.at("eof"):
        raise parser.error(f"trailing input {parser.cur.text!r}", "end of expression")
    return expr
