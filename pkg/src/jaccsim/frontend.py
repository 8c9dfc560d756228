"""Lexer and recursive-descent parser for the kernel DSL.

The grammar is documented in docs/dsl.md. Parsing never silently fills in
annotation defaults that change meaning: a kernel without `@jacc` is an
error, as is a buffer parameter without an access mode.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .errors import ParseError
from .hir import (
    CAST_NAMES,
    Assign,
    Barrier,
    Binary,
    Block,
    Call,
    Cast,
    CompositeTypeDecl,
    Const,
    ExprStmt,
    FieldDecl,
    FieldRef,
    For,
    FuncDecl,
    If,
    Index,
    JaccSpec,
    KernelHIR,
    Let,
    MethodCall,
    New,
    Param,
    Pos,
    Return,
    SourceUnit,
    Unary,
    Var,
)
from .hirfmt import PRECEDENCE
from .types import (
    BOOL,
    F32,
    F64,
    I32,
    I64,
    SCALAR_NAMES,
    ArrayType,
    AtomicOp,
    IterationSpace,
    Mode,
    ScalarType,
    Space,
    StructType,
)

KEYWORDS = {
    "kernel", "func", "type", "field", "let", "for", "in", "step", "if", "else",
    "return", "true", "false", "new",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*|\#[^\n]*)
  | (?P<float>(?:\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)[dDfF]?)
  | (?P<int>\d+[lL]?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\.\.|->|<<=|>>=|<<|>>|<=|>=|==|!=|&&|\|\||[-+*/%&|^]=|[-+*/%&|^<>=!~(){}\[\];:,.@])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # 'int', 'float', 'ident', 'kw', 'op', 'eof'
    text: str
    line: int
    col: int

    @property
    def pos(self) -> Pos:
        return Pos(self.line, self.col)


def tokenize(text: str) -> list:
    tokens = []
    line, line_start, i = 1, 0, 0
    n = len(text)
    while i < n:
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise ParseError(f"unexpected character {text[i]!r}", line, i - line_start + 1)
        kind = m.lastgroup
        col = i - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind in ("ws", "comment"):
            pass
        elif kind == "ident":
            word = m.group()
            tokens.append(Token("kw" if word in KEYWORDS else "ident", word, line, col))
        else:
            tokens.append(Token(kind, m.group(), line, col))
        i = m.end()
    tokens.append(Token("eof", "", line, i - line_start + 1))
    return tokens


# annotation name -> (target, {parameter: kind})
ANNOTATIONS = {
    "jacc": ("kernel", {"iterationspace": "iteration_space", "exceptions": "bool"}),
    "atomic": ("field", {"op": "atomic_op"}),
    "shared": ("field", {}),
    "private": ("field", {}),
    "constant": ("field", {}),
    "read": ("parameter", {"cachable": "bool"}),
    "write": ("parameter", {"cachable": "bool"}),
    "readwrite": ("parameter", {"cachable": "bool"}),
}


@dataclass
class Annotation:
    name: str
    args: dict
    pos: Pos


class Parser:
    def __init__(self, text: str, path: str = "<string>"):
        self.text = text
        self.path = path
        self.toks = tokenize(text)
        self.i = 0

    # -- token helpers ---------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, message: str, tok: Optional[Token] = None, expected=None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col, expected)

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "kw") and t.text == text

    def accept(self, text: str) -> Optional[Token]:
        if self.at(text):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"syntax error near {found!r}", expected={repr(text)})
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "ident":
            found = t.text or "end of input"
            raise self.error(f"syntax error near {found!r}", expected={"identifier"})
        self.i += 1
        return t

    # -- top level -------------------------------------------------------------

    def parse_unit(self) -> SourceUnit:
        kernels, types, funcs = [], [], []
        while self.tok.kind != "eof":
            anns = self.annotations()
            if self.at("kernel"):
                kernels.append(self.kernel(anns))
            elif self.at("type"):
                self._no_annotations(anns, "type declaration")
                types.append(self.type_decl())
            elif self.at("func"):
                self._no_annotations(anns, "function")
                funcs.append(self.func_decl())
            else:
                raise self.error(
                    f"syntax error near {self.tok.text or 'end of input'!r}",
                    expected={"'kernel'", "'type'", "'func'", "'@'"},
                )
        names = set()
        for k in kernels:
            if k.name in names:
                raise ParseError(f"duplicate kernel name {k.name!r}", k.pos.line, k.pos.col)
            names.add(k.name)
        return SourceUnit(self.path, self.text, tuple(kernels), tuple(types), tuple(funcs))

    def _no_annotations(self, anns, what: str):
        if anns:
            a = anns[0]
            target = ANNOTATIONS[a.name][0]
            raise ParseError(f"annotation @{a.name} not allowed on {what} (target is {target})", a.pos.line, a.pos.col)

    def annotations(self) -> list:
        out = []
        while self.at("@"):
            at = self.expect("@")
            name_tok = self.ident()
            name = name_tok.text.lower()
            if name not in ANNOTATIONS:
                raise ParseError(f"unknown annotation @{name_tok.text}", at.line, at.col)
            allowed = ANNOTATIONS[name][1]
            args = {}
            if self.accept("("):
                if not self.at(")"):
                    while True:
                        key_tok = self.ident()
                        key = key_tok.text.lower()
                        if key not in allowed:
                            raise ParseError(
                                f"unknown annotation parameter {key_tok.text!r} for @{name}",
                                key_tok.line, key_tok.col,
                            )
                        self.expect("=")
                        val_tok = self.tok
                        if val_tok.kind not in ("ident", "kw", "int"):
                            raise self.error("syntax error in annotation", expected={"annotation value"})
                        self.i += 1
                        args[key] = self._annotation_value(allowed[key], val_tok)
                        if not self.accept(","):
                            break
                self.expect(")")
            out.append(Annotation(name, args, at.pos))
        return out

    def _annotation_value(self, kind: str, tok: Token):
        text = tok.text
        try:
            if kind == "bool":
                if text not in ("true", "false"):
                    raise ValueError
                return text == "true"
            if kind == "iteration_space":
                return IterationSpace[text.upper()]
            if kind == "atomic_op":
                return AtomicOp[text.upper()]
        except (KeyError, ValueError):
            pass
        raise ParseError(f"unknown annotation value {text!r}", tok.line, tok.col)

    def _check_targets(self, anns, target: str):
        for a in anns:
            want = ANNOTATIONS[a.name][0]
            if want != target:
                raise ParseError(
                    f"annotation @{a.name} not allowed on {target} (target is {want})",
                    a.pos.line, a.pos.col,
                )

    def type_ref(self):
        t = self.ident()
        if t.text in SCALAR_NAMES:
            base = ScalarType(t.text)
            if self.accept("["):
                length = None
                if self.tok.kind == "int":
                    length = int(self.tok.text.rstrip("lL"))
                    self.i += 1
                    if length <= 0:
                        raise self.error("array length must be positive")
                self.expect("]")
                return ArrayType(base, length)
            return base
        return StructType(t.text)

    def kernel(self, anns) -> KernelHIR:
        self._check_targets(anns, "kernel")
        kw = self.expect("kernel")
        name = self.ident().text
        jaccs = [a for a in anns if a.name == "jacc"]
        if not jaccs:
            raise ParseError(f"kernel {name!r} lacks a @jacc annotation", kw.line, kw.col)
        if len(jaccs) > 1:
            raise ParseError(f"kernel {name!r} has more than one @jacc annotation", kw.line, kw.col)
        ja = jaccs[0].args
        if "iterationspace" not in ja:
            a = jaccs[0]
            raise ParseError("@jacc requires an explicit iterationSpace", a.pos.line, a.pos.col)
        jacc = JaccSpec(ja["iterationspace"], ja.get("exceptions", False))
        self.expect("(")
        params = []
        seen = set()
        if not self.at(")"):
            while True:
                params.append(self.kernel_param(seen))
                if not self.accept(","):
                    break
        self.expect(")")
        self.expect("{")
        fields, stmts = [], []
        field_names = set()
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated kernel body", expected={"'}'"})
            if self.at("@") or self.at("field"):
                fanns = self.annotations()
                if self.at("field"):
                    f = self.field_decl(fanns)
                    if f.name in field_names:
                        raise ParseError(f"duplicate field {f.name!r}", f.pos.line, f.pos.col)
                    field_names.add(f.name)
                    fields.append(f)
                    continue
                if fanns:
                    self._check_targets(fanns, "statement")
            stmts.append(self.statement())
        self.expect("}")
        return KernelHIR(name, tuple(params), tuple(fields), Block(tuple(stmts), kw.pos), jacc, kw.pos)

    def kernel_param(self, seen: set) -> Param:
        anns = self.annotations()
        self._check_targets(anns, "parameter")
        name_tok = self.ident()
        if name_tok.text in seen:
            raise ParseError(f"duplicate parameter {name_tok.text!r}", name_tok.line, name_tok.col)
        seen.add(name_tok.text)
        self.expect(":")
        ty = self.type_ref()
        if len(anns) > 1:
            raise ParseError(f"parameter {name_tok.text!r} has conflicting access annotations", name_tok.line, name_tok.col)
        mode, cachable = None, False
        if anns:
            mode = Mode(anns[0].name)
            cachable = anns[0].args.get("cachable", False)
        if isinstance(ty, ScalarType):
            if mode is None:
                mode = Mode.READ
            elif mode is not Mode.READ:
                raise ParseError(f"scalar parameter {name_tok.text!r} can only be @read", name_tok.line, name_tok.col)
        elif isinstance(ty, ArrayType) and ty.length is not None:
            raise ParseError("array parameters must be unsized (T[])", name_tok.line, name_tok.col)
        elif mode is None:
            raise ParseError(
                f"parameter {name_tok.text!r} needs @read, @write or @readwrite",
                name_tok.line, name_tok.col,
            )
        return Param(name_tok.text, ty, mode, cachable, name_tok.pos)

    def field_decl(self, anns) -> FieldDecl:
        self._check_targets(anns, "field")
        kw = self.expect("field")
        name = self.ident().text
        self.expect(":")
        ty = self.type_ref()
        self.expect(";")
        if len(anns) > 1:
            raise ParseError(f"field {name!r} may carry at most one of @atomic/@shared/@private/@constant", kw.line, kw.col)
        space, atomic = Space.GLOBAL, None
        if anns:
            a = anns[0]
            if a.name == "atomic":
                atomic = a.args.get("op", AtomicOp.NONE)
            else:
                space = Space(a.name)
        if isinstance(ty, ArrayType) and ty.length is None:
            raise ParseError(f"field {name!r} must have a fixed array length", kw.line, kw.col)
        if isinstance(ty, StructType):
            raise ParseError(f"field {name!r}: composite-typed fields are not supported", kw.line, kw.col)
        return FieldDecl(name, ty, space, atomic, kw.pos)

    def type_decl(self) -> CompositeTypeDecl:
        kw = self.expect("type")
        name = self.ident().text
        sup = None
        if self.accept(":"):
            sup = self.ident().text
        self.expect("{")
        fields, methods = [], []
        while not self.at("}"):
            if self.at("func"):
                methods.append(self.func_decl(owner=name))
                continue
            ftok = self.ident()
            self.expect(":")
            ty = self.type_ref()
            if isinstance(ty, ArrayType) and ty.length is None:
                raise ParseError(f"field {ftok.text!r} must have a fixed array length", ftok.line, ftok.col)
            if isinstance(ty, StructType):
                raise ParseError(f"field {ftok.text!r}: nested composite fields are not supported", ftok.line, ftok.col)
            self.expect(";")
            fields.append((ftok.text, ty))
        self.expect("}")
        return CompositeTypeDecl(name, sup, tuple(fields), tuple(methods), kw.pos)

    def func_decl(self, owner: Optional[str] = None) -> FuncDecl:
        kw = self.expect("func")
        name = self.ident().text
        self.expect("(")
        params = []
        seen = set()
        if not self.at(")"):
            while True:
                ptok = self.ident()
                if ptok.text in seen:
                    raise ParseError(f"duplicate parameter {ptok.text!r}", ptok.line, ptok.col)
                seen.add(ptok.text)
                self.expect(":")
                params.append(Param(ptok.text, self.type_ref(), None, False, ptok.pos))
                if not self.accept(","):
                    break
        self.expect(")")
        ret = None
        if self.accept("->"):
            ret = self.type_ref()
        body = self.block()
        return FuncDecl(name, tuple(params), ret, body, owner, kw.pos)

    # -- statements ------------------------------------------------------------

    def block(self) -> Block:
        lb = self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated block", expected={"'}'"})
            stmts.append(self.statement())
        self.expect("}")
        return Block(tuple(stmts), lb.pos)

    STMT_START = {"'{'", "'let'", "'for'", "'if'", "'return'", "expression"}

    def statement(self):
        t = self.tok
        if self.at("{"):
            return self.block()
        if self.accept("let"):
            name = self.ident().text
            ty = None
            if self.accept(":"):
                ty = self.type_ref()
            self.expect("=")
            init = self.expr()
            self.expect(";")
            return Let(name, ty, init, t.pos)
        if self.accept("for"):
            var = self.ident().text
            self.expect("in")
            lo = self.expr()
            self.expect("..")
            hi = self.expr()
            step = None
            if self.accept("step"):
                step = self.expr()
            body = self.block()
            return For(var, lo, hi, step, body, t.pos)
        if self.at("if"):
            return self.if_stmt()
        if self.accept("return"):
            value = None
            if not self.at(";"):
                value = self.expr()
            self.expect(";")
            return Return(value, t.pos)
        if t.kind == "ident" and t.text == "barrier" and self.peek().text == "(":
            self.i += 1
            self.expect("(")
            self.expect(")")
            self.expect(";")
            return Barrier(t.pos)
        if t.kind in ("kw", "eof") and t.text not in ("true", "false", "new"):
            raise self.error(f"syntax error near {t.text or 'end of input'!r}", expected=self.STMT_START)
        target = self.expr()
        if self.accept("="):
            value = self.expr()
            self.expect(";")
            self._check_lvalue(target, t)
            return Assign(target, value, None, t.pos)
        if self.tok.kind == "op" and len(self.tok.text) == 2 and self.tok.text[1] == "=" and self.tok.text[0] in "+-*/%&|^":
            op = self.tok.text[0]
            self.i += 1
            value = self.expr()
            self.expect(";")
            self._check_lvalue(target, t)
            return Assign(target, value, op, t.pos)
        if self.at("<<=") or self.at(">>="):
            op = self.tok.text[:2]
            self.i += 1
            value = self.expr()
            self.expect(";")
            self._check_lvalue(target, t)
            return Assign(target, value, op, t.pos)
        if not self.at(";"):
            raise self.error(f"syntax error near {self.tok.text or 'end of input'!r}", expected={"';'", "'='"})
        self.expect(";")
        if not isinstance(target, (Call, MethodCall)):
            raise ParseError("expression statement has no effect", t.line, t.col)
        return ExprStmt(target, t.pos)

    def _check_lvalue(self, e, tok):
        if not isinstance(e, (Var, Index, FieldRef)):
            raise ParseError("invalid assignment target", tok.line, tok.col)

    def if_stmt(self) -> If:
        t = self.expect("if")
        self.expect("(")
        cond = self.expr()
        self.expect(")")
        then = self.block()
        orelse = None
        if self.accept("else"):
            if self.at("if"):
                inner = self.if_stmt()
                orelse = Block((inner,), inner.pos)
            else:
                orelse = self.block()
        return If(cond, then, orelse, t.pos)

    # -- expressions -----------------------------------------------------------

    def expr(self, min_prec: int = 1):
        left = self.unary()
        while True:
            t = self.tok
            if t.kind != "op" or t.text not in PRECEDENCE:
                return left
            p = PRECEDENCE[t.text]
            if p < min_prec:
                return left
            self.i += 1
            right = self.expr(p + 1)
            left = Binary(t.text, left, right, t.pos)

    def unary(self):
        t = self.tok
        if t.kind == "op" and t.text in ("-", "!", "~"):
            self.i += 1
            return Unary(t.text, self.unary(), t.pos)
        return self.postfix(self.primary())

    def postfix(self, e):
        while True:
            t = self.tok
            if self.accept("["):
                idx = self.expr()
                self.expect("]")
                e = Index(e, idx, False, t.pos)
            elif self.at(".") and self.peek().kind == "ident":
                self.i += 1
                name = self.ident().text
                if self.accept("("):
                    e = MethodCall(e, name, self.call_args(), t.pos)
                else:
                    e = FieldRef(e, name, t.pos)
            else:
                return e

    def call_args(self) -> tuple:
        args = []
        if not self.at(")"):
            while True:
                args.append(self.expr())
                if not self.accept(","):
                    break
        self.expect(")")
        return tuple(args)

    def primary(self):
        t = self.tok
        if t.kind == "int":
            self.i += 1
            if t.text[-1] in "lL":
                return Const(int(t.text[:-1]), I64, t.pos)
            return Const(int(t.text), I32, t.pos)
        if t.kind == "float":
            self.i += 1
            text = t.text
            ty = F32
            if text[-1] in "dD":
                ty, text = F64, text[:-1]
            elif text[-1] in "fF":
                text = text[:-1]
            return Const(float(text), ty, t.pos)
        if self.accept("true"):
            return Const(True, BOOL, t.pos)
        if self.accept("false"):
            return Const(False, BOOL, t.pos)
        if self.accept("new"):
            name = self.ident().text
            self.expect("(")
            return New(name, self.call_args(), t.pos)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "ident":
            self.i += 1
            if self.accept("("):
                args = self.call_args()
                if t.text in CAST_NAMES:
                    if len(args) != 1:
                        raise ParseError(f"cast {t.text}(...) takes one argument", t.line, t.col)
                    return Cast(ScalarType(t.text), args[0], t.pos)
                return Call(t.text, args, t.pos)
            return Var(t.text, t.pos)
        raise self.error(
            f"syntax error near {t.text or 'end of input'!r}",
            expected={"expression"},
        )


def parse_kernel(source: str, path: str = "<string>") -> SourceUnit:
    """Parse DSL text into a SourceUnit (kernels, composite types, functions)."""
    unit = Parser(source, path).parse_unit()
    _check_unit(unit)
    return unit


def _check_unit(unit: SourceUnit):
    from .errors import ParseError as PE

    names = set()
    for t in unit.type_decls:
        if t.name in names:
            raise PE(f"duplicate type {t.name!r}", t.pos.line, t.pos.col)
        names.add(t.name)
    for t in unit.type_decls:
        try:
            flat = unit.flattened_fields(t.name)
        except (KeyError, ValueError) as exc:
            raise PE(str(exc).strip('"'), t.pos.line, t.pos.col) from None
        seen = set()
        for fname, _ in flat:
            if fname in seen:
                raise PE(f"type {t.name!r}: field {fname!r} is declared twice in the inheritance chain", t.pos.line, t.pos.col)
            seen.add(fname)
    fnames = set()
    for f in unit.funcs:
        if f.name in fnames:
            raise PE(f"duplicate function {f.name!r}", f.pos.line, f.pos.col)
        fnames.add(f.name)

    def check_type(ty, pos):
        if isinstance(ty, StructType) and unit.type_decl(ty.name) is None:
            raise PE(f"undeclared composite type {ty.name!r}", pos.line, pos.col)

    for k in unit.kernels:
        for p in k.params:
            check_type(p.type, p.pos)
    for f in unit.funcs:
        for p in f.params:
            check_type(p.type, p.pos)
