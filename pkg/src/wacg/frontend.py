"""Frontend for the supported WebAssembly text-format subset.

Parses `.wat` sources into a ModuleIR, validates stack discipline and
index ranges, and can print an IR back to text (parse/print round-trip).
Only the i32 subset is accepted; anything else is a ParseError.
"""
from __future__ import annotations

from dataclasses import dataclass, field

I32_MIN = -(1 << 31)
I32_MAX = (1 << 31) - 1

UNOPS = {"eqz", "clz", "ctz", "popcnt"}
BINOPS = {
    "add", "sub", "mul", "div_s", "div_u", "rem_s", "rem_u",
    "and", "or", "xor", "shl", "shr_s", "shr_u",
    # relational operators; they are binops pushing 0/1
    "eq", "ne", "lt_s", "lt_u", "gt_s", "gt_u", "le_s", "le_u", "ge_s", "ge_u",
}
RELOPS = {"eq", "ne", "lt_s", "lt_u", "gt_s", "gt_u", "le_s", "le_u", "ge_s", "ge_u"}


class ParseError(Exception):
    def __init__(self, kind: str, message: str, line: int = 0):
        self.kind = kind  # "syntax" | "unsupported"
        self.line = line
        super().__init__(f"{kind} error at line {line}: {message}")


class ValidationError(Exception):
    def __init__(self, rule: str, message: str):
        self.rule = rule
        super().__init__(f"validation ({rule}): {message}")


@dataclass(frozen=True)
class FuncType:
    params: int
    results: int  # 0 or 1


@dataclass
class ImportDecl:
    module: str
    name: str
    type_index: int
    local_name: str | None = field(default=None, compare=False)


@dataclass
class ExportDecl:
    name: str
    kind: str  # "func" | "table" | "global"
    index: int


@dataclass
class GlobalDef:
    mutable: bool
    init: int
    name: str | None = field(default=None, compare=False)


@dataclass
class Instr:
    op: str
    # literal for const, index for locals/globals/calls, depth for br/br_if
    arg: int | None = None
    kind: str | None = None  # unop/binop mnemonic
    body: list["Instr"] = field(default_factory=list)
    orelse: list["Instr"] = field(default_factory=list)
    result: int = 0  # block/loop/if result arity
    site: int = field(default=-1, compare=False)
    label_id: int = field(default=-1, compare=False)
    line: int = field(default=0, compare=False)


@dataclass
class FunctionDef:
    type_index: int
    locals: int
    body: list[Instr]
    name: str | None = field(default=None, compare=False)


@dataclass
class ModuleIR:
    types: list[FuncType] = field(default_factory=list)
    imports: list[ImportDecl] = field(default_factory=list)
    functions: list[FunctionDef] = field(default_factory=list)
    globals: list[GlobalDef] = field(default_factory=list)
    table: list[int | None] = field(default_factory=list)
    exports: list[ExportDecl] = field(default_factory=list)
    start: int | None = None

    @property
    def num_funcs(self) -> int:
        return len(self.imports) + len(self.functions)

    def is_import(self, idx: int) -> bool:
        return idx < len(self.imports)

    def func_type(self, idx: int) -> FuncType:
        if idx < len(self.imports):
            return self.types[self.imports[idx].type_index]
        return self.types[self.functions[idx - len(self.imports)].type_index]

    def func_name(self, idx: int) -> str | None:
        if idx < len(self.imports):
            imp = self.imports[idx]
            return imp.local_name or f"{imp.module}.{imp.name}"
        return self.functions[idx - len(self.imports)].name

    def func_def(self, idx: int) -> FunctionDef:
        return self.functions[idx - len(self.imports)]


# ---------------------------------------------------------------------------
# S-expression reader
# ---------------------------------------------------------------------------

@dataclass
class Atom:
    text: str
    line: int


@dataclass
class SList:
    items: list
    line: int


def _tokenize(source: str):
    line = 1
    i = 0
    n = len(source)
    while i < n:
        c = source[i]
        if c == "\n":
            line += 1
            i += 1
        elif c in " \t\r":
            i += 1
        elif source.startswith(";;", i):
            while i < n and source[i] != "\n":
                i += 1
        elif source.startswith("(;", i):
            depth = 1
            i += 2
            while i < n and depth:
                if source.startswith("(;", i):
                    depth += 1
                    i += 2
                elif source.startswith(";)", i):
                    depth -= 1
                    i += 2
                else:
                    if source[i] == "\n":
                        line += 1
                    i += 1
        elif c == "(":
            yield ("(", line)
            i += 1
        elif c == ")":
            yield (")", line)
            i += 1
        elif c == '"':
            j = i + 1
            while j < n and source[j] != '"':
                if source[j] == "\\":
                    j += 1
                j += 1
            if j >= n:
                raise ParseError("syntax", "unterminated string", line)
            yield (source[i:j + 1], line)
            i = j + 1
        else:
            j = i
            while j < n and source[j] not in ' \t\r\n();"':
                j += 1
            yield (source[i:j], line)
            i = j


def _read_sexprs(source: str) -> list:
    stack: list[SList] = [SList([], 0)]
    for text, line in _tokenize(source):
        if text == "(":
            new = SList([], line)
            stack[-1].items.append(new)
            stack.append(new)
        elif text == ")":
            if len(stack) == 1:
                raise ParseError("syntax", "unbalanced ')'", line)
            stack.pop()
        else:
            stack[-1].items.append(Atom(text, line))
    if len(stack) != 1:
        raise ParseError("syntax", "unbalanced '('", stack[-1].line)
    return stack[0].items


# ---------------------------------------------------------------------------
# Module parser
# ---------------------------------------------------------------------------

_KNOWN_UNSUPPORTED_PREFIXES = ("i64.", "f32.", "f64.", "memory.", "v128.", "ref.")
_KNOWN_UNSUPPORTED = {
    "i32.load", "i32.store", "i32.load8_s", "i32.load8_u", "i32.load16_s",
    "i32.load16_u", "i32.store8", "i32.store16", "select", "br_table",
    "unreachable", "memory", "data", "i32.rotl", "i32.rotr",
    "return_call", "return_call_indirect",
}


def _unsupported(name: str, line: int):
    raise ParseError("unsupported", name, line)


def _parse_string(tok: str) -> str:
    return tok[1:-1]


def _parse_int(tok: Atom) -> int:
    text = tok.text.replace("_", "")
    try:
        v = int(text, 0)
    except ValueError:
        raise ParseError("syntax", f"expected integer, got {tok.text!r}", tok.line)
    if not (-(1 << 31) <= v < (1 << 32)):
        raise ParseError("syntax", f"i32 literal out of range: {tok.text}", tok.line)
    if v > I32_MAX:
        v -= 1 << 32
    return v


class _ModuleParser:
    def __init__(self):
        self.ir = ModuleIR()
        self.func_names: dict[str, int] = {}
        self.global_names: dict[str, int] = {}
        self.type_names: dict[str, int] = {}
        self.table_names: dict[str, int] = {}
        # (items, name) for bodies parsed after all names are known
        self._pending_funcs: list[tuple[list, str | None, int]] = []
        self._pending_elems: list[tuple[int, list]] = []
        self._pending_exports: list[tuple[str, str, Atom]] = []
        self._pending_start: Atom | None = None
        self._table_declared = False

    # -- type interning --------------------------------------------------

    def intern_type(self, ft: FuncType) -> int:
        for i, t in enumerate(self.ir.types):
            if t == ft:
                return i
        self.ir.types.append(ft)
        return len(self.ir.types) - 1

    def _parse_sig(self, items: list, pos: int) -> tuple[FuncType, int, list[str | None], int | None]:
        """Parse (type $t)? (param ...)* (result ...)? starting at pos.

        Returns (functype, new pos, param names, explicit type index or None).
        """
        params = 0
        results = 0
        param_names: list[str | None] = []
        explicit: int | None = None
        if pos < len(items) and isinstance(items[pos], SList) and \
                items[pos].items and isinstance(items[pos].items[0], Atom) and \
                items[pos].items[0].text == "type":
            explicit = self._resolve(items[pos].items[1], self.type_names, len(self.ir.types), "type")
            pos += 1
        while pos < len(items) and isinstance(items[pos], SList) and \
                items[pos].items and isinstance(items[pos].items[0], Atom) and \
                items[pos].items[0].text == "param":
            sub = items[pos].items[1:]
            if sub and isinstance(sub[0], Atom) and sub[0].text.startswith("$"):
                param_names.append(sub[0].text)
                sub = sub[1:]
                if len(sub) != 1:
                    raise ParseError("syntax", "named param takes one type", items[pos].line)
            else:
                param_names.extend([None] * len(sub))
            for a in sub:
                if not (isinstance(a, Atom) and a.text == "i32"):
                    _unsupported(getattr(a, "text", "?"), items[pos].line)
            params += len(sub)
            pos += 1
        while pos < len(items) and isinstance(items[pos], SList) and \
                items[pos].items and isinstance(items[pos].items[0], Atom) and \
                items[pos].items[0].text == "result":
            for a in items[pos].items[1:]:
                if not (isinstance(a, Atom) and a.text == "i32"):
                    _unsupported(getattr(a, "text", "?"), items[pos].line)
                results += 1
            pos += 1
        if explicit is not None:
            if params or results:
                et = self.ir.types[explicit]
                if et != FuncType(params, results):
                    raise ParseError("syntax", "inline signature disagrees with (type ...)", items[0].line if items else 0)
            ft = self.ir.types[explicit]
            param_names = param_names or [None] * ft.params
            return ft, pos, param_names, explicit
        return FuncType(params, results), pos, param_names, None

    def _resolve(self, tok, names: dict[str, int], limit: int, what: str) -> int:
        if not isinstance(tok, Atom):
            raise ParseError("syntax", f"expected {what} index", getattr(tok, "line", 0))
        if tok.text.startswith("$"):
            if tok.text not in names:
                raise ParseError("syntax", f"unknown {what} name {tok.text}", tok.line)
            return names[tok.text]
        idx = _parse_int(tok)
        if idx < 0 or (limit is not None and idx >= limit):
            raise ParseError("syntax", f"{what} index {idx} out of range", tok.line)
        return idx

    # -- first pass: collect declarations --------------------------------

    def parse_module(self, mod: SList) -> ModuleIR:
        head = mod.items[0] if mod.items else None
        if not (isinstance(head, Atom) and head.text == "module"):
            raise ParseError("syntax", "expected (module ...)", mod.line)
        fields = mod.items[1:]
        # types must be interned first so (type $t) references resolve
        for f in fields:
            if isinstance(f, SList) and f.items and isinstance(f.items[0], Atom) \
                    and f.items[0].text == "type":
                self._field_type(f)
        for f in fields:
            if not (isinstance(f, SList) and f.items and isinstance(f.items[0], Atom)):
                raise ParseError("syntax", "malformed module field", getattr(f, "line", mod.line))
            kw = f.items[0].text
            if kw == "type":
                continue
            handler = getattr(self, f"_field_{kw}", None)
            if handler is None:
                _unsupported(kw, f.line)
            handler(f)
        self._finish()
        return self.ir

    def _field_type(self, f: SList):
        items = f.items[1:]
        name = None
        if items and isinstance(items[0], Atom) and items[0].text.startswith("$"):
            name = items[0].text
            items = items[1:]
        if len(items) != 1 or not isinstance(items[0], SList) or \
                not items[0].items or items[0].items[0].text != "func":
            raise ParseError("syntax", "expected (type (func ...))", f.line)
        ft, pos, _, _ = self._parse_sig(items[0].items, 1)
        if pos != len(items[0].items):
            raise ParseError("syntax", "junk in func type", f.line)
        if ft.results > 1:
            _unsupported("multi-value results", f.line)
        idx = len(self.ir.types)
        self.ir.types.append(ft)  # (type ...) always declares a new slot
        if name:
            self.type_names[name] = idx

    def _field_import(self, f: SList):
        items = f.items[1:]
        if len(items) != 3:
            raise ParseError("syntax", "expected (import \"m\" \"n\" (func ...))", f.line)
        mod, name, desc = items
        if not isinstance(desc, SList) or not desc.items or desc.items[0].text != "func":
            _unsupported("non-function import", f.line)
        if self._pending_funcs:
            raise ParseError("syntax", "imports must precede function definitions", f.line)
        sub = desc.items[1:]
        local_name = None
        pos = 0
        if sub and isinstance(sub[0], Atom) and sub[0].text.startswith("$"):
            local_name = sub[0].text
            pos = 1
        ft, pos2, _, explicit = self._parse_sig(sub, pos)
        if pos2 != len(sub):
            raise ParseError("syntax", "junk in import descriptor", f.line)
        if ft.results > 1:
            _unsupported("multi-value results", f.line)
        ti = explicit if explicit is not None else self.intern_type(ft)
        if local_name:
            self.func_names[local_name] = len(self.ir.imports)
        self.ir.imports.append(ImportDecl(_parse_string(mod.text), _parse_string(name.text), ti, local_name))

    def _field_func(self, f: SList):
        items = f.items[1:]
        name = None
        if items and isinstance(items[0], Atom) and items[0].text.startswith("$"):
            name = items[0].text
            items = items[1:]
        idx = len(self.ir.imports) + len(self.ir.functions) + len(self._pending_funcs)
        if name:
            self.func_names[name] = idx
        # inline (export "n") and (import ...) abbreviations
        while items and isinstance(items[0], SList) and items[0].items and \
                isinstance(items[0].items[0], Atom) and items[0].items[0].text == "export":
            self._pending_exports.append((_parse_string(items[0].items[1].text), "func", Atom(str(idx), f.line)))
            items = items[1:]
        if items and isinstance(items[0], SList) and items[0].items and \
                isinstance(items[0].items[0], Atom) and items[0].items[0].text == "import":
            _unsupported("inline function import", f.line)
        self._pending_funcs.append((items, name, f.line))

    def _field_global(self, f: SList):
        items = f.items[1:]
        name = None
        if items and isinstance(items[0], Atom) and items[0].text.startswith("$"):
            name = items[0].text
            items = items[1:]
        while items and isinstance(items[0], SList) and items[0].items and \
                isinstance(items[0].items[0], Atom) and items[0].items[0].text == "export":
            self._pending_exports.append(
                (_parse_string(items[0].items[1].text), "global", Atom(str(len(self.ir.globals)), f.line)))
            items = items[1:]
        if len(items) != 2:
            raise ParseError("syntax", "expected (global <type> <init>)", f.line)
        ty, init = items
        mutable = False
        if isinstance(ty, SList):
            if len(ty.items) != 2 or ty.items[0].text != "mut":
                raise ParseError("syntax", "bad global type", f.line)
            mutable = True
            ty = ty.items[1]
        if not (isinstance(ty, Atom) and ty.text == "i32"):
            _unsupported(getattr(ty, "text", "?"), f.line)
        if not (isinstance(init, SList) and len(init.items) == 2 and
                init.items[0].text == "i32.const"):
            raise ParseError("syntax", "global init must be (i32.const N)", f.line)
        if name:
            self.global_names[name] = len(self.ir.globals)
        self.ir.globals.append(GlobalDef(mutable, _parse_int(init.items[1]), name))

    def _field_table(self, f: SList):
        if self._table_declared:
            _unsupported("multiple tables", f.line)
        self._table_declared = True
        items = f.items[1:]
        if items and isinstance(items[0], Atom) and items[0].text.startswith("$"):
            self.table_names[items[0].text] = 0
            items = items[1:]
        while items and isinstance(items[0], SList) and items[0].items and \
                isinstance(items[0].items[0], Atom) and items[0].items[0].text == "export":
            self._pending_exports.append((_parse_string(items[0].items[1].text), "table", Atom("0", f.line)))
            items = items[1:]
        if items and isinstance(items[0], Atom) and items[0].text == "funcref":
            # inline form: (table funcref (elem $f $g ...))
            if len(items) != 2 or not isinstance(items[1], SList) or \
                    items[1].items[0].text != "elem":
                raise ParseError("syntax", "expected (table funcref (elem ...))", f.line)
            refs = items[1].items[1:]
            self.ir.table = [None] * len(refs)
            self._pending_elems.append((0, refs))
            return
        # sized form: (table N funcref) or (table N M funcref)
        sizes = []
        while items and isinstance(items[0], Atom) and not items[0].text == "funcref":
            sizes.append(_parse_int(items[0]))
            items = items[1:]
        if not sizes or not items or items[0].text != "funcref" or len(items) != 1:
            raise ParseError("syntax", "expected (table N funcref)", f.line)
        self.ir.table = [None] * sizes[0]

    def _field_elem(self, f: SList):
        items = f.items[1:]
        if items and isinstance(items[0], SList) and items[0].items and \
                isinstance(items[0].items[0], Atom) and items[0].items[0].text == "table":
            items = items[1:]
        if not items or not isinstance(items[0], SList) or \
                len(items[0].items) != 2 or items[0].items[0].text not in ("i32.const", "offset"):
            raise ParseError("syntax", "expected (elem (i32.const N) refs...)", f.line)
        off_expr = items[0]
        if off_expr.items[0].text == "offset":
            raise ParseError("syntax", "only (i32.const N) elem offsets supported", f.line)
        offset = _parse_int(off_expr.items[1])
        refs = items[1:]
        if refs and isinstance(refs[0], Atom) and refs[0].text == "func":
            refs = refs[1:]
        self._pending_elems.append((offset, refs))

    def _field_export(self, f: SList):
        items = f.items[1:]
        if len(items) != 2 or not isinstance(items[1], SList) or len(items[1].items) != 2:
            raise ParseError("syntax", "expected (export \"n\" (kind idx))", f.line)
        kind = items[1].items[0].text
        if kind not in ("func", "table", "global"):
            _unsupported(f"export of {kind}", f.line)
        self._pending_exports.append((_parse_string(items[0].text), kind, items[1].items[1]))

    def _field_start(self, f: SList):
        if len(f.items) != 2:
            raise ParseError("syntax", "expected (start f)", f.line)
        self._pending_start = f.items[1]

    # -- second pass: bodies and references -------------------------------

    def _finish(self):
        for items, name, line in self._pending_funcs:
            ft, pos, param_names, explicit = self._parse_sig(items, 0)
            if ft.results > 1:
                _unsupported("multi-value results", line)
            ti = explicit if explicit is not None else self.intern_type(ft)
            local_names = list(param_names)
            nlocals = 0
            while pos < len(items) and isinstance(items[pos], SList) and \
                    items[pos].items and isinstance(items[pos].items[0], Atom) and \
                    items[pos].items[0].text == "local":
                sub = items[pos].items[1:]
                if sub and isinstance(sub[0], Atom) and sub[0].text.startswith("$"):
                    local_names.append(sub[0].text)
                    sub = sub[1:]
                    if len(sub) != 1:
                        raise ParseError("syntax", "named local takes one type", items[pos].line)
                else:
                    local_names.extend([None] * len(sub))
                for a in sub:
                    if not (isinstance(a, Atom) and a.text == "i32"):
                        _unsupported(getattr(a, "text", "?"), items[pos].line)
                nlocals += len(sub)
                pos += 1
            names = {n: i for i, n in enumerate(local_names) if n}
            body = _flatten_seqs(_InstrParser(self, names).parse_seq(items[pos:], []))
            self.ir.functions.append(FunctionDef(ti, nlocals, body, name))
        nfuncs = self.ir.num_funcs
        for offset, refs in self._pending_elems:
            for k, r in enumerate(refs):
                idx = self._resolve(r, self.func_names, nfuncs, "function")
                slot = offset + k
                if slot >= len(self.ir.table):
                    raise ParseError("syntax", "elem segment exceeds table size", getattr(r, "line", 0))
                self.ir.table[slot] = idx
        for name, kind, tok in self._pending_exports:
            if kind == "func":
                idx = self._resolve(tok, self.func_names, nfuncs, "function")
            elif kind == "global":
                idx = self._resolve(tok, self.global_names, len(self.ir.globals), "global")
            else:
                idx = self._resolve(tok, self.table_names, 1, "table")
            self.ir.exports.append(ExportDecl(name, kind, idx))
        if self._pending_start is not None:
            self.ir.start = self._resolve(self._pending_start, self.func_names, nfuncs, "function")


class _InstrParser:
    """Parses instruction sequences, both flat and folded forms."""

    def __init__(self, mp: _ModuleParser, local_names: dict[str, int]):
        self.mp = mp
        self.local_names = local_names

    def parse_seq(self, items: list, label_stack: list[str | None]) -> list[Instr]:
        out: list[Instr] = []
        pos = 0
        while pos < len(items):
            instr, pos = self._parse_one(items, pos, label_stack)
            out.append(instr)
        return out

    def _label_depth(self, tok: Atom, label_stack: list[str | None]) -> int:
        if tok.text.startswith("$"):
            for d, name in enumerate(reversed(label_stack)):
                if name == tok.text:
                    return d
            raise ParseError("syntax", f"unknown label {tok.text}", tok.line)
        return _parse_int(tok)

    def _parse_one(self, items: list, pos: int, labels: list[str | None]) -> tuple[Instr, int]:
        item = items[pos]
        if isinstance(item, SList):
            return self._parse_folded(item, labels), pos + 1
        return self._parse_flat(items, pos, labels)

    # -- folded form ------------------------------------------------------

    def _parse_folded(self, lst: SList, labels: list[str | None]) -> Instr:
        if not lst.items or not isinstance(lst.items[0], Atom):
            raise ParseError("syntax", "malformed instruction", lst.line)
        head = lst.items[0]
        items = lst.items[1:]
        if head.text in ("block", "loop"):
            name, result, pos = self._block_head(items, lst.line)
            labels.append(name)
            body = self.parse_seq(items[pos:], labels)
            labels.pop()
            return Instr(head.text, body=body, result=result, line=lst.line)
        if head.text == "if":
            name, result, pos = self._block_head(items, lst.line)
            # folded condition operand(s) precede (then ...)
            cond: list[Instr] = []
            while pos < len(items) and not (
                    isinstance(items[pos], SList) and items[pos].items and
                    isinstance(items[pos].items[0], Atom) and items[pos].items[0].text == "then"):
                if not isinstance(items[pos], SList):
                    raise ParseError("syntax", "expected folded condition or (then ...)", lst.line)
                cond.append(self._parse_folded(items[pos], labels))
                pos += 1
            if pos >= len(items):
                raise ParseError("syntax", "if without (then ...)", lst.line)
            labels.append(name)
            then_body = self.parse_seq(items[pos].items[1:], labels)
            pos += 1
            else_body: list[Instr] = []
            if pos < len(items):
                el = items[pos]
                if not (isinstance(el, SList) and el.items and el.items[0].text == "else"):
                    raise ParseError("syntax", "expected (else ...)", lst.line)
                else_body = self.parse_seq(el.items[1:], labels)
                pos += 1
            labels.pop()
            if pos != len(items):
                raise ParseError("syntax", "junk after (else ...)", lst.line)
            node = Instr("if", body=then_body, orelse=else_body, result=result, line=lst.line)
            cond.append(node)
            return _fold_group(cond, lst.line)
        # plain instruction with folded operands: operands first, then self
        op, consumed = self._plain(head, items, 0, labels)
        operands = [self._parse_folded(x, labels) if isinstance(x, SList)
                    else self._atom_error(x)
                    for x in items[consumed:]]
        operands.append(op)
        return _fold_group(operands, lst.line)

    def _atom_error(self, x: Atom):
        raise ParseError("syntax", f"unexpected token {x.text!r} in folded instruction", x.line)

    def _block_head(self, items: list, line: int) -> tuple[str | None, int, int]:
        pos = 0
        name = None
        if pos < len(items) and isinstance(items[pos], Atom) and items[pos].text.startswith("$"):
            name = items[pos].text
            pos += 1
        result = 0
        while pos < len(items) and isinstance(items[pos], SList) and items[pos].items and \
                isinstance(items[pos].items[0], Atom) and items[pos].items[0].text in ("result", "param"):
            if items[pos].items[0].text == "param":
                _unsupported("block parameters", line)
            for a in items[pos].items[1:]:
                if not (isinstance(a, Atom) and a.text == "i32"):
                    _unsupported(getattr(a, "text", "?"), line)
                result += 1
            pos += 1
        if result > 1:
            _unsupported("multi-value results", line)
        return name, result, pos

    # -- flat form --------------------------------------------------------

    def _parse_flat(self, items: list, pos: int, labels: list[str | None]) -> tuple[Instr, int]:
        head = items[pos]
        if head.text in ("block", "loop", "if"):
            return self._parse_flat_block(items, pos, labels)
        instr, consumed = self._plain(head, items, pos + 1, labels)
        return instr, consumed

    def _parse_flat_block(self, items: list, pos: int, labels: list[str | None]) -> tuple[Instr, int]:
        head = items[pos]
        pos += 1
        rest = items[pos:]
        name, result, adv = self._block_head(rest, head.line)
        pos += adv
        labels.append(name)
        body: list[Instr] = []
        else_body: list[Instr] = []
        current = body
        while True:
            if pos >= len(items):
                raise ParseError("syntax", f"unterminated {head.text}", head.line)
            tok = items[pos]
            if isinstance(tok, Atom) and tok.text == "end":
                pos += 1
                break
            if isinstance(tok, Atom) and tok.text == "else" and head.text == "if":
                current = else_body
                pos += 1
                continue
            instr, pos = self._parse_one(items, pos, labels)
            current.append(instr)
        labels.pop()
        if head.text == "if":
            return Instr("if", body=body, orelse=else_body, result=result, line=head.line), pos
        return Instr(head.text, body=body, result=result, line=head.line), pos

    # -- plain instructions ----------------------------------------------

    def _plain(self, head: Atom, items: list, pos: int, labels: list[str | None]) -> tuple[Instr, int]:
        t = head.text
        line = head.line

        def imm():
            nonlocal pos
            if pos >= len(items) or not isinstance(items[pos], Atom):
                raise ParseError("syntax", f"{t} needs an immediate", line)
            tok = items[pos]
            pos += 1
            return tok

        if t == "i32.const":
            return Instr("const", arg=_parse_int(imm()), line=line), pos
        if t.startswith("i32."):
            kind = t[4:]
            if kind in UNOPS:
                return Instr("unop", kind=kind, line=line), pos
            if kind in BINOPS:
                return Instr("binop", kind=kind, line=line), pos
            _unsupported(t, line)
        if t in ("local.get", "local.set", "local.tee"):
            idx = self.mp._resolve(imm(), self.local_names, None, "local")
            return Instr(t, arg=idx, line=line), pos
        if t in ("global.get", "global.set"):
            idx = self.mp._resolve(imm(), self.mp.global_names, len(self.mp.ir.globals), "global")
            return Instr(t, arg=idx, line=line), pos
        if t in ("br", "br_if"):
            return Instr(t, arg=self._label_depth(imm(), labels), line=line), pos
        if t == "call":
            # function indices may not all be known yet; resolve by name now,
            # range-check at validation
            tok = imm()
            if tok.text.startswith("$"):
                if tok.text not in self.mp.func_names:
                    raise ParseError("syntax", f"unknown function name {tok.text}", tok.line)
                idx = self.mp.func_names[tok.text]
            else:
                idx = _parse_int(tok)
            return Instr("call", arg=idx, line=line), pos
        if t == "call_indirect":
            ti = None
            if pos < len(items) and isinstance(items[pos], SList) and items[pos].items and \
                    isinstance(items[pos].items[0], Atom) and items[pos].items[0].text == "type":
                ti = self.mp._resolve(items[pos].items[1], self.mp.type_names, len(self.mp.ir.types), "type")
                pos += 1
            ft, pos2, _, _ = self.mp._parse_sig(items, pos)
            inline = pos2 > pos
            pos = pos2
            if ti is None:
                if not inline:
                    raise ParseError("syntax", "call_indirect needs a (type ...) or inline signature", line)
                ti = self.mp.intern_type(ft)
            return Instr("call_indirect", arg=ti, line=line), pos
        if t == "return":
            return Instr("return", line=line), pos
        if t == "drop":
            return Instr("drop", line=line), pos
        if t == "nop":
            return Instr("nop", line=line), pos
        _unsupported(t, line)


def _fold_group(instrs: list[Instr], line: int) -> Instr:
    """Wraps folded operands+operator into a single sequencing node."""
    if len(instrs) == 1:
        return instrs[0]
    return Instr("seq", body=instrs, line=line)


def _flatten_seqs(body: list[Instr]) -> list[Instr]:
    """Splice folding-introduced seq nodes so the IR is one canonical shape."""
    out: list[Instr] = []
    for i in body:
        if i.op == "seq":
            out.extend(_flatten_seqs(i.body))
        else:
            i.body = _flatten_seqs(i.body)
            i.orelse = _flatten_seqs(i.orelse)
            out.append(i)
    return out


def parse(source: str) -> ModuleIR:
    """Parse WAT text into a ModuleIR. Raises ParseError."""
    top = _read_sexprs(source)
    if len(top) != 1:
        raise ParseError("syntax", "expected exactly one (module ...)", 0)
    return _ModuleParser().parse_module(top[0])


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class ValidatedModule:
    module: ModuleIR
    site_counts: list[int]  # per defined function, number of instruction sites

    @property
    def ir(self) -> ModuleIR:
        return self.module

    def default_roots(self) -> list[int]:
        roots = [e.index for e in self.module.exports if e.kind == "func"]
        if self.module.start is not None:
            roots.append(self.module.start)
        seen: set[int] = set()
        out = []
        for r in roots:
            if r not in seen:
                seen.add(r)
                out.append(r)
        return out

    def export_index(self, name: str) -> int:
        for e in self.module.exports:
            if e.kind == "func" and e.name == name:
                return e.index
        raise KeyError(name)


class _BodyValidator:
    """Standard stack-discipline check under the all-i32 assumption.

    Tracks (height, unreachable) per control frame; after a br the rest of
    the frame is polymorphic, as in the reference validation algorithm.
    """

    def __init__(self, m: ModuleIR, ft: FuncType, nlocals: int, fname: str):
        self.m = m
        self.nlocals = ft.params + nlocals
        self.fname = fname
        self.height = 0
        self.site = 0
        self.label_id = 0
        # frames: (kind, result_arity, entry_height, unreachable)
        self.frames: list[list] = [["func", ft.results, 0, False]]

    def err(self, rule: str, msg: str, instr: Instr):
        raise ValidationError(rule, f"{msg} (function {self.fname}, line {instr.line})")

    def pop(self, n: int, instr: Instr):
        frame = self.frames[-1]
        if frame[3]:  # unreachable: polymorphic stack
            self.height = max(frame[2], self.height - n)
            return
        if self.height - n < frame[2]:
            self.err("stack-underflow", f"{instr.op} needs {n} operand(s)", instr)
        self.height -= n

    def push(self, n: int):
        self.height += n

    def visit_seq(self, body: list[Instr]):
        for i in body:
            self.visit(i)

    def visit(self, instr: Instr):
        instr.site = self.site
        self.site += 1
        op = instr.op
        if op == "seq":
            self.visit_seq(instr.body)
        elif op == "const":
            self.push(1)
        elif op == "unop":
            self.pop(1, instr)
            self.push(1)
        elif op == "binop":
            self.pop(2, instr)
            self.push(1)
        elif op == "local.get":
            if instr.arg >= self.nlocals:
                self.err("local-index", f"local {instr.arg} undeclared", instr)
            self.push(1)
        elif op in ("local.set", "local.tee"):
            if instr.arg >= self.nlocals:
                self.err("local-index", f"local {instr.arg} undeclared", instr)
            self.pop(1, instr)
            if op == "local.tee":
                self.push(1)
        elif op == "global.get":
            self.push(1)
        elif op == "global.set":
            if not self.m.globals[instr.arg].mutable:
                self.err("global-immutable", f"global {instr.arg} is immutable", instr)
            self.pop(1, instr)
        elif op in ("block", "loop"):
            instr.label_id = self.label_id
            self.label_id += 1
            self.frames.append([op, instr.result, self.height, False])
            self.visit_seq(instr.body)
            self.exit_frame(instr)
        elif op == "if":
            instr.label_id = self.label_id
            self.label_id += 1
            self.pop(1, instr)
            entry = self.height
            self.frames.append(["block", instr.result, entry, False])
            self.visit_seq(instr.body)
            self.exit_frame(instr)
            if instr.orelse or instr.result:
                self.frames.append(["block", instr.result, entry, False])
                saved = self.height
                self.height = entry
                self.visit_seq(instr.orelse)
                self.exit_frame(instr)
                if self.height != saved:
                    self.err("branch-join", "if arms disagree on stack height", instr)
        elif op in ("br", "br_if"):
            depth = instr.arg
            if depth >= len(self.frames):
                self.err("branch-depth",
                         f"br depth {depth} exceeds nesting {len(self.frames) - 1}", instr)
            if op == "br_if":
                self.pop(1, instr)
            target = self.frames[-1 - depth]
            arity = 0 if target[0] == "loop" else target[1]
            self.pop(arity, instr)
            self.push(arity)
            if op == "br":
                self.frames[-1][3] = True
        elif op == "call":
            if instr.arg >= self.m.num_funcs:
                self.err("func-index", f"call target {instr.arg} out of range", instr)
            ft = self.m.func_type(instr.arg)
            self.pop(ft.params, instr)
            self.push(ft.results)
        elif op == "call_indirect":
            if instr.arg >= len(self.m.types):
                self.err("type-index", f"type {instr.arg} out of range", instr)
            if not self.m.table and True:
                self.err("no-table", "call_indirect requires a table", instr)
            ft = self.m.types[instr.arg]
            self.pop(1 + ft.params, instr)
            self.push(ft.results)
        elif op == "return":
            self.pop(self.frames[0][1], instr)
            self.push(self.frames[0][1])
            self.frames[-1][3] = True
        elif op in ("drop",):
            self.pop(1, instr)
        elif op == "nop":
            pass
        else:  # pragma: no cover - parser emits no other ops
            self.err("unknown-op", op, instr)

    def exit_frame(self, instr: Instr):
        frame = self.frames.pop()
        kind, arity, entry, unreachable = frame
        if unreachable:
            self.height = entry + arity
            return
        if self.height != entry + arity:
            self.err("block-result",
                     f"{instr.op} ends with height {self.height - entry}, "
                     f"declared {arity}", instr)


def validate(m: ModuleIR) -> ValidatedModule:
    """Check all ModuleIR invariants; returns a ValidatedModule."""
    nfuncs = m.num_funcs
    for slot, entry in enumerate(m.table):
        if entry is not None and not (0 <= entry < nfuncs):
            raise ValidationError("table-entry", f"slot {slot} references function {entry}")
    for e in m.exports:
        if e.kind == "func" and not (0 <= e.index < nfuncs):
            raise ValidationError("export-index", f"export {e.name!r} references function {e.index}")
        if e.kind == "global" and not (0 <= e.index < len(m.globals)):
            raise ValidationError("export-index", f"export {e.name!r} references global {e.index}")
    if m.start is not None:
        if not (0 <= m.start < nfuncs):
            raise ValidationError("start-index", f"start function {m.start} out of range")
        if m.func_type(m.start) != FuncType(0, 0):
            raise ValidationError("start-type", "start function must have type [] -> []")
    site_counts = []
    for k, fd in enumerate(m.functions):
        if not (0 <= fd.type_index < len(m.types)):
            raise ValidationError("type-index", f"function {k} has bad type index")
        ft = m.types[fd.type_index]
        v = _BodyValidator(m, ft, fd.locals, fd.name or str(len(m.imports) + k))
        v.visit_seq(fd.body)
        if v.frames[0][3]:
            pass  # body ended unreachable; any height is fine
        elif v.height != ft.results:
            raise ValidationError(
                "func-result",
                f"function {fd.name or k} body leaves {v.height} value(s), "
                f"declared {ft.results}")
        site_counts.append(v.site)
    return ValidatedModule(m, site_counts)


def parse_and_validate(source: str) -> ValidatedModule:
    return validate(parse(source))


# ---------------------------------------------------------------------------
# Printer (parse/print round-trip)
# ---------------------------------------------------------------------------

def print_module(m: ModuleIR) -> str:
    """Render a ModuleIR back to canonical flat-form WAT."""
    lines = ["(module"]
    for i, t in enumerate(m.types):
        params = " ".join(["i32"] * t.params)
        results = " ".join(["i32"] * t.results)
        sig = (f" (param {params})" if params else "") + (f" (result {results})" if results else "")
        lines.append(f"  (type (;{i};) (func{sig}))")
    for imp in m.imports:
        lines.append(f'  (import "{imp.module}" "{imp.name}" (func (type {imp.type_index})))')
    for g in m.globals:
        ty = "(mut i32)" if g.mutable else "i32"
        lines.append(f"  (global {ty} (i32.const {g.init}))")
    if m.table:
        lines.append(f"  (table {len(m.table)} funcref)")
        run_start = None
        for slot in range(len(m.table) + 1):
            filled = slot < len(m.table) and m.table[slot] is not None
            if filled and run_start is None:
                run_start = slot
            elif not filled and run_start is not None:
                refs = " ".join(str(m.table[s]) for s in range(run_start, slot))
                lines.append(f"  (elem (i32.const {run_start}) func {refs})")
                run_start = None
    for k, fd in enumerate(m.functions):
        lines.append(f"  (func (type {fd.type_index})")
        if fd.locals:
            lines.append("    (local " + " ".join(["i32"] * fd.locals) + ")")
        _print_body(fd.body, lines, 2)
        lines.append("  )")
    for e in m.exports:
        lines.append(f'  (export "{e.name}" ({e.kind} {e.index}))')
    if m.start is not None:
        lines.append(f"  (start {m.start})")
    lines.append(")")
    return "\n".join(lines) + "\n"


def _print_body(body: list[Instr], lines: list[str], depth: int):
    pad = "  " * depth
    for i in body:
        if i.op == "seq":
            _print_body(i.body, lines, depth)
        elif i.op in ("block", "loop"):
            res = " (result i32)" if i.result else ""
            lines.append(f"{pad}{i.op}{res}")
            _print_body(i.body, lines, depth + 1)
            lines.append(f"{pad}end")
        elif i.op == "if":
            res = " (result i32)" if i.result else ""
            lines.append(f"{pad}if{res}")
            _print_body(i.body, lines, depth + 1)
            if i.orelse:
                lines.append(f"{pad}else")
                _print_body(i.orelse, lines, depth + 1)
            lines.append(f"{pad}end")
        elif i.op == "const":
            lines.append(f"{pad}i32.const {i.arg}")
        elif i.op in ("unop", "binop"):
            lines.append(f"{pad}i32.{i.kind}")
        elif i.op in ("local.get", "local.set", "local.tee", "global.get",
                      "global.set", "br", "br_if", "call"):
            lines.append(f"{pad}{i.op} {i.arg}")
        elif i.op == "call_indirect":
            lines.append(f"{pad}call_indirect (type {i.arg})")
        else:
            lines.append(f"{pad}{i.op}")
