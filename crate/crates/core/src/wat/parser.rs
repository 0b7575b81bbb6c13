use std::collections::HashMap;

use thiserror::Error;

use super::lexer::{tokenize, Token, TokenKind};
use super::{BinOp, BlockType, CmpOp, FuncDef, Global, Instr, Module};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: expected {expected}, found {found}")]
    Syntax { line: usize, col: usize, expected: String, found: String },
    #[error("{line}:{col}: unsupported construct `{construct}`")]
    Unsupported { line: usize, col: usize, construct: String },
}

/// Parse a module written in the supported text subset.
///
/// Every construct outside the subset (other value types, tables, imports,
/// folded instructions, unknown mnemonics) is rejected with an
/// [`ParseError::Unsupported`] naming it.
pub fn parse_module(text: &str) -> Result<Module, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0 };
    let module = p.module()?;
    if let Some(t) = p.toks.get(p.pos) {
        return Err(syntax(t, "end of input"));
    }
    Ok(module)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Sig {
    params: u32,
    results: u32,
}

#[derive(Default)]
struct Names {
    funcs: HashMap<String, u32>,
    globals: HashMap<String, u32>,
    types: HashMap<String, u32>,
    type_sigs: Vec<Sig>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

fn syntax(t: &Token, expected: &str) -> ParseError {
    ParseError::Syntax { line: t.line, col: t.col, expected: expected.into(), found: t.describe() }
}

fn unsupported(t: &Token, construct: impl Into<String>) -> ParseError {
    ParseError::Unsupported { line: t.line, col: t.col, construct: construct.into() }
}

const VALUE_TYPES: [&str; 7] = ["i64", "f32", "f64", "v128", "funcref", "externref", "anyref"];

/// Recognised WebAssembly keywords and mnemonic shapes that the subset
/// deliberately does not support; anything else unknown is a syntax error.
fn looks_like_instruction(atom: &str) -> bool {
    let first = atom.chars().next().unwrap_or(' ');
    first.is_ascii_lowercase()
        && atom.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '='))
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    if body.is_empty() || body.starts_with('_') || body.ends_with('_') || body.contains("__") {
        return None;
    }
    let cleaned: String = body.chars().filter(|&c| c != '_').collect();
    let mag = if let Some(hex) = cleaned.strip_prefix("0x").or_else(|| cleaned.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()?
    } else {
        if !cleaned.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        cleaned.parse::<u64>().ok()?
    };
    if mag > u32::MAX as u64 + 1 {
        return None;
    }
    Some(if neg { -(mag as i64) } else { mag as i64 })
}

fn parse_i32(s: &str) -> Option<i32> {
    let v = parse_int(s)?;
    if (i32::MIN as i64..=u32::MAX as i64).contains(&v) {
        Some(v as u32 as i32)
    } else {
        None
    }
}

fn parse_u32(s: &str) -> Option<u32> {
    if s.starts_with('-') || s.starts_with('+') {
        return None;
    }
    let v = parse_int(s)?;
    u32::try_from(v).ok()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum LabelKind {
    Block,
    Loop,
    If,
    Else,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, off: usize) -> Option<&Token> {
        self.toks.get(self.pos + off)
    }

    fn eof_error(&self, expected: &str) -> ParseError {
        let (line, col) = self.toks.last().map(|t| (t.line, t.col)).unwrap_or((1, 1));
        ParseError::Syntax { line, col, expected: expected.into(), found: "end of input".into() }
    }

    fn next(&mut self, expected: &str) -> Result<Token, ParseError> {
        let t = self.toks.get(self.pos).cloned().ok_or_else(|| self.eof_error(expected))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect_lparen(&mut self) -> Result<Token, ParseError> {
        let t = self.next("`(`")?;
        if t.kind != TokenKind::LParen {
            return Err(syntax(&t, "`(`"));
        }
        Ok(t)
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        let t = self.next("`)`")?;
        if t.kind != TokenKind::RParen {
            return Err(syntax(&t, "`)`"));
        }
        Ok(())
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<Token, ParseError> {
        let t = self.next(&format!("`{kw}`"))?;
        match &t.kind {
            TokenKind::Atom(a) if a == kw => Ok(t),
            _ => Err(syntax(&t, &format!("`{kw}`"))),
        }
    }

    fn atom(&mut self, expected: &str) -> Result<(Token, String), ParseError> {
        let t = self.next(expected)?;
        match &t.kind {
            TokenKind::Atom(a) => {
                let a = a.clone();
                Ok((t, a))
            }
            _ => Err(syntax(&t, expected)),
        }
    }

    fn peek_atom(&self) -> Option<&str> {
        match &self.peek()?.kind {
            TokenKind::Atom(a) => Some(a),
            _ => None,
        }
    }

    /// `(` followed by the given keyword.
    fn at_field(&self, kw: &str) -> bool {
        matches!(self.peek().map(|t| &t.kind), Some(TokenKind::LParen))
            && matches!(self.peek_at(1).map(|t| &t.kind), Some(TokenKind::Atom(a)) if a == kw)
    }

    fn optional_id(&mut self) -> Option<String> {
        match self.peek_atom() {
            Some(a) if a.starts_with('$') => {
                let a = a.to_string();
                self.pos += 1;
                Some(a)
            }
            _ => None,
        }
    }

    /// Skips one balanced s-expression starting at `(`.
    fn skip_sexpr(&mut self) -> Result<(), ParseError> {
        self.expect_lparen()?;
        let mut depth = 1;
        while depth > 0 {
            let t = self.next("`)`")?;
            match t.kind {
                TokenKind::LParen => depth += 1,
                TokenKind::RParen => depth -= 1,
                _ => {}
            }
        }
        Ok(())
    }

    fn module(&mut self) -> Result<Module, ParseError> {
        self.expect_lparen()?;
        self.expect_keyword("module")?;
        self.optional_id();
        let fields_start = self.pos;
        let names = self.collect_names()?;
        self.pos = fields_start;

        let mut module = Module::default();
        let mut pending_exports: Vec<(Token, String, u32)> = Vec::new();
        loop {
            let t = self.peek().cloned().ok_or_else(|| self.eof_error("`)`"))?;
            if t.kind == TokenKind::RParen {
                self.pos += 1;
                break;
            }
            if t.kind != TokenKind::LParen {
                return Err(syntax(&t, "module field"));
            }
            let (kt, kw) = match self.peek_at(1) {
                Some(Token { kind: TokenKind::Atom(a), .. }) => (self.toks[self.pos + 1].clone(), a.clone()),
                Some(other) => return Err(syntax(other, "module field keyword")),
                None => return Err(self.eof_error("module field keyword")),
            };
            match kw.as_str() {
                "type" => self.skip_sexpr()?,
                "func" => {
                    let idx = module.functions.len() as u32;
                    let (func, inline_exports) = self.func(&names)?;
                    module.functions.push(func);
                    for (tok, name) in inline_exports {
                        pending_exports.push((tok, name, idx));
                    }
                }
                "global" => module.globals.push(self.global()?),
                "memory" => {
                    if module.memory.is_some() {
                        return Err(unsupported(&kt, "multiple memories"));
                    }
                    module.memory = Some(self.memory()?);
                }
                "export" => {
                    let (tok, name, idx) = self.export(&names)?;
                    pending_exports.push((tok, name, idx));
                }
                other => return Err(unsupported(&kt, format!("{other} field"))),
            }
        }
        for (tok, name, idx) in pending_exports {
            if module.exports.insert(name.clone(), idx).is_some() {
                return Err(ParseError::Syntax {
                    line: tok.line,
                    col: tok.col,
                    expected: "unique export name".into(),
                    found: format!("duplicate export {name:?}"),
                });
            }
        }
        Ok(module)
    }

    /// First pass over the module fields: function and global identifiers
    /// and type definitions, so later fields can reference earlier or later
    /// ones by name.
    fn collect_names(&mut self) -> Result<Names, ParseError> {
        let mut names = Names::default();
        let (mut nfunc, mut nglobal) = (0u32, 0u32);
        while let Some(t) = self.peek() {
            if t.kind == TokenKind::RParen {
                break;
            }
            if self.at_field("type") {
                let start = self.pos;
                self.pos += 2;
                let id = self.optional_id();
                let sig = self.type_def()?;
                if let Some(id) = id {
                    names.types.insert(id, names.type_sigs.len() as u32);
                }
                names.type_sigs.push(sig);
                self.expect_rparen()?;
                let _ = start;
                continue;
            }
            let kw = match self.peek_at(1).map(|t| &t.kind) {
                Some(TokenKind::Atom(a)) => a.clone(),
                _ => String::new(),
            };
            if kw == "func" || kw == "global" {
                let save = self.pos;
                self.pos += 2;
                if let Some(id) = self.optional_id() {
                    let map = if kw == "func" { &mut names.funcs } else { &mut names.globals };
                    map.insert(id, if kw == "func" { nfunc } else { nglobal });
                }
                self.pos = save;
                if kw == "func" {
                    nfunc += 1;
                } else {
                    nglobal += 1;
                }
            }
            if self.peek().map(|t| &t.kind) != Some(&TokenKind::LParen) {
                let t = self.peek().unwrap().clone();
                return Err(syntax(&t, "module field"));
            }
            self.skip_sexpr()?;
        }
        Ok(names)
    }

    /// `(func (param ...)* (result ...)*)` inside a type definition.
    fn type_def(&mut self) -> Result<Sig, ParseError> {
        self.expect_lparen()?;
        self.expect_keyword("func")?;
        let (params, _) = self.params(false)?;
        let results = self.results()?;
        self.expect_rparen()?;
        Ok(Sig { params, results })
    }

    fn value_type(&mut self) -> Result<(), ParseError> {
        let (t, a) = self.atom("value type")?;
        match a.as_str() {
            "i32" => Ok(()),
            ty if VALUE_TYPES.contains(&ty) => Err(unsupported(&t, format!("{ty} type"))),
            _ => Err(syntax(&t, "value type")),
        }
    }

    /// Zero or more `(param ...)` groups; returns the count and the names of
    /// named parameters.
    fn params(&mut self, allow_names: bool) -> Result<(u32, Vec<(String, u32)>), ParseError> {
        let mut count = 0;
        let mut named = Vec::new();
        while self.at_field("param") {
            self.pos += 2;
            if let Some(id) = self.optional_id() {
                if !allow_names {
                    let t = self.toks[self.pos - 1].clone();
                    return Err(syntax(&t, "value type"));
                }
                self.value_type()?;
                named.push((id, count));
                count += 1;
            } else {
                while self.peek().map(|t| &t.kind) != Some(&TokenKind::RParen) {
                    self.value_type()?;
                    count += 1;
                }
            }
            self.expect_rparen()?;
        }
        Ok((count, named))
    }

    fn results(&mut self) -> Result<u32, ParseError> {
        let mut count = 0;
        let mut first_tok = None;
        while self.at_field("result") {
            first_tok.get_or_insert_with(|| self.toks[self.pos].clone());
            self.pos += 2;
            while self.peek().map(|t| &t.kind) != Some(&TokenKind::RParen) {
                self.value_type()?;
                count += 1;
            }
            self.expect_rparen()?;
        }
        if count > 1 {
            return Err(unsupported(&first_tok.unwrap(), "multi-value result"));
        }
        Ok(count)
    }

    fn func(&mut self, names: &Names) -> Result<(FuncDef, Vec<(Token, String)>), ParseError> {
        self.expect_lparen()?;
        self.expect_keyword("func")?;
        self.optional_id();
        let mut exports = Vec::new();
        while self.at_field("export") {
            let t = self.toks[self.pos].clone();
            self.pos += 2;
            let st = self.next("export name")?;
            let TokenKind::Str(name) = st.kind.clone() else {
                return Err(syntax(&st, "export name string"));
            };
            self.expect_rparen()?;
            exports.push((t, name));
        }
        if self.at_field("import") {
            return Err(unsupported(&self.toks[self.pos + 1], "import"));
        }
        let mut type_sig = None;
        if self.at_field("type") {
            self.pos += 2;
            let (t, a) = self.atom("type index")?;
            let idx = if a.starts_with('$') {
                names.types.get(&a).copied()
            } else {
                parse_u32(&a)
            };
            let sig = idx
                .and_then(|i| names.type_sigs.get(i as usize).copied())
                .ok_or_else(|| syntax(&t, "defined type index"))?;
            type_sig = Some((t, sig));
            self.expect_rparen()?;
        }
        let (params, param_names) = self.params(true)?;
        let results = self.results()?;
        if let Some((t, sig)) = &type_sig {
            let explicit = params > 0 || results > 0;
            if explicit && (sig.params != params || sig.results != results) {
                return Err(syntax(t, "inline signature matching the referenced type"));
            }
        }
        let (params, results) = match type_sig {
            Some((_, sig)) if params == 0 && results == 0 => (sig.params, sig.results),
            _ => (params, results),
        };
        let mut local_names: HashMap<String, u32> = param_names.into_iter().collect();
        let mut locals = 0;
        while self.at_field("local") {
            self.pos += 2;
            if let Some(id) = self.optional_id() {
                self.value_type()?;
                local_names.insert(id, params + locals);
                locals += 1;
            } else {
                while self.peek().map(|t| &t.kind) != Some(&TokenKind::RParen) {
                    self.value_type()?;
                    locals += 1;
                }
            }
            self.expect_rparen()?;
        }
        let body = self.body(names, &local_names)?;
        Ok((FuncDef { params, results, locals, body }, exports))
    }

    fn index(&mut self, map: &HashMap<String, u32>, what: &str) -> Result<u32, ParseError> {
        let (t, a) = self.atom(what)?;
        if a.starts_with('$') {
            map.get(&a).copied().ok_or_else(|| syntax(&t, &format!("known {what}")))
        } else {
            parse_u32(&a).ok_or_else(|| syntax(&t, what))
        }
    }

    fn label(&mut self, labels: &[(Option<String>, LabelKind)]) -> Result<u32, ParseError> {
        let (t, a) = self.atom("label")?;
        if a.starts_with('$') {
            labels
                .iter()
                .rev()
                .position(|(name, _)| name.as_deref() == Some(a.as_str()))
                .map(|d| d as u32)
                .ok_or_else(|| syntax(&t, "known label"))
        } else {
            parse_u32(&a).ok_or_else(|| syntax(&t, "label index"))
        }
    }

    fn block_type(&mut self) -> Result<BlockType, ParseError> {
        if self.at_field("result") {
            let t = self.toks[self.pos].clone();
            let n = self.results()?;
            return Ok(if n == 0 {
                BlockType::Empty
            } else {
                let _ = t;
                BlockType::I32
            });
        }
        if self.at_field("param") || self.at_field("type") {
            let t = self.toks[self.pos + 1].clone();
            return Err(unsupported(&t, "block parameters"));
        }
        Ok(BlockType::Empty)
    }

    fn memarg(&mut self) -> Result<u32, ParseError> {
        let mut offset = 0;
        while let Some(a) = self.peek_atom() {
            if let Some(v) = a.strip_prefix("offset=") {
                let t = self.toks[self.pos].clone();
                offset = parse_u32(v).ok_or_else(|| syntax(&t, "offset value"))?;
                self.pos += 1;
            } else if let Some(v) = a.strip_prefix("align=") {
                let t = self.toks[self.pos].clone();
                if v != "4" {
                    return Err(unsupported(&t, format!("non-natural alignment {a}")));
                }
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(offset)
    }

    fn trailing_label(&mut self, expected: &Option<String>) -> Result<(), ParseError> {
        if let Some(a) = self.peek_atom() {
            if a.starts_with('$') {
                let t = self.toks[self.pos].clone();
                if expected.as_deref() != Some(a) {
                    return Err(syntax(&t, "matching block label"));
                }
                self.pos += 1;
            }
        }
        Ok(())
    }

    fn body(
        &mut self,
        names: &Names,
        locals: &HashMap<String, u32>,
    ) -> Result<Vec<Instr>, ParseError> {
        let mut body = Vec::new();
        let mut labels: Vec<(Option<String>, LabelKind)> = Vec::new();
        loop {
            let t = self.next("instruction or `)`")?;
            let m = match &t.kind {
                TokenKind::RParen => {
                    if !labels.is_empty() {
                        return Err(syntax(&t, "`end`"));
                    }
                    return Ok(body);
                }
                TokenKind::LParen => {
                    return match self.peek_atom() {
                        Some(a) if looks_like_instruction(a) => {
                            Err(unsupported(&t, format!("folded instruction ({a} ...)")))
                        }
                        _ => Err(syntax(&t, "instruction")),
                    };
                }
                TokenKind::Str(_) => return Err(syntax(&t, "instruction")),
                TokenKind::Atom(a) => a.clone(),
            };
            let instr = match m.as_str() {
                "i32.const" => {
                    let (vt, v) = self.atom("i32 literal")?;
                    Instr::Const(parse_i32(&v).ok_or_else(|| syntax(&vt, "i32 literal"))?)
                }
                "i32.eqz" => Instr::Eqz,
                "select" => {
                    if self.at_field("result") {
                        return Err(unsupported(&t, "typed select"));
                    }
                    Instr::Select
                }
                "drop" => Instr::Drop,
                "nop" => Instr::Nop,
                "unreachable" => Instr::Unreachable,
                "return" => Instr::Return,
                "local.get" => Instr::LocalGet(self.index(locals, "local")?),
                "local.set" => Instr::LocalSet(self.index(locals, "local")?),
                "local.tee" => Instr::LocalTee(self.index(locals, "local")?),
                "global.get" => Instr::GlobalGet(self.index(&names.globals, "global")?),
                "global.set" => Instr::GlobalSet(self.index(&names.globals, "global")?),
                "call" => Instr::Call(self.index(&names.funcs, "function")?),
                "i32.load" => Instr::Load { offset: self.memarg()? },
                "i32.store" => Instr::Store { offset: self.memarg()? },
                "br" => Instr::Br(self.label(&labels)?),
                "br_if" => Instr::BrIf(self.label(&labels)?),
                "block" | "loop" | "if" => {
                    let name = self.optional_id();
                    let bt = self.block_type()?;
                    let (instr, kind) = match m.as_str() {
                        "block" => (Instr::Block(bt), LabelKind::Block),
                        "loop" => (Instr::Loop(bt), LabelKind::Loop),
                        _ => (Instr::If(bt), LabelKind::If),
                    };
                    labels.push((name, kind));
                    instr
                }
                "else" => {
                    match labels.last_mut() {
                        Some((_, kind @ LabelKind::If)) => *kind = LabelKind::Else,
                        _ => return Err(syntax(&t, "`else` inside an `if`")),
                    }
                    let name = labels.last().unwrap().0.clone();
                    self.trailing_label(&name)?;
                    Instr::Else
                }
                "end" => {
                    let Some((name, _)) = labels.pop() else {
                        return Err(syntax(&t, "`)` closing the function"));
                    };
                    self.trailing_label(&name)?;
                    Instr::End
                }
                other => {
                    if let Some(op) = other.strip_prefix("i32.").and_then(|s| {
                        BinOp::ALL.into_iter().find(|o| o.name() == s)
                    }) {
                        Instr::Binary(op)
                    } else if let Some(op) = other.strip_prefix("i32.").and_then(|s| {
                        CmpOp::ALL.into_iter().find(|o| o.name() == s)
                    }) {
                        Instr::Compare(op)
                    } else if looks_like_instruction(other) {
                        return Err(unsupported(&t, other));
                    } else {
                        return Err(syntax(&t, "instruction"));
                    }
                }
            };
            body.push(instr);
        }
    }

    fn global(&mut self) -> Result<Global, ParseError> {
        self.expect_lparen()?;
        self.expect_keyword("global")?;
        self.optional_id();
        if self.at_field("export") || self.at_field("import") {
            return Err(unsupported(&self.toks[self.pos + 1], "global import/export"));
        }
        let mutable = if self.at_field("mut") {
            self.pos += 2;
            self.value_type()?;
            self.expect_rparen()?;
            true
        } else {
            self.value_type()?;
            false
        };
        let open = self.expect_lparen()?;
        let (t, kw) = self.atom("`i32.const`")?;
        if kw != "i32.const" {
            return Err(if looks_like_instruction(&kw) {
                unsupported(&t, format!("global initializer {kw}"))
            } else {
                syntax(&t, "`i32.const`")
            });
        }
        let (vt, v) = self.atom("i32 literal")?;
        let init = parse_i32(&v).ok_or_else(|| syntax(&vt, "i32 literal"))?;
        self.expect_rparen()?;
        let _ = open;
        self.expect_rparen()?;
        Ok(Global { mutable, init })
    }

    fn memory(&mut self) -> Result<u32, ParseError> {
        self.expect_lparen()?;
        self.expect_keyword("memory")?;
        self.optional_id();
        if self.peek().map(|t| &t.kind) == Some(&TokenKind::LParen) {
            let t = self.toks[self.pos + 1].clone();
            return Err(unsupported(&t, "inline memory import/export/data"));
        }
        let (t, a) = self.atom("page count")?;
        let min = parse_u32(&a).ok_or_else(|| syntax(&t, "page count"))?;
        if min > 65536 {
            return Err(syntax(&t, "page count <= 65536"));
        }
        if let Some(a) = self.peek_atom() {
            let t = self.toks[self.pos].clone();
            let _ = a;
            return Err(unsupported(&t, "memory maximum"));
        }
        self.expect_rparen()?;
        Ok(min)
    }

    fn export(&mut self, names: &Names) -> Result<(Token, String, u32), ParseError> {
        let open = self.expect_lparen()?;
        self.expect_keyword("export")?;
        let st = self.next("export name")?;
        let TokenKind::Str(name) = st.kind.clone() else {
            return Err(syntax(&st, "export name string"));
        };
        self.expect_lparen()?;
        let (kt, kind) = self.atom("export kind")?;
        if kind != "func" {
            return Err(if ["memory", "global", "table"].contains(&kind.as_str()) {
                unsupported(&kt, format!("{kind} export"))
            } else {
                syntax(&kt, "`func`")
            });
        }
        let idx = self.index(&names.funcs, "function")?;
        self.expect_rparen()?;
        self.expect_rparen()?;
        Ok((open, name, idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_BLOCKS: &str = r#"(module
  (type (;0;) (func (param i32) (result i32)))
  (type (;1;) (func (result i32)))
  (func (;0;) (type 0) (param i32) (result i32)
    local.get 0
    local.get 0
    i32.const 2
    i32.mul
    i32.add)
  (func (;1;) (type 1) (result i32)
    i32.const 10
    call 0)
  (export "main" (func 1)))"#;

    #[test]
    fn parses_running_example() {
        let m = parse_module(TWO_BLOCKS).unwrap();
        assert_eq!(m.functions.len(), 2);
        assert_eq!(m.exports.get("main"), Some(&1));
        let f = &m.functions[0];
        assert_eq!((f.params, f.results, f.locals), (1, 1, 0));
        assert_eq!(
            f.body,
            vec![
                Instr::LocalGet(0),
                Instr::LocalGet(0),
                Instr::Const(2),
                Instr::Binary(BinOp::Mul),
                Instr::Binary(BinOp::Add),
            ]
        );
        assert_eq!(m.functions[1].body, vec![Instr::Const(10), Instr::Call(0)]);
    }

    #[test]
    fn empty_module() {
        let m = parse_module("(module)").unwrap();
        assert!(m.functions.is_empty());
        assert!(m.exports.is_empty());
        assert_eq!(m.memory, None);
    }

    #[test]
    fn rejects_float_instruction() {
        let err = parse_module("(module (func (result i32) i32.const 1 f64.add))").unwrap_err();
        assert!(matches!(err, ParseError::Unsupported { ref construct, .. } if construct == "f64.add"));
    }

    #[test]
    fn rejects_float_types() {
        let err = parse_module("(module (func (param f64)))").unwrap_err();
        assert!(matches!(err, ParseError::Unsupported { ref construct, .. } if construct == "f64 type"));
    }

    #[test]
    fn rejects_multi_value() {
        let err = parse_module("(module (func (result i32 i32) i32.const 1 i32.const 2))").unwrap_err();
        assert!(matches!(err, ParseError::Unsupported { .. }));
    }

    #[test]
    fn rejects_folded_and_unknown_fields() {
        assert!(matches!(
            parse_module("(module (func (result i32) (i32.const 1)))"),
            Err(ParseError::Unsupported { .. })
        ));
        assert!(matches!(
            parse_module("(module (table 1 funcref))"),
            Err(ParseError::Unsupported { .. })
        ));
        assert!(matches!(
            parse_module("(module (import \"a\" \"b\" (func)))"),
            Err(ParseError::Unsupported { .. })
        ));
    }

    #[test]
    fn syntax_error_reports_position_and_expectation() {
        let err = parse_module("(module\n  (func i32.const))").unwrap_err();
        match err {
            ParseError::Syntax { line, expected, .. } => {
                assert_eq!(line, 2);
                assert!(expected.contains("i32 literal"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unbalanced_blocks_are_rejected() {
        assert!(parse_module("(module (func block nop))").is_err());
        assert!(parse_module("(module (func end))").is_err());
        assert!(parse_module("(module (func else))").is_err());
    }

    #[test]
    fn resolves_symbolic_names() {
        let src = r#"(module
          (global $g (mut i32) (i32.const 7))
          (memory 1)
          (func $helper (param $x i32) (result i32)
            local.get $x
            global.get $g
            i32.add)
          (func $main (export "main") (result i32) (local $t i32)
            block $out (result i32)
              i32.const 3
              call $helper
              local.tee $t
              br $out
            end $out
            i32.load offset=4 align=4
          ))"#;
        let m = parse_module(src).unwrap();
        assert_eq!(m.globals, vec![Global { mutable: true, init: 7 }]);
        assert_eq!(m.memory, Some(1));
        assert_eq!(m.exports.get("main"), Some(&1));
        assert_eq!(
            m.functions[1].body,
            vec![
                Instr::Block(BlockType::I32),
                Instr::Const(3),
                Instr::Call(0),
                Instr::LocalTee(0),
                Instr::Br(0),
                Instr::End,
                Instr::Load { offset: 4 },
            ]
        );
    }

    #[test]
    fn integer_literals() {
        assert_eq!(parse_i32("-2147483648"), Some(i32::MIN));
        assert_eq!(parse_i32("0xffffffff"), Some(-1));
        assert_eq!(parse_i32("4294967295"), Some(-1));
        assert_eq!(parse_i32("1_000"), Some(1000));
        assert_eq!(parse_i32("4294967296"), None);
        assert_eq!(parse_i32("12a"), None);
        assert_eq!(parse_u32("-1"), None);
    }
}
