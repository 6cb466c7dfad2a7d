//! Surface syntax for `.rgn` files.
//!
//! ```text
//! def main = Λρ. λ(heap: rgn(ρ)) @ [{ρ^{1,0}@⊥} -> {}] .
//!     newrgn σ, h at heap in
//!         let z = new 10 at h in
//!         z := deref z + 5;
//!         free h;
//!     free heap
//! ```
//!
//! `fun`, `rfun`, `forall` and `bot` are ASCII spellings of `λ`, `Λ`, `∀` and
//! `⊥`. A `~` before a capability marks it impure.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::ast::{
    BaseType, CapOp, Capability, Effect, Expr, ExprKind, LambdaSig, Loc, Parent, PrimOp, RegionName, Type,
};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{loc}: syntax error: {msg}")]
    Syntax { msg: String, loc: Loc },
    #[error("{loc}: duplicate definition of `{name}`")]
    DuplicateDefinition { name: String, loc: Loc },
    #[error("no `main` definition")]
    MissingMain,
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Syntax { .. } => "SyntaxError",
            ParseError::DuplicateDefinition { .. } => "DuplicateDefinition",
            ParseError::MissingMain => "MissingMain",
        }
    }

    pub fn loc(&self) -> Loc {
        match self {
            ParseError::Syntax { loc, .. } | ParseError::DuplicateDefinition { loc, .. } => *loc,
            ParseError::MissingMain => Loc::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Def {
    pub name: String,
    pub ty: Option<Type>,
    pub body: Expr,
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub defs: Vec<Def>,
}

impl Program {
    pub fn get(&self, name: &str) -> Option<&Def> {
        self.defs.iter().find(|d| d.name == name)
    }

    pub fn main(&self) -> Option<&Def> {
        self.get("main")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: u32,
    col: u32,
    end_line: u32,
    end_col: u32,
}

const SYMBOLS: &[&str] = &[
    ":=", "->", "==", "→", "(", ")", "[", "]", "{", "}", ",", ".", ":", ";", "@", "^", "~", "?", "⊥", "λ", "Λ", "∀",
    "+", "-", "<", "!", "=",
];

const KEYWORDS: &[&str] = &[
    "def", "newrgn", "at", "in", "let", "new", "deref", "lock", "unlock", "share", "free", "spawn", "if", "then",
    "else", "while", "do", "true", "false", "fun", "rfun", "forall", "int", "bool", "unit", "ref", "rgn", "fn",
    "bot",
];

fn is_ident_char(c: char) -> bool {
    (c.is_alphanumeric() || c == '_' || c == '\'') && !matches!(c, 'λ' | 'Λ' | '∀' | '⊥' | '→')
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (sl, sc) = (line, col);
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let n = text.parse::<i64>().map_err(|_| ParseError::Syntax {
                msg: format!("integer literal `{text}` out of range"),
                loc: Loc { line: sl, col: sc, end_line: sl, end_col: sc },
            })?;
            col += (i - start) as u32;
            toks.push(Token { tok: Tok::Int(n), line: sl, col: sc, end_line: line, end_col: col });
            continue;
        }
        if is_ident_char(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            col += (i - start) as u32;
            let text: String = chars[start..i].iter().collect();
            toks.push(Token { tok: Tok::Ident(text), line: sl, col: sc, end_line: line, end_col: col });
            continue;
        }
        let sym = SYMBOLS.iter().find(|s| {
            let sc: Vec<char> = s.chars().collect();
            chars[i..].starts_with(&sc)
        });
        match sym {
            Some(s) => {
                let n = s.chars().count();
                i += n;
                col += n as u32;
                let s: &'static str = if *s == "→" { "->" } else { s };
                toks.push(Token { tok: Tok::Sym(s), line: sl, col: sc, end_line: line, end_col: col });
            }
            None => {
                return Err(ParseError::Syntax {
                    msg: format!("unexpected character `{c}`"),
                    loc: Loc { line: sl, col: sc, end_line: sl, end_col: sc + 1 },
                })
            }
        }
    }
    toks.push(Token { tok: Tok::Eof, line, col, end_line: line, end_col: col });
    Ok(toks)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    /// Names of top-level definitions; local binders may not shadow them.
    globals: BTreeSet<String>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> Loc {
        let t = &self.toks[self.pos];
        Loc { line: t.line, col: t.col, end_line: t.end_line, end_col: t.end_col }
    }

    fn span_from(&self, start: Loc) -> Loc {
        let prev = &self.toks[self.pos.saturating_sub(1)];
        Loc { line: start.line, col: start.col, end_line: prev.end_line, end_col: prev.end_col }
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError::Syntax { msg: msg.into(), loc: self.here() })
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        if self.is_kw(k) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", self.describe()))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            self.err(format!("expected `{k}`, found {}", self.describe()))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => self.err(format!("expected identifier, found {}", self.describe())),
        }
    }

    fn binder(&mut self) -> PResult<String> {
        let loc = self.here();
        let name = self.ident()?;
        if self.globals.contains(&name) {
            return Err(ParseError::Syntax { msg: format!("`{name}` shadows a definition"), loc });
        }
        Ok(name)
    }

    fn region(&mut self) -> PResult<RegionName> {
        Ok(RegionName::Var(self.ident()?))
    }

    // ---- programs ----

    fn program(&mut self) -> PResult<Program> {
        let mut defs: Vec<Def> = Vec::new();
        while !matches!(self.peek(), Tok::Eof) {
            let start = self.here();
            self.expect_kw("def")?;
            let name_loc = self.here();
            let name = self.ident()?;
            if defs.iter().any(|d| d.name == name) {
                return Err(ParseError::DuplicateDefinition { name, loc: name_loc });
            }
            let ty = if self.eat_sym(":") { Some(self.ty()?) } else { None };
            self.expect_sym("=")?;
            let body = self.seq()?;
            defs.push(Def { name, ty, body, loc: self.span_from(start) });
        }
        if !defs.iter().any(|d| d.name == "main") {
            return Err(ParseError::MissingMain);
        }
        Ok(Program { defs })
    }

    // ---- expressions ----

    fn seq(&mut self) -> PResult<Expr> {
        let start = self.here();
        let first = self.stmt()?;
        if self.eat_sym(";") {
            if self.at_seq_end() {
                return Ok(first);
            }
            let rest = self.seq()?;
            return Ok(Expr::seq(first, rest).at(self.span_from(start)));
        }
        Ok(first)
    }

    fn at_seq_end(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
            || self.is_sym(")")
            || self.is_kw("def")
            || self.is_kw("else")
            || self.is_kw("in")
    }

    fn stmt(&mut self) -> PResult<Expr> {
        let start = self.here();
        if self.eat_kw("newrgn") {
            let var = self.binder()?;
            self.expect_sym(",")?;
            let handle = self.binder()?;
            self.expect_kw("at")?;
            let parent = self.expr()?;
            self.expect_kw("in")?;
            let body = self.seq()?;
            return Ok(Expr::newrgn(var, handle, parent, body).at(self.span_from(start)));
        }
        if self.eat_kw("let") {
            let x = self.binder()?;
            self.expect_sym("=")?;
            let bound = self.stmt()?;
            self.expect_kw("in")?;
            let body = self.seq()?;
            let loc = self.span_from(start);
            return Ok(Expr::app(Expr::lambda(x, None, body).at(loc), bound).at(loc));
        }
        if self.eat_kw("if") {
            let c = self.expr()?;
            self.expect_kw("then")?;
            let t = self.stmt()?;
            self.expect_kw("else")?;
            let e = self.stmt()?;
            return Ok(Expr::if_(c, t, e).at(self.span_from(start)));
        }
        if self.eat_kw("while") {
            let c = self.expr()?;
            self.expect_kw("do")?;
            let b = self.stmt()?;
            return Ok(Expr::while_(c, b).at(self.span_from(start)));
        }
        if self.eat_kw("spawn") {
            let transfer = if self.eat_sym("[") {
                let eff = self.effect()?;
                self.expect_sym("]")?;
                Some(eff)
            } else {
                None
            };
            let call = self.postfix()?;
            return match call.kind {
                ExprKind::App(f, a, _) => Ok(Expr::spawn(*f, *a, transfer).at(self.span_from(start))),
                _ => Err(ParseError::Syntax { msg: "`spawn` needs a function application".into(), loc: start }),
            };
        }
        for (kw, op) in [("lock", CapOp::LkPlus), ("unlock", CapOp::LkMinus), ("share", CapOp::RgPlus), ("free", CapOp::RgMinus)] {
            if self.eat_kw(kw) {
                let h = self.postfix()?;
                return Ok(Expr::cap(op, h).at(self.span_from(start)));
            }
        }
        let lhs = self.expr()?;
        if self.eat_sym(":=") {
            let rhs = self.expr()?;
            return Ok(Expr::assign(lhs, rhs).at(self.span_from(start)));
        }
        Ok(lhs)
    }

    fn expr(&mut self) -> PResult<Expr> {
        let start = self.here();
        let lhs = self.additive()?;
        let op = if self.eat_sym("<") {
            PrimOp::Lt
        } else if self.eat_sym("==") {
            PrimOp::Eq
        } else {
            return Ok(lhs);
        };
        let rhs = self.additive()?;
        Ok(Expr::prim(op, lhs, rhs).at(self.span_from(start)))
    }

    fn additive(&mut self) -> PResult<Expr> {
        let start = self.here();
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_sym("+") {
                PrimOp::Add
            } else if self.eat_sym("-") {
                PrimOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::prim(op, lhs, rhs).at(self.span_from(start));
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        let start = self.here();
        if self.eat_sym("!") {
            let e = self.unary()?;
            let loc = self.span_from(start);
            return Ok(Expr::if_(e, Expr::bool(false).at(loc), Expr::bool(true).at(loc)).at(loc));
        }
        if self.eat_kw("deref") {
            let e = self.unary()?;
            return Ok(Expr::deref(e).at(self.span_from(start)));
        }
        if self.eat_kw("new") {
            let init = self.unary()?;
            self.expect_kw("at")?;
            let h = self.unary()?;
            return Ok(Expr::new_ref(init, h).at(self.span_from(start)));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let start = self.here();
        let mut e = self.primary()?;
        loop {
            if self.eat_sym("(") {
                if self.eat_sym(")") {
                    e = Expr::app(e, Expr::unit().at(self.span_from(start))).at(self.span_from(start));
                    continue;
                }
                loop {
                    let arg = self.expr()?;
                    e = Expr::app(e, arg).at(self.span_from(start));
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym(")")?;
                e.loc = self.span_from(start);
            } else if self.eat_sym("[") {
                let r = self.region()?;
                self.expect_sym("]")?;
                e = Expr::rapp(e, r).at(self.span_from(start));
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> PResult<Expr> {
        let start = self.here();
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(Expr::int(n).at(start))
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.bump();
                Ok(Expr::bool(s == "true").at(start))
            }
            Tok::Ident(s) if s == "fun" => {
                self.bump();
                self.lambda_rest(start)
            }
            Tok::Ident(s) if s == "rfun" => {
                self.bump();
                self.rlambda_rest(start)
            }
            Tok::Sym("λ") => {
                self.bump();
                self.lambda_rest(start)
            }
            Tok::Sym("Λ") => {
                self.bump();
                self.rlambda_rest(start)
            }
            Tok::Sym("(") => {
                self.bump();
                if self.eat_sym(")") {
                    return Ok(Expr::unit().at(self.span_from(start)));
                }
                let e = self.seq()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(_) => {
                let x = self.ident()?;
                Ok(Expr::var(x).at(start))
            }
            _ => self.err(format!("expected expression, found {}", self.describe())),
        }
    }

    fn rlambda_rest(&mut self, start: Loc) -> PResult<Expr> {
        let v = self.ident()?;
        self.expect_sym(".")?;
        let body = self.seq()?;
        Ok(Expr::rlambda(v, body).at(self.span_from(start)))
    }

    fn lambda_rest(&mut self, start: Loc) -> PResult<Expr> {
        self.expect_sym("(")?;
        let mut params = Vec::new();
        if !self.eat_sym(")") {
            loop {
                let x = if matches!(self.peek(), Tok::Ident(s) if s == "_") {
                    self.bump();
                    "_".to_string()
                } else {
                    self.binder()?
                };
                self.expect_sym(":")?;
                let t = self.ty()?;
                params.push((x, t));
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(")")?;
        } else {
            params.push(("_".to_string(), Type::Unit));
        }
        let (input, output) = if self.eat_sym("@") { self.effect_pair()? } else { (Effect::new(), Effect::new()) };
        self.expect_sym(".")?;
        let body = self.seq()?;
        let loc = self.span_from(start);
        let n = params.len();
        let mut e = body;
        for (i, (x, t)) in params.into_iter().enumerate().rev() {
            let sig = if i + 1 == n {
                LambdaSig { param_ty: t, input: input.clone(), output: output.clone() }
            } else {
                LambdaSig { param_ty: t, input: Effect::new(), output: Effect::new() }
            };
            e = Expr::lambda(x, Some(sig), e).at(loc);
        }
        Ok(e)
    }

    // ---- types and effects ----

    fn effect_pair(&mut self) -> PResult<(Effect, Effect)> {
        self.expect_sym("[")?;
        let i = self.effect()?;
        self.expect_sym("->")?;
        let o = self.effect()?;
        self.expect_sym("]")?;
        Ok((i, o))
    }

    fn ty(&mut self) -> PResult<Type> {
        if self.eat_sym("∀") || self.eat_kw("forall") {
            let v = self.ident()?;
            self.expect_sym(".")?;
            let body = self.ty()?;
            return Ok(Type::Poly(v, Box::new(body)));
        }
        if self.eat_kw("int") {
            return Ok(Type::Base(BaseType::Int));
        }
        if self.eat_kw("bool") {
            return Ok(Type::Base(BaseType::Bool));
        }
        if self.eat_kw("unit") {
            return Ok(Type::Unit);
        }
        if self.eat_kw("ref") {
            self.expect_sym("(")?;
            let t = self.ty()?;
            self.expect_sym(",")?;
            let r = self.region()?;
            self.expect_sym(")")?;
            return Ok(Type::Ref(Box::new(t), r));
        }
        if self.eat_kw("rgn") {
            self.expect_sym("(")?;
            let r = self.region()?;
            self.expect_sym(")")?;
            return Ok(Type::Rgn(r));
        }
        if self.eat_kw("fn") {
            self.expect_sym("(")?;
            let mut params = Vec::new();
            if !self.eat_sym(")") {
                loop {
                    params.push(self.ty()?);
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym(")")?;
            } else {
                params.push(Type::Unit);
            }
            let (input, output) = if self.eat_sym("@") { self.effect_pair()? } else { (Effect::new(), Effect::new()) };
            self.expect_sym("->")?;
            let result = self.ty()?;
            let n = params.len();
            let mut t = result;
            for (i, p) in params.into_iter().enumerate().rev() {
                let (inp, out) = if i + 1 == n { (input.clone(), output.clone()) } else { (Effect::new(), Effect::new()) };
                t = Type::Fn { param: Box::new(p), input: inp, output: out, result: Box::new(t) };
            }
            return Ok(t);
        }
        if self.eat_sym("(") {
            let t = self.ty()?;
            self.expect_sym(")")?;
            return Ok(t);
        }
        self.err(format!("expected type, found {}", self.describe()))
    }

    fn effect(&mut self) -> PResult<Effect> {
        self.expect_sym("{")?;
        let mut eff = Effect::new();
        if self.eat_sym("}") {
            return Ok(eff);
        }
        loop {
            let loc = self.here();
            let r = self.region()?;
            self.expect_sym("^")?;
            let impure = self.eat_sym("~");
            self.expect_sym("{")?;
            let rc = self.count()?;
            self.expect_sym(",")?;
            let lc = self.count()?;
            self.expect_sym("}")?;
            self.expect_sym("@")?;
            let parent = if self.eat_sym("⊥") || self.eat_kw("bot") {
                Parent::Bottom
            } else if self.eat_sym("?") {
                Parent::Unknown
            } else {
                Parent::Region(self.region()?)
            };
            if eff.contains(&r) {
                return Err(ParseError::Syntax { msg: format!("region {r} listed twice in effect"), loc });
            }
            let cap = if impure { Capability::impure(rc, lc) } else { Capability::pure(rc, lc) };
            eff.insert(r, cap, parent);
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym("}")?;
        Ok(eff)
    }

    fn count(&mut self) -> PResult<u32> {
        match self.peek().clone() {
            Tok::Int(n) if (0..=u32::MAX as i64).contains(&n) => {
                self.bump();
                Ok(n as u32)
            }
            _ => self.err(format!("expected count, found {}", self.describe())),
        }
    }
}

fn collect_def_names(toks: &[Token]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for w in toks.windows(2) {
        if let (Tok::Ident(d), Tok::Ident(n)) = (&w[0].tok, &w[1].tok) {
            if d == "def" {
                out.insert(n.clone());
            }
        }
    }
    out
}

/// Parses a whole program.
pub fn parse(text: &str) -> Result<Program, ParseError> {
    let toks = lex(text)?;
    let globals = collect_def_names(&toks);
    Parser { toks, pos: 0, globals }.program()
}

fn parse_fragment<T>(text: &str, f: impl FnOnce(&mut Parser) -> PResult<T>) -> Result<T, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, globals: BTreeSet::new() };
    let v = f(&mut p)?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.err(format!("unexpected {}", p.describe()));
    }
    Ok(v)
}

/// Parses a single expression (a `;`-sequence).
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    parse_fragment(text, Parser::seq)
}

pub fn parse_type(text: &str) -> Result<Type, ParseError> {
    parse_fragment(text, Parser::ty)
}

/// Parses an effect literal such as `{ρ^{1,1}@ρH, σ^~{1,0}@?}`.
pub fn parse_effect(text: &str) -> Result<Effect, ParseError> {
    parse_fragment(text, Parser::effect)
}
