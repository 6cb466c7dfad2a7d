//! Pretty-printing expressions back to the surface syntax.
//!
//! Output re-parses to the same tree. Run-time forms have no surface syntax
//! and print as `rgn ι3`, `loc ℓ4@ι3` and `ret(…)`.

use std::fmt::Write;

use crate::ast::{CallingMode, Const, Expr, ExprKind, Lambda};
use crate::parser::{Def, Program};

pub fn pretty(e: &Expr) -> String {
    let mut out = String::new();
    seq(e, &mut out);
    out
}

pub fn pretty_program(p: &Program) -> String {
    let mut out = String::new();
    for Def { name, ty, body, .. } in &p.defs {
        match ty {
            Some(t) => writeln!(out, "def {name} : {t} =").unwrap(),
            None => writeln!(out, "def {name} =").unwrap(),
        }
        writeln!(out, "    {}", pretty(body)).unwrap();
        out.push('\n');
    }
    out
}

fn seq(e: &Expr, out: &mut String) {
    match &e.kind {
        ExprKind::Seq(a, b) => {
            stmt_closed(a, out);
            out.push_str("; ");
            seq(b, out);
        }
        _ => stmt(e, out),
    }
}

/// A statement that can be followed by `;` without swallowing it.
fn stmt_closed(e: &Expr, out: &mut String) {
    if extends_right(e) {
        paren(e, out);
    } else {
        stmt(e, out);
    }
}

/// Forms whose last component is an open-ended sequence.
fn extends_right(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::NewRgn { .. } | ExprKind::Lambda(_) | ExprKind::RegionLambda(..) | ExprKind::Seq(..) => true,
        ExprKind::App(f, _, CallingMode::Seq) => matches!(&f.kind, ExprKind::Lambda(l) if l.sig.is_none()),
        ExprKind::If(_, _, el) | ExprKind::While(_, el) => extends_right(el),
        _ => false,
    }
}

fn paren(e: &Expr, out: &mut String) {
    out.push('(');
    seq(e, out);
    out.push(')');
}

fn stmt(e: &Expr, out: &mut String) {
    match &e.kind {
        ExprKind::NewRgn { var, handle, parent, body } => {
            write!(out, "newrgn {var}, {handle} at ").unwrap();
            expr(parent, out);
            out.push_str(" in ");
            seq(body, out);
        }
        ExprKind::App(f, a, CallingMode::Seq) if matches!(&f.kind, ExprKind::Lambda(l) if l.sig.is_none()) => {
            let ExprKind::Lambda(l) = &f.kind else { unreachable!() };
            write!(out, "let {} = ", l.param).unwrap();
            if extends_right(a) {
                paren(a, out);
            } else {
                stmt(a, out);
            }
            out.push_str(" in ");
            seq(&l.body, out);
        }
        ExprKind::App(f, a, CallingMode::Par(transfer)) => {
            out.push_str("spawn");
            if let Some(eff) = transfer {
                write!(out, "[{eff}]").unwrap();
            }
            out.push(' ');
            postfix(f, out);
            out.push('(');
            expr(a, out);
            out.push(')');
        }
        ExprKind::If(c, t, el) => {
            out.push_str("if ");
            expr(c, out);
            out.push_str(" then ");
            stmt_closed(t, out);
            out.push_str(" else ");
            branch(el, out);
        }
        ExprKind::While(c, b) => {
            out.push_str("while ");
            expr(c, out);
            out.push_str(" do ");
            branch(b, out);
        }
        ExprKind::Cap(op, h) => {
            write!(out, "{} ", op.keyword()).unwrap();
            postfix(h, out);
        }
        ExprKind::Assign(l, r) => {
            expr(l, out);
            out.push_str(" := ");
            expr(r, out);
        }
        _ => expr(e, out),
    }
}

/// The final branch of `if`/`while`: a single statement, parenthesised
/// when it is a sequence.
fn branch(e: &Expr, out: &mut String) {
    if matches!(e.kind, ExprKind::Seq(..)) {
        paren(e, out);
    } else {
        stmt(e, out);
    }
}

fn expr(e: &Expr, out: &mut String) {
    match &e.kind {
        ExprKind::Prim(op, a, b) => {
            additive(a, out);
            write!(out, " {} ", op.symbol()).unwrap();
            unary(b, out);
        }
        _ => unary(e, out),
    }
}

fn additive(e: &Expr, out: &mut String) {
    match &e.kind {
        ExprKind::Prim(crate::ast::PrimOp::Add | crate::ast::PrimOp::Sub, ..) => expr(e, out),
        _ => unary(e, out),
    }
}

fn unary(e: &Expr, out: &mut String) {
    match &e.kind {
        ExprKind::Deref(r) => {
            out.push_str("deref ");
            unary(r, out);
        }
        ExprKind::NewRef(v, h) => {
            out.push_str("new ");
            unary(v, out);
            out.push_str(" at ");
            unary(h, out);
        }
        _ => postfix(e, out),
    }
}

fn postfix(e: &Expr, out: &mut String) {
    match &e.kind {
        ExprKind::App(f, a, CallingMode::Seq) if !matches!(&f.kind, ExprKind::Lambda(l) if l.sig.is_none()) => {
            postfix(f, out);
            out.push('(');
            expr(a, out);
            out.push(')');
        }
        ExprKind::RegionApp(f, r) => {
            postfix(f, out);
            write!(out, "[{r}]").unwrap();
        }
        _ => atom(e, out),
    }
}

fn atom(e: &Expr, out: &mut String) {
    match &e.kind {
        ExprKind::Var(x) => out.push_str(x),
        ExprKind::Const(Const::Int(n)) => write!(out, "{n}").unwrap(),
        ExprKind::Const(Const::Bool(b)) => write!(out, "{b}").unwrap(),
        ExprKind::Const(Const::Unit) => out.push_str("()"),
        ExprKind::RgnVal(r) => write!(out, "rgn {r}").unwrap(),
        ExprKind::LocVal(l) => write!(out, "loc {l}@{}", l.region).unwrap(),
        ExprKind::Ret(b) => {
            out.push_str("ret(");
            seq(b, out);
            out.push(')');
        }
        ExprKind::Lambda(l) if l.sig.is_some() => {
            out.push('(');
            lambda(l, out);
            out.push(')');
        }
        ExprKind::RegionLambda(v, b) => {
            write!(out, "(Λ{v}. ").unwrap();
            seq(b, out);
            out.push(')');
        }
        _ => paren(e, out),
    }
}

fn lambda(l: &Lambda, out: &mut String) {
    let sig = l.sig.as_ref().expect("annotated lambda");
    write!(out, "λ({}: {})", l.param, sig.param_ty).unwrap();
    if !(sig.input.is_empty() && sig.output.is_empty()) {
        write!(out, " @ [{} -> {}]", sig.input, sig.output).unwrap();
    }
    out.push_str(". ");
    seq(&l.body, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::CapOp;
    use crate::parser::parse_expr;

    #[test]
    fn simple_forms() {
        assert_eq!(pretty(&Expr::cap(CapOp::RgMinus, Expr::var("h"))), "free h");
        assert_eq!(pretty(&Expr::unit()), "()");
        let e = Expr::newrgn("ρ", "h", Expr::var("heap"), Expr::cap(CapOp::RgMinus, Expr::var("h")));
        assert_eq!(pretty(&e), "newrgn ρ, h at heap in free h");
    }

    #[test]
    fn round_trips() {
        for src in [
            "let z = new 10 at h in z := deref z + 5; free h",
            "(newrgn ρ, h at heap in free h); free heap",
            "if deref x < 3 then x := 1 else (lock h; unlock h)",
            "while deref c < 2 do (c := deref c + 1; ())",
            "spawn output[ρ](h)(z); lock h",
            "spawn[{ρ^{1,0}@ρH}] f(x)",
            "(Λρ. λ(x: ref(int, ρ)) @ [{ρ^~{1,1}@?} -> {ρ^~{1,1}@?}]. deref x)[σ](a)",
            "let f = λ(x: int). x + 1 in f(2)",
            "a - (b - c)",
            "!(x == 1)",
        ] {
            let e = parse_expr(src).unwrap();
            let printed = pretty(&e);
            let again = parse_expr(&printed).unwrap_or_else(|err| panic!("{printed}: {err}"));
            assert_eq!(e, again, "{src} printed as {printed}");
        }
    }
}
