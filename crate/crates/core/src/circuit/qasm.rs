//! OPENQASM 2.0 subset: one quantum register, optional classical register,
//! the gates of [`GateKind`], terminal full-register measurement.

use std::fmt::Write as _;
use std::path::Path;

use super::{Circuit, GateKind, GateOp};
use crate::error::SourcePos;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64, bool),
    Str(String),
    Sym(char),
    Arrow,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: SourcePos,
}

fn syntax(pos: SourcePos, msg: impl Into<String>) -> Error {
    Error::Syntax {
        pos,
        msg: msg.into(),
    }
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, c: char| {
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let ch = chars[i];
        let pos = SourcePos { line, col };
        if ch.is_whitespace() {
            advance(&mut i, &mut line, &mut col, ch);
            continue;
        }
        if ch == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            continue;
        }
        if ch == '/' && chars.get(i + 1) == Some(&'*') {
            advance(&mut i, &mut line, &mut col, '/');
            advance(&mut i, &mut line, &mut col, '*');
            loop {
                if i + 1 >= chars.len() {
                    return Err(syntax(pos, "unterminated block comment"));
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    advance(&mut i, &mut line, &mut col, '*');
                    advance(&mut i, &mut line, &mut col, '/');
                    break;
                }
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            continue;
        }
        if ch.is_ascii_alphabetic() || ch == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                pos,
            });
            continue;
        }
        if ch.is_ascii_digit()
            || (ch == '.' && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit()))
        {
            let start = i;
            let mut integral = true;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                integral &= chars[i] != '.';
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                integral = false;
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    let ch = chars[i];
                    advance(&mut i, &mut line, &mut col, ch);
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    let ch = chars[i];
                    advance(&mut i, &mut line, &mut col, ch);
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text
                .parse::<f64>()
                .map_err(|_| syntax(pos, format!("bad number `{text}`")))?;
            out.push(Token {
                tok: Tok::Number(value, integral),
                pos,
            });
            continue;
        }
        if ch == '"' {
            advance(&mut i, &mut line, &mut col, ch);
            let start = i;
            while i < chars.len() && chars[i] != '"' {
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            if i == chars.len() {
                return Err(syntax(pos, "unterminated string"));
            }
            let s = chars[start..i].iter().collect();
            advance(&mut i, &mut line, &mut col, '"');
            out.push(Token {
                tok: Tok::Str(s),
                pos,
            });
            continue;
        }
        if ch == '-' && chars.get(i + 1) == Some(&'>') {
            advance(&mut i, &mut line, &mut col, '-');
            advance(&mut i, &mut line, &mut col, '>');
            out.push(Token {
                tok: Tok::Arrow,
                pos,
            });
            continue;
        }
        if "[](){};,+-*/^".contains(ch) {
            advance(&mut i, &mut line, &mut col, ch);
            out.push(Token {
                tok: Tok::Sym(ch),
                pos,
            });
            continue;
        }
        return Err(syntax(pos, format!("unexpected character `{ch}`")));
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: SourcePos { line, col },
    });
    Ok(out)
}

/// A register reference: `q` or `q[3]`.
struct Arg {
    reg: String,
    index: Option<usize>,
    pos: SourcePos,
}

struct Parser {
    toks: Vec<Token>,
    at: usize,
    qreg: Option<(String, usize)>,
    creg: Option<(String, usize)>,
    ops: Vec<GateOp>,
    measured_bits: Vec<bool>,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.at]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect_sym(&mut self, c: char) -> Result<()> {
        let t = self.next();
        match t.tok {
            Tok::Sym(s) if s == c => Ok(()),
            other => Err(syntax(
                t.pos,
                format!("expected `{c}`, found {}", describe(&other)),
            )),
        }
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek().tok == Tok::Sym(c) {
            self.next();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<(String, SourcePos)> {
        let t = self.next();
        match t.tok {
            Tok::Ident(s) => Ok((s, t.pos)),
            other => Err(syntax(
                t.pos,
                format!("expected identifier, found {}", describe(&other)),
            )),
        }
    }

    fn integer(&mut self) -> Result<usize> {
        let t = self.next();
        match t.tok {
            Tok::Number(v, true) if v >= 0.0 && v <= u32::MAX as f64 => Ok(v as usize),
            other => Err(syntax(
                t.pos,
                format!("expected integer, found {}", describe(&other)),
            )),
        }
    }

    fn arg(&mut self) -> Result<Arg> {
        let (reg, pos) = self.ident()?;
        let index = if self.eat_sym('[') {
            let i = self.integer()?;
            self.expect_sym(']')?;
            Some(i)
        } else {
            None
        };
        Ok(Arg { reg, index, pos })
    }

    fn args(&mut self) -> Result<Vec<Arg>> {
        let mut v = vec![self.arg()?];
        while self.eat_sym(',') {
            v.push(self.arg()?);
        }
        Ok(v)
    }

    fn qubit_of(&self, a: &Arg) -> Result<Option<usize>> {
        let Some((name, size)) = &self.qreg else {
            return Err(syntax(a.pos, "gate applied before any qreg declaration"));
        };
        if &a.reg != name {
            return Err(Error::Arity {
                pos: a.pos,
                msg: format!("unknown quantum register `{}`", a.reg),
            });
        }
        match a.index {
            Some(i) if i >= *size => Err(Error::Arity {
                pos: a.pos,
                msg: format!("index {i} out of range for {name}[{size}]"),
            }),
            other => Ok(other),
        }
    }

    // expression grammar: sum := prod (('+'|'-') prod)*, prod := unary (('*'|'/') unary)*,
    // unary := '-' unary | pow, pow := atom ('^' unary)?
    fn expr(&mut self) -> Result<f64> {
        let mut v = self.term()?;
        loop {
            if self.eat_sym('+') {
                v += self.term()?;
            } else if self.eat_sym('-') {
                v -= self.term()?;
            } else {
                return Ok(v);
            }
        }
    }

    fn term(&mut self) -> Result<f64> {
        let mut v = self.unary()?;
        loop {
            if self.eat_sym('*') {
                v *= self.unary()?;
            } else if self.eat_sym('/') {
                v /= self.unary()?;
            } else {
                return Ok(v);
            }
        }
    }

    fn unary(&mut self) -> Result<f64> {
        if self.eat_sym('-') {
            return Ok(-self.unary()?);
        }
        if self.eat_sym('+') {
            return self.unary();
        }
        let base = self.atom()?;
        if self.eat_sym('^') {
            return Ok(base.powf(self.unary()?));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<f64> {
        let t = self.next();
        match t.tok {
            Tok::Number(v, _) => Ok(v),
            Tok::Sym('(') => {
                let v = self.expr()?;
                self.expect_sym(')')?;
                Ok(v)
            }
            Tok::Ident(name) if name == "pi" => Ok(std::f64::consts::PI),
            Tok::Ident(name) => {
                let f: fn(f64) -> f64 = match name.as_str() {
                    "sin" => f64::sin,
                    "cos" => f64::cos,
                    "tan" => f64::tan,
                    "exp" => f64::exp,
                    "ln" => f64::ln,
                    "sqrt" => f64::sqrt,
                    _ => {
                        return Err(syntax(
                            t.pos,
                            format!("unknown identifier `{name}` in expression"),
                        ))
                    }
                };
                self.expect_sym('(')?;
                let v = self.expr()?;
                self.expect_sym(')')?;
                Ok(f(v))
            }
            other => Err(syntax(
                t.pos,
                format!("expected expression, found {}", describe(&other)),
            )),
        }
    }

    fn declare(&mut self, quantum: bool, pos: SourcePos) -> Result<()> {
        let (name, _) = self.ident()?;
        self.expect_sym('[')?;
        let size = self.integer()?;
        self.expect_sym(']')?;
        self.expect_sym(';')?;
        if size == 0 {
            return Err(syntax(pos, "register size must be positive"));
        }
        let slot = if quantum {
            &mut self.qreg
        } else {
            &mut self.creg
        };
        if slot.is_some() {
            let which = if quantum { "quantum" } else { "classical" };
            return Err(syntax(
                pos,
                format!("only one {which} register is supported"),
            ));
        }
        *slot = Some((name, size));
        if quantum {
            self.measured_bits = vec![false; size];
        }
        Ok(())
    }

    fn measure(&mut self, pos: SourcePos) -> Result<()> {
        let q = self.arg()?;
        let t = self.next();
        if t.tok != Tok::Arrow {
            return Err(syntax(t.pos, "expected `->` in measure"));
        }
        let c = self.arg()?;
        self.expect_sym(';')?;
        let qubit = self.qubit_of(&q)?;
        let Some((cname, csize)) = self.creg.clone() else {
            return Err(syntax(pos, "measure without a classical register"));
        };
        if c.reg != cname {
            return Err(Error::Arity {
                pos: c.pos,
                msg: format!("unknown classical register `{}`", c.reg),
            });
        }
        let n = self.measured_bits.len();
        match (qubit, c.index) {
            (None, None) => {
                if csize < n {
                    return Err(Error::Arity {
                        pos,
                        msg: format!("classical register has {csize} bits for {n} qubits"),
                    });
                }
                self.measured_bits.iter_mut().for_each(|b| *b = true);
            }
            (Some(qi), Some(ci)) => {
                if ci != qi {
                    return Err(syntax(
                        pos,
                        format!("measurement must map q[{qi}] to bit {qi}, not {ci}"),
                    ));
                }
                if self.measured_bits[qi] {
                    return Err(syntax(pos, format!("q[{qi}] measured twice")));
                }
                self.measured_bits[qi] = true;
            }
            _ => {
                return Err(Error::Arity {
                    pos,
                    msg: "measure must pair a register with a register or a bit with a bit".into(),
                })
            }
        }
        Ok(())
    }

    fn gate(&mut self, name: String, pos: SourcePos) -> Result<()> {
        let kind = GateKind::from_name(&name).ok_or_else(|| Error::UnsupportedGate {
            name: name.clone(),
            pos,
        })?;
        let mut params = Vec::new();
        if self.eat_sym('(') && !self.eat_sym(')') {
            params.push(self.expr()?);
            while self.eat_sym(',') {
                params.push(self.expr()?);
            }
            self.expect_sym(')')?;
        }
        let args = self.args()?;
        self.expect_sym(';')?;
        if params.len() != kind.param_count() {
            return Err(Error::Arity {
                pos,
                msg: format!(
                    "{kind} takes {} parameter(s), got {}",
                    kind.param_count(),
                    params.len()
                ),
            });
        }
        let size = self.qreg.as_ref().map(|q| q.1).unwrap_or(0);
        let mut qubits = Vec::with_capacity(args.len());
        let mut broadcast = false;
        for a in &args {
            match self.qubit_of(a)? {
                Some(q) => qubits.push(q),
                None => broadcast = true,
            }
        }
        if kind == GateKind::Barrier {
            let qubits = if broadcast {
                (0..size).collect()
            } else {
                qubits
            };
            self.ops.push(GateOp {
                kind,
                qubits,
                params,
            });
            return Ok(());
        }
        if self.measured_bits.iter().any(|&m| m) {
            return Err(syntax(pos, "mid-circuit measurement is not supported"));
        }
        if broadcast {
            if kind.arity() != 1 || args.len() != 1 {
                return Err(Error::Arity {
                    pos,
                    msg: format!(
                        "register broadcast is only supported for single-qubit gates, not {kind}"
                    ),
                });
            }
            for q in 0..size {
                self.ops.push(GateOp {
                    kind,
                    qubits: vec![q],
                    params: params.clone(),
                });
            }
            return Ok(());
        }
        if qubits.len() != kind.arity() {
            return Err(Error::Arity {
                pos,
                msg: format!(
                    "{kind} acts on {} qubit(s), got {}",
                    kind.arity(),
                    qubits.len()
                ),
            });
        }
        let op = GateOp {
            kind,
            qubits,
            params,
        };
        op.check(size).map_err(|e| Error::Arity {
            pos,
            msg: e.to_string(),
        })?;
        self.ops.push(op);
        Ok(())
    }

    fn statement(&mut self) -> Result<bool> {
        let t = self.next();
        let pos = t.pos;
        let name = match t.tok {
            Tok::Eof => return Ok(false),
            Tok::Ident(s) => s,
            other => {
                return Err(syntax(
                    pos,
                    format!("expected statement, found {}", describe(&other)),
                ))
            }
        };
        match name.as_str() {
            "OPENQASM" => return Err(syntax(pos, "duplicate OPENQASM header")),
            "include" => {
                let t = self.next();
                if !matches!(t.tok, Tok::Str(_)) {
                    return Err(syntax(t.pos, "expected file name after include"));
                }
                self.expect_sym(';')?;
            }
            "qreg" => self.declare(true, pos)?,
            "creg" => self.declare(false, pos)?,
            "measure" => self.measure(pos)?,
            "gate" | "opaque" | "if" | "reset" => {
                return Err(syntax(
                    pos,
                    format!("`{name}` statements are not supported"),
                ))
            }
            _ => self.gate(name, pos)?,
        }
        Ok(true)
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Number(v, _) => format!("number {v}"),
        Tok::Str(s) => format!("\"{s}\""),
        Tok::Sym(c) => format!("`{c}`"),
        Tok::Arrow => "`->`".into(),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses OPENQASM 2.0 source into a [`Circuit`] called `name`.
pub fn parse_qasm(text: &str, name: &str) -> Result<Circuit> {
    let mut p = Parser {
        toks: lex(text)?,
        at: 0,
        qreg: None,
        creg: None,
        ops: Vec::new(),
        measured_bits: Vec::new(),
    };
    let head = p.next();
    match head.tok {
        Tok::Ident(ref s) if s == "OPENQASM" => {}
        _ => return Err(syntax(head.pos, "missing `OPENQASM 2.0;` header")),
    }
    let v = p.next();
    match v.tok {
        Tok::Number(x, _) if (x - 2.0).abs() < 1e-9 => {}
        _ => return Err(syntax(v.pos, "only OPENQASM 2.0 is supported")),
    }
    p.expect_sym(';')?;
    while p.statement()? {}
    let Some((_, n_qubits)) = p.qreg else {
        return Err(syntax(p.peek().pos, "no quantum register declared"));
    };
    let any = p.measured_bits.iter().any(|&m| m);
    if any && !p.measured_bits.iter().all(|&m| m) {
        return Err(syntax(
            p.peek().pos,
            "partial measurement: every qubit must be measured",
        ));
    }
    // barriers after the measurement block carry no meaning
    Circuit::with_ops(name, n_qubits, p.ops, any)
}

pub fn read_qasm_file(path: &Path) -> Result<Circuit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("circuit");
    parse_qasm(&text, name).map_err(|e| e.in_file(path))
}

/// Renders a circuit as OPENQASM 2.0. Angles are written in shortest
/// round-trip decimal form so that parsing restores them bit-for-bit.
pub fn emit_qasm(c: &Circuit) -> String {
    let mut s = String::new();
    s.push_str("OPENQASM 2.0;\ninclude \"qelib1.inc\";\n");
    let _ = writeln!(s, "qreg q[{}];", c.n_qubits);
    if c.measured {
        let _ = writeln!(s, "creg c[{}];", c.n_qubits);
    }
    for op in &c.ops {
        s.push_str(op.kind.name());
        if !op.params.is_empty() {
            s.push('(');
            for (i, p) in op.params.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{p:?}");
            }
            s.push(')');
        }
        for (i, q) in op.qubits.iter().enumerate() {
            s.push_str(if i == 0 { " " } else { "," });
            let _ = write!(s, "q[{q}]");
        }
        s.push_str(";\n");
    }
    if c.measured {
        s.push_str("measure q -> c;\n");
    }
    s
}
