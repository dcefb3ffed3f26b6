//! Recursive-descent parser for the concrete formula syntax.
//!
//! ```text
//! formula  := conj
//! conj     := disj ('&' disj)*
//! disj     := unary ('|' unary)*
//! unary    := '!' unary | temporal | atom | '(' formula ')' | 'true'
//! temporal := ('G' | 'F') '[' int ',' int ']' '(' formula ')'
//!           | 'F' '[' int ',' int ']' 'G' '[' int ',' int ']' '(' formula ')'
//! atom     := expr ('<=' | '>=' | '<' | '>') expr
//! expr     := term (('+' | '-') term)*
//! term     := factor (('*' | '/') factor)*
//! factor   := '-' factor | number | ident | '(' expr ')'
//!           | 'abs' '(' expr ')' | ('norm2' | 'norminf') '(' expr (',' expr)* ')'
//! ```
//!
//! Strict comparisons are accepted and treated as their non-strict counterparts. Products and
//! quotients must have a variable-free operand.

use std::fmt;

use super::{Atom, Expr, Formula, Interval};

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownVariable(String),
    ReversedInterval { lo: u32, hi: u32 },
    TemporalNesting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub message: String,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ParseError {}

/// Parses `text` against the state-variable names in `schema`.
///
/// Temporal operators may only be nested in the `F[a,c1] G[c2,b](...)` form; the equivalent
/// `F[a,c1](G[c2,b](...))` is folded into it.
pub fn parse_formula<S: AsRef<str>>(text: &str, schema: &[S]) -> Result<Formula, ParseError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        text,
        tokens,
        pos: 0,
        schema: schema.iter().map(|s| s.as_ref().to_string()).collect(),
    };
    let f = p.formula()?;
    if let Some(tok) = p.peek_tok() {
        return Err(p.error_at(tok.offset, ParseErrorKind::Syntax, "unexpected trailing input"));
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Le,
    Ge,
    Lt,
    Gt,
    And,
    Or,
    Bang,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

fn syntax_error(text: &str, offset: usize, message: String) -> ParseError {
    let (line, column) = line_col(text, offset);
    ParseError {
        kind: ParseErrorKind::Syntax,
        message,
        line,
        column,
    }
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let two = |next: u8| bytes.get(i + 1) == Some(&next);
        let tok = match c {
            b'<' if two(b'=') => {
                i += 2;
                Tok::Le
            }
            b'>' if two(b'=') => {
                i += 2;
                Tok::Ge
            }
            b'<' => {
                i += 1;
                Tok::Lt
            }
            b'>' => {
                i += 1;
                Tok::Gt
            }
            b'&' => {
                i += if two(b'&') { 2 } else { 1 };
                Tok::And
            }
            b'|' => {
                i += if two(b'|') { 2 } else { 1 };
                Tok::Or
            }
            b'!' => {
                i += 1;
                Tok::Bang
            }
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b'[' => {
                i += 1;
                Tok::LBracket
            }
            b']' => {
                i += 1;
                Tok::RBracket
            }
            b',' => {
                i += 1;
                Tok::Comma
            }
            b'+' => {
                i += 1;
                Tok::Plus
            }
            b'-' => {
                i += 1;
                Tok::Minus
            }
            b'*' => {
                i += 1;
                Tok::Star
            }
            b'/' => {
                i += 1;
                Tok::Slash
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| {
                    syntax_error(text, start, format!("invalid number literal `{lit}`"))
                })?;
                Tok::Num(v)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                Tok::Ident(text[start..i].to_string())
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(syntax_error(text, start, format!("unexpected character `{ch}`")));
            }
        };
        out.push(Token { tok, offset: start });
    }
    Ok(out)
}

struct Parser<'a> {
    text: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    schema: Vec<String>,
}

impl Parser<'_> {
    fn peek_tok(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.tokens.get(self.pos + k).map(|t| &t.tok)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map_or(self.text.len(), |t| t.offset)
    }

    fn error_at(&self, offset: usize, kind: ParseErrorKind, message: impl Into<String>) -> ParseError {
        let (line, column) = line_col(self.text, offset);
        ParseError {
            kind,
            message: message.into(),
            line,
            column,
        }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let message = match self.peek() {
            Some(t) => format!("{}, found {t:?}", message.into()),
            None => format!("{}, found end of input", message.into()),
        };
        self.error_at(self.offset(), ParseErrorKind::Syntax, message)
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        let mut f = self.disj()?;
        while self.eat(&Tok::And) {
            let rhs = self.disj()?;
            f = Formula::and(f, rhs);
        }
        Ok(f)
    }

    fn disj(&mut self) -> Result<Formula, ParseError> {
        let mut f = self.unary()?;
        while self.eat(&Tok::Or) {
            let rhs = self.unary()?;
            f = Formula::or(f, rhs);
        }
        Ok(f)
    }

    fn is_temporal_start(&self) -> bool {
        matches!(self.peek(), Some(Tok::Ident(name)) if name == "F" || name == "G")
            && self.peek_at(1) == Some(&Tok::LBracket)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.eat(&Tok::Bang) {
            return Ok(Formula::not(self.unary()?));
        }
        if self.is_temporal_start() {
            return self.temporal();
        }
        if matches!(self.peek(), Some(Tok::Ident(name)) if name == "true") {
            self.pos += 1;
            return Ok(Formula::True);
        }
        if self.peek() == Some(&Tok::LParen) {
            // A parenthesis opens either a sub-formula or the left side of an atom.
            let save = self.pos;
            match self.atom() {
                Ok(a) => return Ok(Formula::Atom(a)),
                Err(atom_err) => {
                    let atom_pos = self.pos;
                    self.pos = save + 1;
                    let inner = self.formula();
                    let inner = inner.and_then(|f| {
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(f)
                    });
                    return match inner {
                        Ok(f) => Ok(f),
                        Err(e) if e.kind != ParseErrorKind::Syntax => Err(e),
                        Err(formula_err) => {
                            // Report whichever attempt got further.
                            if atom_pos > self.pos && atom_err.kind == ParseErrorKind::Syntax {
                                Err(atom_err)
                            } else {
                                Err(formula_err)
                            }
                        }
                    };
                }
            }
        }
        Ok(Formula::Atom(self.atom()?))
    }

    fn interval(&mut self) -> Result<Interval, ParseError> {
        let start = self.offset();
        self.expect(Tok::LBracket, "`[`")?;
        let lo = self.step_count()?;
        self.expect(Tok::Comma, "`,`")?;
        let hi = self.step_count()?;
        self.expect(Tok::RBracket, "`]`")?;
        Interval::new(lo, hi).ok_or_else(|| {
            self.error_at(
                start,
                ParseErrorKind::ReversedInterval { lo, hi },
                format!("interval [{lo},{hi}] has lower bound above upper bound"),
            )
        })
    }

    fn step_count(&mut self) -> Result<u32, ParseError> {
        match self.peek() {
            Some(Tok::Num(v)) if v.fract() == 0.0 && *v >= 0.0 && *v <= u32::MAX as f64 => {
                let v = *v as u32;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.error("expected a nonnegative integer time step")),
        }
    }

    fn temporal(&mut self) -> Result<Formula, ParseError> {
        let op_offset = self.offset();
        let is_g = matches!(self.peek(), Some(Tok::Ident(n)) if n == "G");
        self.pos += 1;
        let outer = self.interval()?;
        if !is_g && self.is_temporal_start() {
            let inner_offset = self.offset();
            let inner_is_g = matches!(self.peek(), Some(Tok::Ident(n)) if n == "G");
            if !inner_is_g {
                return Err(self.error_at(
                    inner_offset,
                    ParseErrorKind::TemporalNesting,
                    "only `F[a,c1] G[c2,b](...)` may combine temporal operators",
                ));
            }
            self.pos += 1;
            let inner = self.interval()?;
            let body = self.temporal_body(inner_offset, false)?;
            return Ok(Formula::eventually_always(outer, inner, body));
        }
        let body = self.temporal_body(op_offset, !is_g)?;
        Ok(match body {
            _ if is_g => Formula::always(outer, body),
            Formula::Always(inner, g_body) => Formula::EventuallyAlways {
                outer,
                inner,
                body: g_body,
            },
            body => Formula::eventually(outer, body),
        })
    }

    /// Parenthesized body of a temporal operator. Nested temporal operators are rejected, except
    /// a single `G` directly under `F` when `allow_fold` is set.
    fn temporal_body(&mut self, op_offset: usize, allow_fold: bool) -> Result<Formula, ParseError> {
        self.expect(Tok::LParen, "`(` after the time interval")?;
        let body = self.formula()?;
        self.expect(Tok::RParen, "`)`")?;
        let foldable = matches!(&body, Formula::Always(_, b) if !b.is_temporal());
        if body.is_temporal() && !(allow_fold && foldable) {
            return Err(self.error_at(
                op_offset,
                ParseErrorKind::TemporalNesting,
                "temporal operators may not be nested here",
            ));
        }
        Ok(body)
    }

    fn atom(&mut self) -> Result<Atom, ParseError> {
        let lhs = self.expr()?;
        let le = match self.peek() {
            Some(Tok::Le | Tok::Lt) => true,
            Some(Tok::Ge | Tok::Gt) => false,
            _ => return Err(self.error("expected a comparison `<=` or `>=`")),
        };
        self.pos += 1;
        let rhs = self.expr()?;
        Ok(if le { Atom::le(lhs, rhs) } else { Atom::ge(lhs, rhs) })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.term()?;
        loop {
            if self.eat(&Tok::Plus) {
                e = Expr::Add(Box::new(e), Box::new(self.term()?));
            } else if self.eat(&Tok::Minus) {
                e = Expr::Sub(Box::new(e), Box::new(self.term()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.factor()?;
        loop {
            let offset = self.offset();
            let divide = if self.eat(&Tok::Star) {
                false
            } else if self.eat(&Tok::Slash) {
                true
            } else {
                return Ok(e);
            };
            let rhs = self.factor()?;
            let const_of = |x: &Expr| x.max_var_index().is_none().then(|| x.eval(&[]));
            e = match (divide, const_of(&e), const_of(&rhs)) {
                (false, Some(c), _) => Expr::Scale(c, Box::new(rhs)),
                (false, None, Some(c)) => Expr::Scale(c, Box::new(e)),
                (true, _, Some(c)) if c != 0.0 => Expr::Scale(1.0 / c, Box::new(e)),
                (true, _, Some(_)) => {
                    return Err(self.error_at(offset, ParseErrorKind::Syntax, "division by zero"))
                }
                _ => {
                    return Err(self.error_at(
                        offset,
                        ParseErrorKind::Syntax,
                        "products and quotients need a constant operand",
                    ))
                }
            };
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Tok::Minus) => {
                self.pos += 1;
                if let Some(Tok::Num(v)) = self.peek() {
                    let v = *v;
                    self.pos += 1;
                    return Ok(Expr::Const(-v));
                }
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "abs" | "norm2" | "norminf" if self.peek() == Some(&Tok::LParen) => {
                        self.pos += 1;
                        let mut args = vec![self.expr()?];
                        while self.eat(&Tok::Comma) {
                            args.push(self.expr()?);
                        }
                        self.expect(Tok::RParen, "`)`")?;
                        match name.as_str() {
                            "abs" if args.len() == 1 => Ok(Expr::Abs(Box::new(args.remove(0)))),
                            "abs" => Err(self.error_at(
                                offset,
                                ParseErrorKind::Syntax,
                                "abs takes exactly one argument",
                            )),
                            "norm2" => Ok(Expr::Norm2(args)),
                            _ => Ok(Expr::NormInf(args)),
                        }
                    }
                    _ => match self.schema.iter().position(|s| *s == name) {
                        Some(index) => Ok(Expr::Var { index, name }),
                        None => Err(self.error_at(
                            offset,
                            ParseErrorKind::UnknownVariable(name.clone()),
                            format!("unknown state variable `{name}`"),
                        )),
                    },
                }
            }
            _ => Err(self.error("expected an expression")),
        }
    }
}
