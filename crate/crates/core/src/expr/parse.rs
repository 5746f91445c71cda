//! Recursive-descent parser for one-line arithmetic expressions.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := power (('*' | '/') power)*
//! power   := unary ('^' power)?
//! unary   := ('-' | '+') unary | primary
//! primary := number | name | name '(' sum ')' | '(' sum ')'
//! ```
//!
//! Unary minus binds tighter than `^`, so `-x^2` is `(-x)^2`. Exponents must
//! be constant; an integral exponent becomes [`Expr::Pow`].

use std::collections::HashMap;
use std::sync::Arc;

use super::{Expr, Func};

/// Resolves variable names to 0-based indices.
pub trait SymbolTable {
    fn lookup(&self, name: &str) -> Option<usize>;
}

impl SymbolTable for HashMap<String, usize> {
    fn lookup(&self, name: &str) -> Option<usize> {
        self.get(name).copied()
    }
}

impl<F: Fn(&str) -> Option<usize>> SymbolTable for F {
    fn lookup(&self, name: &str) -> Option<usize> {
        self(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    /// 1-based character column.
    pub column: usize,
    pub message: String,
}

/// Parse a single expression.
pub fn parse_function(text: &str, symbols: &dyn SymbolTable) -> Result<Expr, ParseError> {
    parse_function_at(text, symbols, 1, 0)
}

/// Parse an expression that sits at `line`, starting after `column_offset`
/// characters of the enclosing line. Error positions refer to that line.
pub fn parse_function_at(
    text: &str,
    symbols: &dyn SymbolTable,
    line: usize,
    column_offset: usize,
) -> Result<Expr, ParseError> {
    let tokens = lex(text).map_err(|(col, message)| ParseError {
        line,
        column: column_offset + col,
        message,
    })?;
    let mut p = Parser {
        tokens,
        pos: 0,
        symbols,
        end_col: text.chars().count() + 1,
    };
    let result = if p.tokens.is_empty() {
        Err((1, "empty expression".to_string()))
    } else {
        p.sum().and_then(|e| match p.peek() {
            None => Ok(e),
            Some(t) => Err((t.col, format!("unexpected {}", t.kind.describe()))),
        })
    };
    result.map_err(|(col, message)| ParseError {
        line,
        column: column_offset + col,
        message,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Num(v) => format!("number {v}"),
            Kind::Ident(s) => format!("name `{s}`"),
            Kind::Op(c) => format!("`{c}`"),
            Kind::LParen => "`(`".into(),
            Kind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Kind,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, (usize, String)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| (col, format!("malformed number `{s}`")))?;
            out.push(Token { kind: Kind::Num(v), col });
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                kind: Kind::Ident(chars[start..i].iter().collect()),
                col,
            });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => Kind::Op(c),
                '(' => Kind::LParen,
                ')' => Kind::RParen,
                _ => return Err((col, format!("unexpected character `{c}`"))),
            };
            out.push(Token { kind, col });
            i += 1;
        }
    }
    Ok(out)
}

type PResult = Result<Expr, (usize, String)>;

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    symbols: &'a dyn SymbolTable,
    end_col: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token { kind: Kind::Op(c), .. }) => Some(*c),
            _ => None,
        }
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end_col, |t| t.col)
    }

    fn sum(&mut self) -> PResult {
        let mut lhs = self.product()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.product()?;
            lhs = if op == '+' {
                Expr::Add(Arc::new(lhs), Arc::new(rhs))
            } else {
                Expr::Sub(Arc::new(lhs), Arc::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn product(&mut self) -> PResult {
        let mut lhs = self.power()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.power()?;
            lhs = if op == '*' {
                Expr::Mul(Arc::new(lhs), Arc::new(rhs))
            } else {
                Expr::Div(Arc::new(lhs), Arc::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn power(&mut self) -> PResult {
        let base = self.unary()?;
        if self.peek_op() != Some('^') {
            return Ok(base);
        }
        self.pos += 1;
        let col = self.here();
        let exponent = self.power()?;
        if !exponent.free_variables().is_empty() {
            return Err((col, "exponent must be a constant".into()));
        }
        let p = exponent
            .eval::<f64>(&[])
            .map_err(|e| (col, format!("exponent does not evaluate: {e}")))?;
        if !p.is_finite() {
            return Err((col, "exponent is not finite".into()));
        }
        let base = Arc::new(base);
        if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
            Ok(Expr::Pow(base, p as i32))
        } else {
            Ok(Expr::PowReal(base, p))
        }
    }

    fn unary(&mut self) -> PResult {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Arc::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> PResult {
        let col = self.here();
        let Some(tok) = self.next() else {
            return Err((col, "unexpected end of expression".into()));
        };
        match tok.kind {
            Kind::Num(v) => Ok(Expr::Const(v)),
            Kind::LParen => {
                let inner = self.sum()?;
                self.expect_rparen(col)?;
                Ok(inner)
            }
            Kind::Ident(name) => {
                if matches!(self.peek(), Some(Token { kind: Kind::LParen, .. })) {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| (tok.col, format!("unknown function `{name}`")))?;
                    let open = self.here();
                    self.pos += 1;
                    let arg = self.sum()?;
                    self.expect_rparen(open)?;
                    Ok(Expr::Func(func, Arc::new(arg)))
                } else {
                    self.symbols
                        .lookup(&name)
                        .map(Expr::Var)
                        .ok_or_else(|| (tok.col, format!("unknown identifier `{name}`")))
                }
            }
            other => Err((tok.col, format!("unexpected {}", other.describe()))),
        }
    }

    fn expect_rparen(&mut self, open_col: usize) -> Result<(), (usize, String)> {
        match self.peek() {
            Some(Token { kind: Kind::RParen, .. }) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err((
                self.here(),
                format!("missing `)` for `(` at column {open_col}"),
            )),
        }
    }
}
