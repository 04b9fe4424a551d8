use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;

use super::Expr;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<alloc::vec::Vec<(usize, Tok)>> {
    let mut out = alloc::vec::Vec::new();
    let bytes: alloc::vec::Vec<(usize, char)> = src.char_indices().collect();
    let mut i = 0;
    while i < bytes.len() {
        let (pos, c) = bytes[i];
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                let mut seen_dot = false;
                while i < bytes.len() && (bytes[i].1.is_ascii_digit() || (bytes[i].1 == '.' && !seen_dot)) {
                    seen_dot |= bytes[i].1 == '.';
                    i += 1;
                }
                let end = if i < bytes.len() { bytes[i].0 } else { src.len() };
                let text = &src[pos..end];
                let v: f64 = text.parse().map_err(|_| Error::Syntax {
                    pos,
                    msg: format!("malformed number `{text}`"),
                })?;
                out.push((bytes[start].0, Tok::Num(v)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut name = String::new();
                while i < bytes.len() && (bytes[i].1.is_ascii_alphanumeric() || bytes[i].1 == '_') {
                    name.push(bytes[i].1);
                    i += 1;
                }
                out.push((pos, Tok::Ident(name)));
                continue;
            }
            ch => return Err(Error::UnknownChar { pos, ch }),
        };
        out.push((pos, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: alloc::vec::Vec<(usize, Tok)>,
    at: usize,
    end: usize,
    params: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(_, t)| t.clone());
        self.at += 1;
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { pos: self.pos(), msg: msg.into() })
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Some(Tok::Minus) = self.peek() {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::Ident(n)) => {
                if self.params.contains(&n.as_str()) {
                    Ok(Expr::Param(n))
                } else {
                    Ok(Expr::Var(n))
                }
            }
            Some(Tok::LParen) => {
                let inner = self.sum()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => {
                        self.at -= 1;
                        self.err("expected `)`")
                    }
                }
            }
            Some(t) => {
                self.at -= 1;
                self.err(format!("unexpected token {t:?}"))
            }
            None => self.err("unexpected end of input"),
        }
    }
}

/// Parses `source`; identifiers listed in `params` become parameter leaves,
/// every other identifier an input variable.
pub fn parse_expr(source: &str, params: &[&str]) -> Result<Expr> {
    let toks = lex(source)?;
    let mut p = Parser { toks, at: 0, end: source.len(), params };
    let e = p.sum()?;
    if p.at < p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}
