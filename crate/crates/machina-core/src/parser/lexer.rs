//! Tokenizer for the `.cmdl` model DSL. `#` starts a line comment.

use crate::diag::{Diagnostic, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tok {
    Ident,
    Number,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Arrow,   // ->
    Assign,  // :=
    EqEq,    // ==
    Colon,
    Dot,
    Comma,
    Semi,
    Slash,
    Eq, // =
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub kind: Tok,
    pub text: String,
    pub span: Span,
}

pub fn lex(source: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let mut chars = source.chars().peekable();

    macro_rules! push {
        ($kind:expr, $text:expr, $l:expr, $c:expr) => {
            out.push(Token { kind: $kind, text: $text.to_string(), span: Span::new($l, $c) })
        };
    }

    while let Some(&c) = chars.peek() {
        let (l, co) = (line, col);
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => {
                chars.next();
                col += 1;
            }
            '#' => {
                while let Some(&c2) = chars.peek() {
                    if c2 == '\n' {
                        break;
                    }
                    chars.next();
                    col += 1;
                }
            }
            '{' => {
                chars.next();
                col += 1;
                push!(Tok::LBrace, "{", l, co);
            }
            '}' => {
                chars.next();
                col += 1;
                push!(Tok::RBrace, "}", l, co);
            }
            '[' => {
                chars.next();
                col += 1;
                push!(Tok::LBracket, "[", l, co);
            }
            ']' => {
                chars.next();
                col += 1;
                push!(Tok::RBracket, "]", l, co);
            }
            '(' => {
                chars.next();
                col += 1;
                push!(Tok::LParen, "(", l, co);
            }
            ')' => {
                chars.next();
                col += 1;
                push!(Tok::RParen, ")", l, co);
            }
            '.' => {
                chars.next();
                col += 1;
                push!(Tok::Dot, ".", l, co);
            }
            ',' => {
                chars.next();
                col += 1;
                push!(Tok::Comma, ",", l, co);
            }
            ';' => {
                chars.next();
                col += 1;
                push!(Tok::Semi, ";", l, co);
            }
            '/' => {
                chars.next();
                col += 1;
                push!(Tok::Slash, "/", l, co);
            }
            '-' => {
                chars.next();
                col += 1;
                if chars.peek() == Some(&'>') {
                    chars.next();
                    col += 1;
                    push!(Tok::Arrow, "->", l, co);
                } else {
                    return Err(Diagnostic::error(
                        Span::new(l, co),
                        "SYNTAX",
                        "expected `->`".to_string(),
                    ));
                }
            }
            ':' => {
                chars.next();
                col += 1;
                if chars.peek() == Some(&'=') {
                    chars.next();
                    col += 1;
                    push!(Tok::Assign, ":=", l, co);
                } else {
                    push!(Tok::Colon, ":", l, co);
                }
            }
            '=' => {
                chars.next();
                col += 1;
                if chars.peek() == Some(&'=') {
                    chars.next();
                    col += 1;
                    push!(Tok::EqEq, "==", l, co);
                } else {
                    push!(Tok::Eq, "=", l, co);
                }
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&c2) = chars.peek() {
                    if c2.is_ascii_digit() {
                        s.push(c2);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                push!(Tok::Number, s, l, co);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c2) = chars.peek() {
                    if c2.is_ascii_alphanumeric() || c2 == '_' {
                        s.push(c2);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                push!(Tok::Ident, s, l, co);
            }
            other => {
                return Err(Diagnostic::error(
                    Span::new(l, co),
                    "SYNTAX",
                    format!("unexpected character `{other}`"),
                ));
            }
        }
    }
    out.push(Token { kind: Tok::Eof, text: String::new(), span: Span::new(line, col) });
    Ok(out)
}
