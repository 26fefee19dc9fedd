use super::ast::SourceSpan;
use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Semi,
    Colon,
    ColonColon,
    Comma,
    At,
    Dot,
    Amp,
    Eq,
    Plus,
    Minus,
    Star,
    Slash,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Real(v) => format!("real `{v:?}`"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Semi => ";",
            Tok::Colon => ":",
            Tok::ColonColon => "::",
            Tok::Comma => ",",
            Tok::At => "@",
            Tok::Dot => ".",
            Tok::Amp => "&",
            Tok::Eq => "=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub span: SourceSpan,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1u32;
    let mut col = 1u32;

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
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }

        let start_col = col;
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() {
            lex_number(&chars, &mut i, SourceSpan::new(line, start_col, 1))?
        } else {
            i += 1;
            match c {
                '{' => Tok::LBrace,
                '}' => Tok::RBrace,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '[' => Tok::LBracket,
                ']' => Tok::RBracket,
                ';' => Tok::Semi,
                ',' => Tok::Comma,
                '@' => Tok::At,
                '.' => Tok::Dot,
                '&' => Tok::Amp,
                '=' => Tok::Eq,
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '/' => Tok::Slash,
                ':' => {
                    if chars.get(i) == Some(&':') {
                        i += 1;
                        Tok::ColonColon
                    } else {
                        Tok::Colon
                    }
                }
                other => {
                    return Err(ParseError::Syntax {
                        span: SourceSpan::new(line, start_col, 1),
                        expected: "token".into(),
                        found: format!("character `{other}`"),
                    })
                }
            }
        };
        let len = (i - start) as u32;
        col += len;
        out.push(Token {
            tok,
            span: SourceSpan::new(line, start_col, len),
        });
    }

    out.push(Token {
        tok: Tok::Eof,
        span: SourceSpan::new(line, col, 1),
    });
    Ok(out)
}

fn lex_number(chars: &[char], i: &mut usize, span: SourceSpan) -> Result<Tok, ParseError> {
    let start = *i;
    if chars[start] == '0' && matches!(chars.get(start + 1), Some('x') | Some('X')) {
        *i += 2;
        while *i < chars.len() && chars[*i].is_ascii_hexdigit() {
            *i += 1;
        }
        let digits: String = chars[start + 2..*i].iter().collect();
        return u64::from_str_radix(&digits, 16)
            .ok()
            .and_then(|v| i64::try_from(v).ok())
            .map(Tok::Int)
            .ok_or_else(|| bad_number(&chars[start..*i], span));
    }

    while *i < chars.len() && chars[*i].is_ascii_digit() {
        *i += 1;
    }
    let mut is_real = false;
    // `1.5` is a real; `a[1].x` keeps the dot as a path separator.
    if chars.get(*i) == Some(&'.') && chars.get(*i + 1).is_some_and(|c| c.is_ascii_digit()) {
        is_real = true;
        *i += 1;
        while *i < chars.len() && chars[*i].is_ascii_digit() {
            *i += 1;
        }
    }
    if matches!(chars.get(*i), Some('e') | Some('E')) {
        let mut j = *i + 1;
        if matches!(chars.get(j), Some('+') | Some('-')) {
            j += 1;
        }
        if chars.get(j).is_some_and(|c| c.is_ascii_digit()) {
            is_real = true;
            *i = j;
            while *i < chars.len() && chars[*i].is_ascii_digit() {
                *i += 1;
            }
        }
    }
    let text: String = chars[start..*i].iter().collect();
    if is_real {
        text.parse::<f64>()
            .map(Tok::Real)
            .map_err(|_| bad_number(&chars[start..*i], span))
    } else {
        text.parse::<i64>()
            .map(Tok::Int)
            .map_err(|_| bad_number(&chars[start..*i], span))
    }
}

fn bad_number(text: &[char], span: SourceSpan) -> ParseError {
    ParseError::Syntax {
        span: SourceSpan::new(span.line, span.column, text.len() as u32),
        expected: "number".into(),
        found: format!("`{}`", text.iter().collect::<String>()),
    }
}
