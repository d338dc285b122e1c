//! Line-oriented tokenizer shared by the codebook, model-spec and
//! simulation-config grammars.
//!
//! A line is split on whitespace into tokens. `#` starts a comment outside
//! quotes. Double quotes group text containing spaces; `\"` and `\\` are
//! the only escapes. An unquoted `=` splits a token into key and value, so
//! `"High school"=3` yields key `High school`, value `3`.

/// One whitespace-delimited token, possibly a `key=value` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub key: String,
    pub value: Option<String>,
    /// True when any part of the key was written inside quotes.
    pub quoted: bool,
}

impl Token {
    /// A bare word: unquoted and without `=`.
    pub fn is_bare(&self) -> bool {
        !self.quoted && self.value.is_none()
    }

    /// `Some(value)` when this is the unquoted option `name=value`.
    pub fn option(&self, name: &str) -> Option<&str> {
        if !self.quoted && self.key == name {
            self.value.as_deref()
        } else {
            None
        }
    }
}

/// Splits one line into tokens. Returns an empty vector for blank and
/// comment-only lines.
pub fn tokenize(line: &str) -> Result<Vec<Token>, String> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();

    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        match chars.peek() {
            None | Some('#') => break,
            _ => {}
        }

        let mut key = String::new();
        let mut value: Option<String> = None;
        let mut quoted = false;

        while let Some(&c) = chars.peek() {
            if c.is_whitespace() || c == '#' {
                break;
            }
            chars.next();
            let in_value = value.is_some();
            match c {
                '=' if !in_value => value = Some(String::new()),
                '"' => {
                    quoted |= !in_value;
                    read_quoted(&mut chars, value.as_mut().unwrap_or(&mut key))?;
                }
                _ => value.as_mut().unwrap_or(&mut key).push(c),
            }
        }

        if key.is_empty() && !quoted {
            return Err("empty key before '='".to_string());
        }
        tokens.push(Token { key, value, quoted });
    }

    Ok(tokens)
}

fn read_quoted(
    chars: &mut std::iter::Peekable<std::str::Chars<'_>>,
    out: &mut String,
) -> Result<(), String> {
    loop {
        match chars.next() {
            None => return Err("unterminated quoted string".to_string()),
            Some('"') => return Ok(()),
            Some('\\') => match chars.next() {
                Some(c @ ('"' | '\\')) => out.push(c),
                Some(c) => return Err(format!("unknown escape '\\{c}'")),
                None => return Err("unterminated quoted string".to_string()),
            },
            Some(c) => out.push(c),
        }
    }
}

/// Parses a finite real number, naming `what` in the error.
pub(crate) fn parse_real(text: &str, what: &str) -> Result<f64, String> {
    match text.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("{what}: expected a finite number, found '{text}'")),
    }
}

pub(crate) fn parse_count(text: &str, what: &str) -> Result<usize, String> {
    text.trim()
        .parse::<usize>()
        .map_err(|_| format!("{what}: expected a non-negative integer, found '{text}'"))
}

pub(crate) fn parse_yes_no(text: &str, what: &str) -> Result<bool, String> {
    match text {
        "yes" | "true" => Ok(true),
        "no" | "false" => Ok(false),
        _ => Err(format!("{what}: expected yes or no, found '{text}'")),
    }
}
