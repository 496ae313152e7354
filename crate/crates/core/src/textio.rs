//! Helpers for the versioned structured-text artifact files.
//!
//! Files are whitespace-token streams with a magic/version header. Floats are
//! written with `Display`, which emits the shortest decimal string that
//! parses back to the identical bits, so write-then-read round-trips exactly.

use std::path::Path;

use crate::error::{Error, Result};

/// Whitespace token reader with line tracking for error messages.
pub struct TokenReader {
    path: String,
    tokens: Vec<(usize, String)>,
    pos: usize,
}

impl TokenReader {
    pub fn open<P: AsRef<Path>>(path: P) -> Result<TokenReader> {
        let name = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(path.as_ref())?;
        Ok(TokenReader::from_str_named(&text, name))
    }

    pub fn from_str_named(text: &str, path: String) -> TokenReader {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            for tok in line.split_whitespace() {
                tokens.push((i + 1, tok.to_string()));
            }
        }
        TokenReader {
            path,
            tokens,
            pos: 0,
        }
    }

    pub fn error(&self, msg: impl Into<String>) -> Error {
        let line = if self.pos == 0 {
            1
        } else {
            self.tokens
                .get(self.pos.saturating_sub(1))
                .map_or(1, |(l, _)| *l)
        };
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    #[allow(clippy::should_implement_trait)] // fallible token pop, not an Iterator
    pub fn next(&mut self) -> Result<&str> {
        match self.tokens.get(self.pos) {
            Some((_, t)) => {
                self.pos += 1;
                Ok(t)
            }
            None => Err(self.error("unexpected end of file")),
        }
    }

    pub fn peek(&self) -> Option<&str> {
        self.tokens.get(self.pos).map(|(_, t)| t.as_str())
    }

    pub fn expect(&mut self, want: &str) -> Result<()> {
        let got = self.next()?.to_string();
        if got != want {
            return Err(self.error(format!("expected {want:?}, found {got:?}")));
        }
        Ok(())
    }

    pub fn next_usize(&mut self) -> Result<usize> {
        let tok = self.next()?.to_string();
        tok.parse()
            .map_err(|_| self.error(format!("expected an integer, found {tok:?}")))
    }

    pub fn next_u64(&mut self) -> Result<u64> {
        let tok = self.next()?.to_string();
        tok.parse()
            .map_err(|_| self.error(format!("expected an integer, found {tok:?}")))
    }

    pub fn next_f64(&mut self) -> Result<f64> {
        let tok = self.next()?.to_string();
        tok.parse()
            .map_err(|_| self.error(format!("expected a number, found {tok:?}")))
    }

    pub fn next_f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.next_f64()?);
        }
        Ok(out)
    }

    pub fn next_usizes(&mut self, count: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.next_usize()?);
        }
        Ok(out)
    }
}

/// Write floats space-separated, wrapped at `per_line` values.
pub fn write_f64s<W: std::io::Write>(w: &mut W, values: &[f64], per_line: usize) -> Result<()> {
    for chunk in values.chunks(per_line.max(1)) {
        let mut first = true;
        for v in chunk {
            if !first {
                write!(w, " ")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}
