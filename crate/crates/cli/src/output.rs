//! CSV tables with a provenance trailer, written only once a run finishes.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use sha2::{Digest, Sha256};

/// Renders `x` with nine significant digits in its shortest round-trip form.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    // Avoid a "-0" cell; very small or large magnitudes use exponent form.
    if rounded == 0.0 {
        "0".into()
    } else if rounded.abs() < 1e-4 || rounded.abs() >= 1e15 {
        format!("{rounded:e}")
    } else {
        rounded.to_string()
    }
}

/// First 16 hex digits of the SHA-256 of the config bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, hash: &str, seed: u64) -> anyhow::Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let mut buf = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        writeln!(buf, "# datacap {} config={hash} seed={seed}", env!("CARGO_PKG_VERSION"))?;
        Ok(buf)
    }
}

pub fn emit(bytes: &[u8], out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(num(0.338_745_123_456), "0.338745123");
        assert_eq!(num(1.0), "1");
        assert_eq!(num(-0.0), "0");
        assert_eq!(num(123_456_789_012.0), "123456789000");
        assert_eq!(num(1.234_567_891_23e-7), "1.23456789e-7");
        assert_eq!(num(2e20), "2e20");
        assert_eq!(num(f64::INFINITY), "inf");
    }

    #[test]
    fn trailer_and_line_endings() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        let text = String::from_utf8(t.render("abcd", 7).unwrap()).unwrap();
        assert!(!text.contains('\r'));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "a,b");
        assert_eq!(lines[1], "1,\"x,y\"");
        assert!(lines[2].starts_with("# datacap ") && lines[2].ends_with("config=abcd seed=7"));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(b"abc"), "ba7816bf8f01cfea");
    }
}
