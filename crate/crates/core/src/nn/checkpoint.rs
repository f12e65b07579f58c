//! Text serialization of named tensors.
//!
//! ```text
//! dmn-params<TAB>1
//! <name><TAB><dim,dim,...><TAB><v v v ...>
//! ```
//!
//! Values use Rust's shortest round-trip exponent formatting, so a
//! save/load cycle reproduces every bit.

use std::io::{BufRead, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const PARAMS_HEADER: &str = "dmn-params\t1";

/// Writes one line per tensor, without the header.
pub fn write_param_lines<'t, W, I>(out: &mut W, params: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'t str, &'t Tensor)>,
{
    for (name, t) in params {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        write!(out, "{name}\t{}\t", shape.join(","))?;
        for (k, v) in t.data().iter().enumerate() {
            if k > 0 {
                out.write_all(b" ")?;
            }
            write!(out, "{v:e}")?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses tensor lines; `lines` yields `(line_number, text)`.
pub fn parse_param_lines<'l>(lines: impl Iterator<Item = (usize, &'l str)>) -> Result<Vec<(String, Tensor)>> {
    let mut out: Vec<(String, Tensor)> = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(name), Some(shape), values, None) = (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::parse(n, "expected name<TAB>shape<TAB>values"));
        };
        let shape: Vec<usize> = if shape.is_empty() {
            Vec::new()
        } else {
            shape
                .split(',')
                .map(|d| d.parse().map_err(|_| Error::parse(n, format!("bad dimension `{d}`"))))
                .collect::<Result<_>>()?
        };
        let data: Vec<f64> = values
            .unwrap_or("")
            .split(' ')
            .filter(|v| !v.is_empty())
            .map(|v| v.parse().map_err(|_| Error::parse(n, format!("bad value `{v}`"))))
            .collect::<Result<_>>()?;
        let t = Tensor::new(shape, data).map_err(|e| Error::parse(n, e.to_string()))?;
        if out.iter().any(|(m, _)| m == name) {
            return Err(Error::parse(n, format!("duplicate parameter `{name}`")));
        }
        out.push((name.to_string(), t));
    }
    Ok(out)
}

pub fn write_params<W: Write>(mut out: W, params: &[(String, Tensor)]) -> std::io::Result<()> {
    writeln!(out, "{PARAMS_HEADER}")?;
    write_param_lines(&mut out, params.iter().map(|(n, t)| (n.as_str(), t)))
}

pub fn read_params<R: BufRead>(input: R) -> Result<Vec<(String, Tensor)>> {
    let lines: Vec<String> = input
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::Data(e.to_string()))?;
    match lines.first() {
        Some(h) if h == PARAMS_HEADER => {}
        _ => return Err(Error::parse(1, format!("expected header `{PARAMS_HEADER}`"))),
    }
    parse_param_lines(lines.iter().enumerate().skip(1).map(|(i, l)| (i + 1, l.as_str())))
}

pub fn save_params(path: &Path, params: &[(String, Tensor)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_params(&mut out, params).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(std::io::BufReader::new(file))
}
