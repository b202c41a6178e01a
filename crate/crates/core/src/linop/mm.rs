//! Matrix Market (`.mtx`) reader and writer.
//!
//! Supports `array` and `coordinate` formats with `real`, `integer` or
//! `complex` fields and `general`, `symmetric`, `hermitian` or
//! `skew-symmetric` symmetry. Output is always dense `array complex general`
//! with 17 significant digits, enough for an exact f64 round trip.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{CMatrix, CVector, Operator, C64, ZERO};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq)]
enum Layout {
    Array,
    Coordinate,
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Complex,
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
    Hermitian,
    Skew,
}

struct Parser<'a> {
    path: PathBuf,
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Parser<'a> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    /// Next non-comment, non-blank line with its 1-based number.
    fn next_data(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.lines.by_ref() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            return Some((i + 1, t));
        }
        None
    }
}

fn parse_f64(p: &Parser, line: usize, tok: Option<&str>) -> Result<f64> {
    let tok = tok.ok_or_else(|| p.err(line, "missing value"))?;
    tok.parse::<f64>()
        .map_err(|_| p.err(line, format!("invalid number '{tok}'")))
}

fn parse_usize(p: &Parser, line: usize, tok: Option<&str>) -> Result<usize> {
    let tok = tok.ok_or_else(|| p.err(line, "missing integer"))?;
    tok.parse::<usize>()
        .map_err(|_| p.err(line, format!("invalid integer '{tok}'")))
}

fn parse_value<'t>(
    p: &Parser,
    line: usize,
    field: Field,
    toks: &mut impl Iterator<Item = &'t str>,
) -> Result<C64> {
    let re = parse_f64(p, line, toks.next())?;
    let im = match field {
        Field::Real => 0.0,
        Field::Complex => parse_f64(p, line, toks.next())?,
    };
    if toks.next().is_some() {
        return Err(p.err(line, "trailing tokens"));
    }
    Ok(C64::new(re, im))
}

fn mirror(m: &mut CMatrix, i: usize, j: usize, v: C64, sym: Symmetry) {
    if i == j {
        return;
    }
    m[(j, i)] = match sym {
        Symmetry::General => return,
        Symmetry::Symmetric => v,
        Symmetry::Hermitian => v.conj(),
        Symmetry::Skew => -v,
    };
}

/// Parse Matrix Market text into a dense (possibly rectangular) matrix.
pub(crate) fn parse_dense(text: &str, path: &Path) -> Result<CMatrix> {
    let mut p = Parser {
        path: path.to_path_buf(),
        lines: text.lines().enumerate().peekable(),
    };
    let header = p
        .lines
        .next()
        .map(|(_, l)| l.to_ascii_lowercase())
        .ok_or_else(|| p.err(1, "empty file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" {
        return Err(p.err(1, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'"));
    }
    let layout = match h[2] {
        "array" => Layout::Array,
        "coordinate" => Layout::Coordinate,
        other => return Err(p.err(1, format!("unsupported format '{other}'"))),
    };
    let field = match h[3] {
        "real" | "integer" | "double" => Field::Real,
        "complex" => Field::Complex,
        other => return Err(p.err(1, format!("unsupported field '{other}'"))),
    };
    let sym = match h[4] {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "hermitian" => Symmetry::Hermitian,
        "skew-symmetric" => Symmetry::Skew,
        other => return Err(p.err(1, format!("unsupported symmetry '{other}'"))),
    };

    let (size_line, size) = p.next_data().ok_or_else(|| p.err(1, "missing size line"))?;
    let mut toks = size.split_whitespace();
    let rows = parse_usize(&p, size_line, toks.next())?;
    let cols = parse_usize(&p, size_line, toks.next())?;
    if sym != Symmetry::General && rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }
    let mut m = CMatrix::from_element(rows, cols, ZERO);

    match layout {
        Layout::Array => {
            if toks.next().is_some() {
                return Err(p.err(size_line, "array size line takes two integers"));
            }
            // column-major; symmetric variants store the lower triangle only
            for j in 0..cols {
                let start = if sym == Symmetry::General {
                    0
                } else if sym == Symmetry::Skew {
                    j + 1
                } else {
                    j
                };
                for i in start..rows {
                    let (ln, text) = p
                        .next_data()
                        .ok_or_else(|| p.err(size_line, "unexpected end of data"))?;
                    let v = parse_value(&p, ln, field, &mut text.split_whitespace())?;
                    m[(i, j)] = v;
                    mirror(&mut m, i, j, v, sym);
                }
            }
        }
        Layout::Coordinate => {
            let nnz = parse_usize(&p, size_line, toks.next())?;
            for _ in 0..nnz {
                let (ln, text) = p
                    .next_data()
                    .ok_or_else(|| p.err(size_line, "unexpected end of data"))?;
                let mut t = text.split_whitespace();
                let i = parse_usize(&p, ln, t.next())?;
                let j = parse_usize(&p, ln, t.next())?;
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(p.err(ln, format!("index ({i},{j}) outside {rows}x{cols}")));
                }
                let v = parse_value(&p, ln, field, &mut t)?;
                m[(i - 1, j - 1)] += v;
                mirror(&mut m, i - 1, j - 1, v, sym);
            }
        }
    }
    if let Some((ln, _)) = p.next_data() {
        return Err(p.err(ln, "extra data after last entry"));
    }
    Ok(m)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Read a square matrix.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<Operator> {
    let path = path.as_ref();
    let m = parse_dense(&read_text(path)?, path)?;
    Operator::new(m)
}

/// Read a vector stored as an `n x 1` (or `1 x n`) matrix.
pub fn read_vector(path: impl AsRef<Path>) -> Result<CVector> {
    let path = path.as_ref();
    let m = parse_dense(&read_text(path)?, path)?;
    match m.shape() {
        (_, 1) => Ok(m.column(0).into_owned()),
        (1, _) => Ok(m.row(0).transpose()),
        (r, c) => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 2,
            msg: format!("expected a vector, found {r}x{c}"),
        }),
    }
}

pub(crate) fn format_dense(m: &CMatrix) -> String {
    let mut out = String::with_capacity(48 * m.len() + 64);
    out.push_str("%%MatrixMarket matrix array complex general\n");
    out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            out.push_str(&format!("{:.16e} {:.16e}\n", z.re, z.im));
        }
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_matrix_market(op: &Operator, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_dense(op.entries()))
}

pub fn write_vector(v: &CVector, path: impl AsRef<Path>) -> Result<()> {
    let m = CMatrix::from_column_slice(v.len(), 1, v.as_slice());
    write_text(path.as_ref(), &format_dense(&m))
}
