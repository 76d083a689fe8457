//! Line-oriented problem files.
//!
//! ```text
//! # comment
//! MATPOLY n d
//! DEG 0
//! <n rows of n reals>
//! ...
//! DEG d
//! <n rows of n reals>
//! RANK_DROP r
//! STRUCTURE degree | support | entry-degree | mask:<file> | <file>
//! KERNEL
//! DEG k
//! <n rows of r reals>
//! DELTA
//! DEG k
//! <n rows of n reals>
//! OPTION <key> <value>
//! ```
//!
//! Kernel degree bounds are inferred from the last nonzero printed
//! coefficient of each entry; missing `DEG` blocks inside `KERNEL` and
//! `DELTA` are zero.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use polyrank::{MatrixPolynomial, NormalizationKind, PolyVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension { line: usize, expected: usize, found: usize },

    #[error("line {line}: degree {degree} is {problem}")]
    Degree { line: usize, degree: usize, problem: &'static str },

    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Model(#[from] polyrank::Error),
}

/// How the perturbation structure is chosen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StructureChoice {
    Degree,
    Support,
    EntryDegree,
    /// Mask file, relative to the problem file when read from one.
    Mask(String),
}

impl StructureChoice {
    pub fn parse(text: &str) -> Self {
        match text {
            "degree" => Self::Degree,
            "support" => Self::Support,
            "entry-degree" => Self::EntryDegree,
            other => Self::Mask(other.strip_prefix("mask:").unwrap_or(other).to_string()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Degree => "degree".into(),
            Self::Support => "support".into(),
            Self::EntryDegree => "entry-degree".into(),
            Self::Mask(p) => format!("mask:{p}"),
        }
    }
}

/// `OPTION` lines. Command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FileOptions {
    pub tol_step: Option<f64>,
    pub tol_feas: Option<f64>,
    pub max_iter: Option<usize>,
    pub normalize: Option<NormalizationKind>,
    pub damped: Option<bool>,
    pub kernel_degree: Option<Vec<Option<usize>>>,
    pub kernel_shape_support: Option<bool>,
    pub min_norm_delta: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemFile {
    pub a: MatrixPolynomial,
    pub rank_drop: Option<usize>,
    pub structure: Option<StructureChoice>,
    pub kernel: Option<Vec<PolyVector>>,
    pub delta: Option<MatrixPolynomial>,
    pub options: FileOptions,
}

impl ProblemFile {
    pub fn new(a: MatrixPolynomial) -> Self {
        Self { a, rank_drop: None, structure: None, kernel: None, delta: None, options: FileOptions::default() }
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn d(&self) -> usize {
        self.a.degree()
    }
}

pub fn read_file(path: &Path) -> Result<String, FileError> {
    std::fs::read_to_string(path).map_err(|source| FileError::Io { path: path.display().to_string(), source })
}

pub fn parse_normalization(text: &str) -> Option<NormalizationKind> {
    match text {
        "pivot" => Some(NormalizationKind::PivotUnit),
        "column" => Some(NormalizationKind::ColumnUnitNorm),
        "monic" => Some(NormalizationKind::MonicPivot),
        _ => None,
    }
}

fn normalization_name(kind: NormalizationKind) -> &'static str {
    match kind {
        NormalizationKind::PivotUnit => "pivot",
        NormalizationKind::ColumnUnitNorm => "column",
        NormalizationKind::MonicPivot => "monic",
    }
}

/// Comma-separated per-entry bounds (`-` for a zero entry), or a single
/// bound for every entry.
pub fn parse_bounds(text: &str, n: usize) -> Option<Vec<Option<usize>>> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let parsed: Option<Vec<Option<usize>>> = parts
        .iter()
        .map(|p| if *p == "-" { Some(None) } else { p.parse().ok().map(Some) })
        .collect();
    match parsed? {
        v if v.len() == 1 => Some(vec![v[0]; n]),
        v if v.len() == n => Some(v),
        _ => None,
    }
}

fn bounds_text(bounds: &[Option<usize>]) -> String {
    bounds.iter().map(|b| b.map_or("-".to_string(), |d| d.to_string())).collect::<Vec<_>>().join(",")
}

struct Lines<'a> {
    items: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .filter_map(|(i, l)| {
                let body = l.split('#').next().unwrap_or("").trim();
                (!body.is_empty()).then(|| (i + 1, body.split_whitespace().collect()))
            })
            .collect();
        Self { items, pos: 0 }
    }

    fn peek(&self) -> Option<&(usize, Vec<&'a str>)> {
        self.items.get(self.pos)
    }

    fn next(&mut self) -> Option<(usize, Vec<&'a str>)> {
        let item = self.items.get(self.pos).cloned();
        self.pos += 1;
        item
    }

    fn last_line(&self) -> usize {
        self.items.last().map_or(1, |(l, _)| l + 1)
    }
}

fn syntax(line: usize, message: impl Into<String>) -> FileError {
    FileError::Syntax { line, message: message.into() }
}

fn number(line: usize, tok: &str) -> Result<f64, FileError> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| syntax(line, format!("`{tok}` is not a finite real number")))
}

fn count(line: usize, tok: Option<&&str>, what: &str) -> Result<usize, FileError> {
    let tok = tok.ok_or_else(|| syntax(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| syntax(line, format!("{what} `{tok}` is not a nonnegative integer")))
}

fn expect_arity(line: usize, tok: &[&str], arity: usize) -> Result<(), FileError> {
    if tok.len() != arity {
        return Err(syntax(line, format!("`{}` takes {} argument(s)", tok[0], arity - 1)));
    }
    Ok(())
}

/// Reads `rows` lines of `cols` reals, or infers `cols` from the first line.
fn read_rows(lines: &mut Lines, rows: usize, cols: Option<usize>) -> Result<DMatrix<f64>, FileError> {
    let mut data = Vec::new();
    let mut width = cols;
    for _ in 0..rows {
        let (line, tok) = lines.next().ok_or_else(|| syntax(lines.last_line(), "unexpected end of file in a coefficient block"))?;
        if tok[0].chars().next().is_some_and(|c| c.is_ascii_alphabetic()) && tok[0].parse::<f64>().is_err() {
            return Err(syntax(line, format!("expected a row of numbers, found `{}`", tok[0])));
        }
        let w = *width.get_or_insert(tok.len());
        if tok.len() != w {
            return Err(FileError::Dimension { line, expected: w, found: tok.len() });
        }
        for t in &tok {
            data.push(number(line, t)?);
        }
    }
    Ok(DMatrix::from_row_slice(rows, width.unwrap_or(0), &data))
}

/// `DEG k` blocks until the next other keyword.
fn read_degree_blocks(
    lines: &mut Lines,
    n: usize,
    cols: Option<usize>,
    max_degree: Option<usize>,
) -> Result<Vec<(usize, DMatrix<f64>)>, FileError> {
    let mut blocks: Vec<(usize, DMatrix<f64>)> = Vec::new();
    let mut width = cols;
    while let Some((line, tok)) = lines.peek().cloned() {
        if tok[0] != "DEG" {
            break;
        }
        lines.next();
        expect_arity(line, &tok, 2)?;
        let k = count(line, tok.get(1), "degree")?;
        if max_degree.is_some_and(|m| k > m) {
            return Err(FileError::Degree { line, degree: k, problem: "above the declared degree" });
        }
        if blocks.iter().any(|(j, _)| *j == k) {
            return Err(FileError::Degree { line, degree: k, problem: "given twice" });
        }
        let m = read_rows(lines, n, width)?;
        width = Some(m.ncols());
        blocks.push((k, m));
    }
    Ok(blocks)
}

fn parse_option(line: usize, key: &str, value: &str, n: usize, o: &mut FileOptions) -> Result<(), FileError> {
    let bad = || syntax(line, format!("invalid value `{value}` for option `{key}`"));
    let flag = || match value {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(bad()),
    };
    match key {
        "tol-step" => o.tol_step = Some(number(line, value)?),
        "tol-feas" => o.tol_feas = Some(number(line, value)?),
        "max-iter" => o.max_iter = Some(value.parse().map_err(|_| bad())?),
        "normalize" => o.normalize = Some(parse_normalization(value).ok_or_else(bad)?),
        "damped" => o.damped = Some(flag()?),
        "kernel-degree" => o.kernel_degree = Some(parse_bounds(value, n).ok_or_else(bad)?),
        "kernel-shape" => {
            o.kernel_shape_support = Some(match value {
                "support" => true,
                "bounds" => false,
                _ => return Err(bad()),
            })
        }
        "delta-init" => {
            o.min_norm_delta = Some(match value {
                "min-norm" => true,
                "zero" => false,
                _ => return Err(bad()),
            })
        }
        _ => return Err(syntax(line, format!("unknown option `{key}`"))),
    }
    Ok(())
}

pub fn parse_problem(text: &str) -> Result<ProblemFile, FileError> {
    let mut lines = Lines::new(text);
    let (line, tok) = lines.next().ok_or_else(|| syntax(1, "expected `MATPOLY n d` header, found end of file"))?;
    if tok[0] != "MATPOLY" {
        return Err(syntax(line, format!("expected `MATPOLY n d` header, found `{}`", tok[0])));
    }
    expect_arity(line, &tok, 3)?;
    let n = count(line, tok.get(1), "size")?;
    let d = count(line, tok.get(2), "degree")?;
    if n == 0 {
        return Err(syntax(line, "matrix size must be positive"));
    }

    let blocks = read_degree_blocks(&mut lines, n, Some(n), Some(d))?;
    let mut coeffs = vec![None; d + 1];
    for (k, m) in blocks {
        coeffs[k] = Some(m);
    }
    if let Some(k) = coeffs.iter().position(Option::is_none) {
        let line = lines.peek().map_or(lines.last_line(), |(l, _)| *l);
        return Err(FileError::Degree { line, degree: k, problem: "missing from the matrix polynomial" });
    }
    let a = MatrixPolynomial::new(coeffs.into_iter().flatten().collect())?;
    let mut file = ProblemFile::new(a);

    while let Some((line, tok)) = lines.next() {
        match tok[0] {
            "RANK_DROP" => {
                expect_arity(line, &tok, 2)?;
                file.rank_drop = Some(count(line, tok.get(1), "rank drop")?);
            }
            "STRUCTURE" => {
                expect_arity(line, &tok, 2)?;
                file.structure = Some(StructureChoice::parse(tok[1]));
            }
            "KERNEL" => {
                expect_arity(line, &tok, 1)?;
                let blocks = read_degree_blocks(&mut lines, n, None, None)?;
                if blocks.is_empty() {
                    return Err(syntax(line, "KERNEL block has no DEG blocks"));
                }
                file.kernel = Some(kernel_from_blocks(&blocks, n));
            }
            "DELTA" => {
                expect_arity(line, &tok, 1)?;
                let blocks = read_degree_blocks(&mut lines, n, Some(n), Some(d))?;
                let mut delta = MatrixPolynomial::zeros(n, d);
                for (k, m) in blocks {
                    for i in 0..n {
                        for j in 0..n {
                            delta.set(i, j, k, m[(i, j)]);
                        }
                    }
                }
                file.delta = Some(delta);
            }
            "OPTION" => {
                expect_arity(line, &tok, 3)?;
                parse_option(line, tok[1], tok[2], n, &mut file.options)?;
            }
            "DEG" => return Err(syntax(line, "DEG outside a MATPOLY, KERNEL or DELTA block")),
            other => return Err(syntax(line, format!("unknown keyword `{other}`"))),
        }
    }
    Ok(file)
}

/// Parses a file that holds only a `KERNEL` block.
pub fn parse_kernel(text: &str, n: usize) -> Result<Vec<PolyVector>, FileError> {
    let mut lines = Lines::new(text);
    let (line, tok) = lines.next().ok_or_else(|| syntax(1, "expected `KERNEL`, found end of file"))?;
    if tok[0] != "KERNEL" {
        return Err(syntax(line, format!("expected `KERNEL`, found `{}`", tok[0])));
    }
    let blocks = read_degree_blocks(&mut lines, n, None, None)?;
    if blocks.is_empty() {
        return Err(syntax(line, "KERNEL block has no DEG blocks"));
    }
    if let Some((line, tok)) = lines.next() {
        return Err(syntax(line, format!("unexpected `{}` after the kernel", tok[0])));
    }
    Ok(kernel_from_blocks(&blocks, n))
}

fn kernel_from_blocks(blocks: &[(usize, DMatrix<f64>)], n: usize) -> Vec<PolyVector> {
    let r = blocks[0].1.ncols();
    let top = blocks.iter().map(|(k, _)| *k).max().unwrap_or(0);
    (0..r)
        .map(|c| {
            let entries = (0..n)
                .map(|i| {
                    let mut e = vec![0.0; top + 1];
                    for (k, m) in blocks {
                        e[*k] = m[(i, c)];
                    }
                    let len = e.iter().rposition(|&v| v != 0.0).map_or(0, |p| p + 1);
                    e.truncate(len);
                    e
                })
                .collect();
            PolyVector::new(entries)
        })
        .collect()
}

fn real(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-4..1e7).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| real(v)).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
}

/// Text that [`parse_problem`] reads back to `file`.
pub fn write_problem(file: &ProblemFile) -> String {
    let (n, d) = (file.n(), file.d());
    let mut out = format!("MATPOLY {n} {d}\n");
    for k in 0..=d {
        let _ = writeln!(out, "DEG {k}");
        write_matrix(&mut out, file.a.coeff(k));
    }
    if let Some(r) = file.rank_drop {
        let _ = writeln!(out, "RANK_DROP {r}");
    }
    if let Some(s) = &file.structure {
        let _ = writeln!(out, "STRUCTURE {}", s.label());
    }
    if let Some(kernel) = &file.kernel {
        out.push_str("KERNEL\n");
        let top = kernel.iter().flat_map(|b| b.entries().iter().map(Vec::len)).max().unwrap_or(0).max(1);
        for k in 0..top {
            let _ = writeln!(out, "DEG {k}");
            let m = DMatrix::from_fn(n, kernel.len(), |i, c| kernel[c].entry(i).get(k).copied().unwrap_or(0.0));
            write_matrix(&mut out, &m);
        }
    }
    if let Some(delta) = &file.delta {
        out.push_str("DELTA\n");
        for k in 0..=d {
            let _ = writeln!(out, "DEG {k}");
            write_matrix(&mut out, delta.coeff(k));
        }
    }
    let o = &file.options;
    let mut option = |key: &str, value: String| {
        let _ = writeln!(out, "OPTION {key} {value}");
    };
    if let Some(v) = o.tol_step {
        option("tol-step", real(v));
    }
    if let Some(v) = o.tol_feas {
        option("tol-feas", real(v));
    }
    if let Some(v) = o.max_iter {
        option("max-iter", v.to_string());
    }
    if let Some(v) = o.normalize {
        option("normalize", normalization_name(v).into());
    }
    if let Some(v) = o.damped {
        option("damped", v.to_string());
    }
    if let Some(v) = &o.kernel_degree {
        option("kernel-degree", bounds_text(v));
    }
    if let Some(v) = o.kernel_shape_support {
        option("kernel-shape", if v { "support" } else { "bounds" }.into());
    }
    if let Some(v) = o.min_norm_delta {
        option("delta-init", if v { "min-norm" } else { "zero" }.into());
    }
    out
}

/// Resolves a mask path relative to the directory of `origin`.
pub fn resolve_relative(origin: Option<&Path>, path: &str) -> std::path::PathBuf {
    let p = Path::new(path);
    match origin.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "MATPOLY 2 1\nDEG 0\n1 2\n3 4\nDEG 1\n0 1\n1 0\n";

    #[test]
    fn parses_header_and_blocks() {
        let f = parse_problem(SMALL).unwrap();
        assert_eq!(f.n(), 2);
        assert_eq!(f.a.get(1, 0, 0), 3.0);
        assert_eq!(f.a.get(0, 1, 1), 1.0);
    }

    #[test]
    fn empty_input_is_a_syntax_error() {
        assert!(matches!(parse_problem(""), Err(FileError::Syntax { line: 1, .. })));
        assert!(matches!(parse_problem("# nothing\n\n"), Err(FileError::Syntax { .. })));
    }

    #[test]
    fn short_row_reports_its_line() {
        let text = "MATPOLY 2 0\nDEG 0\n1 2\n3\n";
        match parse_problem(text) {
            Err(FileError::Dimension { line, expected, found }) => assert_eq!((line, expected, found), (4, 2, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_and_excess_degrees_are_rejected() {
        assert!(matches!(parse_problem("MATPOLY 1 1\nDEG 0\n1\n"), Err(FileError::Degree { degree: 1, .. })));
        assert!(matches!(parse_problem("MATPOLY 1 0\nDEG 0\n1\nDEG 1\n2\n"), Err(FileError::Degree { line: 4, .. })));
    }

    #[test]
    fn kernel_bounds_follow_printed_coefficients() {
        let text = format!("{SMALL}KERNEL\nDEG 0\n1\n0\nDEG 1\n2\n0\n");
        let k = parse_problem(&text).unwrap().kernel.unwrap();
        assert_eq!(k[0].degree_bounds(), vec![Some(1), None]);
    }

    #[test]
    fn options_are_validated() {
        let ok = format!("{SMALL}OPTION kernel-degree 1,-\nOPTION normalize column\n");
        let f = parse_problem(&ok).unwrap();
        assert_eq!(f.options.kernel_degree, Some(vec![Some(1), None]));
        let bad = format!("{SMALL}OPTION normalize sideways\n");
        assert!(matches!(parse_problem(&bad), Err(FileError::Syntax { line: 8, .. })));
    }
}
