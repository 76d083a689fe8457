//! Text and JSON reports.

use std::io::{self, Write};

use polyrank::solver::IterationRecord;
use polyrank::{MatrixPolynomial, PolyVector, SecondOrderReport, SolveReport};
use serde::Serialize;

/// JSON number formatting with 17 significant digits.
struct Precise;

impl serde_json::ser::Formatter for Precise {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Precise);
    value.serialize(&mut ser).expect("reports serialize");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// `x` with six significant digits.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StructureEcho {
    pub kind: String,
    pub free_count: usize,
    /// Mask text that reproduces the structure.
    pub mask: String,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Step {
    pub iteration: usize,
    pub kind: String,
    pub distance: f64,
    pub residual_norm: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub mu: f64,
    pub tau: Option<f64>,
}

impl Step {
    fn from_record(iteration: usize, h: &IterationRecord) -> Self {
        Self {
            iteration,
            kind: serde_json::to_value(h.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            distance: h.distance,
            residual_norm: h.residual_norm,
            grad_norm: h.grad_norm,
            step_norm: h.step_norm,
            mu: h.mu_k,
            tau: h.tau,
        }
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SecondOrder {
    pub status: String,
    pub min_eigenvalue: Option<f64>,
    pub jacobian_rank: usize,
    pub jacobian_sigma_min: f64,
    pub full_row_rank: bool,
    pub kernel_dimension: usize,
}

impl From<&SecondOrderReport> for SecondOrder {
    fn from(s: &SecondOrderReport) -> Self {
        Self {
            status: serde_json::to_value(s.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            min_eigenvalue: s.min_eigenvalue.is_finite().then_some(s.min_eigenvalue),
            jacobian_rank: s.jacobian_rank,
            jacobian_sigma_min: s.jacobian_sigma_min,
            full_row_rank: s.full_row_rank,
            kernel_dimension: s.kernel_dimension,
        }
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Starts {
    pub seed: u64,
    pub count: usize,
    pub converged: usize,
    /// Index of the reported start; zero is the SVD start.
    pub best: usize,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SolveSummary {
    pub command: &'static str,
    pub converged: bool,
    pub distance: f64,
    pub lower_bound: f64,
    pub iterations: usize,
    pub first_order_residual: f64,
    pub feasibility: f64,
    pub normalization_residual: f64,
    /// Two kernel columns competed for one pivot entry.
    pub pivot_tie: bool,
    pub second_order: Option<SecondOrder>,
    pub failure: Option<String>,
    pub structure: StructureEcho,
    pub history: Vec<Step>,
    /// Coefficients of `ΔA` by degree, row-major.
    pub delta_a: Vec<Vec<Vec<f64>>>,
    /// Kernel columns, each a list of entry coefficient lists.
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub starts: Option<Starts>,
}

pub fn coefficients(m: &MatrixPolynomial) -> Vec<Vec<Vec<f64>>> {
    m.coeffs()
        .iter()
        .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
        .collect()
}

pub fn kernel_entries(kernel: &[PolyVector]) -> Vec<Vec<Vec<f64>>> {
    kernel.iter().map(|b| b.entries().to_vec()).collect()
}

impl SolveSummary {
    pub fn new(report: &SolveReport, structure: StructureEcho, starts: Option<Starts>) -> Self {
        Self {
            command: "solve",
            converged: report.converged,
            distance: report.distance,
            lower_bound: report.lower_bound,
            iterations: report.iterations,
            first_order_residual: report.first_order_residual,
            feasibility: report.feasibility,
            normalization_residual: report.normalization_residual,
            pivot_tie: report.pivot_tie,
            second_order: report.second_order.as_ref().map(SecondOrder::from),
            failure: report.failure.clone(),
            structure,
            history: report.history.iter().enumerate().map(|(i, h)| Step::from_record(i + 1, h)).collect(),
            delta_a: coefficients(&report.delta_a),
            kernel: kernel_entries(&report.kernel),
            starts,
        }
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k:<24}{v}\n"));
        line("status", if self.converged { "converged".into() } else { "failed".into() });
        if let Some(f) = &self.failure {
            line("failure", f.clone());
        }
        line("distance", sig6(self.distance));
        line("lower bound", sig6(self.lower_bound));
        line("iterations", self.iterations.to_string());
        line("first-order residual", sig6(self.first_order_residual));
        line("feasibility", sig6(self.feasibility));
        line("normalization residual", sig6(self.normalization_residual));
        line("structure", format!("{} ({} free)", self.structure.kind, self.structure.free_count));
        if let Some(s) = &self.second_order {
            line("second order", s.status.clone());
            line("jacobian sigma min", sig6(s.jacobian_sigma_min));
            if let Some(e) = s.min_eigenvalue {
                line("reduced hessian min", sig6(e));
            }
        }
        if let Some(s) = &self.starts {
            line("starts", format!("{} ({} converged, best #{}, seed {})", s.count, s.converged, s.best, s.seed));
        }
        for (c, col) in self.kernel.iter().enumerate() {
            let entries: Vec<String> = col.iter().map(|e| poly_text(e)).collect();
            line(&format!("kernel {}", c + 1), format!("({})", entries.join(", ")));
        }
        out
    }
}

/// `c_0 + c_1 t + ...` with six significant digits.
pub fn poly_text(coeffs: &[f64]) -> String {
    let terms: Vec<String> = coeffs
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0.0)
        .map(|(k, &c)| match k {
            0 => sig6(c),
            1 => format!("{} t", sig6(c)),
            _ => format!("{} t^{k}", sig6(c)),
        })
        .collect();
    if terms.is_empty() {
        "0".into()
    } else {
        terms.join(" + ")
    }
}
