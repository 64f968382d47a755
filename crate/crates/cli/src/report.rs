use clap::ValueEnum;

use iici_core::ci::Geometry;
use iici_core::verify::CheckReport;
use iici_core::CiResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub method: String,
    pub lower: f64,
    pub upper: f64,
    pub length: f64,
    pub ratio: f64,
    pub s_hat: f64,
    pub s_ddot: f64,
    pub c_ddot: f64,
    pub g_hat: f64,
    pub branch: String,
}

impl Row {
    pub fn new(ci: &CiResult, uci_length: f64, geo: &Geometry, g: f64) -> Self {
        Self {
            method: ci.kind.to_string(),
            lower: ci.lower,
            upper: ci.upper,
            length: ci.length(),
            ratio: ci.length() / uci_length,
            s_hat: geo.s_hat(),
            s_ddot: geo.s_ddot(),
            c_ddot: geo.c_ddot(),
            g_hat: g,
            branch: ci.branch.map_or("-".to_string(), |b| b.as_str().to_string()),
        }
    }
}

const HEADER: [&str; 10] = ["method", "lower", "upper", "length", "length_ratio", "s_hat", "s_ddot", "c_ddot", "g_hat", "branch"];

pub fn render(rows: &[Row], format: Format, target: &str) -> String {
    match format {
        Format::Csv => {
            let mut out = HEADER.join(",") + "\n";
            for r in rows {
                out += &format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    r.method, r.lower, r.upper, r.length, r.ratio, r.s_hat, r.s_ddot, r.c_ddot, r.g_hat, r.branch
                );
            }
            out
        }
        Format::Table => {
            let mut out = format!("target: {target}\n");
            out += &format!(
                "{:<8} {:>12} {:>12} {:>10} {:>8}  {}\n",
                "method", "lower", "upper", "length", "ratio", "branch"
            );
            for r in rows {
                out += &format!(
                    "{:<8} {:>12.6} {:>12.6} {:>10.6} {:>8.4}  {}\n",
                    r.method, r.lower, r.upper, r.length, r.ratio, r.branch
                );
            }
            if let Some(r) = rows.first() {
                out += &format!(
                    "s_hat = {:.6}  s_ddot = {:.6}  c_ddot = {:.6}  g(theta_hat) = {:.6}\n",
                    r.s_hat, r.s_ddot, r.c_ddot, r.g_hat
                );
            }
            out
        }
    }
}

pub fn render_checks(reports: &[CheckReport], format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = String::from("check,status,worst,tolerance,evaluated\n");
            for r in reports {
                out += &format!(
                    "{},{},{},{},{}\n",
                    r.name,
                    if r.passed { "pass" } else { "fail" },
                    r.worst,
                    r.tolerance,
                    r.evaluated
                );
            }
            out
        }
        Format::Table => reports
            .iter()
            .map(|r| {
                format!(
                    "{:<5} {:<11} worst {:.3e} (tol {:.1e}, n = {})  {}\n",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.worst,
                    r.tolerance,
                    r.evaluated,
                    r.detail
                )
            })
            .collect(),
    }
}
