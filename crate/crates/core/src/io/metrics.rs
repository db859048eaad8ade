use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::solver::RunLog;

pub const METRICS_HEADER: &str = "iter,time_s,objective,rel_error_or_rmse,restart,max_gamma,min_eta,max_A";

/// C-style `%.17g`: 17 significant digits, shortest of fixed and exponent
/// notation, trailing zeros removed. Parsing the output recovers `x` exactly.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (16 - exp).max(0) as usize;
    strip_zeros(&format!("{x:.decimals$}")).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One parsed metrics row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub time_s: f64,
    pub objective: f64,
    pub metric: Option<f64>,
    pub restart: bool,
    pub max_gamma: f64,
    pub min_eta: f64,
    pub max_a: f64,
}

pub fn metrics_rows(log: &RunLog) -> Vec<MetricsRow> {
    log.records
        .iter()
        .map(|r| MetricsRow {
            iter: r.iteration,
            time_s: r.elapsed_s,
            objective: r.objective,
            metric: r.metric,
            restart: r.restarted,
            max_gamma: r.max_gamma(),
            min_eta: r.min_eta(),
            max_a: r.max_a(),
        })
        .collect()
}

/// Renders the metrics CSV; a missing metric is an empty field.
pub fn render_metrics(log: &RunLog) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in metrics_rows(log) {
        let metric = row.metric.map(format_g17).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.iter,
            format_g17(row.time_s),
            format_g17(row.objective),
            metric,
            u8::from(row.restart),
            format_g17(row.max_gamma),
            format_g17(row.min_eta),
            format_g17(row.max_a),
        ));
    }
    out
}

pub fn write_metrics(log: &RunLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_metrics(log)).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text, path)
}

pub fn parse_metrics(text: &str, path: &Path) -> Result<Vec<MetricsRow>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => return Err(err(1, "missing metrics header".into())),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err(n + 1, format!("expected 8 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(n + 1, format!("bad number {s:?}")));
        rows.push(MetricsRow {
            iter: f[0].parse().map_err(|_| err(n + 1, format!("bad iteration {:?}", f[0])))?,
            time_s: num(f[1])?,
            objective: num(f[2])?,
            metric: if f[3].is_empty() { None } else { Some(num(f[3])?) },
            restart: f[4] == "1",
            max_gamma: num(f[5])?,
            min_eta: num(f[6])?,
            max_a: num(f[7])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_c_printf() {
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(1.0), "1");
        assert_eq!(format_g17(-2.5), "-2.5");
        assert_eq!(format_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(format_g17(123456.0), "123456");
        assert_eq!(format_g17(1e17), "1e+17");
        assert_eq!(format_g17(0.0001), "0.0001");
    }

    #[test]
    fn g17_round_trips() {
        for &x in &[std::f64::consts::PI, 1e-300, -7.25e200, 0.3, 1.0 / 3.0, 5e-324, f64::MAX] {
            assert_eq!(format_g17(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
