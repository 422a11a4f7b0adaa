//! Metrics CSV and grid table output.

use std::path::Path;

use crate::checkpoint::write_atomic;
use crate::{Error, Result};

pub const METRICS_HEADER: &str =
    "iteration,episodes,steps,mean_env_reward,mean_bonus,ctr,disc_loss,policy_loss,value_loss,entropy,approx_kl";

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub episodes: usize,
    pub steps: usize,
    /// Mean clicks per episode.
    pub mean_env_reward: f64,
    /// Mean `ln D` per step, as fed to the advantage estimate.
    pub mean_bonus: f64,
    /// Mean per-episode CTR of the rollout.
    pub ctr: f64,
    pub disc_loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
}

impl IterationStats {
    fn reals(&self) -> [f64; 8] {
        [
            self.mean_env_reward,
            self.mean_bonus,
            self.ctr,
            self.disc_loss,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.approx_kl,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.reals().iter().all(|v| v.is_finite())
    }
}

/// `%g`-style rendering with 6 significant digits.
pub fn format_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), sign, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn render_metrics(rows: &[IterationStats]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let mut fields = vec![r.iteration.to_string(), r.episodes.to_string(), r.steps.to_string()];
        fields.extend(r.reals().iter().map(|v| format_g6(*v)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_metrics(path: &Path, rows: &[IterationStats]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no metrics rows to write"));
    }
    write_atomic(path, render_metrics(rows).as_bytes())
}

/// One cell of a `(λ_g, ε)` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub ctr: f64,
    pub half_width: f64,
}

/// Published VirtualTB optimum, kept as context for synthetic sweeps.
pub const GRID_REFERENCE: &str =
    "# reference_peak: gae_lambda=0.97 clip_eps=0.2 ctr=0.643 half_width=0.061 (VirtualTB)";

pub fn render_grid_table(rows: &[GridRow]) -> String {
    let mut out = format!("{GRID_REFERENCE}\ngae_lambda,clip_eps,ctr,half_width\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_g6(r.gae_lambda),
            format_g6(r.clip_eps),
            format_g6(r.ctr),
            format_g6(r.half_width)
        ));
    }
    out
}

pub fn write_grid_table(path: &Path, rows: &[GridRow]) -> Result<()> {
    write_atomic(path, render_grid_table(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> IterationStats {
        IterationStats {
            iteration: i,
            episodes: 5,
            steps: 61,
            mean_env_reward: 12.5,
            mean_bonus: -std::f64::consts::LN_2,
            ctr: 0.2049180327868852,
            disc_loss: 1.3862943611198906,
            policy_loss: -1.2e-7,
            value_loss: 1234567.0,
            entropy: 24.8,
            approx_kl: 0.0,
        }
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_g6(0.2049180327868852), "0.204918");
        assert_eq!(format_g6(1.3862943611198906), "1.38629");
        assert_eq!(format_g6(12.5), "12.5");
        assert_eq!(format_g6(-1.2e-7), "-1.2e-07");
        assert_eq!(format_g6(1234567.0), "1.23457e+06");
        assert_eq!(format_g6(100000.0), "100000");
        assert_eq!(format_g6(0.0001), "0.0001");
        assert_eq!(format_g6(0.0), "0");
        assert_eq!(format_g6(-3.0), "-3");
        assert_eq!(format_g6(999999.5), "1e+06");
    }

    #[test]
    fn csv_layout() {
        let text = render_metrics(&[row(1), row(2)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1], "1,5,61,12.5,-0.693147,0.204918,1.38629,-1.2e-07,1.23457e+06,24.8,0");
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics(&path, &[row(1), row(2)]).unwrap();
        let first = std::fs::read(&path).unwrap();
        write_metrics(&path, &[row(1), row(2)]).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
        assert!(write_metrics(&path, &[]).is_err());
        assert!(write_metrics(&dir.path().join("missing/m.csv"), &[row(1)]).is_err());
    }

    #[test]
    fn grid_table_layout() {
        let rows: Vec<GridRow> = (0..4)
            .map(|i| GridRow { gae_lambda: 0.95, clip_eps: 0.1 * i as f64, ctr: 0.5, half_width: 0.01 })
            .collect();
        let text = render_grid_table(&rows);
        assert!(text.starts_with("# reference_peak:"));
        assert_eq!(text.lines().count(), 6);
    }
}
