//! Sample count of the compositional scheme against a monolithic one.

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::plot::{render, Panel, Series};
use super::store::Store;
use super::System;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "M")]
    pub m: usize,
    /// `Σ N_i` over the subsystems.
    pub compositional: u64,
    /// `log10` of the per-axis density raised to the network state dimension.
    pub monolithic_log10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub samples_per_subsystem: u64,
    pub state_dim: usize,
    /// Samples per axis of `X_i × W_i`: `N_i^(1/(n_i+p_i))`.
    pub density: f64,
    pub rows: Vec<SweepRow>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`: `(slope, intercept, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2)
}

/// Analytic sweep; nothing is simulated. Writes `sweep.csv` and `sweep.svg`
/// into the configured output directory.
pub fn complexity_sweep(cfg: &PipelineConfig, system: Option<&System>, m_values: &[usize]) -> Result<SweepTable> {
    if m_values.is_empty() || m_values.windows(2).any(|w| w[0] >= w[1]) || m_values[0] == 0 {
        return Err(Error::Config("M values must be non-empty, positive and increasing".into()));
    }
    let cfg = cfg.resolve()?;
    let owned;
    let system = match system {
        Some(s) => s,
        None => {
            owned = System::from_config(&cfg)?;
            &owned
        }
    };
    let oracle = &system.subsystem;
    let n_i = (cfg.sampling.n_per_input * oracle.inputs().len()) as u64;
    let axes = oracle.state_dim() + oracle.dist_dim();
    let density = (n_i as f64).powf(1.0 / axes as f64);
    let rows: Vec<SweepRow> = m_values
        .iter()
        .map(|&m| SweepRow {
            m,
            compositional: n_i * m as u64,
            monolithic_log10: (oracle.state_dim() * m) as f64 * density.log10(),
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.m as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.compositional as f64).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    let table = SweepTable {
        samples_per_subsystem: n_i,
        state_dim: oracle.state_dim(),
        density,
        rows,
        slope,
        intercept,
        r_squared,
    };
    let store = Store::create(&cfg.out_dir)?;
    store.write("sweep.csv", sweep_csv(&table).as_bytes())?;
    store.write("sweep.svg", sweep_svg(&table).as_bytes())?;
    store.write_json("sweep.json", &table)?;
    Ok(table)
}

fn sweep_csv(t: &SweepTable) -> String {
    let mut out = String::from("M,compositional_samples,log10_compositional,log10_monolithic\n");
    for r in &t.rows {
        out.push_str(&format!("{},{},{:?},{:?}\n", r.m, r.compositional, (r.compositional as f64).log10(), r.monolithic_log10));
    }
    out
}

fn sweep_svg(t: &SweepTable) -> String {
    let lx = |m: usize| (m as f64).log10();
    let comp: Vec<(f64, f64)> = t.rows.iter().map(|r| (lx(r.m), (r.compositional as f64).log10())).collect();
    let mono: Vec<(f64, f64)> = t.rows.iter().map(|r| (lx(r.m), r.monolithic_log10)).collect();
    let x_range = (lx(t.rows[0].m), lx(t.rows[t.rows.len() - 1].m).max(lx(t.rows[0].m) + 1.0));
    let y_max = mono.iter().chain(&comp).map(|p| p.1).fold(1.0, f64::max);
    render(&[Panel {
        title: "Samples needed (log scale)".into(),
        x_label: "log10 M".into(),
        y_label: "log10 samples".into(),
        x_range,
        y_range: (0.0, y_max * 1.05),
        region: None,
        series: vec![
            Series {
                label: "compositional".into(),
                points: comp,
            },
            Series {
                label: "monolithic".into(),
                points: mono,
            },
        ],
    }])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_of_a_line_is_exact() {
        let (s, c, r2) = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        assert!((s - 2.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_of_noise_is_poor() {
        let (_, _, r2) = linear_fit(&[1.0, 2.0, 3.0, 4.0], &[1.0, -1.0, 1.0, -1.0]);
        assert!(r2 < 0.5);
    }
}
