use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use super::run::SweepSummary;
use super::store::{write_text_once, ResultsStore};
use crate::error::{Error, Result};
use crate::mlp::{mlp_forward_jet, mlp_forward_values};
use crate::problem::{analytic_deriv, analytic_u, Interval};
use crate::training::Ensemble;

/// Ensemble mean and standard deviation of one derivative order over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub x: Vec<f64>,
    pub oracle: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population standard deviation over the models used.
    pub stddev: Vec<f64>,
    /// Models excluded because their training aborted.
    pub n_excluded: usize,
}

/// Mean and spread of derivative `order` (0 = value) across the ensemble's
/// non-failed models at `xs`.
pub fn ensemble_band(ensemble: &Ensemble<f64>, xs: &[f64], order: usize) -> Result<Band> {
    if order > 4 {
        return Err(Error::contract("derivative order must be at most 4"));
    }
    let models: Vec<_> = ensemble.models.iter().filter(|m| !m.failed()).collect();
    if models.is_empty() {
        return Err(Error::config("no successfully trained model to plot"));
    }
    let curves = models
        .iter()
        .map(|m| {
            if order == 0 {
                mlp_forward_values(&m.arch, &m.params, xs)
            } else {
                xs.iter()
                    .map(|&x| mlp_forward_jet(&m.arch, &m.params, x).map(|j| j.order(order)))
                    .collect()
            }
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let n = curves.len() as f64;
    let mut mean = vec![0.0; xs.len()];
    let mut stddev = vec![0.0; xs.len()];
    for j in 0..xs.len() {
        let m = curves.iter().map(|c| c[j]).sum::<f64>() / n;
        let var = curves.iter().map(|c| (c[j] - m).powi(2)).sum::<f64>() / n;
        mean[j] = m;
        stddev[j] = var.max(0.0).sqrt();
    }
    let oracle = xs
        .iter()
        .map(|&x| if order == 0 { Ok(analytic_u(x)) } else { analytic_deriv(x, order) })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Band {
        x: xs.to_vec(),
        oracle,
        mean,
        stddev,
        n_excluded: ensemble.models.len() - models.len(),
    })
}

fn band_csv(band: &Band) -> String {
    let mut s = String::from("x,oracle,mean,stddev,mean_minus_2sd,mean_plus_2sd\n");
    for j in 0..band.x.len() {
        let (m, sd) = (band.mean[j], band.stddev[j]);
        let _ = writeln!(s, "{},{},{},{},{},{}", band.x[j], band.oracle[j], m, sd, m - 2.0 * sd, m + 2.0 * sd);
    }
    s
}

fn file_label(index: usize, label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("level_{index:02}_{clean}")
}

fn genlevel_csv(summary: &SweepSummary, side_index: usize) -> String {
    let mut s = String::from("level,value,side,epsilon,g_l,g_l_alt,n_models,degenerate\n");
    for l in &summary.levels {
        let side = &l.sides[side_index];
        for (e, r) in side.genlevel.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                l.label,
                l.value,
                side.side.name(),
                r.epsilon,
                r.ensemble_g_l,
                l.gl_alt[e].ensemble,
                r.per_model_g_l.len(),
                r.degenerate
            );
        }
    }
    s
}

fn timing_csv(summary: &SweepSummary) -> String {
    let mut s = String::from("level,value,mean_s,variance_s,n_models,n_failed\n");
    for l in &summary.levels {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            l.label,
            l.value,
            l.timing.mean_s,
            l.timing.variance_s,
            l.timing.per_model_s.len(),
            l.n_failed
        );
    }
    s
}

fn stats_csv(summary: &SweepSummary) -> String {
    let mut s = String::from("epsilon,side,test,group_a,group_b,statistic,p_value,significant,degenerate\n");
    for t in &summary.tests {
        if let Some(kw) = &t.kruskal_wallis {
            let _ = writeln!(
                s,
                "{},{},kruskal_wallis,all,all,{},{},{},{}",
                t.epsilon,
                t.side.name(),
                kw.statistic,
                kw.p_value,
                kw.significant(),
                kw.degenerate
            );
        }
        for p in &t.pairwise {
            let r = &p.result;
            let _ = writeln!(
                s,
                "{},{},mann_whitney_u,{},{},{},{},{},{}",
                t.epsilon,
                t.side.name(),
                p.a,
                p.b,
                r.statistic,
                r.p_value,
                r.significant(),
                r.degenerate
            );
        }
    }
    s
}

/// Writes the plot tables of the latest run of `sweep` into its `plots`
/// directory and returns their paths. Existing tables are kept as they are.
pub fn export_plot_data(store: &ResultsStore, sweep: &str) -> Result<Vec<PathBuf>> {
    let dir = store.latest_run(sweep)?.join("plots");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let spec = store.load_spec(sweep)?;
    let summary: SweepSummary = store.load_summary(sweep)?;
    let ensembles = store.load_ensembles(sweep)?;
    let full = Interval::full();
    let xs: Vec<f64> = (0..spec.n_grid)
        .map(|i| full.lo + full.length() * i as f64 / (spec.n_grid - 1) as f64)
        .collect();

    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        write_text_once(&path, &text)?;
        written.push(path);
        Ok(())
    };
    for (i, (level, ensemble)) in spec.levels.iter().zip(&ensembles).enumerate() {
        let stem = file_label(i, &level.label);
        // A level where every model failed has nothing to plot.
        match ensemble_band(ensemble, &xs, 0) {
            Ok(b) => put(format!("predictions_{stem}.csv"), band_csv(&b))?,
            Err(Error::Config(_)) => continue,
            Err(e) => return Err(e),
        }
        put(format!("second_derivative_{stem}.csv"), band_csv(&ensemble_band(ensemble, &xs, 2)?))?;
    }
    put("genlevel.csv".into(), genlevel_csv(&summary, 0))?;
    for k in 1..spec.sides.len() {
        put(format!("genlevel_{}.csv", spec.sides[k].name()), genlevel_csv(&summary, k))?;
    }
    put("timing.csv".into(), timing_csv(&summary))?;
    put("stats.csv".into(), stats_csv(&summary))?;
    Ok(written)
}
