//! Plain-text and HTML run reports: metrics, residual diagnostics and the
//! inverse Monte Carlo summary.

use std::fmt::Write as _;

use crate::bundle::TrainingMetadata;
use crate::evaluation::{EvalReport, MetricSet};
use crate::imc::ImcSummary;
use crate::interpret::ResidualDiagnostics;
use crate::learners::params_label;

pub const METRICS_HEADING: &str = "Metrics";
pub const DIAGNOSTICS_HEADING: &str = "Diagnostics";
pub const IMC_HEADING: &str = "Inverse Monte Carlo summary";

#[derive(Debug, Clone, Default)]
pub struct Report<'a> {
    pub title: String,
    pub model: Option<&'a TrainingMetadata>,
    pub metrics: Option<&'a EvalReport>,
    pub diagnostics: Option<&'a ResidualDiagnostics>,
    pub imc: Option<&'a ImcSummary>,
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.digits$}"))
}

fn metric_cells(m: Option<&MetricSet>) -> [String; 4] {
    match m {
        None => ["".into(), "".into(), "".into(), "".into()],
        Some(m) => [format!("{:.3}", m.rmse), format!("{:.3}", m.mae), opt(m.mape, 3), opt(m.r2, 4)],
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn text(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|j| self.rows.iter().map(|r| r[j].chars().count()).chain([self.header[j].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut s = line(&self.header);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&line(r));
            s.push('\n');
        }
        s
    }

    fn html(&self) -> String {
        let mut s = String::from("<table>\n<tr>");
        for h in &self.header {
            let _ = write!(s, "<th>{}</th>", escape(h));
        }
        s.push_str("</tr>\n");
        for r in &self.rows {
            s.push_str("<tr>");
            for c in r {
                let _ = write!(s, "<td>{}</td>", escape(c));
            }
            s.push_str("</tr>\n");
        }
        s.push_str("</table>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// A section is a list of paragraphs and tables.
enum Block {
    Para(String),
    Table(Table),
}

impl Report<'_> {
    fn model_blocks(&self) -> Vec<Block> {
        let Some(m) = self.model else { return vec![] };
        vec![Block::Para(format!(
            "Model: {} [{}]; sampling {} (seed {}, {} of {} rows); test fraction {}; {}-fold CV; seed {}.",
            m.learner,
            params_label(&m.params),
            m.sampling_method,
            m.sampling_seed,
            m.sample_size,
            m.dataset_rows,
            m.test_fraction,
            m.folds,
            m.seed
        ))]
    }

    fn metrics_blocks(&self) -> Vec<Block> {
        let Some(r) = self.metrics else {
            return vec![Block::Para("No evaluation results supplied.".into())];
        };
        let mut header: Vec<String> = ["model", "sampling"].map(String::from).to_vec();
        header.extend(["test RMSE", "test MAE", "test MAPE", "test R2", "cv RMSE", "cv MAE", "cv MAPE", "cv R2", "dR2"].map(String::from));
        let mut rows = Vec::new();
        for e in r.entries.iter().filter(|e| e.test.is_some()) {
            let mut row = vec![e.id(), e.sampling.clone()];
            row.extend(metric_cells(e.test.as_ref()));
            row.extend(metric_cells(Some(&e.cv)));
            row.push(opt(e.deltas.and_then(|d| d.r2), 4));
            rows.push(row);
        }
        let mut blocks = vec![
            Block::Para(format!(
                "Best model: {} (selected by {}). {} training rows, {} test rows.",
                r.best.as_deref().unwrap_or("none"),
                r.selection_rule,
                r.train_rows.len(),
                r.test_rows.len()
            )),
            Block::Table(Table { header, rows }),
        ];
        if !r.warnings.is_empty() {
            blocks.push(Block::Para(format!("Warnings: {}", r.warnings.join("; "))));
        }
        blocks
    }

    fn diagnostics_blocks(&self) -> Vec<Block> {
        let Some(d) = self.diagnostics else {
            return vec![Block::Para("No residual diagnostics supplied.".into())];
        };
        let t = d.thresholds;
        let mut blocks = vec![Block::Table(Table {
            header: ["check", "value", "threshold"].map(String::from).to_vec(),
            rows: vec![
                vec!["trend slope (standardized)".into(), opt(d.trend_slope, 3), format!("|x| > {}", t.trend_slope)],
                vec!["variance ratio".into(), opt(d.variance_ratio, 3), format!("> {}", t.variance_ratio)],
                vec!["tail deviation (SE)".into(), opt(d.tail_deviation_se, 2), format!("> {}", t.tail_se)],
            ],
        })];
        let flags = if d.flags.is_empty() { "none".to_string() } else { d.flags.iter().map(|f| format!("{:?}", f.kind)).collect::<Vec<_>>().join(", ") };
        blocks.push(Block::Para(format!("Flags ({} residuals): {flags}", d.n)));
        for a in d.annotations() {
            blocks.push(Block::Para(format!("- {a}")));
        }
        blocks
    }

    fn imc_blocks(&self) -> Vec<Block> {
        let Some(s) = self.imc else {
            return vec![Block::Para("No inverse Monte Carlo run supplied.".into())];
        };
        let mut rows = vec![
            vec!["mode".into(), s.mode.to_string()],
            vec!["polymer".into(), s.polymer.clone()],
            vec!["target (nm)".into(), format!("{} ± {}", s.target, s.tolerance)],
            vec!["strictness".into(), format!("{} (NO allowance {}%)", s.strictness, s.no_allow_pct)],
            vec!["draws".into(), s.n_draws.to_string()],
            vec!["accepted".into(), s.accepted.to_string()],
        ];
        if let Some(a) = s.acceptance_rate {
            rows.push(vec!["acceptance rate".into(), format!("{a:.4}")]);
        }
        rows.extend([
            vec!["success probability".into(), opt(s.success_probability, 4)],
            vec!["success probability (all draws)".into(), format!("{:.4}", s.success_probability_all)],
            vec!["predicted mean (nm)".into(), opt(s.pred_mean, 2)],
            vec!["predicted sd (nm)".into(), opt(s.pred_sd, 2)],
            vec!["RMSE to target (nm)".into(), opt(s.rmse_to_target, 2)],
            vec!["MAE to target (nm)".into(), opt(s.mae_to_target, 2)],
            vec!["seed".into(), s.seed.to_string()],
        ]);
        let mut blocks = vec![Block::Table(Table { header: vec!["field".into(), "value".into()], rows })];
        for n in &s.notes {
            blocks.push(Block::Para(format!("Note: {n}")));
        }
        if !s.top.is_empty() {
            let rows = s
                .top
                .iter()
                .take(10)
                .map(|c| {
                    let mix = c.inputs.solvent_mix().iter().map(|(n, r)| format!("{n} {r:.0}%")).collect::<Vec<_>>().join(" + ");
                    vec![
                        c.rank.to_string(),
                        format!("{:.1}", c.prediction),
                        format!("{:.1}", c.abs_error),
                        c.flag.to_string(),
                        mix,
                        opt(c.inputs.solution_concentration, 2),
                        opt(c.inputs.voltage, 2),
                    ]
                })
                .collect();
            blocks.push(Block::Para("Top candidates:".into()));
            blocks.push(Block::Table(Table {
                header: ["rank", "pred (nm)", "|err|", "flag", "solvents", "conc", "voltage"].map(String::from).to_vec(),
                rows,
            }));
        }
        blocks
    }

    fn sections(&self) -> Vec<(&'static str, Vec<Block>)> {
        let mut m = self.model_blocks();
        m.extend(self.metrics_blocks());
        vec![(METRICS_HEADING, m), (DIAGNOSTICS_HEADING, self.diagnostics_blocks()), (IMC_HEADING, self.imc_blocks())]
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n{}\n", self.title, "=".repeat(self.title.chars().count()));
        for (h, blocks) in self.sections() {
            let _ = write!(s, "\n{h}\n{}\n", "-".repeat(h.len()));
            for b in blocks {
                match b {
                    Block::Para(p) => {
                        s.push_str(&p);
                        s.push('\n');
                    }
                    Block::Table(t) => s.push_str(&t.text()),
                }
            }
        }
        s
    }

    pub fn to_html(&self) -> String {
        let title = escape(&self.title);
        let mut s = format!(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{title}</title>\n<style>body{{font-family:sans-serif;max-width:60em;margin:auto}}table{{border-collapse:collapse}}td,th{{border:1px solid #ccc;padding:2px 6px}}</style></head><body>\n<h1>{title}</h1>\n"
        );
        for (h, blocks) in self.sections() {
            let _ = writeln!(s, "<h2>{}</h2>", escape(h));
            for b in blocks {
                match b {
                    Block::Para(p) => {
                        let _ = writeln!(s, "<p>{}</p>", escape(&p));
                    }
                    Block::Table(t) => s.push_str(&t.html()),
                }
            }
        }
        s.push_str("</body></html>\n");
        s
    }
}
