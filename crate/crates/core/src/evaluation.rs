//! Cross-model comparison on test log-likelihoods: per-dataset ranks,
//! the Friedman test, pairwise Wilcoxon signed-rank tests with Holm
//! correction, and critical-difference cliques.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of non-zero differences handled by the exact Wilcoxon
/// distribution.
pub const WILCOXON_EXACT_MAX: usize = 20;

/// Test log-likelihoods, one row per dataset and one column per model.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsMatrix {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub ll: Vec<Vec<f64>>,
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    pub train_ll: f64,
    pub val_ll: f64,
    pub test_ll: f64,
}

impl ResultsMatrix {
    pub fn new(models: Vec<String>, datasets: Vec<String>, ll: Vec<Vec<f64>>) -> Result<Self> {
        if models.len() < 2 {
            return Err(Error::InvalidParams(format!("need at least 2 models, got {}", models.len())));
        }
        if datasets.len() < 2 {
            return Err(Error::TooFewDatasets(datasets.len()));
        }
        if ll.len() != datasets.len() || ll.iter().any(|row| row.len() != models.len()) {
            return Err(Error::ShapeMismatch(format!(
                "results must be {} datasets × {} models",
                datasets.len(),
                models.len()
            )));
        }
        for (i, row) in ll.iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "non-finite log-likelihood for ({}, {})",
                    datasets[i], models[j]
                )));
            }
        }
        Ok(Self { models, datasets, ll })
    }

    /// Builds the matrix from records, in order of first appearance.
    /// Repeated (dataset, model) cells, e.g. several seeds, are averaged.
    pub fn from_records(records: &[ResultRecord]) -> Result<Self> {
        let mut models: Vec<String> = Vec::new();
        let mut datasets: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        for r in records {
            let d = index_of(&mut datasets, &r.dataset);
            let m = index_of(&mut models, &r.model);
            let c = cells.entry((d, m)).or_insert((0.0, 0));
            c.0 += r.test_ll;
            c.1 += 1;
        }
        let mut ll = vec![vec![0.0; models.len()]; datasets.len()];
        for (d, row) in ll.iter_mut().enumerate() {
            for (m, cell) in row.iter_mut().enumerate() {
                let (sum, n) = cells.get(&(d, m)).ok_or_else(|| Error::MissingCell {
                    dataset: datasets[d].clone(),
                    model: models[m].clone(),
                })?;
                *cell = sum / *n as f64;
            }
        }
        Self::new(models, datasets, ll)
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn n_datasets(&self) -> usize {
        self.datasets.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.ll.iter().map(|row| row[j]).collect()
    }

    /// Per-dataset ranks; rank 1 is the highest log-likelihood.
    pub fn ranks(&self) -> Vec<Vec<f64>> {
        self.ll.iter().map(|row| rank_descending(row)).collect()
    }

    pub fn average_ranks(&self) -> Vec<f64> {
        let ranks = self.ranks();
        let m = ranks.len() as f64;
        (0..self.n_models())
            .map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / m)
            .collect()
    }
}

fn index_of(list: &mut Vec<String>, name: &str) -> usize {
    match list.iter().position(|x| x == name) {
        Some(i) => i,
        None => {
            list.push(name.to_string());
            list.len() - 1
        }
    }
}

/// Ranks with ties averaged; the largest value gets rank 1.
pub fn rank_descending(values: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    rank_ascending(&neg)
}

/// Ranks with ties averaged; the smallest value gets rank 1.
pub fn rank_ascending(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Friedman chi-square statistic (tie-corrected) with `k − 1` degrees of
/// freedom and its upper-tail p-value.
pub fn friedman_test(rm: &ResultsMatrix) -> Result<(f64, f64)> {
    let (m, k) = (rm.n_datasets(), rm.n_models());
    if m < 3 {
        return Err(Error::TooFewDatasets(m));
    }
    let ranks = rm.ranks();
    let (mf, kf) = (m as f64, k as f64);
    let expected = mf * (kf + 1.0) / 2.0;
    let ss: f64 = (0..k)
        .map(|j| {
            let rj: f64 = ranks.iter().map(|r| r[j]).sum();
            (rj - expected).powi(2)
        })
        .sum();
    let sum_sq: f64 = ranks.iter().flatten().map(|r| r * r).sum();
    let denom = sum_sq - mf * kf * (kf + 1.0).powi(2) / 4.0;
    if denom <= 1e-12 {
        // every dataset is a full tie
        return Ok((0.0, 1.0));
    }
    let stat = (kf - 1.0) * ss / denom;
    let chi = ChiSquared::new(kf - 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    Ok((stat, chi.sf(stat)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// `min(W+, W−)` over the non-zero differences.
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub exact: bool,
}

/// Wilcoxon signed-rank test of `a − b`; zero differences are dropped.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} paired values", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    let n = d.len();
    if n < 5 {
        return Err(Error::TooFewPairs(n));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = rank_ascending(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);
    if n <= WILCOXON_EXACT_MAX {
        // doubled ranks are integers even with ties
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let counts = signed_rank_counts(&doubled);
        let lower = (2.0 * statistic).round() as usize;
        let tail: f64 = counts[..=lower].iter().sum();
        let p = (2.0 * tail / 2f64.powi(n as i32)).min(1.0);
        return Ok(WilcoxonResult {
            statistic,
            p_value: p,
            n,
            exact: true,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = (w_plus - mean) / var.sqrt();
    let normal = Normal::standard();
    Ok(WilcoxonResult {
        statistic,
        p_value: (2.0 * normal.sf(z.abs())).min(1.0),
        n,
        exact: false,
    })
}

/// Number of sign assignments giving each doubled-rank positive sum.
fn signed_rank_counts(doubled: &[usize]) -> Vec<f64> {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Holm step-down adjustment of a list of p-values.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (i, &k) in idx.iter().enumerate() {
        running = running.max(((m - i) as f64 * p[k]).min(1.0));
        adjusted[k] = running;
    }
    adjusted
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub models: Vec<String>,
    pub avg_ranks: Vec<f64>,
    pub friedman_stat: f64,
    pub friedman_p: f64,
    pub alpha: f64,
    pub holm: bool,
    /// Friedman rejected the null; pairwise tests were run.
    pub significant: bool,
    /// Pairwise two-sided p-values (Holm-adjusted when `holm`), `k × k`
    /// with 1 on the diagonal. `None` when the Friedman test did not reject.
    pub pairwise_p: Option<Vec<Vec<f64>>>,
    /// Model indices of each clique, in average-rank order.
    pub cliques: Vec<Vec<usize>>,
}

/// Average ranks, Friedman test and, when it rejects at `alpha`, pairwise
/// Wilcoxon tests and the cliques of models with no significant pairwise
/// difference. Cliques are maximal runs of at least two models in
/// average-rank order.
pub fn cd_report(rm: &ResultsMatrix, alpha: f64, holm: bool) -> Result<RankReport> {
    let (friedman_stat, friedman_p) = friedman_test(rm)?;
    let avg_ranks = rm.average_ranks();
    let k = rm.n_models();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| avg_ranks[a].total_cmp(&avg_ranks[b]).then(a.cmp(&b)));
    let mut report = RankReport {
        models: rm.models.clone(),
        avg_ranks,
        friedman_stat,
        friedman_p,
        alpha,
        holm,
        significant: friedman_p < alpha,
        pairwise_p: None,
        cliques: vec![order.clone()],
    };
    if !report.significant {
        return Ok(report);
    }
    let mut pairs = Vec::new();
    let mut raw = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let p = match wilcoxon_signed_rank(&rm.column(i), &rm.column(j)) {
                Ok(w) => w.p_value,
                Err(Error::AllZeroDifferences) => 1.0,
                Err(e) => return Err(e),
            };
            pairs.push((i, j));
            raw.push(p);
        }
    }
    let adjusted = if holm { holm_adjust(&raw) } else { raw };
    let mut pm = vec![vec![1.0; k]; k];
    for (&(i, j), p) in pairs.iter().zip(&adjusted) {
        pm[i][j] = *p;
        pm[j][i] = *p;
    }
    let same = |a: usize, b: usize| pm[a][b] >= alpha;
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    let mut last_end = 0;
    for start in 0..k {
        let mut end = start + 1;
        while end < k && (start..end).all(|s| same(order[s], order[end])) {
            end += 1;
        }
        // a run ending where an earlier one ended is contained in it
        if end - start >= 2 && end > last_end {
            cliques.push(order[start..end].to_vec());
            last_end = end;
        }
    }
    report.pairwise_p = Some(pm);
    report.cliques = cliques;
    Ok(report)
}

impl RankReport {
    fn order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.models.len()).collect();
        order.sort_by(|&a, &b| self.avg_ranks[a].total_cmp(&self.avg_ranks[b]).then(a.cmp(&b)));
        order
    }

    /// Plain-text summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Friedman chi-square = {:.4}, p = {:.6}", self.friedman_stat, self.friedman_p);
        if !self.significant {
            let _ = writeln!(s, "no significant difference at alpha = {}", self.alpha);
        }
        let _ = writeln!(s, "average ranks (1 = highest test log-likelihood):");
        for j in self.order() {
            let _ = writeln!(s, "  {:<24} {:.4}", self.models[j], self.avg_ranks[j]);
        }
        if let Some(pm) = &self.pairwise_p {
            let label = if self.holm { "Holm-adjusted" } else { "unadjusted" };
            let _ = writeln!(s, "pairwise Wilcoxon p-values ({label}):");
            for i in 0..self.models.len() {
                for j in i + 1..self.models.len() {
                    let mark = if pm[i][j] < self.alpha { " *" } else { "" };
                    let _ = writeln!(s, "  {} vs {}: {:.6}{mark}", self.models[i], self.models[j], pm[i][j]);
                }
            }
        }
        let _ = writeln!(s, "cliques (no significant pairwise difference):");
        if self.cliques.is_empty() {
            let _ = writeln!(s, "  none");
        }
        for c in &self.cliques {
            let names: Vec<&str> = c.iter().map(|&j| self.models[j].as_str()).collect();
            let _ = writeln!(s, "  [{}]", names.join(", "));
        }
        s
    }

    /// Critical-difference style figure: a rank axis, one labelled marker per
    /// model and a horizontal bar under each clique.
    pub fn to_svg(&self) -> String {
        let k = self.models.len();
        let (width, left, right) = (640.0, 60.0, 580.0);
        let axis_y = 60.0;
        let x_of = |r: f64| left + (r - 1.0) / ((k.max(2) - 1) as f64) * (right - left);
        let label_rows = k;
        let height = axis_y + 40.0 + 22.0 * label_rows as f64 + 14.0 * self.cliques.len() as f64 + 20.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{axis_y}" x2="{right}" y2="{axis_y}" stroke="black"/>"#
        );
        for r in 1..=k {
            let x = x_of(r as f64);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{axis_y}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{r}</text>"#,
                axis_y - 6.0,
                axis_y - 10.0
            );
        }
        for (row, j) in self.order().into_iter().enumerate() {
            let x = x_of(self.avg_ranks[j]);
            let y = axis_y + 40.0 + 22.0 * row as f64;
            let _ = writeln!(
                s,
                r#"<polyline points="{x:.2},{axis_y} {x:.2},{y:.2} {:.2},{y:.2}" fill="none" stroke="black"/><text x="{:.2}" y="{:.2}">{} ({:.4})</text>"#,
                right + 4.0,
                right + 8.0,
                y + 4.0,
                xml_escape(&self.models[j]),
                self.avg_ranks[j]
            );
        }
        let base = axis_y + 12.0;
        for (i, c) in self.cliques.iter().enumerate() {
            let lo = c.iter().map(|&j| self.avg_ranks[j]).fold(f64::INFINITY, f64::min);
            let hi = c.iter().map(|&j| self.avg_ranks[j]).fold(f64::NEG_INFINITY, f64::max);
            let y = base + 6.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-width="3"/>"#,
                x_of(lo) - 3.0,
                x_of(hi) + 3.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
