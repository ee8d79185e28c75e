//! Significance-aware ranking: pairwise Wilcoxon signed-rank tests per
//! metric, win counts mapped to scores in `[0.1, 1]`, geometric-mean
//! aggregation and leaderboard rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::metrics::{robustness_percentile, write_text, Direction, Metric, MetricTable};

/// Version tag of rank configs and leaderboards.
pub const RANK_SCHEMA_VERSION: u32 = 1;

/// Largest sample size handled by exact enumeration.
pub const EXACT_MAX_N: usize = 25;

/// Which null distribution produced a p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// Every paired difference was zero; `p` is 1 by convention.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Two-sided p-value.
    pub p: f64,
    /// Sum of ranks of positive differences `a - b`.
    pub w_plus: f64,
    /// Number of nonzero differences.
    pub n: usize,
    pub method: WilcoxonMethod,
}

impl WilcoxonResult {
    /// `+1` when `a` tends to exceed `b`, `-1` when below, `0` when balanced.
    pub fn sign(&self) -> i32 {
        let mu = self.n as f64 * (self.n as f64 + 1.0) / 4.0;
        if self.w_plus > mu {
            1
        } else if self.w_plus < mu {
            -1
        } else {
            0
        }
    }
}

/// Nonzero differences with doubled midranks (integers) of their magnitudes.
struct SignedRanks {
    /// Doubled midrank per nonzero difference.
    ranks2: Vec<u64>,
    positive: Vec<bool>,
    /// Sizes of tie groups.
    ties: Vec<usize>,
}

fn signed_ranks(a: &[f64], b: &[f64]) -> Result<SignedRanks> {
    if a.len() != b.len() {
        return invalid(format!("paired samples differ in length: {} vs {}", a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return invalid("paired samples contain non-finite values");
    }
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let mut ranks2 = vec![0u64; d.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < d.len() {
        let mut j = i;
        while j + 1 < d.len() && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        // positions i+1..=j+1 share the midrank (i+1 + j+1)/2
        for r in &mut ranks2[i..=j] {
            *r = (i + 1 + j + 1) as u64;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    Ok(SignedRanks {
        positive: d.iter().map(|v| *v > 0.0).collect(),
        ranks2,
        ties,
    })
}

/// Exact two-sided test: the null distribution of the doubled statistic is
/// built by dynamic programming over the observed (tied) ranks.
pub fn wilcoxon_exact(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let sr = signed_ranks(a, b)?;
    let n = sr.ranks2.len();
    if n == 0 {
        return Ok(degenerate());
    }
    if n > 62 {
        return invalid("exact enumeration supports at most 62 nonzero differences");
    }
    let total: u64 = sr.ranks2.iter().sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in &sr.ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w2: u64 = sr.ranks2.iter().zip(&sr.positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    // compare |2*W2 - total| to stay in integers
    let dev = (2 * w2 as i64 - total as i64).abs();
    let extreme: f64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as i64 - total as i64).abs() >= dev)
        .map(|(_, c)| c)
        .sum();
    Ok(WilcoxonResult {
        p: (extreme / 2f64.powi(n as i32)).min(1.0),
        w_plus: w2 as f64 / 2.0,
        n,
        method: WilcoxonMethod::Exact,
    })
}

/// Normal approximation with tie-corrected variance and continuity
/// correction.
pub fn wilcoxon_normal(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let sr = signed_ranks(a, b)?;
    let n = sr.ranks2.len();
    if n == 0 {
        return Ok(degenerate());
    }
    let nf = n as f64;
    let w: f64 = sr.ranks2.iter().zip(&sr.positive).filter(|(_, p)| **p).map(|(r, _)| *r as f64 / 2.0).sum();
    let mu = nf * (nf + 1.0) / 4.0;
    let tie: f64 = sr.ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie / 48.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((w - mu).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0)
    };
    Ok(WilcoxonResult {
        p,
        w_plus: w,
        n,
        method: WilcoxonMethod::Normal,
    })
}

fn degenerate() -> WilcoxonResult {
    WilcoxonResult {
        p: 1.0,
        w_plus: 0.0,
        n: 0,
        method: WilcoxonMethod::Degenerate,
    }
}

/// Two-sided signed-rank test of `a` against `b`: exact for up to
/// [`EXACT_MAX_N`] nonzero differences, normal approximation beyond.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let n = a.iter().zip(b).filter(|(x, y)| x != y).count();
    if n <= EXACT_MAX_N {
        wilcoxon_exact(a, b)
    } else {
        wilcoxon_normal(a, b)
    }
}

/// A metric entering the overall rank, with its preferred direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankedMetric {
    pub metric: Metric,
    pub direction: Direction,
}

impl RankedMetric {
    pub fn natural(metric: Metric) -> Self {
        RankedMetric {
            metric,
            direction: metric.direction(),
        }
    }
}

/// Ranking parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankConfig {
    pub schema_version: u32,
    pub alpha: f64,
    pub metrics: Vec<RankedMetric>,
    pub score_floor: f64,
    pub score_ceiling: f64,
    /// Method shown as an unranked reference row.
    pub initial_method: Option<String>,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            schema_version: RANK_SCHEMA_VERSION,
            alpha: 0.05,
            metrics: [Metric::Tre, Metric::Tre30, Metric::Dsc, Metric::Hd95, Metric::SdLogJ]
                .into_iter()
                .map(RankedMetric::natural)
                .collect(),
            score_floor: 0.1,
            score_ceiling: 1.0,
            initial_method: Some("Initial".into()),
        }
    }
}

impl RankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != RANK_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "rank config schema_version {} is not supported (expected {RANK_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.score_floor > 0.0 && self.score_floor < self.score_ceiling) {
            return Err(Error::Config("need 0 < score_floor < score_ceiling".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("no metrics selected for ranking".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RankConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Checks that all `methods` cover the same cases and returns that case set.
fn common_cases(table: &MetricTable, methods: &[String]) -> Result<BTreeSet<String>> {
    let all: BTreeSet<String> = methods.iter().flat_map(|m| table.cases(m)).collect();
    let mut gaps = Vec::new();
    for m in methods {
        let have = table.cases(m);
        for c in all.difference(&have) {
            gaps.push(format!("{m}/{c}"));
        }
    }
    if !gaps.is_empty() {
        return Err(Error::IncompleteCoverage(format!("missing method/case pairs: {}", gaps.join(", "))));
    }
    Ok(all)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Wins per method on one metric. A significant pair (`p < alpha`) gives one
/// win to the method favoured by the median difference (or, when that is
/// zero, by the signed-rank statistic); otherwise each side gets half.
pub fn pairwise_wins(
    table: &MetricTable,
    methods: &[String],
    metric: Metric,
    direction: Direction,
    alpha: f64,
) -> Result<BTreeMap<String, f64>> {
    let cases = common_cases(table, methods)?;
    let series: Vec<Vec<f64>> = methods
        .iter()
        .map(|m| {
            let vals = table.values(m, metric);
            cases
                .iter()
                .map(|c| {
                    let v = vals[c];
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        invalid(format!("{metric} is undefined for method {m} case {c}"))
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut wins: BTreeMap<String, f64> = methods.iter().map(|m| (m.clone(), 0.0)).collect();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            let (a, b) = (&series[i], &series[j]);
            let test = wilcoxon_signed_rank(a, b)?;
            let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let med = median(&mut d);
            // +1: a has larger values
            let larger = if med > 0.0 {
                1
            } else if med < 0.0 {
                -1
            } else {
                test.sign()
            };
            let a_better = match direction {
                Direction::LowerIsBetter => -larger,
                Direction::HigherIsBetter => larger,
            };
            if test.p < alpha && a_better != 0 {
                let w = if a_better > 0 { i } else { j };
                *wins.get_mut(&methods[w]).unwrap() += 1.0;
            } else {
                *wins.get_mut(&methods[i]).unwrap() += 0.5;
                *wins.get_mut(&methods[j]).unwrap() += 0.5;
            }
        }
    }
    Ok(wins)
}

/// Linear map of wins onto `[floor, ceiling]`; a lone method gets the ceiling.
pub fn rank_score(wins: f64, num_methods: usize, cfg: &RankConfig) -> f64 {
    if num_methods <= 1 {
        return cfg.score_ceiling;
    }
    let frac = (wins / (num_methods - 1) as f64).clamp(0.0, 1.0);
    cfg.score_floor + (cfg.score_ceiling - cfg.score_floor) * frac
}

/// Geometric mean of per-metric scores.
pub fn overall_rank(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return invalid("no scores to aggregate");
    }
    if scores.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return invalid("scores must be positive and finite");
    }
    // factoring out the minimum keeps equal scores exact
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(lo * (scores.iter().map(|s| (s / lo).ln()).sum::<f64>() / scores.len() as f64).exp())
}

/// Runtime column entry: measured seconds or a free-form label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuntimeCell {
    Seconds(f64),
    Text(String),
}

/// One leaderboard line. Aggregates are means over cases except TRE30,
/// which is the worst-30% boundary of the per-case mean TREs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub method: String,
    pub tre: Option<f64>,
    pub tre30: Option<f64>,
    /// Percent.
    pub dsc: Option<f64>,
    pub hd95: Option<f64>,
    pub sdlogj: Option<f64>,
    pub runtime: Option<RuntimeCell>,
    /// Rank score per ranked metric.
    #[serde(default)]
    pub scores: BTreeMap<Metric, f64>,
    /// Geometric mean of `scores`; absent for unranked rows.
    pub rank: Option<f64>,
    /// 1-based position among ranked rows.
    pub position: Option<usize>,
}

impl LeaderboardRow {
    pub fn new(method: impl Into<String>) -> Self {
        LeaderboardRow {
            method: method.into(),
            tre: None,
            tre30: None,
            dsc: None,
            hd95: None,
            sdlogj: None,
            runtime: None,
            scores: BTreeMap::new(),
            rank: None,
            position: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub schema_version: u32,
    /// Unranked reference row first, then ranked rows by position.
    pub rows: Vec<LeaderboardRow>,
}

impl Leaderboard {
    /// Orders ranked rows by descending rank (ties by name) and assigns
    /// positions; unranked rows go first.
    pub fn from_rows(rows: Vec<LeaderboardRow>) -> Self {
        let (mut ranked, unranked): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.rank.is_some());
        ranked.sort_by(|a, b| b.rank.unwrap().total_cmp(&a.rank.unwrap()).then_with(|| a.method.cmp(&b.method)));
        for (i, r) in ranked.iter_mut().enumerate() {
            r.position = Some(i + 1);
        }
        let mut rows = unranked;
        rows.extend(ranked);
        Leaderboard {
            schema_version: RANK_SCHEMA_VERSION,
            rows,
        }
    }

    /// Ranked method names in order.
    pub fn order(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| r.position.is_some()).map(|r| r.method.as_str()).collect()
    }

    /// Table layout: two decimals, three for SDLogJ, blanks for absent cells.
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>, d: usize| v.map(|x| format!("{x:.d$}")).unwrap_or_default();
        let mut out = String::from("Method,TRE,TRE30,DSC,HD95,SDLogJ,RT,Rank\n");
        for r in &self.rows {
            let rt = match &r.runtime {
                Some(RuntimeCell::Seconds(s)) => format!("{s:.2}"),
                Some(RuntimeCell::Text(t)) => t.clone(),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                csv_field(&r.method),
                f(r.tre, 2),
                f(r.tre30, 2),
                f(r.dsc, 2),
                f(r.hd95, 2),
                f(r.sdlogj, 3),
                csv_field(&rt),
                f(r.rank, 2)
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        write_text(csv_path.as_ref(), &self.to_csv())?;
        write_text(json_path.as_ref(), &self.to_json()?)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = v.filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate_row(table: &MetricTable, method: &str) -> LeaderboardRow {
    let rows: Vec<_> = table.rows_for(method).collect();
    let per_case_tre: Vec<f64> = rows.iter().map(|r| r.mean_tre()).filter(|v| v.is_finite()).collect();
    let mut row = LeaderboardRow::new(method);
    row.tre = mean(per_case_tre.iter().copied());
    row.tre30 = robustness_percentile(&per_case_tre, 30.0, Direction::LowerIsBetter).ok();
    row.dsc = mean(rows.iter().map(|r| r.mean_dsc(None))).map(|d| 100.0 * d);
    row.hd95 = mean(rows.iter().map(|r| r.mean_hd95()));
    row.sdlogj = mean(rows.iter().map(|r| r.sdlogj));
    row.runtime = mean(rows.iter().filter_map(|r| r.runtime_s)).map(RuntimeCell::Seconds);
    row
}

/// Aggregates, ranks and orders every method in `table`. The configured
/// initial method is reported but not ranked.
pub fn leaderboard(table: &MetricTable, cfg: &RankConfig) -> Result<Leaderboard> {
    cfg.validate()?;
    table.validate()?;
    if !table.failures.is_empty() {
        let gaps: Vec<String> = table.failures.iter().map(|f| format!("{}/{}", f.method_id, f.case_id)).collect();
        return Err(Error::IncompleteCoverage(format!("failed evaluations: {}", gaps.join(", "))));
    }
    let all = table.methods();
    let ranked: Vec<String> = all
        .iter()
        .filter(|m| cfg.initial_method.as_deref() != Some(m.as_str()))
        .cloned()
        .collect();
    if ranked.is_empty() {
        return invalid("no methods to rank");
    }
    common_cases(table, &all)?;

    let mut scores: BTreeMap<String, BTreeMap<Metric, f64>> = BTreeMap::new();
    for rm in &cfg.metrics {
        let wins = pairwise_wins(table, &ranked, rm.metric, rm.direction, cfg.alpha)?;
        for (m, w) in wins {
            scores.entry(m).or_default().insert(rm.metric, rank_score(w, ranked.len(), cfg));
        }
    }
    let mut rows = Vec::new();
    for m in &all {
        let mut row = aggregate_row(table, m);
        if let Some(s) = scores.remove(m) {
            row.rank = Some(overall_rank(&s.values().copied().collect::<Vec<_>>())?);
            row.scores = s;
        }
        rows.push(row);
    }
    Ok(Leaderboard::from_rows(rows))
}
