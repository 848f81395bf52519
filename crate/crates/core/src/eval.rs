//! Aggregate analyses over episodes: success matrices, strategy and error
//! breakdowns, overlap/angle buckets with trend tests, paired significance
//! and a JSON + static HTML report.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::agents::Episode;
use crate::language::{self, parse, resolve, Anchor, ResolveInput, Strategy, DEFAULT_KAPPA};
use crate::render::AgentView;
use crate::scenegen::{PlacementMode, Scene};

/// Resolve-probability margin within which two referents count as tied.
pub const AMBIGUITY_DELTA: f64 = 0.1;
pub const MIN_BUCKET: usize = 10;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Mean over scenes of the per-scene success rate, in percent.
    pub macro_rate: f64,
    /// Mean over episodes, in percent.
    pub micro_rate: f64,
    pub n: usize,
    pub scenes: usize,
}

fn cell_of<'a>(eps: impl IntoIterator<Item = &'a Episode>) -> Option<Cell> {
    let mut per_scene: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let (mut sum, mut n) = (0.0, 0usize);
    for e in eps {
        let s = per_scene.entry(&e.scene_id).or_default();
        s.0 += e.success as f64;
        s.1 += 1;
        sum += e.success as f64;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let macro_rate = per_scene.values().map(|(s, k)| s / *k as f64).sum::<f64>() / per_scene.len() as f64;
    Some(Cell {
        macro_rate: 100.0 * macro_rate,
        micro_rate: 100.0 * sum / n as f64,
        n,
        scenes: per_scene.len(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub speaker_id: String,
    pub listener_id: String,
    /// Placement mode, or `None` for all modes pooled.
    pub mode: Option<PlacementMode>,
    pub cell: Cell,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessMatrix {
    pub speakers: Vec<String>,
    pub listeners: Vec<String>,
    pub entries: Vec<MatrixEntry>,
}

impl SuccessMatrix {
    pub fn get(&self, speaker: &str, listener: &str, mode: Option<PlacementMode>) -> Option<&Cell> {
        self.entries
            .iter()
            .find(|e| e.speaker_id == speaker && e.listener_id == listener && e.mode == mode)
            .map(|e| &e.cell)
    }
}

/// Success per (speaker, listener), split by placement mode and pooled.
/// Empty cells are omitted.
pub fn success_matrix(episodes: &[Episode]) -> SuccessMatrix {
    let mut groups: BTreeMap<(String, String), Vec<&Episode>> = BTreeMap::new();
    for e in episodes {
        groups.entry((e.speaker_id.clone(), e.listener_id.clone())).or_default().push(e);
    }
    let mut m = SuccessMatrix::default();
    for ((s, l), eps) in groups {
        if !m.speakers.contains(&s) {
            m.speakers.push(s.clone());
        }
        if !m.listeners.contains(&l) {
            m.listeners.push(l.clone());
        }
        let modes = [None, Some(PlacementMode::Random), Some(PlacementMode::Adversarial)];
        for mode in modes {
            let sel = eps.iter().copied().filter(|e| mode.is_none() || e.mode == mode);
            if let Some(cell) = cell_of(sel) {
                m.entries.push(MatrixEntry {
                    speaker_id: s.clone(),
                    listener_id: l.clone(),
                    mode,
                    cell,
                });
            }
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategySource {
    Exact,
    Heuristic,
}

/// The AST tag when one is known, otherwise cue words.
pub fn classify_strategy(text: &str, ast: Option<&language::ExpressionAst>) -> (Strategy, StrategySource) {
    if let Some(a) = ast {
        return (a.strategy, StrategySource::Exact);
    }
    match language::classify_text(text) {
        (s, false) => (s, StrategySource::Exact),
        (s, true) => (s, StrategySource::Heuristic),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorTag {
    OutOfContextReference,
    PerspectiveMisalignment,
    Ambiguity,
    RelativePositionError,
    ExpressionError,
    Misunderstanding,
    None,
}

impl ErrorTag {
    pub const ALL: [ErrorTag; 7] = [
        Self::OutOfContextReference,
        Self::PerspectiveMisalignment,
        Self::Ambiguity,
        Self::RelativePositionError,
        Self::ExpressionError,
        Self::Misunderstanding,
        Self::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OutOfContextReference => "out_of_context_reference",
            Self::PerspectiveMisalignment => "perspective_misalignment",
            Self::Ambiguity => "ambiguity",
            Self::RelativePositionError => "relative_position_error",
            Self::ExpressionError => "expression_error",
            Self::Misunderstanding => "misunderstanding",
            Self::None => "none",
        }
    }
}

/// Rule-based failure diagnosis, first matching rule wins.
pub fn diagnose_error(episode: &Episode, scene: &Scene, listener_view: &AgentView) -> ErrorTag {
    if episode.success == 1 {
        return ErrorTag::None;
    }
    let ast = match episode.ast {
        Some(a) => a,
        None => match parse(&episode.text) {
            Ok(p) => p.ast,
            Err(_) => return ErrorTag::ExpressionError,
        },
    };
    let anchors = [Some(ast.anchor), ast.secondary];
    if anchors
        .iter()
        .flatten()
        .any(|a| matches!(a, Anchor::Landmark(c) if !listener_view.landmark_visible(*c)))
    {
        return ErrorTag::OutOfContextReference;
    }
    if ast.needs_speaker_pose() && !listener_view.partner_visible {
        return ErrorTag::PerspectiveMisalignment;
    }
    let centers: Vec<_> = scene.referents.iter().map(|r| r.center()).collect();
    let mut input = ResolveInput::for_listener(scene, listener_view, &centers, DEFAULT_KAPPA);
    input.speaker = Some(scene.speaker_pose);
    let p = resolve(&ast, &input);
    let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let near = p.iter().filter(|v| **v >= max - AMBIGUITY_DELTA).count();
    if near >= 2 {
        return ErrorTag::Ambiguity;
    }
    let top = p.iter().position(|v| *v == max).unwrap_or(0);
    if top != episode.target_index {
        ErrorTag::RelativePositionError
    } else {
        ErrorTag::Misunderstanding
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub successes: usize,
    pub rate: f64,
    /// Formed by merging under-filled neighbors.
    pub merged: bool,
}

impl Bucket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub intercept: f64,
    pub slope: f64,
    /// Likelihood-ratio test of slope = 0.
    pub lrt_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketAnalysis {
    pub key: String,
    pub interval: f64,
    pub buckets: Vec<Bucket>,
    pub chi_square: f64,
    pub chi_square_p: f64,
    /// Rank correlation of bucket midpoint and success rate.
    pub spearman: f64,
    /// Single-covariate fit on raw episodes; an approximation of a fuller model.
    pub logistic: Option<LogisticFit>,
}

/// Buckets `(value, success)` rows at `interval` from `origin`. Buckets with
/// fewer than `MIN_BUCKET` rows are merged into the following one, and a
/// short tail into the previous one.
pub fn bucket_analysis(key: &str, rows: &[(f64, u8)], interval: f64, origin: f64) -> BucketAnalysis {
    let mut raw: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for (x, s) in rows {
        let b = ((x - origin) / interval + 1e-9).floor() as i64;
        let e = raw.entry(b).or_default();
        e.0 += 1;
        e.1 += *s as usize;
    }
    let mut buckets: Vec<Bucket> = Vec::new();
    let mut pending: Option<Bucket> = None;
    for (b, (n, s)) in raw {
        let lo = origin + b as f64 * interval;
        let cur = match pending.take() {
            Some(p) => Bucket {
                lo: p.lo,
                hi: lo + interval,
                n: p.n + n,
                successes: p.successes + s,
                rate: 0.0,
                merged: true,
            },
            None => Bucket {
                lo,
                hi: lo + interval,
                n,
                successes: s,
                rate: 0.0,
                merged: false,
            },
        };
        if cur.n < MIN_BUCKET {
            pending = Some(cur);
        } else {
            buckets.push(cur);
        }
    }
    if let Some(p) = pending {
        match buckets.last_mut() {
            Some(last) => {
                last.hi = p.hi;
                last.n += p.n;
                last.successes += p.successes;
                last.merged = true;
            }
            None => buckets.push(p),
        }
    }
    for b in &mut buckets {
        b.rate = b.successes as f64 / b.n.max(1) as f64;
    }
    let (chi_square, chi_square_p) = chi_square_homogeneity(&buckets);
    let mids: Vec<f64> = buckets.iter().map(Bucket::midpoint).collect();
    let rates: Vec<f64> = buckets.iter().map(|b| b.rate).collect();
    BucketAnalysis {
        key: key.to_string(),
        interval,
        spearman: spearman(&mids, &rates),
        chi_square,
        chi_square_p,
        logistic: logistic_fit(rows),
        buckets,
    }
}

/// Pearson χ² test that all buckets share one success rate.
pub fn chi_square_homogeneity(buckets: &[Bucket]) -> (f64, f64) {
    let n: usize = buckets.iter().map(|b| b.n).sum();
    let s: usize = buckets.iter().map(|b| b.successes).sum();
    if buckets.len() < 2 || s == 0 || s == n {
        return (0.0, 1.0);
    }
    let p = s as f64 / n as f64;
    let mut chi = 0.0;
    for b in buckets {
        let es = b.n as f64 * p;
        let ef = b.n as f64 * (1.0 - p);
        chi += (b.successes as f64 - es).powi(2) / es;
        chi += ((b.n - b.successes) as f64 - ef).powi(2) / ef;
    }
    let df = (buckets.len() - 1) as f64;
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    (chi, dist.sf(chi))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va <= 0.0 || vb <= 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant or there are fewer than two points.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 || a.len() != b.len() {
        return 0.0;
    }
    pearson(&ranks(a), &ranks(b))
}

fn log_lik(rows: &[(f64, u8)], b0: f64, b1: f64) -> f64 {
    rows.iter()
        .map(|(x, y)| {
            let z = b0 + b1 * x;
            // log σ(z) and log(1 − σ(z)) computed stably.
            let log1pexp = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
            if *y == 1 {
                -log1pexp(-z)
            } else {
                -log1pexp(z)
            }
        })
        .sum()
}

/// Newton–Raphson logistic regression of success on the covariate.
pub fn logistic_fit(rows: &[(f64, u8)]) -> Option<LogisticFit> {
    let n = rows.len() as f64;
    let s = rows.iter().filter(|r| r.1 == 1).count() as f64;
    if rows.len() < 2 || s == 0.0 || s == n {
        return None;
    }
    let (mut b0, mut b1) = ((s / (n - s)).ln(), 0.0);
    for _ in 0..50 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, y) in rows {
            let p = 1.0 / (1.0 + (-(b0 + b1 * x)).exp());
            let r = *y as f64 - p;
            let w = p * (1.0 - p);
            g0 += r;
            g1 += r * x;
            h00 += w;
            h01 += w * x;
            h11 += w * x * x;
        }
        let det = h00 * h11 - h01 * h01;
        if det.abs() < 1e-12 {
            break;
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        b0 += d0;
        b1 += d1;
        if d0.abs() + d1.abs() < 1e-10 || !b1.is_finite() {
            break;
        }
    }
    if !b0.is_finite() || !b1.is_finite() {
        return None;
    }
    let null = log_lik(rows, (s / (n - s)).ln(), 0.0);
    let full = log_lik(rows, b0, b1);
    let stat = (2.0 * (full - null)).max(0.0);
    let lrt_p = ChiSquared::new(1.0).expect("df").sf(stat);
    Some(LogisticFit {
        intercept: b0,
        slope: b1,
        lrt_p,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    /// Mean of `a − b`.
    pub mean_difference: f64,
    pub t_statistic: f64,
    pub t_p: f64,
    /// Exact two-sided McNemar on discordant pairs.
    pub mcnemar_p: f64,
    pub underpowered: bool,
}

/// Two-sided paired t-test on per-item indicators (or any paired scores).
pub fn paired_t(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    assert_eq!(a.len(), b.len(), "paired samples must align");
    let n = a.len();
    if n == 0 {
        return (0.0, 0.0, 1.0);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0, 1.0);
    }
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd <= 1e-15 {
        return (mean, if mean == 0.0 { 0.0 } else { f64::INFINITY * mean.signum() }, if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid t distribution");
    (mean, t, (2.0 * dist.sf(t.abs())).min(1.0))
}

/// Exact two-sided McNemar test from discordant counts.
pub fn mcnemar_exact(only_a: u64, only_b: u64) -> f64 {
    let m = only_a + only_b;
    if m == 0 {
        return 1.0;
    }
    let k = only_a.min(only_b);
    let bin = Binomial::new(0.5, m).expect("valid binomial");
    (2.0 * bin.cdf(k)).min(1.0)
}

/// Paired comparison of success indicators on shared items.
pub fn paired_significance(a: &[u8], b: &[u8]) -> PairedTest {
    let fa: Vec<f64> = a.iter().map(|x| *x as f64).collect();
    let fb: Vec<f64> = b.iter().map(|x| *x as f64).collect();
    let (mean, t, p) = paired_t(&fa, &fb);
    let only_a = a.iter().zip(b).filter(|(x, y)| **x == 1 && **y == 0).count() as u64;
    let only_b = a.iter().zip(b).filter(|(x, y)| **x == 0 && **y == 1).count() as u64;
    PairedTest {
        n: a.len(),
        mean_difference: mean,
        t_statistic: t,
        t_p: p,
        mcnemar_p: mcnemar_exact(only_a, only_b),
        underpowered: a.len() < 30,
    }
}

/// Aligns two episode sets by scene id (mean success per scene) and tests them.
pub fn paired_by_scene(a: &[Episode], b: &[Episode]) -> PairedTest {
    let per_scene = |eps: &[Episode]| {
        let mut m: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for e in eps {
            let s = m.entry(e.scene_id.clone()).or_default();
            s.0 += e.success as f64;
            s.1 += 1;
        }
        m
    };
    let ma = per_scene(a);
    let mb = per_scene(b);
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for (k, (s, n)) in &ma {
        if let Some((s2, n2)) = mb.get(k) {
            xa.push(s / *n as f64);
            xb.push(s2 / *n2 as f64);
        }
    }
    let (mean, t, p) = paired_t(&xa, &xb);
    let only_a = xa.iter().zip(&xb).filter(|(x, y)| **x > 0.5 && **y <= 0.5).count() as u64;
    let only_b = xa.iter().zip(&xb).filter(|(x, y)| **x <= 0.5 && **y > 0.5).count() as u64;
    PairedTest {
        n: xa.len(),
        mean_difference: mean,
        t_statistic: t,
        t_p: p,
        mcnemar_p: mcnemar_exact(only_a, only_b),
        underpowered: xa.len() < 30,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilitySplit {
    /// Success rate (percent) and count when the listener sees the speaker.
    pub visible: Option<(f64, usize)>,
    pub invisible: Option<(f64, usize)>,
    /// Unpaired comparison: exact Fisher-free two-proportion z test p-value.
    pub p_value: Option<f64>,
}

pub fn visibility_split(episodes: &[Episode]) -> VisibilitySplit {
    let mut vis = (0usize, 0usize);
    let mut inv = (0usize, 0usize);
    for e in episodes {
        match e.listener_sees_speaker {
            Some(true) => {
                vis.0 += e.success as usize;
                vis.1 += 1;
            }
            Some(false) => {
                inv.0 += e.success as usize;
                inv.1 += 1;
            }
            None => {}
        }
    }
    let rate = |(s, n): (usize, usize)| (n > 0).then(|| (100.0 * s as f64 / n as f64, n));
    let p_value = (vis.1 > 0 && inv.1 > 0).then(|| {
        let p1 = vis.0 as f64 / vis.1 as f64;
        let p2 = inv.0 as f64 / inv.1 as f64;
        let p = (vis.0 + inv.0) as f64 / (vis.1 + inv.1) as f64;
        let se = (p * (1.0 - p) * (1.0 / vis.1 as f64 + 1.0 / inv.1 as f64)).sqrt();
        if se <= 0.0 {
            1.0
        } else {
            let z = ((p1 - p2) / se).abs();
            // Normal as the infinite-df Student t.
            2.0 * StudentsT::new(0.0, 1.0, f64::INFINITY).expect("normal").sf(z)
        }
    });
    VisibilitySplit {
        visible: rate(vis),
        invisible: rate(inv),
        p_value,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRow {
    pub variant: String,
    pub success_rate: f64,
    pub mean_tokens: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub episodes: usize,
    pub success_matrix: SuccessMatrix,
    pub strategies: BTreeMap<String, usize>,
    pub strategy_success: BTreeMap<String, f64>,
    pub errors: BTreeMap<String, usize>,
    pub overlap: Option<BucketAnalysis>,
    pub angle: Option<BucketAnalysis>,
    pub visibility: VisibilitySplit,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub learning: Vec<LearningRow>,
}

/// Everything derivable from stored episodes and their scenes. Episodes
/// whose scene is unknown still count toward the matrix and strategies.
pub fn build_report(
    episodes: &[Episode],
    scenes: &HashMap<String, Scene>,
    listener_views: &HashMap<String, AgentView>,
    learning: Vec<LearningRow>,
) -> Report {
    let mut strategies = BTreeMap::new();
    let mut strat_succ: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for e in episodes {
        let (s, _) = classify_strategy(&e.text, e.ast.as_ref());
        *strategies.entry(s.as_str().to_string()).or_insert(0) += 1;
        let x = strat_succ.entry(s.as_str().to_string()).or_default();
        x.0 += e.success as f64;
        x.1 += 1;
    }
    let mut errors = BTreeMap::new();
    let mut overlap_rows = Vec::new();
    let mut angle_rows = Vec::new();
    for e in episodes {
        let Some(scene) = scenes.get(&e.scene_id) else { continue };
        overlap_rows.push((scene.achieved.fov_overlap, e.success));
        angle_rows.push((scene.achieved.psi_prime, e.success));
        if e.success == 0 {
            if let Some(view) = listener_views.get(&e.scene_id) {
                *errors.entry(diagnose_error(e, scene, view).as_str().to_string()).or_insert(0) += 1;
            }
        }
    }
    Report {
        episodes: episodes.len(),
        success_matrix: success_matrix(episodes),
        strategies,
        strategy_success: strat_succ.into_iter().map(|(k, (s, n))| (k, 100.0 * s / n as f64)).collect(),
        errors,
        overlap: (!overlap_rows.is_empty()).then(|| bucket_analysis("fov_overlap", &overlap_rows, 0.02, 0.0)),
        angle: (!angle_rows.is_empty()).then(|| bucket_analysis("psi_prime", &angle_rows, 10.0, 0.0)),
        visibility: visibility_split(episodes),
        learning,
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bucket_svg(a: &BucketAnalysis) -> String {
    let (w, h, pad) = (480.0, 200.0, 30.0);
    let lo = a.buckets.first().map(|b| b.lo).unwrap_or(0.0);
    let hi = a.buckets.last().map(|b| b.hi).unwrap_or(1.0);
    let span = (hi - lo).max(1e-9);
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = write!(
        s,
        r##"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="#444"/><line x1="{pad}" y1="{pad0}" x2="{pad}" y2="{y}" stroke="#444"/>"##,
        y = h - pad,
        x2 = w - 5.0,
        pad0 = 5.0
    );
    for b in &a.buckets {
        let x0 = pad + (b.lo - lo) / span * (w - pad - 5.0);
        let x1 = pad + (b.hi - lo) / span * (w - pad - 5.0);
        let bh = b.rate * (h - pad - 5.0);
        let fill = if b.merged { "#9ab" } else { "#37a" };
        let _ = write!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{fill}"><title>[{:.3}, {:.3}) n={} rate={:.3}</title></rect>"#,
            x0,
            h - pad - bh,
            (x1 - x0 - 1.0).max(0.5),
            bh,
            b.lo,
            b.hi,
            b.n,
            b.rate
        );
    }
    let _ = write!(
        s,
        r#"<text x="{pad}" y="{:.0}" font-size="11">{} {:.2} .. {:.2}</text></svg>"#,
        h - 8.0,
        esc(&a.key),
        lo,
        hi
    );
    s
}

/// Self-contained HTML summary of a report.
pub fn render_html(r: &Report) -> String {
    let mut h = String::from(
        "<!doctype html><html><head><meta charset=\"utf-8\"><title>Reference game report</title>\
<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse;margin:1em 0}\
td,th{border:1px solid #bbb;padding:4px 8px;text-align:right}th{background:#eee}</style></head><body>",
    );
    let _ = write!(h, "<h1>Reference game report</h1><p>{} episodes</p>", r.episodes);
    h.push_str("<h2>Communicative success</h2><table><tr><th>speaker \\ listener</th>");
    for l in &r.success_matrix.listeners {
        let _ = write!(h, "<th>{}</th>", esc(l));
    }
    h.push_str("</tr>");
    for s in &r.success_matrix.speakers {
        let _ = write!(h, "<tr><th>{}</th>", esc(s));
        for l in &r.success_matrix.listeners {
            let cell = |m| {
                r.success_matrix
                    .get(s, l, m)
                    .map(|c| format!("{:.1}", c.macro_rate))
                    .unwrap_or_else(|| "-".into())
            };
            let _ = write!(
                h,
                "<td>{} <small>(random {} / adversarial {})</small></td>",
                cell(None),
                cell(Some(PlacementMode::Random)),
                cell(Some(PlacementMode::Adversarial))
            );
        }
        h.push_str("</tr>");
    }
    h.push_str("</table>");
    if !r.learning.is_empty() {
        h.push_str("<h2>Learning from success</h2><table><tr><th>variant</th><th>success</th><th>mean tokens</th></tr>");
        for row in &r.learning {
            let _ = write!(
                h,
                "<tr><th>{}</th><td>{:.1}</td><td>{:.1}</td></tr>",
                esc(&row.variant),
                row.success_rate,
                row.mean_tokens
            );
        }
        h.push_str("</table>");
    }
    h.push_str("<h2>Strategies</h2><table><tr><th>strategy</th><th>count</th><th>success</th></tr>");
    for (k, v) in &r.strategies {
        let _ = write!(
            h,
            "<tr><th>{}</th><td>{}</td><td>{:.1}</td></tr>",
            esc(k),
            v,
            r.strategy_success.get(k).copied().unwrap_or(0.0)
        );
    }
    h.push_str("</table><h2>Errors</h2><table><tr><th>tag</th><th>count</th></tr>");
    for (k, v) in &r.errors {
        let _ = write!(h, "<tr><th>{}</th><td>{}</td></tr>", esc(k), v);
    }
    h.push_str("</table>");
    for a in [&r.overlap, &r.angle].into_iter().flatten() {
        let _ = write!(
            h,
            "<h2>Success by {}</h2>{}<p>Spearman {:.3}, χ² p = {:.3}</p>",
            esc(&a.key),
            bucket_svg(a),
            a.spearman,
            a.chi_square_p
        );
    }
    let v = &r.visibility;
    let fmt = |x: Option<(f64, usize)>| x.map(|(r, n)| format!("{r:.1} (n={n})")).unwrap_or_else(|| "-".into());
    let _ = write!(
        h,
        "<h2>Speaker visibility</h2><table><tr><th>listener sees speaker</th><td>{}</td></tr>\
<tr><th>listener does not</th><td>{}</td></tr></table></body></html>",
        fmt(v.visible),
        fmt(v.invisible)
    );
    h
}
