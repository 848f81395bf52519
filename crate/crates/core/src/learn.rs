//! Learning from communicative success for the log-linear speaker:
//! episode collection, reward variants, an offline clipped policy update, a
//! contrastive update and imitation of labeled references.
//!
//! Gradients are analytic. For a linear softmax over utterance features
//! `∇ log p(u|t) = (φ_u − E_p[φ]) / T`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    log_softmax, play, softmax, Decode, Episode, Features, ListenerAgent, Provenance, SpeakerAgent, SpeakerContext,
    SpeakerPolicy, FEATURE_DIM,
};
use crate::language::{parse, Confidence};
use crate::rng;
use crate::scenegen::Scene;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("episode {0} has no old log-probability")]
    MissingLogp(u64),
    #[error("dataset is empty")]
    Empty,
    #[error("variant {0} is not trained with the offline update")]
    WrongVariant(RewardVariant),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RewardVariant {
    Contrastive,
    Lso,
    PosOnly,
    Ppl,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 4] = [Self::Contrastive, Self::Lso, Self::PosOnly, Self::Ppl];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Contrastive => "CONTRASTIVE",
            Self::Lso => "LSO",
            Self::PosOnly => "POS_ONLY",
            Self::Ppl => "PPL",
        }
    }
}

impl fmt::Display for RewardVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "contrastive" => Ok(Self::Contrastive),
            "lso" => Ok(Self::Lso),
            "pos" | "pos_only" => Ok(Self::PosOnly),
            "ppl" => Ok(Self::Ppl),
            other => Err(format!("unknown reward variant `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetProvenance {
    Automated,
    Human,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDataset {
    pub episodes: Vec<Episode>,
    pub provenance: DatasetProvenance,
    /// Listener selections per utterance.
    pub replicates: u32,
    /// Scenes dropped because an agent call failed.
    #[serde(default)]
    pub io_failures: usize,
}

impl EpisodeDataset {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn success_rate(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.success as f64).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn to_jsonl(&self) -> String {
        self.episodes
            .iter()
            .map(|e| serde_json::to_string(e).expect("episode serializes") + "\n")
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    /// Mean reward of the dataset.
    Mean,
    /// Exponential moving average over the pass, decay 0.9.
    MovingAverage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PplScale {
    Probability,
    LogProbability,
}

/// How a PPL failure reward drives the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PplObjective {
    /// The reward weights the clipped surrogate of `log p(x|t)`, like every
    /// other offline variant.
    Surrogate,
    /// The reward itself, `p(x|t̂) − p(x|t)` as a function of the policy, is
    /// ascended within the trust region.
    Preference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub entropy_bonus: f64,
    pub baseline: Baseline,
    pub ppl_scale: PplScale,
    pub ppl_objective: PplObjective,
    /// Fix PPL failure rewards at their value under the collection policy.
    pub ppl_freeze: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 1,
            entropy_bonus: 0.01,
            baseline: Baseline::MovingAverage,
            ppl_scale: PplScale::Probability,
            ppl_objective: PplObjective::Surrogate,
            ppl_freeze: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(LearnError::InvalidConfig("clip epsilon must be in (0, 1)".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(LearnError::InvalidConfig("learning rate must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(LearnError::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Samples one utterance per scene and records `replicates` listener
/// selections of it. Agent I/O failures drop the scene and are counted.
pub fn collect_episodes(
    speaker: &SpeakerAgent,
    listener: &ListenerAgent,
    scenes: &[(Scene, SpeakerContext)],
    decode: Decode,
    replicates: u32,
) -> EpisodeDataset {
    let results: Vec<_> = scenes
        .par_iter()
        .map(|(scene, ctx)| play(scene, ctx, speaker, listener, decode, replicates))
        .collect();
    let mut episodes = Vec::new();
    let mut io_failures = 0;
    for r in results {
        match r {
            Ok(eps) => episodes.extend(eps),
            Err(_) => io_failures += 1,
        }
    }
    for (i, e) in episodes.iter_mut().enumerate() {
        e.episode_id = i as u64;
    }
    let provenance = match episodes.first().map(|e| e.provenance) {
        Some(Provenance::Human) => DatasetProvenance::Human,
        _ => DatasetProvenance::Automated,
    };
    EpisodeDataset {
        episodes,
        provenance,
        replicates: replicates.max(1),
        io_failures,
    }
}

/// An episode bound to the feature matrices of its scene.
#[derive(Clone, Debug)]
pub struct Example {
    pub episode_id: u64,
    pub u: usize,
    pub target: usize,
    pub chosen: usize,
    pub old_logp: Option<f64>,
    feats_target: Vec<Features>,
    feats_chosen: Vec<Features>,
}

impl Example {
    pub fn success(&self) -> bool {
        self.target == self.chosen
    }

    /// Returns `None` when the episode's utterance is not a candidate of the scene.
    pub fn bind(episode: &Episode, ctx: &SpeakerContext) -> Option<Self> {
        let u = ctx.index_of(episode.ast.as_ref()?)?;
        if episode.target_index >= ctx.n_referents() || episode.chosen_index >= ctx.n_referents() {
            return None;
        }
        Some(Self {
            episode_id: episode.episode_id,
            u,
            target: episode.target_index,
            chosen: episode.chosen_index,
            old_logp: episode.old_logp,
            feats_target: ctx.feature_matrix(episode.target_index),
            feats_chosen: ctx.feature_matrix(episode.chosen_index),
        })
    }

    fn feats(&self, referent: usize) -> &[Features] {
        if referent == self.target {
            &self.feats_target
        } else {
            &self.feats_chosen
        }
    }

    /// `p(x | ·, referent)` under `policy`.
    pub fn prob(&self, policy: &SpeakerPolicy, referent: usize) -> f64 {
        softmax(&policy.logits(self.feats(referent)))[self.u]
    }

    pub fn logp(&self, policy: &SpeakerPolicy, referent: usize) -> f64 {
        log_softmax(&policy.logits(self.feats(referent)))[self.u]
    }

    /// Gradient of `log p(x | referent)` and the distribution it used.
    fn grad_logp(&self, policy: &SpeakerPolicy, referent: usize) -> ([f64; FEATURE_DIM], Vec<f64>) {
        let feats = self.feats(referent);
        let p = softmax(&policy.logits(feats));
        let t = policy.temperature.max(1e-12);
        let mut g = feats[self.u];
        for (pj, fj) in p.iter().zip(feats) {
            for k in 0..FEATURE_DIM {
                g[k] -= pj * fj[k];
            }
        }
        for v in g.iter_mut() {
            *v /= t;
        }
        (g, p)
    }

    /// Gradient of the policy entropy at `referent`.
    fn grad_entropy(&self, policy: &SpeakerPolicy, referent: usize) -> [f64; FEATURE_DIM] {
        let feats = self.feats(referent);
        let p = softmax(&policy.logits(feats));
        let t = policy.temperature.max(1e-12);
        let mut mean = [0.0; FEATURE_DIM];
        for (pj, fj) in p.iter().zip(feats) {
            for k in 0..FEATURE_DIM {
                mean[k] += pj * fj[k];
            }
        }
        let mut g = [0.0; FEATURE_DIM];
        for (pj, fj) in p.iter().zip(feats) {
            if *pj <= 0.0 {
                continue;
            }
            let w = -pj * pj.ln() / t;
            for k in 0..FEATURE_DIM {
                g[k] += w * (fj[k] - mean[k]);
            }
        }
        g
    }
}

/// Binds every episode to its scene context, skipping unknown utterances.
pub fn bind_examples(dataset: &EpisodeDataset, contexts: &HashMap<String, SpeakerContext>) -> Vec<Example> {
    dataset
        .episodes
        .iter()
        .filter_map(|e| Example::bind(e, contexts.get(&e.scene_id)?))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardValue {
    Scalar(f64),
    /// Raise `log p(x | raise)` and lower `log p(x | lower)`.
    Paired { raise: usize, lower: usize },
}

/// PPL failure reward on the probability scale, clipped to [−1, 1].
pub fn ppl_reward(p_chosen: f64, p_target: f64) -> f64 {
    (p_chosen - p_target).clamp(-1.0, 1.0)
}

pub fn reward(variant: RewardVariant, ex: &Example, policy: &SpeakerPolicy) -> RewardValue {
    reward_scaled(variant, ex, policy, PplScale::Probability)
}

pub fn reward_scaled(variant: RewardVariant, ex: &Example, policy: &SpeakerPolicy, scale: PplScale) -> RewardValue {
    let ok = ex.success();
    match variant {
        RewardVariant::Lso => RewardValue::Scalar(ok as u8 as f64),
        // Credited to the chosen referent as conditioning target.
        RewardVariant::PosOnly => RewardValue::Scalar(1.0),
        RewardVariant::Ppl if ok => RewardValue::Scalar(1.0),
        RewardVariant::Ppl => RewardValue::Scalar(match scale {
            PplScale::Probability => ppl_reward(ex.prob(policy, ex.chosen), ex.prob(policy, ex.target)),
            PplScale::LogProbability => (ex.logp(policy, ex.chosen) - ex.logp(policy, ex.target)).clamp(-1.0, 1.0),
        }),
        RewardVariant::Contrastive if ok => RewardValue::Paired {
            raise: ex.target,
            lower: ex.target,
        },
        RewardVariant::Contrastive => RewardValue::Paired {
            raise: ex.chosen,
            lower: ex.target,
        },
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub mean_reward: f64,
    /// Fraction of example-steps whose importance ratio was clipped.
    pub clip_fraction: f64,
    /// Mean `log p_old − log p_new` over examples after the update.
    pub kl_to_old: f64,
    pub examples: usize,
    pub skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn axpy(acc: &mut [f64; FEATURE_DIM], a: f64, g: &[f64; FEATURE_DIM]) {
    for k in 0..FEATURE_DIM {
        acc[k] += a * g[k];
    }
}

fn apply(policy: &mut SpeakerPolicy, lr: f64, grad: &[f64; FEATURE_DIM], n: usize) {
    if n == 0 {
        return;
    }
    for (w, g) in policy.weights.iter_mut().zip(grad) {
        *w += lr * g / n as f64;
    }
}

fn batches(n: usize, cfg: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream_indexed(cfg.seed, "train-order", epoch as u64));
    order.chunks(cfg.batch_size).map(|c| c.to_vec()).collect()
}

/// Clipped importance-weighted surrogate ascent for LSO, POS_ONLY and PPL.
///
/// The conditioning referent is the target except for POS_ONLY, which uses
/// the listener's choice; its old log-probability is recomputed under the
/// incoming policy. PPL failure rewards are recomputed under the policy being
/// trained unless frozen; see [`PplObjective`] for how they enter the update.
pub fn update_offline(
    policy: &SpeakerPolicy,
    examples: &[Example],
    variant: RewardVariant,
    cfg: &TrainConfig,
) -> Result<(SpeakerPolicy, UpdateDiagnostics), LearnError> {
    cfg.validate()?;
    if variant == RewardVariant::Contrastive {
        return Err(LearnError::WrongVariant(variant));
    }
    let cond = |ex: &Example| if variant == RewardVariant::PosOnly { ex.chosen } else { ex.target };
    let old: Vec<f64> = examples
        .iter()
        .map(|ex| match (variant, ex.old_logp) {
            (RewardVariant::PosOnly, _) => Ok(ex.logp(policy, ex.chosen)),
            (_, Some(l)) => Ok(l),
            (_, None) => Err(LearnError::MissingLogp(ex.episode_id)),
        })
        .collect::<Result<_, _>>()?;
    let frozen: Vec<f64> = examples
        .iter()
        .map(|ex| match reward_scaled(variant, ex, policy, cfg.ppl_scale) {
            RewardValue::Scalar(r) => r,
            RewardValue::Paired { .. } => unreachable!(),
        })
        .collect();
    let mut diag = UpdateDiagnostics {
        examples: examples.len(),
        mean_reward: frozen.iter().sum::<f64>() / examples.len().max(1) as f64,
        ..Default::default()
    };
    if examples.is_empty() || frozen.iter().all(|r| *r == 0.0) {
        diag.warning = Some("degenerate dataset: every reward is zero, policy unchanged".into());
        return Ok((policy.clone(), diag));
    }
    let mean_reward = diag.mean_reward;
    // Collection-policy log-probability of x under the chosen referent, the
    // anchor of the preference objective's second trust region.
    let old_hat: Vec<f64> = examples.iter().map(|ex| ex.logp(policy, ex.chosen)).collect();
    let mut theta = policy.clone();
    let mut ema = mean_reward;
    let (mut clipped, mut steps) = (0usize, 0usize);
    let eps = cfg.clip_epsilon;
    for epoch in 0..cfg.epochs {
        for batch in batches(examples.len(), cfg, epoch) {
            let mut grad = [0.0; FEATURE_DIM];
            for &i in &batch {
                let ex = &examples[i];
                let c = cond(ex);
                let ppl_failure = variant == RewardVariant::Ppl && !ex.success();
                let r = if ppl_failure && !cfg.ppl_freeze {
                    match reward_scaled(variant, ex, &theta, cfg.ppl_scale) {
                        RewardValue::Scalar(r) => r,
                        RewardValue::Paired { .. } => unreachable!(),
                    }
                } else {
                    frozen[i]
                };
                steps += 1;
                if ppl_failure && cfg.ppl_objective == PplObjective::Preference {
                    // Ascend p(x|t̂) − p(x|t) directly, each side within its
                    // own trust region around the collection policy.
                    let (w_hat, w_t) = match cfg.ppl_scale {
                        PplScale::Probability => (ex.prob(&theta, ex.chosen), ex.prob(&theta, ex.target)),
                        PplScale::LogProbability => (1.0, 1.0),
                    };
                    let ratio_hat = (ex.logp(&theta, ex.chosen) - old_hat[i]).exp();
                    let ratio_t = (ex.logp(&theta, ex.target) - old[i]).exp();
                    if ratio_hat < 1.0 + eps {
                        axpy(&mut grad, w_hat, &ex.grad_logp(&theta, ex.chosen).0);
                    } else {
                        clipped += 1;
                    }
                    if ratio_t > 1.0 - eps {
                        axpy(&mut grad, -w_t, &ex.grad_logp(&theta, ex.target).0);
                    }
                } else {
                    let b = match cfg.baseline {
                        Baseline::None => 0.0,
                        Baseline::Mean => mean_reward,
                        Baseline::MovingAverage => ema,
                    };
                    ema = 0.9 * ema + 0.1 * r;
                    let adv = r - b;
                    let ratio = (ex.logp(&theta, c) - old[i]).exp();
                    // min(ratio·A, clip(ratio)·A) has zero gradient once the
                    // ratio leaves the trust region in A's direction.
                    if (adv > 0.0 && ratio > 1.0 + eps) || (adv < 0.0 && ratio < 1.0 - eps) {
                        clipped += 1;
                    } else {
                        axpy(&mut grad, ratio * adv, &ex.grad_logp(&theta, c).0);
                    }
                }
                if cfg.entropy_bonus > 0.0 {
                    axpy(&mut grad, cfg.entropy_bonus, &ex.grad_entropy(&theta, c));
                }
            }
            apply(&mut theta, cfg.learning_rate, &grad, batch.len());
        }
    }
    diag.clip_fraction = clipped as f64 / steps.max(1) as f64;
    diag.kl_to_old = examples
        .iter()
        .zip(&old)
        .map(|(ex, o)| o - ex.logp(&theta, cond(ex)))
        .sum::<f64>()
        / examples.len() as f64;
    Ok((theta, diag))
}

/// Successes raise `log p(x|t)`; failures raise `log p(x|t̂)` and lower
/// `log p(x|t)` by the same step.
pub fn update_contrastive(
    policy: &SpeakerPolicy,
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<(SpeakerPolicy, UpdateDiagnostics), LearnError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(LearnError::Empty);
    }
    let mut theta = policy.clone();
    for epoch in 0..cfg.epochs {
        for batch in batches(examples.len(), cfg, epoch) {
            let mut grad = [0.0; FEATURE_DIM];
            for &i in &batch {
                let ex = &examples[i];
                match reward(RewardVariant::Contrastive, ex, &theta) {
                    RewardValue::Paired { raise, lower } if raise == lower => {
                        axpy(&mut grad, 1.0, &ex.grad_logp(&theta, raise).0);
                    }
                    RewardValue::Paired { raise, lower } => {
                        axpy(&mut grad, 1.0, &ex.grad_logp(&theta, raise).0);
                        axpy(&mut grad, -1.0, &ex.grad_logp(&theta, lower).0);
                    }
                    RewardValue::Scalar(_) => unreachable!(),
                }
                if cfg.entropy_bonus > 0.0 {
                    axpy(&mut grad, cfg.entropy_bonus, &ex.grad_entropy(&theta, ex.target));
                }
            }
            apply(&mut theta, cfg.learning_rate, &grad, batch.len());
        }
    }
    let diag = UpdateDiagnostics {
        mean_reward: examples.iter().filter(|e| e.success()).count() as f64 / examples.len() as f64,
        kl_to_old: examples
            .iter()
            .map(|ex| ex.logp(policy, ex.target) - ex.logp(&theta, ex.target))
            .sum::<f64>()
            / examples.len() as f64,
        examples: examples.len(),
        ..Default::default()
    };
    Ok((theta, diag))
}

/// A reference written for `chosen` in a scene, e.g. by a human.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledReference {
    pub scene_id: String,
    pub text: String,
    pub chosen_index: usize,
}

/// Maximizes `log p(x | t̂)` of each labeled text that parses exactly into a
/// candidate of its scene. Fallback parses and unparseable texts are skipped.
pub fn imitate(
    policy: &SpeakerPolicy,
    labeled: &[LabeledReference],
    contexts: &HashMap<String, SpeakerContext>,
    cfg: &TrainConfig,
) -> Result<(SpeakerPolicy, UpdateDiagnostics), LearnError> {
    cfg.validate()?;
    let examples: Vec<Example> = labeled
        .iter()
        .filter_map(|l| {
            let parsed = parse(&l.text).ok().filter(|p| p.confidence == Confidence::Exact)?;
            let ctx = contexts.get(&l.scene_id)?;
            let u = ctx.index_of(&parsed.ast)?;
            (l.chosen_index < ctx.n_referents()).then(|| Example {
                episode_id: 0,
                u,
                target: l.chosen_index,
                chosen: l.chosen_index,
                old_logp: None,
                feats_target: ctx.feature_matrix(l.chosen_index),
                feats_chosen: Vec::new(),
            })
        })
        .collect();
    let mut diag = UpdateDiagnostics {
        examples: examples.len(),
        skipped: labeled.len() - examples.len(),
        ..Default::default()
    };
    if examples.is_empty() {
        if !labeled.is_empty() {
            diag.warning = Some("no labeled text parsed into a candidate utterance, policy unchanged".into());
        }
        return Ok((policy.clone(), diag));
    }
    let mut theta = policy.clone();
    for epoch in 0..cfg.epochs {
        for batch in batches(examples.len(), cfg, epoch) {
            let mut grad = [0.0; FEATURE_DIM];
            for &i in &batch {
                axpy(&mut grad, 1.0, &examples[i].grad_logp(&theta, examples[i].target).0);
            }
            apply(&mut theta, cfg.learning_rate, &grad, batch.len());
        }
    }
    diag.mean_reward = examples.iter().map(|e| e.logp(&theta, e.target)).sum::<f64>() / examples.len() as f64;
    Ok((theta, diag))
}

/// Trains one variant end to end from a collected dataset.
pub fn train_variant(
    policy: &SpeakerPolicy,
    examples: &[Example],
    variant: RewardVariant,
    cfg: &TrainConfig,
) -> Result<(SpeakerPolicy, UpdateDiagnostics), LearnError> {
    match variant {
        RewardVariant::Contrastive => update_contrastive(policy, examples, cfg),
        v => update_offline(policy, examples, v, cfg),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyEval {
    /// Per-scene success of the greedy utterance, in scene order.
    pub successes: Vec<u8>,
    pub success_rate: f64,
    pub mean_tokens: f64,
}

/// Greedy speaker against the listener on each scene, one selection each.
pub fn evaluate_greedy(policy: &SpeakerPolicy, listener: &ListenerAgent, scenes: &[(Scene, SpeakerContext)]) -> GreedyEval {
    let rows: Vec<(u8, usize)> = scenes
        .par_iter()
        .map(|(scene, ctx)| {
            let u = policy.greedy(ctx, scene.target_index);
            let utt = &ctx.utterances[u];
            let ok = listener
                .select(scene, &ctx.listener_view, &utt.text, 0)
                .map(|s| (s.chosen == scene.target_index) as u8)
                .unwrap_or(0);
            (ok, utt.tokens())
        })
        .collect();
    let n = rows.len().max(1) as f64;
    GreedyEval {
        success_rate: rows.iter().map(|r| r.0 as f64).sum::<f64>() / n,
        mean_tokens: rows.iter().map(|r| r.1 as f64).sum::<f64>() / n,
        successes: rows.into_iter().map(|r| r.0).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(success: bool) -> Example {
        let mut a = [0.0; FEATURE_DIM];
        a[0] = 1.0;
        let mut b = [0.0; FEATURE_DIM];
        b[11] = 1.0;
        Example {
            episode_id: 0,
            u: 0,
            target: 0,
            chosen: if success { 0 } else { 1 },
            old_logp: Some(0.5f64.ln()),
            feats_target: vec![a, b],
            feats_chosen: vec![b, a],
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in RewardVariant::ALL {
            assert_eq!(v.as_str().parse::<RewardVariant>().unwrap(), v);
        }
        assert_eq!("pos".parse::<RewardVariant>().unwrap(), RewardVariant::PosOnly);
    }

    #[test]
    fn ppl_formula() {
        assert!((ppl_reward(0.30, 0.10) - 0.20).abs() < 1e-12);
        assert_eq!(ppl_reward(0.30, 0.10), -ppl_reward(0.10, 0.30));
    }

    #[test]
    fn zero_step_is_identity() {
        let p = SpeakerPolicy::default();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let (q, _) = update_offline(&p, &[toy(true), toy(false)], RewardVariant::Lso, &cfg).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn contrastive_single_failure_moves_preference() {
        let p = SpeakerPolicy::default();
        let ex = toy(false);
        let before = ex.prob(&p, 1) - ex.prob(&p, 0);
        let cfg = TrainConfig {
            epochs: 1,
            entropy_bonus: 0.0,
            ..Default::default()
        };
        let (q, _) = update_contrastive(&p, std::slice::from_ref(&ex), &cfg).unwrap();
        assert!(ex.prob(&q, 1) - ex.prob(&q, 0) > before);
    }
}
