//! Adversarial referent placement: a linear softmax policy over candidate
//! (referent set, target) tuples and its REINFORCE training loop against a
//! fixed speaker/listener pair.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Decode, ListenerAgent, Perception, SpeakerAgent, SpeakerContext};
use crate::geom::{mask_fraction, mask_iou, sphere_visibility_mask, Pose, Role, Sphere, Vec3};
use crate::language::azimuth_depth;
use crate::render::{AgentView, ReferentView};
use crate::rng;
use crate::scenegen::{
    draw_spaced, mutually_visible, Achieved, AgentPlacement, Environment, GenConfig, PlacementMode, Referent, Scene,
};

pub const SCHEMA_VERSION: u32 = 1;

pub const TUPLE_FEATURES: [&str; 8] = [
    "min_pair_dist",
    "mean_pair_dist",
    "min_vis_speaker",
    "mean_vis_speaker",
    "min_vis_listener",
    "mean_vis_listener",
    "frame_disagreement",
    "fov_overlap",
];
pub const TARGET_FEATURES: [&str; 4] = ["best_margin", "target_landmark_dist", "target_vis_speaker", "target_vis_listener"];

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("only {0} valid candidate tuples")]
    TooFewCandidates(usize),
    #[error("training diverged: failure rate fell from {initial:.3} to {latest:.3} (curve {curve:?})")]
    Diverged {
        initial: f64,
        latest: f64,
        curve: Vec<CurvePoint>,
    },
    #[error("empty training pool")]
    EmptyPool,
    #[error("feature schema mismatch")]
    Schema,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub failure_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdversaryMetadata {
    #[serde(default)]
    pub speaker_id: String,
    #[serde(default)]
    pub listener_id: String,
    #[serde(default)]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub curve: Vec<CurvePoint>,
}

/// Softmax over `w·tuple_features + v·target_features`, divided by the temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryPolicy {
    pub schema_version: u32,
    pub weights: Vec<f64>,
    pub target_weights: Vec<f64>,
    pub temperature: f64,
    #[serde(default)]
    pub metadata: AdversaryMetadata,
}

impl Default for AdversaryPolicy {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            weights: vec![0.0; TUPLE_FEATURES.len()],
            target_weights: vec![0.0; TARGET_FEATURES.len()],
            temperature: 1.0,
            metadata: AdversaryMetadata::default(),
        }
    }
}

impl AdversaryPolicy {
    pub fn check_schema(&self) -> Result<(), AdversaryError> {
        if self.schema_version != SCHEMA_VERSION
            || self.weights.len() != TUPLE_FEATURES.len()
            || self.target_weights.len() != TARGET_FEATURES.len()
        {
            return Err(AdversaryError::Schema);
        }
        Ok(())
    }

    fn score(&self, c: &Candidate) -> f64 {
        let t = self.temperature.max(1e-12);
        let a: f64 = self.weights.iter().zip(&c.tuple_features).map(|(w, f)| w * f).sum();
        let b: f64 = self.target_weights.iter().zip(&c.target_features).map(|(w, f)| w * f).sum();
        (a + b) / t
    }

    pub fn distribution(&self, set: &CandidateSet) -> Vec<f64> {
        crate::agents::softmax(&set.candidates.iter().map(|c| self.score(c)).collect::<Vec<_>>())
    }
}

/// One (referent tuple, target) option with per-set standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub tuple: usize,
    pub target: usize,
    pub tuple_features: Vec<f64>,
    pub target_features: Vec<f64>,
    pub raw_tuple_features: Vec<f64>,
    pub raw_target_features: Vec<f64>,
}

/// Candidate tuples for one placement, with the per-tuple scene and speaker
/// context needed to play them.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub tuples: Vec<Vec<Vec3>>,
    pub scenes: Vec<Scene>,
    pub contexts: Vec<SpeakerContext>,
    pub candidates: Vec<Candidate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub referents: Vec<Referent>,
    pub target: usize,
    pub log_prob: f64,
    pub candidates: usize,
}

fn pair_stats(points: &[Vec3]) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let (mut sum, mut k) = (0.0, 0usize);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = points[i].distance(points[j]);
            min = min.min(d);
            sum += d;
            k += 1;
        }
    }
    (if k == 0 { 0.0 } else { min }, if k == 0 { 0.0 } else { sum / k as f64 })
}

/// Referents whose side (left or right of the group's mean bearing) differs
/// between the speaker's and the listener's view.
pub fn frame_disagreement(points: &[Vec3], speaker: &Pose, listener: &Pose) -> usize {
    let side = |pose: &Pose| -> Vec<f64> {
        let az: Vec<f64> = points.iter().map(|p| azimuth_depth(pose, *p).0).collect();
        let mean = az.iter().sum::<f64>() / az.len().max(1) as f64;
        az.into_iter().map(|a| a - mean).collect()
    };
    let s = side(speaker);
    let l = side(listener);
    s.iter().zip(&l).filter(|(a, b)| a.signum() != b.signum()).count()
}

fn standardize(rows: &mut [Vec<f64>]) {
    let Some(dim) = rows.first().map(Vec::len) else { return };
    let n = rows.len() as f64;
    for k in 0..dim {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for r in rows.iter_mut() {
            r[k] = if sd > 1e-9 { (r[k] - mean) / sd } else { 0.0 };
        }
    }
}

/// Samples up to `k` valid referent tuples from the viable set and builds
/// every (tuple, target) candidate with its features.
#[allow(clippy::too_many_arguments)]
pub fn candidate_set(
    env: &Environment,
    speaker: &Pose,
    listener: &Pose,
    viable: &[Vec3],
    seed: u64,
    k: usize,
    scene_prefix: &str,
    config: &GenConfig,
) -> CandidateSet {
    let mut rng = rng::stream(seed, "adversary-tuples");
    let mut tuples = Vec::new();
    for _ in 0..k * 4 {
        if tuples.len() >= k {
            break;
        }
        let Some(t) = draw_spaced(viable, config.n_referents, config.d_min, &mut rng) else {
            break;
        };
        if mutually_visible(env, speaker, listener, &t, config) {
            tuples.push(t);
        }
    }

    let base = Scene {
        scene_id: String::new(),
        seed,
        mode: PlacementMode::Adversarial,
        yaw_gap_target: crate::geom::relative_yaw(speaker.yaw, listener.yaw),
        env: env.clone(),
        speaker_pose: *speaker,
        listener_pose: *listener,
        referents: Vec::new(),
        target_index: 0,
        achieved: Achieved {
            psi_prime: crate::geom::relative_yaw(speaker.yaw, listener.yaw),
            fov_overlap: 0.0,
        },
        flags: Vec::new(),
    };
    // Landmark and partner visibility barely depend on three small balls.
    let base_perception = Perception::of(&base);

    let mut scenes = Vec::with_capacity(tuples.len());
    let mut contexts = Vec::with_capacity(tuples.len());
    let mut raw = Vec::new();
    for (ti, tuple) in tuples.iter().enumerate() {
        let mut scene = base.clone();
        scene.scene_id = format!("{scene_prefix}-c{ti:02}");
        scene.referents = tuple.iter().map(|c| Referent::new(*c, config.radius)).collect();
        let world = scene.world();
        let spheres: Vec<Sphere> = scene.spheres();
        let mut vis_s = Vec::new();
        let mut vis_l = Vec::new();
        let mut iou = 0.0;
        for s in &spheres {
            let a = sphere_visibility_mask(&world, speaker, Role::Speaker, s);
            let b = sphere_visibility_mask(&world, listener, Role::Listener, s);
            vis_s.push(mask_fraction(&a));
            vis_l.push(mask_fraction(&b));
            iou += mask_iou(&a, &b);
        }
        let fov = iou / spheres.len() as f64;
        scene.achieved.fov_overlap = fov;
        let with_refs = |v: &AgentView, fr: &[f64]| {
            let mut v = v.clone();
            v.referents = tuple
                .iter()
                .enumerate()
                .map(|(i, c)| ReferentView {
                    index: i,
                    camera_position: v.pose.to_camera(*c),
                    visible_fraction: fr[i],
                })
                .collect();
            v
        };
        let perception = Perception {
            speaker: with_refs(&base_perception.speaker, &vis_s),
            listener: with_refs(&base_perception.listener, &vis_l),
            ..base_perception.clone()
        };
        let ctx = SpeakerContext::with_perception(&scene, &perception, fov, config.d_max);
        let (min_d, mean_d) = pair_stats(tuple);
        let minf = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let meanf = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let tuple_raw = vec![
            min_d,
            mean_d,
            minf(&vis_s),
            meanf(&vis_s),
            minf(&vis_l),
            meanf(&vis_l),
            frame_disagreement(tuple, speaker, listener) as f64 / tuple.len() as f64,
            fov,
        ];
        for t in 0..tuple.len() {
            let best = (0..ctx.len()).map(|u| ctx.margin(u, t)).fold(f64::NEG_INFINITY, f64::max);
            let lm_dist = env
                .landmarks
                .iter()
                .map(|l| l.bbox.distance(tuple[t]))
                .fold(f64::INFINITY, f64::min)
                .min(config.d_max);
            raw.push((ti, t, tuple_raw.clone(), vec![best, lm_dist, vis_s[t], vis_l[t]]));
        }
        scenes.push(scene);
        contexts.push(ctx);
    }
    let mut tf: Vec<Vec<f64>> = raw.iter().map(|r| r.2.clone()).collect();
    let mut gf: Vec<Vec<f64>> = raw.iter().map(|r| r.3.clone()).collect();
    standardize(&mut tf);
    standardize(&mut gf);
    let candidates = raw
        .into_iter()
        .zip(tf.into_iter().zip(gf))
        .map(|((ti, t, rt, rg), (f, g))| Candidate {
            tuple: ti,
            target: t,
            tuple_features: f,
            target_features: g,
            raw_tuple_features: rt,
            raw_target_features: rg,
        })
        .collect();
    CandidateSet {
        tuples,
        scenes,
        contexts,
        candidates,
    }
}

fn draw(policy: &AdversaryPolicy, set: &CandidateSet, x: f64) -> (usize, f64) {
    let p = policy.distribution(set);
    let c = crate::agents::sample_index(&p, x);
    (c, p[c].ln())
}

/// Samples `k` valid candidate tuples, scores every (tuple, target) pair and
/// draws one. Fewer than two candidates is an error the caller handles.
#[allow(clippy::too_many_arguments)]
pub fn propose_placements(
    policy: &AdversaryPolicy,
    env: &Environment,
    speaker: &Pose,
    listener: &Pose,
    viable: &[Vec3],
    seed: u64,
    k: usize,
    config: &GenConfig,
) -> Result<Proposal, AdversaryError> {
    policy.check_schema()?;
    let set = candidate_set(env, speaker, listener, viable, seed, k, "proposal", config);
    if set.candidates.len() < 2 {
        return Err(AdversaryError::TooFewCandidates(set.candidates.len()));
    }
    let x: f64 = rng::stream(seed, "adversary-draw").random();
    let (c, log_prob) = draw(policy, &set, x);
    let cand = &set.candidates[c];
    Ok(Proposal {
        referents: set.tuples[cand.tuple].iter().map(|p| Referent::new(*p, config.radius)).collect(),
        target: cand.target,
        log_prob,
        candidates: set.candidates.len(),
    })
}

/// A pre-generated placement with its candidates and the fixed speaker's
/// utterance for each.
#[derive(Clone, Debug)]
pub struct PoolEntry {
    pub set: CandidateSet,
    pub texts: Vec<String>,
}

pub fn pool_entry(placement: &AgentPlacement, speaker: &SpeakerAgent, k: usize, config: &GenConfig) -> Option<PoolEntry> {
    let seed = rng::derive(placement.seed, "adversary");
    let prefix = crate::scenegen::scene_id(placement.seed, placement.yaw_gap_target, PlacementMode::Adversarial);
    let set = candidate_set(
        &placement.env,
        &placement.speaker,
        &placement.listener,
        &placement.viable,
        seed,
        k,
        &prefix,
        config,
    );
    if set.candidates.len() < 2 {
        return None;
    }
    let texts = set
        .candidates
        .iter()
        .map(|c| {
            speaker
                .speak(&set.scenes[c.tuple], &set.contexts[c.tuple], c.target, Decode::Greedy)
                .map(|s| s.utterance.text)
        })
        .collect::<Result<Vec<_>, _>>()
        .ok()?;
    Some(PoolEntry { set, texts })
}

impl PoolEntry {
    /// Plays candidate `c` once and reports success.
    pub fn play(&self, c: usize, listener: &ListenerAgent, replicate: u64) -> Option<bool> {
        let cand = &self.set.candidates[c];
        let mut scene = self.set.scenes[cand.tuple].clone();
        scene.target_index = cand.target;
        let ctx = &self.set.contexts[cand.tuple];
        let sel = listener.select(&scene, &ctx.listener_view, &self.texts[c], replicate).ok()?;
        Some(sel.chosen == cand.target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversaryTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Weight of history in the moving-average reward baseline.
    pub baseline_decay: f64,
    pub curve_every: usize,
    pub seed: u64,
    /// Abort if the failure rate stays this far below its initial value ...
    pub divergence_drop: f64,
    /// ... for this many consecutive steps.
    pub divergence_steps: usize,
}

impl Default for AdversaryTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.05,
            baseline_decay: 0.95,
            curve_every: 50,
            seed: 0,
            divergence_drop: 0.10,
            divergence_steps: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub mean_failure: f64,
    pub steps: usize,
}

/// REINFORCE on the failure rate of the fixed pair, with a moving-average
/// baseline. Deterministic for a given pool, listener and seed.
pub fn train_adversary(
    policy: &AdversaryPolicy,
    listener: &ListenerAgent,
    pool: &[PoolEntry],
    config: &AdversaryTrainConfig,
) -> Result<(AdversaryPolicy, TrainReport), AdversaryError> {
    policy.check_schema()?;
    let mut theta = policy.clone();
    if config.steps == 0 {
        return Ok((
            theta,
            TrainReport {
                curve: Vec::new(),
                mean_failure: 0.0,
                steps: 0,
            },
        ));
    }
    if pool.is_empty() {
        return Err(AdversaryError::EmptyPool);
    }
    let mut rng = rng::stream(config.seed, "adversary-train");
    let mut baseline: Option<f64> = None;
    let mut curve = Vec::new();
    let (mut window, mut window_n, mut total) = (0.0, 0usize, 0.0);
    let mut low_run = 0usize;
    let t = theta.temperature.max(1e-12);
    for step in 0..config.steps {
        let entry = &pool[rng.random_range(0..pool.len())];
        let p = theta.distribution(&entry.set);
        let c = crate::agents::sample_index(&p, rng.random());
        let replicate = rng::derive_indexed(config.seed, "adversary-replicate", step as u64);
        let failure = match entry.play(c, listener, replicate) {
            Some(ok) => (!ok) as u8 as f64,
            None => continue,
        };
        let b = baseline.unwrap_or(failure);
        let adv = failure - b;
        baseline = Some(config.baseline_decay * b + (1.0 - config.baseline_decay) * failure);
        if adv != 0.0 {
            let cand = &entry.set.candidates[c];
            let dim_w = theta.weights.len();
            let dim_v = theta.target_weights.len();
            let mut ew = vec![0.0; dim_w];
            let mut ev = vec![0.0; dim_v];
            for (pi, cj) in p.iter().zip(&entry.set.candidates) {
                for k in 0..dim_w {
                    ew[k] += pi * cj.tuple_features[k];
                }
                for k in 0..dim_v {
                    ev[k] += pi * cj.target_features[k];
                }
            }
            for k in 0..dim_w {
                theta.weights[k] += config.learning_rate * adv * (cand.tuple_features[k] - ew[k]) / t;
            }
            for k in 0..dim_v {
                theta.target_weights[k] += config.learning_rate * adv * (cand.target_features[k] - ev[k]) / t;
            }
        }
        window += failure;
        window_n += 1;
        total += failure;
        if (step + 1) % config.curve_every == 0 {
            let rate = window / window_n.max(1) as f64;
            curve.push(CurvePoint {
                step: step + 1,
                failure_rate: rate,
            });
            window = 0.0;
            window_n = 0;
            let initial = curve[0].failure_rate;
            if rate < initial - config.divergence_drop {
                low_run += config.curve_every;
                if low_run >= config.divergence_steps {
                    return Err(AdversaryError::Diverged {
                        initial,
                        latest: rate,
                        curve,
                    });
                }
            } else {
                low_run = 0;
            }
        }
    }
    theta.metadata.steps = policy.metadata.steps + config.steps;
    theta.metadata.seed = config.seed;
    theta.metadata.listener_id = listener.id();
    theta.metadata.curve = curve.clone();
    Ok((
        theta,
        TrainReport {
            curve,
            mean_failure: total / config.steps as f64,
            steps: config.steps,
        },
    ))
}
