//! Speaker and listener agents: the oracle and parametric template
//! speakers, the rule-based listener, the external HTTP adapter, and the
//! episode record they produce.

use std::time::{Duration, Instant};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{figure_visible_fraction, Pose, Role, Vec3};
use crate::language::{
    self, enumerate_utterances, parse, resolve, Anchor, Confidence, ExpressionAst, Frame, Parsed, ResolveInput,
    Strategy, Utterance, UtteranceSource, DEFAULT_KAPPA,
};
use crate::render::{self, agent_view_in, AgentView, RenderConfig};
use crate::rng;
use crate::scenegen::{PlacementMode, Scene};

pub const FEATURE_DIM: usize = 12;
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "margin",
    "strategy_referent",
    "strategy_landmark",
    "strategy_listener",
    "strategy_speaker",
    "anchor_vis_speaker",
    "anchor_vis_listener",
    "fov_overlap",
    "psi_prime",
    "speaker_target_dist",
    "listener_target_dist",
    "tokens",
];
pub const SPEAKER_SCHEMA_VERSION: u32 = 1;

pub type Features = [f64; FEATURE_DIM];

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("external agent request failed: {0}")]
    Io(String),
    #[error("external agent response unusable: {0}")]
    Protocol(String),
    #[error("human agents act through the interactive service")]
    Interactive,
    #[error("target index {0} out of range")]
    BadTarget(usize),
    #[error("no candidate utterances")]
    NoCandidates,
    #[error(transparent)]
    Render(#[from] render::RenderError),
}

impl AgentError {
    /// Failures that mark an episode as failed-io.
    pub fn is_io(&self) -> bool {
        matches!(self, AgentError::Io(_) | AgentError::Protocol(_))
    }
}

pub fn success(target: usize, chosen: usize) -> u8 {
    (target == chosen) as u8
}

/// Both agents' views of a scene.
#[derive(Clone, Debug)]
pub struct Perception {
    pub speaker: AgentView,
    pub listener: AgentView,
    /// Fraction of the listener figure's probe points the speaker sees.
    pub speaker_sees_listener: f64,
    pub listener_sees_speaker: f64,
}

impl Perception {
    pub fn of(scene: &Scene) -> Self {
        let world = scene.world();
        Self {
            speaker: agent_view_in(scene, &world, Role::Speaker),
            listener: agent_view_in(scene, &world, Role::Listener),
            speaker_sees_listener: figure_visible_fraction(&world, &scene.speaker_pose, Role::Speaker, &scene.listener_pose),
            listener_sees_speaker: figure_visible_fraction(&world, &scene.listener_pose, Role::Listener, &scene.speaker_pose),
        }
    }
}

/// Per-scene cache: candidate utterances, the noise-free listener
/// resolution of each, and the target-independent features.
#[derive(Clone, Debug)]
pub struct SpeakerContext {
    pub scene_id: String,
    pub utterances: Vec<Utterance>,
    /// `resolution[u][i]`: listener probability of referent `i` for utterance `u`.
    pub resolution: Vec<Vec<f64>>,
    anchor_vis: Vec<(f64, f64)>,
    fov_overlap: f64,
    psi_prime: f64,
    target_dist: Vec<(f64, f64)>,
    pub listener_view: AgentView,
    pub speaker_view: AgentView,
}

impl SpeakerContext {
    pub fn new(scene: &Scene) -> Self {
        Self::with_perception(scene, &Perception::of(scene), scene.achieved.fov_overlap, 10.0)
    }

    pub fn with_perception(scene: &Scene, perception: &Perception, fov_overlap: f64, d_max: f64) -> Self {
        let utterances = enumerate_utterances(scene, &perception.speaker);
        let centers: Vec<Vec3> = scene.referents.iter().map(|r| r.center()).collect();
        let input = ResolveInput::for_listener(scene, &perception.listener, &centers, DEFAULT_KAPPA);
        let resolution = utterances
            .iter()
            .map(|u| resolve(u.ast.as_ref().expect("template utterance"), &input))
            .collect();
        let mean_frac = |v: &AgentView| {
            v.referents.iter().map(|r| r.visible_fraction).sum::<f64>() / v.referents.len().max(1) as f64
        };
        let anchor_vis = utterances
            .iter()
            .map(|u| {
                let ast = u.ast.as_ref().unwrap();
                match ast.anchor {
                    Anchor::Landmark(c) => (
                        perception.speaker.landmark_fraction(c),
                        perception.listener.landmark_fraction(c),
                    ),
                    Anchor::OtherReferents => (mean_frac(&perception.speaker), mean_frac(&perception.listener)),
                    Anchor::SelfAgent => (1.0, perception.listener_sees_speaker),
                    Anchor::Partner => (perception.speaker_sees_listener, 1.0),
                    Anchor::None => match ast.frame {
                        Frame::Speaker => (1.0, perception.listener_sees_speaker),
                        _ => (perception.speaker_sees_listener, 1.0),
                    },
                }
            })
            .collect();
        let target_dist = centers
            .iter()
            .map(|c| {
                (
                    c.distance(scene.speaker_pose.position) / d_max,
                    c.distance(scene.listener_pose.position) / d_max,
                )
            })
            .collect();
        Self {
            scene_id: scene.scene_id.clone(),
            utterances,
            resolution,
            anchor_vis,
            fov_overlap,
            psi_prime: scene.psi_prime(),
            target_dist,
            listener_view: perception.listener.clone(),
            speaker_view: perception.speaker.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn n_referents(&self) -> usize {
        self.target_dist.len()
    }

    /// `p_t − max_{j≠t} p_j` under the noise-free listener.
    pub fn margin(&self, u: usize, t: usize) -> f64 {
        let p = &self.resolution[u];
        let other = p
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != t)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        p[t] - if other.is_finite() { other } else { 0.0 }
    }

    pub fn features(&self, u: usize, t: usize) -> Features {
        let ast = self.utterances[u].ast.as_ref().unwrap();
        let mut f = [0.0; FEATURE_DIM];
        f[0] = self.margin(u, t);
        f[1 + ast.strategy.index()] = 1.0;
        f[5] = self.anchor_vis[u].0;
        f[6] = self.anchor_vis[u].1;
        f[7] = self.fov_overlap;
        f[8] = self.psi_prime / 180.0;
        f[9] = self.target_dist[t].0;
        f[10] = self.target_dist[t].1;
        f[11] = self.utterances[u].tokens() as f64 / 20.0;
        f
    }

    pub fn feature_matrix(&self, t: usize) -> Vec<Features> {
        (0..self.len()).map(|u| self.features(u, t)).collect()
    }

    /// Index of an utterance with this AST, if enumerated.
    pub fn index_of(&self, ast: &ExpressionAst) -> Option<usize> {
        self.utterances.iter().position(|u| u.ast.as_ref() == Some(ast))
    }

    /// Maximum-margin utterance for `t`; ties go to the lower index.
    pub fn oracle_choice(&self, t: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for u in 0..self.len() {
            let m = self.margin(u, t);
            if m > best.1 + 1e-12 {
                best = (u, m);
            }
        }
        best.0
    }
}

/// Log-linear speaker over template utterances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerPolicy {
    pub weights: Vec<f64>,
    pub temperature: f64,
}

impl Default for SpeakerPolicy {
    fn default() -> Self {
        Self {
            weights: vec![0.0; FEATURE_DIM],
            temperature: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpeakerCheckpoint {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    pub policy: SpeakerPolicy,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl SpeakerPolicy {
    pub fn new(weights: Vec<f64>, temperature: f64) -> Self {
        assert_eq!(weights.len(), FEATURE_DIM, "speaker weight dimension");
        Self { weights, temperature }
    }

    /// Only the margin feature is weighted.
    pub fn margin_only(weight: f64) -> Self {
        let mut w = vec![0.0; FEATURE_DIM];
        w[0] = weight;
        Self::new(w, 1.0)
    }

    /// A weak but reasonable starting speaker: scaled margin weight plus
    /// seeded noise and a preference for long utterances.
    pub fn degraded(seed: u64) -> Self {
        let mut rng = rng::stream(seed, "degraded-speaker");
        let mut w: Vec<f64> = (0..FEATURE_DIM)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.5)
            .collect();
        w[0] = 1.5 + rng.random_range(-0.25..0.25);
        w[11] = 8.0 + rng.random_range(-0.5..0.5);
        Self::new(w, 1.0)
    }

    pub fn logits(&self, feats: &[Features]) -> Vec<f64> {
        let t = self.temperature.max(1e-12);
        feats
            .iter()
            .map(|f| f.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() / t)
            .collect()
    }

    pub fn distribution_from(&self, feats: &[Features]) -> Vec<f64> {
        softmax(&self.logits(feats))
    }

    /// `p_S(· | scene, t)` over the context's utterances.
    pub fn distribution(&self, ctx: &SpeakerContext, t: usize) -> Vec<f64> {
        self.distribution_from(&ctx.feature_matrix(t))
    }

    pub fn greedy(&self, ctx: &SpeakerContext, t: usize) -> usize {
        argmax_low(&self.logits(&ctx.feature_matrix(t)))
    }

    pub fn log_prob(&self, ctx: &SpeakerContext, t: usize, u: usize) -> f64 {
        log_softmax(&self.logits(&ctx.feature_matrix(t)))[u]
    }

    pub fn checkpoint(&self, metadata: serde_json::Value) -> SpeakerCheckpoint {
        SpeakerCheckpoint {
            schema_version: SPEAKER_SCHEMA_VERSION,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            policy: self.clone(),
            metadata,
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![1.0 / logits.len() as f64; logits.len()];
    }
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
    logits.iter().map(|x| x - z).collect()
}

/// Index of the maximum; ties go to the lower index.
pub fn argmax_low(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seed")]
pub enum Decode {
    Greedy,
    Sample(u64),
}

pub const SPEAKER_PROMPT: &str = "You are looking at a room with several balls. One ball is blue; the others are red. \
Another person is visible in the scene and cannot tell the colors of the balls apart. \
Write one short description of where the blue ball is so that this person can pick it out. \
Reply with the description only.";

pub const LISTENER_PROMPT: &str = "You are looking at a room with several identical balls, and a description written by \
another person in the scene about one of them. Decide which ball the description refers to. \
Choose from the following bounding boxes, given as normalized [x0, y0, x1, y1] image coordinates, \
and answer with the chosen box in the format: Bounding box coordinates: [x0, y0, x1, y1]. \
Then explain your reasoning.";

/// HTTP adapter to an external speaker or listener model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalAgent {
    pub id: String,
    pub endpoint: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_external_render")]
    pub render: RenderConfig,
}

fn default_timeout() -> u64 {
    30_000
}

fn default_external_render() -> RenderConfig {
    RenderConfig::default()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpeakRequest {
    pub scene_id: String,
    pub image: String,
    pub prompt: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpeakResponse {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectRequest {
    pub scene_id: String,
    pub image: String,
    pub text: String,
    pub boxes: Vec<[f64; 4]>,
    pub prompt: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectResponse {
    #[serde(default, rename = "box")]
    pub bbox: Option<[f64; 4]>,
    #[serde(default)]
    pub reasoning: String,
}

impl ExternalAgent {
    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(&self, path: &str, body: &Req) -> Result<Resp, AgentError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(self.timeout_ms)))
            .build()
            .into();
        let url = format!("{}/{}", self.endpoint.trim_end_matches('/'), path);
        let mut resp = agent.post(&url).send_json(body).map_err(|e| AgentError::Io(e.to_string()))?;
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| AgentError::Protocol(e.to_string()))
    }

    fn image(&self, scene: &Scene, role: Role) -> Result<(String, render::Observation), AgentError> {
        use base64::Engine as _;
        let obs = render::render_observation(scene, role, &self.render);
        let png = obs.to_png()?;
        Ok((base64::engine::general_purpose::STANDARD.encode(png), obs))
    }

    pub fn speak(&self, scene: &Scene) -> Result<String, AgentError> {
        let (image, _) = self.image(scene, Role::Speaker)?;
        let resp: SpeakResponse = self.post(
            "speak",
            &SpeakRequest {
                scene_id: scene.scene_id.clone(),
                image,
                prompt: SPEAKER_PROMPT.into(),
            },
        )?;
        let text = resp.text.trim().to_string();
        if text.is_empty() {
            return Err(AgentError::Protocol("empty speaker text".into()));
        }
        Ok(text)
    }

    pub fn select(&self, scene: &Scene, text: &str) -> Result<usize, AgentError> {
        let (image, obs) = self.image(scene, Role::Listener)?;
        let (w, h) = (obs.width as f64, obs.height as f64);
        let mut cands: Vec<(usize, [f64; 4])> = obs
            .referents()
            .map(|e| (e.index.unwrap(), [e.bbox[0] / w, e.bbox[1] / h, e.bbox[2] / w, e.bbox[3] / h]))
            .collect();
        cands.sort_by_key(|c| c.0);
        if cands.is_empty() {
            return Err(AgentError::Render(render::RenderError::NoVisibleReferents));
        }
        let resp: SelectResponse = self.post(
            "select",
            &SelectRequest {
                scene_id: scene.scene_id.clone(),
                image,
                text: text.into(),
                boxes: cands.iter().map(|c| c.1).collect(),
                prompt: LISTENER_PROMPT.into(),
            },
        )?;
        let bbox = resp
            .bbox
            .or_else(|| box_in_text(&resp.reasoning))
            .ok_or_else(|| AgentError::Protocol("no bounding box in listener response".into()))?;
        let boxes: Vec<[f64; 4]> = cands.iter().map(|c| c.1).collect();
        Ok(cands[match_box(&bbox, &boxes)].0)
    }
}

/// Last `[a, b, c, d]` list of numbers in free text.
pub fn box_in_text(text: &str) -> Option<[f64; 4]> {
    let mut found = None;
    for (start, _) in text.match_indices('[') {
        let Some(end) = text[start..].find(']') else { continue };
        let nums: Vec<f64> = text[start + 1..start + end]
            .split(',')
            .filter_map(|s| s.trim().parse().ok())
            .collect();
        if nums.len() == 4 {
            found = Some([nums[0], nums[1], nums[2], nums[3]]);
        }
    }
    found
}

pub fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area = |r: &[f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Candidate whose center is nearest the returned box's center; equal
/// distances are broken by larger IoU, then lower index.
pub fn match_box(bbox: &[f64; 4], candidates: &[[f64; 4]]) -> usize {
    let center = |r: &[f64; 4]| ((r[0] + r[2]) * 0.5, (r[1] + r[3]) * 0.5);
    let c = center(bbox);
    let mut best = 0;
    let mut best_key = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, cand) in candidates.iter().enumerate() {
        let cc = center(cand);
        let d = (cc.0 - c.0).hypot(cc.1 - c.1);
        let iou = box_iou(bbox, cand);
        if d < best_key.0 - 1e-12 || ((d - best_key.0).abs() <= 1e-12 && iou > best_key.1) {
            best = i;
            best_key = (d, iou);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SpeakerAgent {
    /// Picks the utterance with the largest listener margin.
    Oracle,
    Parametric { id: String, policy: SpeakerPolicy },
    External(ExternalAgent),
    Human,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spoken {
    pub utterance: Utterance,
    /// Index into the context's candidates for template speakers.
    pub index: Option<usize>,
    pub old_logp: Option<f64>,
    pub duration_ms: f64,
}

impl SpeakerAgent {
    pub fn id(&self) -> String {
        match self {
            SpeakerAgent::Oracle => "oracle".into(),
            SpeakerAgent::Parametric { id, .. } => id.clone(),
            SpeakerAgent::External(e) => e.id.clone(),
            SpeakerAgent::Human => "human".into(),
        }
    }

    pub fn speak(&self, scene: &Scene, ctx: &SpeakerContext, t: usize, decode: Decode) -> Result<Spoken, AgentError> {
        if t >= scene.referents.len() {
            return Err(AgentError::BadTarget(t));
        }
        let start = Instant::now();
        let template = |u: usize, logp: Option<f64>| Spoken {
            utterance: ctx.utterances[u].clone(),
            index: Some(u),
            old_logp: logp,
            duration_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if ctx.is_empty() && !matches!(self, SpeakerAgent::External(_) | SpeakerAgent::Human) {
            return Err(AgentError::NoCandidates);
        }
        match self {
            SpeakerAgent::Oracle => Ok(template(ctx.oracle_choice(t), None)),
            SpeakerAgent::Parametric { policy, .. } => {
                let logits = policy.logits(&ctx.feature_matrix(t));
                let logp = log_softmax(&logits);
                let u = match decode {
                    Decode::Greedy => argmax_low(&logits),
                    Decode::Sample(seed) => {
                        let mut r = rng::stream_indexed(seed, &ctx.scene_id, t as u64);
                        sample_index(&softmax(&logits), r.random::<f64>())
                    }
                };
                Ok(template(u, Some(logp[u])))
            }
            SpeakerAgent::External(ext) => {
                let text = ext.speak(scene)?;
                let ast = parse(&text).ok().filter(|p| p.confidence == Confidence::Exact).map(|p| p.ast);
                Ok(Spoken {
                    utterance: Utterance {
                        ast,
                        text,
                        features: Vec::new(),
                        source: UtteranceSource::External,
                    },
                    index: None,
                    old_logp: None,
                    duration_ms: start.elapsed().as_secs_f64() * 1e3,
                })
            }
            SpeakerAgent::Human => Err(AgentError::Interactive),
        }
    }
}

/// Inverse-CDF draw from a probability vector with uniform `x ∈ [0, 1)`.
pub fn sample_index(p: &[f64], x: f64) -> usize {
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if x < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Listener that parses the text and resolves it geometrically from its
/// own, slightly noisy, perception of where the balls are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleListener {
    pub kappa: f64,
    /// Relative standard deviation of perceived distance.
    pub depth_noise: f64,
    /// Standard deviation of perceived bearing, degrees.
    pub bearing_noise_deg: f64,
    pub seed: u64,
}

impl Default for RuleListener {
    fn default() -> Self {
        Self {
            kappa: DEFAULT_KAPPA,
            depth_noise: 0.08,
            bearing_noise_deg: 2.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub chosen: usize,
    pub distribution: Option<Vec<f64>>,
    pub parse: Option<Confidence>,
    pub ast: Option<ExpressionAst>,
    pub duration_ms: f64,
}

impl RuleListener {
    pub fn noiseless() -> Self {
        Self {
            depth_noise: 0.0,
            bearing_noise_deg: 0.0,
            ..Self::default()
        }
    }

    /// Referent centers as this listener perceives them on one play.
    pub fn perceive(&self, scene: &Scene, replicate: u64) -> Vec<Vec3> {
        let pose: &Pose = &scene.listener_pose;
        let mut r = rng::stream_indexed(rng::derive(self.seed, &scene.scene_id), "perception", replicate);
        let (f, right, up) = pose.basis();
        scene
            .referents
            .iter()
            .map(|ref_| {
                let c = pose.to_camera(ref_.center());
                let range = c.x.hypot(c.z);
                let bearing = c.x.atan2(c.z);
                let e1: f64 = r.sample(rand_distr::StandardNormal);
                let e2: f64 = r.sample(rand_distr::StandardNormal);
                let range = range * (1.0 + self.depth_noise * e1).max(0.05);
                let bearing = bearing + (self.bearing_noise_deg * e2).to_radians();
                pose.position + right * (range * bearing.sin()) + up * c.y + f * (range * bearing.cos())
            })
            .collect()
    }

    pub fn select(&self, scene: &Scene, view: &AgentView, text: &str, replicate: u64) -> Selection {
        let start = Instant::now();
        let perceived = self.perceive(scene, replicate);
        let input = ResolveInput::for_listener(scene, view, &perceived, self.kappa);
        let (p, parsed) = language::resolve_text(text, &input);
        let mut r = rng::stream_indexed(rng::derive(self.seed, &scene.scene_id), "tie-break", replicate);
        let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..p.len()).filter(|&i| p[i] >= max - 1e-12).collect();
        let chosen = ties[r.random_range(0..ties.len())];
        let parsed: Option<Parsed> = parsed.ok();
        Selection {
            chosen,
            distribution: Some(p),
            parse: parsed.map(|x| x.confidence),
            ast: parsed.map(|x| x.ast),
            duration_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ListenerAgent {
    RuleBased { id: String, listener: RuleListener },
    External(ExternalAgent),
    Human,
}

impl ListenerAgent {
    pub fn rule_based(listener: RuleListener) -> Self {
        ListenerAgent::RuleBased {
            id: "rule".into(),
            listener,
        }
    }

    pub fn id(&self) -> String {
        match self {
            ListenerAgent::RuleBased { id, .. } => id.clone(),
            ListenerAgent::External(e) => e.id.clone(),
            ListenerAgent::Human => "human".into(),
        }
    }

    pub fn select(&self, scene: &Scene, view: &AgentView, text: &str, replicate: u64) -> Result<Selection, AgentError> {
        match self {
            ListenerAgent::RuleBased { listener, .. } => Ok(listener.select(scene, view, text, replicate)),
            ListenerAgent::External(ext) => {
                let start = Instant::now();
                let chosen = ext.select(scene, text)?;
                Ok(Selection {
                    chosen,
                    distribution: None,
                    parse: None,
                    ast: None,
                    duration_ms: start.elapsed().as_secs_f64() * 1e3,
                })
            }
            ListenerAgent::Human => Err(AgentError::Interactive),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Durations {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speak: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub select: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Automated,
    Human,
    External,
}

/// One play of the reference game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    #[serde(default)]
    pub episode_id: u64,
    pub scene_id: String,
    pub speaker_id: String,
    pub listener_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ast: Option<ExpressionAst>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_logp: Option<f64>,
    pub chosen_index: usize,
    pub target_index: usize,
    pub success: u8,
    pub durations_ms: Durations,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<PlacementMode>,
    #[serde(default)]
    pub replicate: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse: Option<Confidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listener_sees_speaker: Option<bool>,
    /// Timing was wall-clock on the server (human sessions) rather than compute time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl Episode {
    pub fn strategy(&self) -> Strategy {
        match self.ast {
            Some(a) => a.strategy,
            None => language::classify_text(&self.text).0,
        }
    }
}

/// Plays one speaker/listener round. Each `replicate` is an independent
/// listener judgment of the same utterance.
#[allow(clippy::too_many_arguments)]
pub fn play(
    scene: &Scene,
    ctx: &SpeakerContext,
    speaker: &SpeakerAgent,
    listener: &ListenerAgent,
    decode: Decode,
    replicates: u32,
) -> Result<Vec<Episode>, AgentError> {
    let t = scene.target_index;
    let spoken = speaker.speak(scene, ctx, t, decode)?;
    let provenance = match (speaker, listener) {
        (SpeakerAgent::External(_), _) | (_, ListenerAgent::External(_)) => Provenance::External,
        (SpeakerAgent::Human, _) | (_, ListenerAgent::Human) => Provenance::Human,
        _ => Provenance::Automated,
    };
    (0..replicates.max(1))
        .map(|rep| {
            let sel = listener.select(scene, &ctx.listener_view, &spoken.utterance.text, rep as u64)?;
            Ok(Episode {
                episode_id: 0,
                scene_id: scene.scene_id.clone(),
                speaker_id: speaker.id(),
                listener_id: listener.id(),
                text: spoken.utterance.text.clone(),
                ast: spoken.utterance.ast,
                old_logp: spoken.old_logp,
                chosen_index: sel.chosen,
                target_index: t,
                success: success(t, sel.chosen),
                // Compute time of in-process agents is not a response time;
                // leaving it out keeps collected datasets reproducible.
                durations_ms: if provenance == Provenance::Automated {
                    Durations::default()
                } else {
                    Durations {
                        speak: Some(spoken.duration_ms),
                        select: Some(sel.duration_ms),
                    }
                },
                provenance,
                mode: Some(scene.mode),
                replicate: rep,
                parse: sel.parse,
                listener_sees_speaker: Some(ctx.listener_view.partner_visible),
                session_id: None,
            })
        })
        .collect()
}
