//! End-to-end recipes shared by the CLI and the acceptance suite.

use std::collections::HashMap;

use embref_core::adversary::{
    pool_entry, train_adversary, AdversaryError, AdversaryPolicy, AdversaryTrainConfig, PoolEntry, TrainReport,
};
use embref_core::agents::{play, Decode, ListenerAgent, RuleListener, SpeakerAgent, SpeakerContext, SpeakerPolicy};
use embref_core::eval::{paired_significance, PairedTest};
use embref_core::learn::{
    bind_examples, collect_episodes, evaluate_greedy, train_variant, EpisodeDataset, GreedyEval, LearnError,
    RewardVariant, TrainConfig,
};
use embref_core::rng;
use embref_core::scenegen::{build_scene, build_scene_pair, sample_agent_placement, GenConfig, Placement, Scene};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Yaw gap used for the `i`-th scene of a sweep, cycling through 0..=180.
pub fn sweep_yaw(i: u64) -> f64 {
    (i * 37 % 181) as f64
}

pub fn rule_listener() -> ListenerAgent {
    ListenerAgent::rule_based(RuleListener::default())
}

/// Random-placement scenes with their speaker contexts. Seeds that fail to
/// generate are skipped.
pub fn scenes_with_contexts(base: u64, n: u64, config: &GenConfig) -> Vec<(Scene, SpeakerContext)> {
    (0..n)
        .into_par_iter()
        .filter_map(|i| build_scene(base + i, sweep_yaw(base + i), Placement::Random, config).ok())
        .map(|s| {
            let c = SpeakerContext::new(&s);
            (s, c)
        })
        .collect()
}

/// Agent placements scored by the oracle speaker for adversary training.
pub fn adversary_pool(seed: u64, n: u64, config: &GenConfig) -> Vec<PoolEntry> {
    (0..n)
        .into_par_iter()
        .filter_map(|i| {
            let p = sample_agent_placement(rng::derive_indexed(seed, "adversary-pool", i), sweep_yaw(i), config).ok()?;
            pool_entry(&p, &SpeakerAgent::Oracle, config.adversary_candidates, config)
        })
        .collect()
}

/// Trains the adversary against the oracle speaker and rule-based listener.
pub fn train_adversary_against_pair(
    seed: u64,
    pool_size: u64,
    train: &AdversaryTrainConfig,
    config: &GenConfig,
) -> Result<(AdversaryPolicy, TrainReport), AdversaryError> {
    let pool = adversary_pool(seed, pool_size, config);
    let cfg = AdversaryTrainConfig { seed, ..train.clone() };
    train_adversary(&AdversaryPolicy::default(), &rule_listener(), &pool, &cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedEval {
    pub random: Vec<u8>,
    pub adversarial: Vec<u8>,
    pub random_rate: f64,
    pub adversarial_rate: f64,
    pub test: PairedTest,
}

/// Oracle speaker and rule-based listener on paired held-out scenes.
pub fn paired_placement_eval(policy: &AdversaryPolicy, base: u64, n: u64, config: &GenConfig) -> PairedEval {
    let listener = rule_listener();
    let rows: Vec<(u8, u8)> = (0..n)
        .into_par_iter()
        .filter_map(|i| {
            let (r, a) = build_scene_pair(base + i, sweep_yaw(i), policy, config).ok()?;
            let once = |s: &Scene| {
                let c = SpeakerContext::new(s);
                play(s, &c, &SpeakerAgent::Oracle, &listener, Decode::Greedy, 1).ok().map(|e| e[0].success)
            };
            Some((once(&r)?, once(&a)?))
        })
        .collect();
    let (random, adversarial): (Vec<u8>, Vec<u8>) = rows.into_iter().unzip();
    let rate = |v: &[u8]| v.iter().map(|x| *x as f64).sum::<f64>() / v.len().max(1) as f64;
    PairedEval {
        random_rate: rate(&random),
        adversarial_rate: rate(&adversarial),
        test: paired_significance(&random, &adversarial),
        random,
        adversarial,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: RewardVariant,
    pub eval: GreedyEval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRun {
    pub seed: u64,
    pub collected_success: f64,
    pub pre: GreedyEval,
    pub variants: Vec<VariantResult>,
}

impl LearningRun {
    pub fn get(&self, v: RewardVariant) -> &GreedyEval {
        &self.variants.iter().find(|r| r.variant == v).expect("every variant is trained").eval
    }
}

/// Collects `train_n` sampled episodes from a degraded speaker, trains each
/// variant from the same start and evaluates greedily on `test_n` held-out
/// scenes.
pub fn learning_run(seed: u64, train_n: u64, test_n: u64, cfg: &TrainConfig, config: &GenConfig) -> Result<LearningRun, LearnError> {
    let listener = rule_listener();
    let base = 1_000_000 * (seed + 1);
    let train = scenes_with_contexts(base, train_n, config);
    let test = scenes_with_contexts(base + 500_000, test_n, config);
    let theta = SpeakerPolicy::degraded(seed);
    let speaker = SpeakerAgent::Parametric {
        id: "degraded".into(),
        policy: theta.clone(),
    };
    let data: EpisodeDataset = collect_episodes(&speaker, &listener, &train, Decode::Sample(seed), 1);
    let contexts: HashMap<String, SpeakerContext> = train.iter().map(|(s, c)| (s.scene_id.clone(), c.clone())).collect();
    let examples = bind_examples(&data, &contexts);
    let pre = evaluate_greedy(&theta, &listener, &test);
    let tc = TrainConfig { seed, ..cfg.clone() };
    let variants = RewardVariant::ALL
        .iter()
        .map(|&v| {
            let (policy, _) = train_variant(&theta, &examples, v, &tc)?;
            Ok(VariantResult {
                variant: v,
                eval: evaluate_greedy(&policy, &listener, &test),
            })
        })
        .collect::<Result<Vec<_>, LearnError>>()?;
    Ok(LearningRun {
        seed,
        collected_success: data.success_rate(),
        pre,
        variants,
    })
}
