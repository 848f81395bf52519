//! Seeded dataset builds: agent placements over a yaw schedule, random
//! and/or adversarial referents per placement, and scene-disjoint splits.

use std::collections::BTreeMap;
use std::fmt;

use embref_core::adversary::AdversaryPolicy;
use embref_core::rng;
use embref_core::scenegen::{build_scene, build_scene_pair, GenError, Placement, Scene};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{BuildModes, PlatformConfig};
use crate::store::{DatasetSplit, Manifest, MANIFEST_SCHEMA_VERSION};

/// Seeds tried per placement before it counts as lost.
pub const ATTEMPTS_PER_PLACEMENT: usize = 4;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("adversarial scenes requested but no adversary checkpoint was given")]
    MissingAdversary,
    #[error("generation failure rate {rate:.3} exceeds {limit:.3}; failures by constraint: {}", Histogram(.histogram))]
    TooManyFailures {
        rate: f64,
        limit: f64,
        histogram: BTreeMap<String, usize>,
    },
    #[error("{lost} placements failed every attempt; failures by constraint: {}", Histogram(.histogram))]
    LostPlacements { lost: usize, histogram: BTreeMap<String, usize> },
}

struct Histogram<'a>(&'a BTreeMap<String, usize>);

impl fmt::Display for Histogram<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(", "))
    }
}

/// Constraint that a generation failure tripped, for the failure histogram.
pub fn failure_key(e: &GenError) -> String {
    match e {
        GenError::InvalidConfig(_) => "config".into(),
        GenError::LandmarkPacking { .. } => "landmark_packing".into(),
        GenError::AgentPlacement => "agent_placement".into(),
        GenError::ReferentPlacement => "referent_placement".into(),
        GenError::YawGap(_) => "yaw_gap".into(),
        GenError::Exhausted { .. } => "environment_resamples".into(),
        GenError::Invalid(v) => format!("validity:{}", v.first().map(|m| m.split_whitespace().next().unwrap_or("")).unwrap_or("")),
    }
}

#[derive(Clone, Debug)]
pub struct BuildOutput {
    /// In placement order; paired placements list the random scene first.
    pub scenes: Vec<Scene>,
    pub splits: Vec<DatasetSplit>,
    pub manifest: Manifest,
}

/// Short fingerprint of an adversary checkpoint for the manifest.
pub fn adversary_fingerprint(policy: &AdversaryPolicy) -> String {
    let json = serde_json::to_string(&(&policy.weights, &policy.target_weights)).expect("weights serialize");
    format!("v{}:{:016x}", policy.schema_version, rng::hash_str(&json))
}

struct PlacementResult {
    scenes: Option<Vec<Scene>>,
    failures: Vec<String>,
    attempts: usize,
}

fn build_placement<F>(i: usize, cfg: &PlatformConfig, generate: &F) -> PlacementResult
where
    F: Fn(u64, f64) -> Result<Vec<Scene>, GenError>,
{
    let yaw = cfg.angles[i % cfg.angles.len()];
    let mut failures = Vec::new();
    for attempt in 0..ATTEMPTS_PER_PLACEMENT {
        let seed = rng::derive_indexed(cfg.seed, "placement", (i * ATTEMPTS_PER_PLACEMENT + attempt) as u64);
        match generate(seed, yaw) {
            Ok(scenes) => {
                return PlacementResult {
                    scenes: Some(scenes),
                    failures,
                    attempts: attempt + 1,
                }
            }
            Err(e) => failures.push(failure_key(&e)),
        }
    }
    PlacementResult {
        scenes: None,
        failures,
        attempts: ATTEMPTS_PER_PLACEMENT,
    }
}

/// Builds every placement of `cfg` and assigns placements to splits with a
/// seeded shuffle, so both scenes of a pair land in the same split.
pub fn dataset_build(cfg: &PlatformConfig, adversary: Option<&AdversaryPolicy>) -> Result<BuildOutput, BuildError> {
    cfg.validate()?;
    let gen = cfg.gen_config();
    let generate = |seed: u64, yaw: f64| match (cfg.modes, adversary) {
        (BuildModes::Random, _) => build_scene(seed, yaw, Placement::Random, &gen).map(|s| vec![s]),
        (BuildModes::Adversarial, Some(p)) => build_scene(seed, yaw, Placement::Adversarial(p), &gen).map(|s| vec![s]),
        (BuildModes::Paired, Some(p)) => build_scene_pair(seed, yaw, p, &gen).map(|(r, a)| vec![r, a]),
        (_, None) => Err(GenError::InvalidConfig("no adversary".into())),
    };
    if cfg.modes != BuildModes::Random && adversary.is_none() {
        return Err(BuildError::MissingAdversary);
    }
    dataset_build_with(cfg, adversary.map(adversary_fingerprint), generate)
}

/// [`dataset_build`] with a caller-supplied generator, called with the
/// attempt seed and requested yaw gap. Each call yields one placement's
/// scenes.
pub fn dataset_build_with<F>(cfg: &PlatformConfig, adversary: Option<String>, generate: F) -> Result<BuildOutput, BuildError>
where
    F: Fn(u64, f64) -> Result<Vec<Scene>, GenError> + Sync,
{
    cfg.validate()?;
    let results: Vec<PlacementResult> = (0..cfg.placements())
        .into_par_iter()
        .map(|i| build_placement(i, cfg, &generate))
        .collect();
    let mut histogram = BTreeMap::new();
    let (mut attempts, mut failures, mut lost) = (0, 0, 0);
    for r in &results {
        attempts += r.attempts;
        failures += r.failures.len();
        lost += r.scenes.is_none() as usize;
        for k in &r.failures {
            *histogram.entry(k.clone()).or_insert(0) += 1;
        }
    }
    let rate = failures as f64 / attempts.max(1) as f64;
    if rate > cfg.max_failure_rate {
        return Err(BuildError::TooManyFailures {
            rate,
            limit: cfg.max_failure_rate,
            histogram,
        });
    }
    if lost > 0 {
        return Err(BuildError::LostPlacements { lost, histogram });
    }
    let per_placement: Vec<Vec<Scene>> = results.into_iter().map(|r| r.scenes.expect("checked above")).collect();

    let mut order: Vec<usize> = (0..per_placement.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, "splits"));
    let counts = [cfg.splits.train, cfg.splits.validation, cfg.splits.test];
    let mut splits = Vec::new();
    let mut start = 0;
    for (name, n) in ["train", "validation", "test"].into_iter().zip(counts) {
        let mut members: Vec<usize> = order[start..start + n].to_vec();
        members.sort_unstable();
        start += n;
        splits.push(DatasetSplit {
            name: name.into(),
            scene_ids: members
                .iter()
                .flat_map(|&i| per_placement[i].iter().map(|s| s.scene_id.clone()))
                .collect(),
        });
    }
    let scenes: Vec<Scene> = per_placement.into_iter().flatten().collect();
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: cfg.seed,
        modes: cfg.modes,
        angles: cfg.angles.clone(),
        placements_per_angle: cfg.placements_per_angle,
        placements: cfg.placements(),
        scenes: scenes.len(),
        attempts,
        failures,
        failure_histogram: histogram,
        adversary,
    };
    Ok(BuildOutput { scenes, splits, manifest })
}
