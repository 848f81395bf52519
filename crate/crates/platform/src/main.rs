use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use embref_core::adversary::{AdversaryPolicy, AdversaryTrainConfig};
use embref_core::agents::{
    Decode, Provenance, SpeakerAgent, SpeakerCheckpoint, SpeakerContext, SpeakerPolicy, FEATURE_DIM, SPEAKER_SCHEMA_VERSION,
};
use embref_core::eval::{render_html, success_matrix};
use embref_core::geom::Role;
use embref_core::learn::{bind_examples, collect_episodes, imitate, train_variant, LabeledReference, RewardVariant, TrainConfig};
use embref_core::render::{agent_view, render_observation, RenderConfig};
use embref_core::scenegen::{build_scene, Placement, Scene};
use embref_platform::config::PlatformConfig;
use embref_platform::dataset::dataset_build;
use embref_platform::judgments::aggregate_judgments;
use embref_platform::pipeline::{paired_placement_eval, rule_listener, sweep_yaw, train_adversary_against_pair};
use embref_platform::service::{report_from_store, run, AppState};
use embref_platform::store::{read_episodes, write_dataset, write_jsonl, Dataset, EpisodeLog};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "embref", version, about = "Embodied two-agent reference games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Random,
    Adversarial,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Contrastive,
    Lso,
    Pos,
    Ppl,
    Imitate,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes to a JSONL file, optionally with rendered views.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed yaw gap; by default the sweep cycles through 0..=180.
        #[arg(long)]
        yaw: Option<f64>,
        #[arg(long, value_enum, default_value_t = Mode::Random)]
        mode: Mode,
        #[arg(long)]
        adversary: Option<PathBuf>,
        /// Write speaker and listener PNGs here.
        #[arg(long)]
        png_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1280)]
        width: u32,
        #[arg(long, default_value_t = 720)]
        height: u32,
    },
    /// Build a dataset directory: scenes, splits and manifest.
    DatasetBuild {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        adversary: Option<PathBuf>,
    },
    /// Train the referent-placement adversary against the oracle speaker
    /// and rule-based listener.
    TrainAdversary {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        pool: u64,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Evaluate on this many held-out paired placements afterwards.
        #[arg(long, default_value_t = 0)]
        eval: u64,
    },
    /// Update a parametric speaker from stored or freshly collected episodes.
    TrainSpeaker {
        #[arg(long, value_enum)]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        /// Episodes to learn from; collected from the split when absent
        /// (imitation reads the dataset's episode log instead).
        #[arg(long)]
        episodes: Option<PathBuf>,
        /// Starting checkpoint; a degraded speaker is used when absent.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        degraded_seed: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 3)]
        judgments: u32,
    },
    /// Play a speaker against the rule-based listener on a split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// `oracle` or a speaker checkpoint path.
        #[arg(long, default_value = "oracle")]
        speaker: String,
        #[arg(long, default_value_t = 1)]
        replicates: u32,
        /// Sample utterances with this seed instead of decoding greedily.
        #[arg(long)]
        sample_seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write report.json, report.html and judgments.jsonl.
    Report {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        episodes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        judgments: u32,
    },
    /// Serve the HTTP API over a dataset directory.
    Serve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            out,
            count,
            seed,
            yaw,
            mode,
            adversary,
            png_dir,
            width,
            height,
        } => gen(&out, count, seed, yaw, mode, adversary.as_deref(), png_dir.as_deref(), width, height),
        Command::DatasetBuild {
            out,
            config,
            seed,
            adversary,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let adv = adversary.as_deref().map(load_adversary).transpose()?;
            let built = dataset_build(&cfg, adv.as_ref())?;
            write_dataset(&out, &built.scenes, &built.splits, &built.manifest)?;
            println!(
                "{} scenes from {} placements ({} generation failures) -> {}",
                built.scenes.len(),
                built.manifest.placements,
                built.manifest.failures,
                out.display()
            );
            Ok(())
        }
        Command::TrainAdversary {
            out,
            seed,
            pool,
            steps,
            learning_rate,
            eval,
        } => {
            let defaults = AdversaryTrainConfig::default();
            let train = AdversaryTrainConfig {
                steps,
                learning_rate: learning_rate.unwrap_or(defaults.learning_rate),
                ..defaults
            };
            let gen_cfg = PlatformConfig::default().gen_config();
            let (policy, report) = train_adversary_against_pair(seed, pool, &train, &gen_cfg)?;
            write_json(&out, &policy)?;
            println!("trained {} steps, mean failure {:.3} -> {}", report.steps, report.mean_failure, out.display());
            if eval > 0 {
                let r = paired_placement_eval(&policy, 9_000_000 + seed, eval, &gen_cfg);
                println!(
                    "held-out pairs {}: random {:.1}% adversarial {:.1}% paired t p = {:.4}",
                    r.random.len(),
                    100.0 * r.random_rate,
                    100.0 * r.adversarial_rate,
                    r.test.t_p
                );
            }
            Ok(())
        }
        Command::TrainSpeaker {
            variant,
            out,
            data,
            split,
            episodes,
            init,
            degraded_seed,
            seed,
            learning_rate,
            epochs,
            judgments,
        } => {
            let dataset = Dataset::load(&data)?;
            let theta = match &init {
                Some(p) => load_speaker(p)?,
                None => SpeakerPolicy::degraded(degraded_seed),
            };
            let defaults = TrainConfig::default();
            let cfg = TrainConfig {
                learning_rate: learning_rate.unwrap_or(defaults.learning_rate),
                epochs: epochs.unwrap_or(defaults.epochs),
                seed,
                ..defaults
            };
            let scenes = dataset.split_scenes(&split);
            let contexts: HashMap<String, SpeakerContext> =
                scenes.par_iter().map(|s| (s.scene_id.clone(), SpeakerContext::new(s))).collect();
            let (policy, diag) = match variant {
                Variant::Imitate => {
                    let path = episodes.unwrap_or_else(|| dataset.episodes_path());
                    let eps = read_episodes(&path)?;
                    let judged = aggregate_judgments(&eps, judgments);
                    let labeled: Vec<LabeledReference> = if judged.is_empty() {
                        eps.iter()
                            .filter(|e| e.provenance == Provenance::Human && e.listener_id.starts_with("human:"))
                            .map(|e| LabeledReference {
                                scene_id: e.scene_id.clone(),
                                text: e.text.clone(),
                                chosen_index: e.chosen_index,
                            })
                            .collect()
                    } else {
                        judged
                            .iter()
                            .map(|j| LabeledReference {
                                scene_id: j.scene_id.clone(),
                                text: j.text.clone(),
                                chosen_index: j.label.chosen_index,
                            })
                            .collect()
                    };
                    ensure!(!labeled.is_empty(), "no human-listener episodes in {}", path.display());
                    imitate(&theta, &labeled, &contexts, &cfg)?
                }
                v => {
                    let variant = match v {
                        Variant::Contrastive => RewardVariant::Contrastive,
                        Variant::Lso => RewardVariant::Lso,
                        Variant::Pos => RewardVariant::PosOnly,
                        _ => RewardVariant::Ppl,
                    };
                    let data_set = match &episodes {
                        Some(p) => embref_core::learn::EpisodeDataset {
                            episodes: read_episodes(p)?,
                            provenance: embref_core::learn::DatasetProvenance::Automated,
                            replicates: 1,
                            io_failures: 0,
                        },
                        None => {
                            let pairs: Vec<(Scene, SpeakerContext)> =
                                scenes.iter().map(|s| ((*s).clone(), contexts[&s.scene_id].clone())).collect();
                            let speaker = SpeakerAgent::Parametric {
                                id: "init".into(),
                                policy: theta.clone(),
                            };
                            collect_episodes(&speaker, &rule_listener(), &pairs, Decode::Sample(seed), 1)
                        }
                    };
                    let examples = bind_examples(&data_set, &contexts);
                    ensure!(!examples.is_empty(), "no episode matched a scene of split {split}");
                    train_variant(&theta, &examples, variant, &cfg)?
                }
            };
            if let Some(w) = &diag.warning {
                eprintln!("warning: {w}");
            }
            let meta = serde_json::json!({ "variant": variant_name(variant), "examples": diag.examples, "seed": seed });
            write_json(&out, &policy.checkpoint(meta))?;
            println!("{} examples, mean reward {:.3} -> {}", diag.examples, diag.mean_reward, out.display());
            Ok(())
        }
        Command::Eval {
            data,
            split,
            speaker,
            replicates,
            sample_seed,
            out,
        } => {
            let dataset = Dataset::load(&data)?;
            let agent = if speaker == "oracle" {
                SpeakerAgent::Oracle
            } else {
                SpeakerAgent::Parametric {
                    id: Path::new(&speaker).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or(speaker.clone()),
                    policy: load_speaker(Path::new(&speaker))?,
                }
            };
            let pairs: Vec<(Scene, SpeakerContext)> = dataset
                .split_scenes(&split)
                .par_iter()
                .map(|s| ((*s).clone(), SpeakerContext::new(s)))
                .collect();
            let decode = sample_seed.map(Decode::Sample).unwrap_or(Decode::Greedy);
            let set = collect_episodes(&agent, &rule_listener(), &pairs, decode, replicates);
            let out = out.unwrap_or_else(|| data.join(format!("eval_{split}.jsonl")));
            write_jsonl(&out, &set.episodes)?;
            let m = success_matrix(&set.episodes);
            for e in &m.entries {
                let mode = e.mode.map(|m| format!("{m:?}").to_lowercase()).unwrap_or_else(|| "all".into());
                println!(
                    "{} / {} [{mode}]: macro {:.1}% micro {:.1}% over {} episodes",
                    e.speaker_id, e.listener_id, e.cell.macro_rate, e.cell.micro_rate, e.cell.n
                );
            }
            if set.io_failures > 0 {
                eprintln!("warning: {} scenes dropped on agent failures", set.io_failures);
            }
            println!("episodes -> {}", out.display());
            Ok(())
        }
        Command::Report {
            data,
            episodes,
            out,
            judgments,
        } => {
            let dataset = Dataset::load(&data)?;
            let eps = read_episodes(&episodes.unwrap_or_else(|| dataset.episodes_path()))?;
            let report = report_from_store(&dataset, &eps, |s| agent_view(s, Role::Listener));
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_json(&out.join("report.json"), &report)?;
            fs::write(out.join("report.html"), render_html(&report))?;
            write_jsonl(&out.join("judgments.jsonl"), &aggregate_judgments(&eps, judgments))?;
            println!("{} episodes -> {}", report.episodes, out.display());
            Ok(())
        }
        Command::Serve { data, config, bind } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(b) = bind {
                cfg.bind = b;
            }
            let dataset = Dataset::load(&data)?;
            let log = EpisodeLog::open(&dataset.episodes_path())?;
            let state = AppState::new(cfg.clone(), dataset, log)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&cfg.bind)
                    .await
                    .with_context(|| format!("binding {}", cfg.bind))?;
                println!("serving {} on http://{}", data.display(), listener.local_addr()?);
                run(state, listener).await?;
                anyhow::Ok(())
            })
        }
    }
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Contrastive => "contrastive",
        Variant::Lso => "lso",
        Variant::Pos => "pos",
        Variant::Ppl => "ppl",
        Variant::Imitate => "imitate",
    }
}

fn load_config(path: Option<&Path>) -> Result<PlatformConfig> {
    Ok(match path {
        Some(p) => PlatformConfig::load(p)?,
        None => PlatformConfig::default(),
    })
}

fn load_adversary(path: &Path) -> Result<AdversaryPolicy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let p: AdversaryPolicy = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    p.check_schema().with_context(|| format!("checking {}", path.display()))?;
    Ok(p)
}

fn load_speaker(path: &Path) -> Result<SpeakerPolicy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let c: SpeakerCheckpoint = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if c.schema_version != SPEAKER_SCHEMA_VERSION || c.policy.weights.len() != FEATURE_DIM {
        bail!("{} is not a version {SPEAKER_SCHEMA_VERSION} speaker checkpoint", path.display());
    }
    Ok(c.policy)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn gen(
    out: &Path,
    count: u64,
    seed: u64,
    yaw: Option<f64>,
    mode: Mode,
    adversary: Option<&Path>,
    png_dir: Option<&Path>,
    width: u32,
    height: u32,
) -> Result<()> {
    let policy = match (mode, adversary) {
        (Mode::Adversarial, Some(p)) => Some(load_adversary(p)?),
        (Mode::Adversarial, None) => bail!("--mode adversarial needs --adversary"),
        _ => None,
    };
    let cfg = PlatformConfig::default().gen_config();
    let scenes: Vec<Scene> = (0..count)
        .into_par_iter()
        .map(|i| {
            let y = yaw.unwrap_or_else(|| sweep_yaw(i));
            let placement = match &policy {
                Some(p) => Placement::Adversarial(p),
                None => Placement::Random,
            };
            build_scene(seed + i, y, placement, &cfg).with_context(|| format!("scene seed {}", seed + i))
        })
        .collect::<Result<_>>()?;
    write_jsonl(out, &scenes)?;
    if let Some(dir) = png_dir {
        let rc = RenderConfig::with_size(width, height);
        rc.validate()?;
        fs::create_dir_all(dir)?;
        for s in &scenes {
            for (role, name) in [(Role::Speaker, "speaker"), (Role::Listener, "listener")] {
                let png = render_observation(s, role, &rc).to_png()?;
                fs::write(dir.join(format!("{}_{name}.png", s.scene_id)), png)?;
            }
        }
    }
    println!("{} scenes -> {}", scenes.len(), out.display());
    Ok(())
}
