//! Majority-class labels for utterances judged by several listeners.

use std::collections::BTreeMap;

use embref_core::agents::{Episode, Provenance};
use serde::{Deserialize, Serialize};

/// Majority label of one utterance's listener choices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityLabel {
    pub chosen_index: usize,
    pub success: u8,
    /// More than one referent shared the top count.
    pub tie: bool,
}

/// The most chosen referent. Ties go to failure: the lowest tied referent
/// other than the target is reported and the label is flagged.
pub fn majority_label(choices: &[usize], target: usize) -> Option<MajorityLabel> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for c in choices {
        *counts.entry(*c).or_insert(0) += 1;
    }
    let top = *counts.values().max()?;
    let tied: Vec<usize> = counts.iter().filter(|(_, n)| **n == top).map(|(k, _)| *k).collect();
    let tie = tied.len() > 1;
    let chosen_index = if tie {
        *tied.iter().find(|k| **k != target).expect("a tie has a non-target member")
    } else {
        tied[0]
    };
    Some(MajorityLabel {
        chosen_index,
        success: (chosen_index == target) as u8,
        tie,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgedUtterance {
    pub scene_id: String,
    pub speaker_id: String,
    pub text: String,
    pub target_index: usize,
    /// Episode ids of the judgments used, in id order.
    pub episode_ids: Vec<u64>,
    pub choices: Vec<usize>,
    pub label: MajorityLabel,
}

/// Groups human-listener episodes by (scene, speaker, text) and labels each
/// group that has at least `judgments` selections, using the first
/// `judgments` by episode id.
pub fn aggregate_judgments(episodes: &[Episode], judgments: u32) -> Vec<JudgedUtterance> {
    let mut groups: BTreeMap<(String, String, String), Vec<&Episode>> = BTreeMap::new();
    for e in episodes {
        if e.provenance == Provenance::Human && e.listener_id.starts_with("human:") {
            groups
                .entry((e.scene_id.clone(), e.speaker_id.clone(), e.text.clone()))
                .or_default()
                .push(e);
        }
    }
    let mut out = Vec::new();
    for ((scene_id, speaker_id, text), mut eps) in groups {
        if eps.len() < judgments as usize {
            continue;
        }
        eps.sort_by_key(|e| e.episode_id);
        eps.truncate(judgments as usize);
        let target_index = eps[0].target_index;
        let choices: Vec<usize> = eps.iter().map(|e| e.chosen_index).collect();
        let Some(label) = majority_label(&choices, target_index) else { continue };
        out.push(JudgedUtterance {
            scene_id,
            speaker_id,
            text,
            target_index,
            episode_ids: eps.iter().map(|e| e.episode_id).collect(),
            choices,
            label,
        });
    }
    out
}
