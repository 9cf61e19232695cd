//! Datasets of user behavior logs and labelled target samples: the synthetic
//! periodic generator, JSONL ingestion, and temporal splitting.

mod jsonl;
mod split;
mod synthetic;

use std::collections::BTreeMap;

use crate::embeddings::{InteractionRecord, UserProfile};

pub use jsonl::{load_jsonl, parse_jsonl, write_jsonl};
pub use split::{split_temporal, target_step_range};
pub use synthetic::{
    default_categories, generate_synthetic, user_id, user_schedule, user_seed, CategorySpec, PromoWindow, Schedule,
    SyntheticConfig, BROWSE,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub step: i64,
    pub record: InteractionRecord,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct UserLog {
    pub profile: Option<UserProfile>,
    /// Sorted by step.
    pub events: Vec<Event>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Labels {
    pub click: bool,
    pub purchase: bool,
}

impl Labels {
    /// Label vector for the first `tasks` tasks, purchase first when only one.
    pub fn as_targets(&self, tasks: usize) -> Vec<f64> {
        let f = |b: bool| if b { 1.0 } else { 0.0 };
        match tasks {
            1 => vec![f(self.purchase)],
            _ => vec![f(self.click), f(self.purchase)],
        }
    }
}

/// A target item shown to a user at `step`; its input sequence is the user's
/// events strictly before `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub user_id: String,
    pub step: i64,
    pub target: InteractionRecord,
    pub labels: Labels,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub users: BTreeMap<String, UserLog>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// The sample's input window: events of its user before the target step.
    pub fn history(&self, sample: &Sample) -> &[Event] {
        match self.users.get(&sample.user_id) {
            Some(log) => {
                let end = log.events.partition_point(|e| e.step < sample.step);
                &log.events[..end]
            }
            None => &[],
        }
    }

    pub fn num_events(&self) -> usize {
        self.users.values().map(|u| u.events.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &InteractionRecord> {
        self.users.values().flat_map(|u| u.events.iter().map(|e| &e.record))
    }

    pub fn profiles(&self) -> impl Iterator<Item = &UserProfile> {
        self.users.values().filter_map(|u| u.profile.as_ref())
    }
}
