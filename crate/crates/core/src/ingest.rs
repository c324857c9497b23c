//! Turning public rating and review logs into training samples.
//!
//! Users are split by a hash of their raw id, so a user's events land
//! entirely in train or entirely in test. Only training users contribute to
//! the interest graph.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ItemId, UserSequence};
use crate::synth::Sample;

/// MovieLens ratings at or above this count as positive interactions.
pub const MIN_POSITIVE_RATING: f64 = 3.0;
/// Default MovieLens history length.
pub const DEFAULT_HISTORY: usize = 50;

/// One user–item interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingEvent {
    pub user: String,
    pub item: String,
    pub value: f64,
    pub timestamp: i64,
}

/// Dense ids for raw item keys, assigned in sorted key order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ItemVocab {
    items: Vec<String>,
    index: HashMap<String, ItemId>,
}

impl ItemVocab {
    pub fn from_keys<'a>(keys: impl IntoIterator<Item = &'a str>) -> Self {
        let mut items: Vec<String> = keys.into_iter().map(str::to_string).collect();
        items.sort_unstable();
        items.dedup();
        let index = items
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i as ItemId))
            .collect();
        ItemVocab { items, index }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn id(&self, key: &str) -> Option<ItemId> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: ItemId) -> Option<&str> {
        self.items.get(id as usize).map(String::as_str)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct VocabFile<'a> {
            items: &'a [String],
        }
        crate::synth::write_json(path, &VocabFile { items: &self.items })
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct VocabFile {
            items: Vec<String>,
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        let vocab = Self::from_keys(file.items.iter().map(String::as_str));
        if vocab.items != file.items {
            return Err(Error::invalid("vocab items must be sorted and unique"));
        }
        Ok(vocab)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Users whose id hashes to 0..8 (mod 10) train; the rest test.
pub fn is_train_user(user: &str) -> bool {
    fnv1a(user.as_bytes()) % 10 < 8
}

/// Result of ingesting one log file.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub vocab: ItemVocab,
    /// Positive interactions of training users, for the interest graph.
    pub graph_sequences: Vec<UserSequence>,
    /// Input records that could not be parsed.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovieLensConfig {
    /// History length `n`.
    pub history_len: usize,
    /// Keep at most this many users (in sorted id order).
    pub max_users: Option<usize>,
}

impl Default for MovieLensConfig {
    fn default() -> Self {
        MovieLensConfig {
            history_len: DEFAULT_HISTORY,
            max_users: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AmazonConfig {
    pub max_users: Option<usize>,
    /// Seeds the negative-target draws.
    pub seed: u64,
}

/// Reads `userId,movieId,rating,timestamp` rows; malformed rows are counted
/// and skipped.
pub fn read_movielens(path: &Path) -> Result<(Vec<RatingEvent>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["userId", "movieId", "rating", "timestamp"];
    if headers.len() < 4 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::invalid(format!(
            "{}: expected header userId,movieId,rating,timestamp",
            path.display()
        )));
    }
    let mut events = Vec::new();
    let mut skipped = 0;
    for (k, row) in reader.records().enumerate() {
        let parsed = row.ok().and_then(|r| {
            if r.len() != 4 {
                return None;
            }
            let value: f64 = r[2].trim().parse().ok()?;
            let timestamp: i64 = r[3].trim().parse().ok()?;
            let (user, item) = (r[0].trim(), r[1].trim());
            (!user.is_empty() && !item.is_empty() && value.is_finite() && timestamp >= 0).then(
                || RatingEvent {
                    user: user.to_string(),
                    item: item.to_string(),
                    value,
                    timestamp,
                },
            )
        });
        match parsed {
            Some(ev) => events.push(ev),
            None => {
                skipped += 1;
                log::warn!("{}: skipping malformed row {}", path.display(), k + 2);
            }
        }
    }
    Ok((events, skipped))
}

/// Reads review JSON lines carrying `reviewerID`, `asin` and
/// `unixReviewTime`; other fields are ignored.
pub fn read_amazon(path: &Path) -> Result<(Vec<RatingEvent>, usize)> {
    #[derive(Deserialize)]
    struct Review {
        #[serde(rename = "reviewerID")]
        reviewer: String,
        asin: String,
        #[serde(rename = "unixReviewTime")]
        time: i64,
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    let mut skipped = 0;
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Review>(&line) {
            Ok(r) if r.time >= 0 && !r.reviewer.is_empty() && !r.asin.is_empty() => {
                events.push(RatingEvent {
                    user: r.reviewer,
                    item: r.asin,
                    value: 1.0,
                    timestamp: r.time,
                })
            }
            _ => {
                skipped += 1;
                log::warn!("{}: skipping malformed line {}", path.display(), k + 1);
            }
        }
    }
    Ok((events, skipped))
}

/// Events grouped per user in sorted user order, each user's events in time
/// order (ties keep file order).
fn by_user(events: &[RatingEvent], max_users: Option<usize>) -> Vec<(&str, Vec<&RatingEvent>)> {
    let mut users: BTreeMap<&str, Vec<&RatingEvent>> = BTreeMap::new();
    for ev in events {
        users.entry(ev.user.as_str()).or_default().push(ev);
    }
    let mut out: Vec<(&str, Vec<&RatingEvent>)> = users.into_iter().collect();
    if let Some(cap) = max_users {
        out.truncate(cap);
    }
    for (_, evs) in &mut out {
        evs.sort_by_key(|e| e.timestamp);
    }
    out
}

/// Time-ordered positive interactions of training users.
pub fn sequences_for_graph(
    events: &[RatingEvent],
    vocab: &ItemVocab,
    min_value: f64,
    max_users: Option<usize>,
) -> Vec<UserSequence> {
    by_user(events, max_users)
        .into_iter()
        .filter(|(user, _)| is_train_user(user))
        .filter_map(|(user, evs)| {
            let items: Vec<ItemId> = evs
                .iter()
                .filter(|e| e.value >= min_value)
                .filter_map(|e| vocab.id(&e.item))
                .collect();
            (!items.is_empty()).then(|| UserSequence {
                user: user.to_string(),
                items,
            })
        })
        .collect()
}

fn vocab_for(groups: &[(&str, Vec<&RatingEvent>)]) -> ItemVocab {
    ItemVocab::from_keys(
        groups
            .iter()
            .flat_map(|(_, evs)| evs.iter().map(|e| e.item.as_str())),
    )
}

/// One sample per rating whose `n` most recent earlier ratings of at least 3
/// exist; the label is 1 when the rating is strictly above 3.
pub fn ingest_movielens(path: &Path, cfg: &MovieLensConfig) -> Result<Ingested> {
    if cfg.history_len == 0 {
        return Err(Error::config("history_len", "must be at least 1"));
    }
    let (events, skipped) = read_movielens(path)?;
    let groups = by_user(&events, cfg.max_users);
    let vocab = vocab_for(&groups);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (user, evs) in &groups {
        let dest = if is_train_user(user) {
            &mut train
        } else {
            &mut test
        };
        let mut positives: Vec<ItemId> = Vec::new();
        for ev in evs {
            let id = vocab.id(&ev.item).expect("vocab covers every event");
            if positives.len() >= cfg.history_len {
                dest.push(Sample {
                    history: positives[positives.len() - cfg.history_len..].to_vec(),
                    target: id,
                    label: u8::from(ev.value > MIN_POSITIVE_RATING),
                });
            }
            if ev.value >= MIN_POSITIVE_RATING {
                positives.push(id);
            }
        }
    }
    if train.is_empty() && test.is_empty() {
        return Err(Error::invalid(format!(
            "{}: no user has {} qualifying ratings before a target",
            path.display(),
            cfg.history_len
        )));
    }
    let graph_sequences = sequences_for_graph(&events, &vocab, MIN_POSITIVE_RATING, cfg.max_users);
    Ok(Ingested {
        train,
        test,
        vocab,
        graph_sequences,
        skipped,
    })
}

/// Per user with at least two reviews: the last review as a positive target
/// after the earlier ones, and the same history with a random other item as
/// a negative.
pub fn ingest_amazon(path: &Path, cfg: &AmazonConfig) -> Result<Ingested> {
    let (events, skipped) = read_amazon(path)?;
    let groups = by_user(&events, cfg.max_users);
    let vocab = vocab_for(&groups);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (user, evs) in &groups {
        if evs.len() < 2 {
            continue;
        }
        if vocab.len() < 2 {
            return Err(Error::invalid("negative sampling needs at least two items"));
        }
        let ids: Vec<ItemId> = evs
            .iter()
            .map(|e| vocab.id(&e.item).expect("vocab covers every event"))
            .collect();
        let (history, target) = (ids[..ids.len() - 1].to_vec(), ids[ids.len() - 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(fnv1a(user.as_bytes()));
        // Uniform over the vocab minus the positive target.
        let mut negative = rng.gen_range(0..vocab.len() as ItemId - 1);
        if negative >= target {
            negative += 1;
        }
        let dest = if is_train_user(user) {
            &mut train
        } else {
            &mut test
        };
        dest.push(Sample {
            history: history.clone(),
            target,
            label: 1,
        });
        dest.push(Sample {
            history,
            target: negative,
            label: 0,
        });
    }
    if train.is_empty() && test.is_empty() {
        return Err(Error::invalid(format!(
            "{}: no user has two or more reviews",
            path.display()
        )));
    }
    let graph_sequences = sequences_for_graph(&events, &vocab, f64::NEG_INFINITY, cfg.max_users);
    Ok(Ingested {
        train,
        test,
        vocab,
        graph_sequences,
        skipped,
    })
}
