//! Synthetic click data from the interest delay model.
//!
//! Items are split into disjoint interest domains. A user's history is `p`
//! periods of `T` clicks; each period draws its clicks from the domain named
//! by one entry of a hidden state sequence, and that sequence is drawn from a
//! fixed finite set. A sample is positive when the target item's domain is
//! among the history's hidden states, with symmetric label noise on top.
//!
//! Every sample uses its own RNG stream, so a dataset of `N` samples is a
//! prefix of the dataset of `N' > N` samples under the same seed.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::PartitionSpec;
use crate::error::{Error, Result};
use crate::graph::{BehaviorSequence, ItemId};

const TEST_STREAM_BASE: u64 = 1 << 32;
const HIDDEN_SET_STREAM: u64 = u64::MAX;

/// How items are drawn inside one domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind", content = "s")]
pub enum WithinDomain {
    #[default]
    Uniform,
    /// `P(k-th item of the domain) ∝ k^{-s}`.
    Zipf(f64),
}

/// Items, their (disjoint) interest domains and the in-domain click law.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    partition: PartitionSpec,
    members: Vec<Vec<ItemId>>,
    within: WithinDomain,
    samplers: Vec<Option<WeightedIndex<f64>>>,
}

impl DomainSpec {
    pub fn new(partition: PartitionSpec, within: WithinDomain) -> Result<Self> {
        if let WithinDomain::Zipf(s) = within {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(format!(
                    "zipf exponent must be >= 0, got {s}"
                )));
            }
        }
        let members: Vec<Vec<ItemId>> = partition
            .members()
            .into_iter()
            .map(|m| m.into_iter().map(|i| i as ItemId).collect())
            .collect();
        let samplers = members
            .iter()
            .map(|m| match within {
                WithinDomain::Uniform => Ok(None),
                WithinDomain::Zipf(s) => {
                    let weights = (1..=m.len()).map(|k| (k as f64).powf(-s));
                    WeightedIndex::new(weights)
                        .map(Some)
                        .map_err(|e| Error::invalid(format!("zipf weights: {e}")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(DomainSpec {
            partition,
            members,
            within,
            samplers,
        })
    }

    /// Items split into `n_domains` contiguous, near-equal blocks.
    pub fn contiguous(n_items: usize, n_domains: usize, within: WithinDomain) -> Result<Self> {
        if n_domains == 0 || n_items < n_domains {
            return Err(Error::config(
                "n_domains",
                format!(
                    "need 1 <= n_domains <= n_items, got {n_domains} domains for {n_items} items"
                ),
            ));
        }
        let assignment = (0..n_items)
            .map(|i| (i * n_domains / n_items) as u32)
            .collect();
        Self::new(PartitionSpec::new(assignment, n_domains)?, within)
    }

    pub fn n_items(&self) -> usize {
        self.partition.n_items()
    }

    pub fn n_domains(&self) -> usize {
        self.partition.n_domains()
    }

    pub fn domain_of(&self, item: ItemId) -> usize {
        self.partition.domain(item as usize)
    }

    pub fn members(&self, domain: usize) -> &[ItemId] {
        &self.members[domain]
    }

    pub fn within(&self) -> WithinDomain {
        self.within
    }

    pub fn partition(&self) -> &PartitionSpec {
        &self.partition
    }

    /// Probability of each member of `domain`, in member order.
    pub fn member_probabilities(&self, domain: usize) -> Vec<f64> {
        let n = self.members[domain].len();
        match self.within {
            WithinDomain::Uniform => vec![1.0 / n as f64; n],
            WithinDomain::Zipf(s) => {
                let w: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-s)).collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|x| x / total).collect()
            }
        }
    }

    fn draw_item(&self, domain: usize, rng: &mut impl Rng) -> ItemId {
        let members = &self.members[domain];
        match &self.samplers[domain] {
            None => members[rng.gen_range(0..members.len())],
            Some(dist) => members[dist.sample(rng)],
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct DomainFile<'a> {
            assignment: &'a [u32],
        }
        write_json(
            path,
            &DomainFile {
                assignment: self.partition.assignment(),
            },
        )
    }
}

/// The true item → domain assignment.
pub fn oracle_partition(domains: &DomainSpec) -> PartitionSpec {
    domains.partition.clone()
}

/// Reads a domain file `{"assignment": [...]}`.
pub fn read_partition(path: &Path) -> Result<PartitionSpec> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct DomainFile {
        assignment: Vec<u32>,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DomainFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    PartitionSpec::from_assignment(file.assignment)
}

/// The finite set of hidden interest sequences users may follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenSequenceSet {
    sequences: Vec<Vec<u32>>,
}

impl HiddenSequenceSet {
    pub fn new(sequences: Vec<Vec<u32>>, n_domains: usize) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| Error::config("n_sequences", "hidden sequence set is empty"))?;
        let periods = first.len();
        if periods == 0 {
            return Err(Error::config(
                "periods",
                "hidden sequences must be non-empty",
            ));
        }
        let mut seen = BTreeSet::new();
        for seq in &sequences {
            if seq.len() != periods {
                return Err(Error::invalid("hidden sequences differ in length"));
            }
            if let Some(&bad) = seq.iter().find(|&&z| z as usize >= n_domains) {
                return Err(Error::invalid(format!(
                    "hidden state {bad} out of range for {n_domains} domains"
                )));
            }
            if !seen.insert(seq.clone()) {
                return Err(Error::invalid(format!("duplicate hidden sequence {seq:?}")));
            }
        }
        Ok(HiddenSequenceSet { sequences })
    }

    /// `count` distinct sequences drawn uniformly from `[0, n_domains)^periods`.
    pub fn random(count: usize, periods: usize, n_domains: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::config("n_sequences", "must be at least 1"));
        }
        let capacity = (n_domains as f64).powi(periods as i32);
        if (count as f64) > capacity {
            return Err(Error::config(
                "n_sequences",
                format!("only {capacity} distinct sequences of length {periods} exist"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(HIDDEN_SET_STREAM);
        let mut seen = BTreeSet::new();
        let mut sequences = Vec::with_capacity(count);
        while sequences.len() < count {
            let seq: Vec<u32> = (0..periods)
                .map(|_| rng.gen_range(0..n_domains as u32))
                .collect();
            if seen.insert(seq.clone()) {
                sequences.push(seq);
            }
        }
        Self::new(sequences, n_domains)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn periods(&self) -> usize {
        self.sequences[0].len()
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub steps_per_period: usize,
    pub periods: usize,
    pub n_samples: usize,
    pub label_noise: f64,
    pub positive_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            steps_per_period: 5,
            periods: 4,
            n_samples: 20_000,
            label_noise: 0.1,
            positive_rate: 0.5,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_period == 0 {
            return Err(Error::config("steps_per_period", "must be at least 1"));
        }
        if self.periods == 0 {
            return Err(Error::config("periods", "must be at least 1"));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_train", "must be at least 1"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::config("eta", "label noise must lie in [0, 0.5)"));
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            return Err(Error::config("positive_rate", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn history_len(&self) -> usize {
        self.steps_per_period * self.periods
    }
}

/// One labeled example: click history, target item, label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub history: Vec<ItemId>,
    pub target: ItemId,
    pub label: u8,
}

impl Sample {
    pub fn validate(&self, n_items: usize) -> Result<()> {
        if self.history.is_empty() {
            return Err(Error::invalid("sample history is empty"));
        }
        if self.label > 1 {
            return Err(Error::invalid(format!(
                "label must be 0 or 1, got {}",
                self.label
            )));
        }
        let max = self
            .history
            .iter()
            .chain(std::iter::once(&self.target))
            .max()
            .copied()
            .unwrap_or(0);
        if max as usize >= n_items {
            return Err(Error::invalid(format!(
                "item id {max} out of range for {n_items} items"
            )));
        }
        Ok(())
    }
}

/// Ground truth behind one generated sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub hidden: Vec<u32>,
    pub target_domain: u32,
    pub clean_label: u8,
}

/// Which RNG stream block a batch of samples comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

pub fn gen_dataset(
    domains: &DomainSpec,
    hidden: &HiddenSequenceSet,
    cfg: &SynthConfig,
) -> Result<(Vec<Sample>, Vec<SampleTrace>)> {
    gen_split(domains, hidden, cfg, Split::Train)
}

/// Generates `cfg.n_samples` samples from the stream block of `split`.
pub fn gen_split(
    domains: &DomainSpec,
    hidden: &HiddenSequenceSet,
    cfg: &SynthConfig,
    split: Split,
) -> Result<(Vec<Sample>, Vec<SampleTrace>)> {
    cfg.validate()?;
    if hidden.periods() != cfg.periods {
        return Err(Error::config(
            "periods",
            format!(
                "hidden sequences have {} periods, config says {}",
                hidden.periods(),
                cfg.periods
            ),
        ));
    }
    let n_domains = domains.n_domains();
    let covers_all = |seq: &[u32]| seq.iter().collect::<BTreeSet<_>>().len() == n_domains;
    let n_covering = hidden.sequences().iter().filter(|s| covers_all(s)).count();
    if cfg.positive_rate < 1.0 && n_covering == hidden.len() {
        return Err(Error::config(
            "positive_rate",
            "every hidden sequence covers all domains, so no negative target exists",
        ));
    }
    if cfg.positive_rate == 0.0 && n_covering > 0 {
        return Err(Error::config(
            "positive_rate",
            "some hidden sequence covers all domains and positives are disabled",
        ));
    }

    let base = match split {
        Split::Train => 0,
        Split::Test => TEST_STREAM_BASE,
    };
    let t = cfg.steps_per_period;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut traces = Vec::with_capacity(cfg.n_samples);
    for index in 0..cfg.n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(base + index as u64);

        let seq = hidden
            .sequences()
            .choose(&mut rng)
            .expect("hidden set is non-empty");
        let mut history = Vec::with_capacity(t * seq.len());
        for &z in seq {
            for _ in 0..t {
                history.push(domains.draw_item(z as usize, &mut rng));
            }
        }

        let present: BTreeSet<u32> = seq.iter().copied().collect();
        let absent: Vec<u32> = (0..n_domains as u32)
            .filter(|z| !present.contains(z))
            .collect();
        let mut clean_label = u8::from(rng.gen_bool(cfg.positive_rate));
        while clean_label == 0 && absent.is_empty() {
            clean_label = u8::from(rng.gen_bool(cfg.positive_rate));
        }
        let target_domain = if clean_label == 1 {
            let present: Vec<u32> = present.into_iter().collect();
            present[rng.gen_range(0..present.len())]
        } else {
            absent[rng.gen_range(0..absent.len())]
        };
        let target = domains.draw_item(target_domain as usize, &mut rng);
        let flip = cfg.label_noise > 0.0 && rng.gen_bool(cfg.label_noise);
        let label = clean_label ^ u8::from(flip);

        samples.push(Sample {
            history,
            target,
            label,
        });
        traces.push(SampleTrace {
            hidden: seq.clone(),
            target_domain,
            clean_label,
        });
    }
    Ok((samples, traces))
}

/// Parameters of the whole synthetic setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_items: usize,
    pub n_domains: usize,
    pub n_sequences: usize,
    pub n_test: usize,
    pub within: WithinDomain,
    pub synth: SynthConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_items: 2000,
            n_domains: 8,
            n_sequences: 24,
            n_test: 4000,
            within: WithinDomain::Uniform,
            synth: SynthConfig::default(),
        }
    }
}

/// A generated synthetic setting with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub domains: DomainSpec,
    pub hidden: HiddenSequenceSet,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub train_traces: Vec<SampleTrace>,
    pub test_traces: Vec<SampleTrace>,
}

impl SyntheticWorld {
    pub fn generate(cfg: &WorldConfig) -> Result<Self> {
        let domains = DomainSpec::contiguous(cfg.n_items, cfg.n_domains, cfg.within)?;
        let hidden = HiddenSequenceSet::random(
            cfg.n_sequences,
            cfg.synth.periods,
            cfg.n_domains,
            cfg.synth.seed,
        )?;
        let (train, train_traces) = gen_split(&domains, &hidden, &cfg.synth, Split::Train)?;
        let test_cfg = SynthConfig {
            n_samples: cfg.n_test,
            ..cfg.synth
        };
        let (test, test_traces) = if cfg.n_test == 0 {
            (Vec::new(), Vec::new())
        } else {
            gen_split(&domains, &hidden, &test_cfg, Split::Test)?
        };
        Ok(SyntheticWorld {
            domains,
            hidden,
            train,
            test,
            train_traces,
            test_traces,
        })
    }
}

/// Click histories used to build the interest graph.
pub fn sample_histories(samples: &[Sample]) -> Result<Vec<BehaviorSequence>> {
    samples
        .iter()
        .map(|s| BehaviorSequence::new(s.history.clone()))
        .collect()
}

pub fn write_samples_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    write_jsonl(path, samples)
}

pub fn read_samples_jsonl(path: &Path) -> Result<Vec<Sample>> {
    read_jsonl(path)
}

pub fn write_traces_jsonl(path: &Path, traces: &[SampleTrace]) -> Result<()> {
    write_jsonl(path, traces)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|source| Error::Json {
            context: format!("serializing {}", path.display()),
            source,
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            context: format!("{}:{}", path.display(), lineno + 1),
            source,
        })?);
    }
    Ok(out)
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: format!("serializing {}", path.display()),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc;

    fn small_world(seed: u64, eta: f64) -> (DomainSpec, HiddenSequenceSet, SynthConfig) {
        let domains = DomainSpec::contiguous(40, 4, WithinDomain::Uniform).unwrap();
        let hidden = HiddenSequenceSet::random(6, 3, 4, seed).unwrap();
        let cfg = SynthConfig {
            steps_per_period: 2,
            periods: 3,
            n_samples: 2000,
            label_noise: eta,
            positive_rate: 0.5,
            seed,
        };
        (domains, hidden, cfg)
    }

    #[test]
    fn degenerate_single_sequence() {
        let domains = DomainSpec::contiguous(12, 3, WithinDomain::Uniform).unwrap();
        let hidden = HiddenSequenceSet::new(vec![vec![0, 0]], 3).unwrap();
        let cfg = SynthConfig {
            steps_per_period: 2,
            periods: 2,
            n_samples: 300,
            label_noise: 0.0,
            positive_rate: 0.5,
            seed: 9,
        };
        let (samples, _) = gen_dataset(&domains, &hidden, &cfg).unwrap();
        for s in &samples {
            assert_eq!(s.history.len(), 4);
            assert!(s.history.iter().all(|&i| domains.domain_of(i) == 0));
            assert_eq!(s.label == 1, domains.domain_of(s.target) == 0);
        }
        assert!(samples.iter().any(|s| s.label == 0));
        assert!(samples.iter().any(|s| s.label == 1));
    }

    #[test]
    fn ground_truth_rule_is_perfect_without_noise() {
        let (domains, hidden, cfg) = small_world(4, 0.0);
        let (samples, traces) = gen_dataset(&domains, &hidden, &cfg).unwrap();
        let scored: Vec<(f64, u8)> = samples
            .iter()
            .zip(&traces)
            .map(|(s, tr)| {
                let hit = tr.hidden.contains(&(domains.domain_of(s.target) as u32));
                (f64::from(u8::from(hit)), s.label)
            })
            .collect();
        assert_eq!(auc(&scored).unwrap(), 1.0);
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let (domains, hidden, cfg) = small_world(5, 0.1);
        let a = gen_dataset(&domains, &hidden, &cfg).unwrap();
        let b = gen_dataset(&domains, &hidden, &cfg).unwrap();
        assert_eq!(a, b);
        let shorter = SynthConfig {
            n_samples: 100,
            ..cfg
        };
        let c = gen_dataset(&domains, &hidden, &shorter).unwrap();
        assert_eq!(&a.0[..100], &c.0[..]);
    }

    #[test]
    fn histories_follow_hidden_states() {
        let (domains, hidden, cfg) = small_world(6, 0.1);
        let (samples, traces) = gen_dataset(&domains, &hidden, &cfg).unwrap();
        for (s, tr) in samples.iter().zip(&traces) {
            for (pos, &item) in s.history.iter().enumerate() {
                let z = tr.hidden[pos / cfg.steps_per_period];
                assert_eq!(domains.domain_of(item), z as usize);
            }
            assert_eq!(domains.domain_of(s.target), tr.target_domain as usize);
            assert_eq!(tr.clean_label == 1, tr.hidden.contains(&tr.target_domain));
        }
    }

    #[test]
    fn label_flip_rate_within_three_sigma() {
        let (domains, hidden, mut cfg) = small_world(7, 0.2);
        cfg.n_samples = 20_000;
        let (samples, traces) = gen_dataset(&domains, &hidden, &cfg).unwrap();
        let flips = samples
            .iter()
            .zip(&traces)
            .filter(|(s, tr)| s.label != tr.clean_label)
            .count() as f64;
        let n = samples.len() as f64;
        let sigma = (n * 0.2 * 0.8).sqrt();
        assert!((flips - 0.2 * n).abs() < 3.0 * sigma, "flips = {flips}");
    }

    /// Upper `1 - alpha` chi-square quantile, Wilson–Hilferty approximation.
    fn chi2_critical(dof: f64, z: f64) -> f64 {
        let a = 2.0 / (9.0 * dof);
        dof * (1.0 - a + z * a.sqrt()).powi(3)
    }

    fn within_domain_chi2(within: WithinDomain) {
        let domains = DomainSpec::contiguous(30, 3, within).unwrap();
        let hidden = HiddenSequenceSet::random(5, 2, 3, 11).unwrap();
        let cfg = SynthConfig {
            steps_per_period: 3,
            periods: 2,
            n_samples: 10_000,
            label_noise: 0.0,
            positive_rate: 0.5,
            seed: 11,
        };
        let (samples, _) = gen_dataset(&domains, &hidden, &cfg).unwrap();
        for dom in 0..3 {
            let members = domains.members(dom);
            let mut counts = vec![0f64; members.len()];
            for s in &samples {
                for &item in &s.history {
                    if let Some(k) = members.iter().position(|&m| m == item) {
                        counts[k] += 1.0;
                    }
                }
            }
            let total: f64 = counts.iter().sum();
            let probs = domains.member_probabilities(dom);
            let stat: f64 = counts
                .iter()
                .zip(&probs)
                .map(|(c, p)| (c - total * p).powi(2) / (total * p))
                .sum();
            // z for p = 0.001
            let critical = chi2_critical((members.len() - 1) as f64, 3.0902);
            assert!(stat < critical, "domain {dom}: chi2 {stat} >= {critical}");
        }
    }

    #[test]
    fn uniform_within_domain_frequencies() {
        within_domain_chi2(WithinDomain::Uniform);
    }

    #[test]
    fn zipf_within_domain_frequencies() {
        within_domain_chi2(WithinDomain::Zipf(1.1));
    }

    #[test]
    fn oracle_partition_blocks() {
        let d = DomainSpec::contiguous(4, 2, WithinDomain::Uniform).unwrap();
        assert_eq!(oracle_partition(&d).assignment(), &[0, 0, 1, 1]);
        let d = DomainSpec::contiguous(5, 1, WithinDomain::Uniform).unwrap();
        assert_eq!(oracle_partition(&d).assignment(), &[0; 5]);
    }

    #[test]
    fn configuration_errors() {
        let domains = DomainSpec::contiguous(6, 2, WithinDomain::Uniform).unwrap();
        let covering = HiddenSequenceSet::new(vec![vec![0, 1], vec![1, 0]], 2).unwrap();
        let cfg = SynthConfig {
            steps_per_period: 1,
            periods: 2,
            n_samples: 10,
            ..SynthConfig::default()
        };
        assert!(matches!(
            gen_dataset(&domains, &covering, &cfg),
            Err(Error::Config { .. })
        ));
        let all_pos = SynthConfig {
            positive_rate: 1.0,
            ..cfg
        };
        assert!(gen_dataset(&domains, &covering, &all_pos).is_ok());
        assert!(HiddenSequenceSet::new(vec![vec![0, 1], vec![0, 1]], 2).is_err());
        assert!(HiddenSequenceSet::new(vec![vec![0, 2]], 2).is_err());
        assert!(HiddenSequenceSet::random(5, 2, 2, 1).is_err());
        assert!(SynthConfig {
            label_noise: 0.5,
            ..cfg
        }
        .validate()
        .is_err());
    }
}
