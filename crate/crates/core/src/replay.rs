//! Rejection-replay offline evaluation.
//!
//! A logged event counts only when the evaluated policy picks the arm that
//! was actually displayed; under uniformly random logging the CTR over
//! those valid events is an unbiased estimate of the policy's online CTR.
//! Feedback reaches the policy in batches of `update_batch` valid events to
//! mimic delayed model updates.
//!
//! Log format, one JSON object per line:
//!
//! ```text
//! {"id": 7, "displayed": "a2", "reward": 1, "pool": [{"arm": "a0", "x": [0.5, -1]}, ...]}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::format::g17;
use crate::policies::{argmax, dot, Policy, PolicySpec};
use crate::rng::RandomSource;

#[derive(Debug, Clone, PartialEq)]
pub struct PoolArm {
    pub arm: String,
    pub x: Vec<f64>,
}

/// One logged impression.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEvent {
    pub id: u64,
    pub displayed: String,
    pub reward: u8,
    pub pool: Vec<PoolArm>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArm {
    arm: String,
    x: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    id: u64,
    displayed: String,
    reward: u8,
    pool: Vec<RawArm>,
}

impl LogEvent {
    pub fn dim(&self) -> usize {
        self.pool.first().map_or(0, |a| a.x.len())
    }

    /// Position of the displayed arm in the pool.
    pub fn displayed_index(&self) -> usize {
        self.pool
            .iter()
            .position(|a| a.arm == self.displayed)
            .expect("validated events contain their displayed arm")
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.reward > 1 {
            return Err(format!("reward must be 0 or 1, got {}", self.reward));
        }
        if self.pool.is_empty() {
            return Err("pool is empty".into());
        }
        let d = self.dim();
        let mut seen = HashSet::new();
        for arm in &self.pool {
            if arm.x.len() != d {
                return Err(format!(
                    "arm '{}' has {} features, expected {d}",
                    arm.arm,
                    arm.x.len()
                ));
            }
            if arm.x.iter().any(|v| !v.is_finite()) {
                return Err(format!("arm '{}' has a non-finite feature", arm.arm));
            }
            if !seen.insert(arm.arm.as_str()) {
                return Err(format!("arm '{}' appears twice in the pool", arm.arm));
            }
        }
        if !seen.contains(self.displayed.as_str()) {
            return Err(format!("displayed arm '{}' is not in the pool", self.displayed));
        }
        Ok(())
    }

    /// Canonical single-line JSON: fixed field order, `", "` / `": "`
    /// separators, floats with 17 significant digits.
    pub fn to_json_line(&self) -> String {
        let quote = |s: &str| serde_json::to_string(s).expect("strings always serialize");
        let pool: Vec<String> = self
            .pool
            .iter()
            .map(|a| {
                let xs: Vec<String> = a.x.iter().map(|&v| g17(v)).collect();
                format!("{{\"arm\": {}, \"x\": [{}]}}", quote(&a.arm), xs.join(", "))
            })
            .collect();
        format!(
            "{{\"id\": {}, \"displayed\": {}, \"reward\": {}, \"pool\": [{}]}}",
            self.id,
            quote(&self.displayed),
            self.reward,
            pool.join(", ")
        )
    }
}

/// Parse and validate one log line. `line_no` is 1-based and only used in
/// error messages.
pub fn parse_event(line: &str, line_no: usize) -> Result<LogEvent> {
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let raw: RawEvent = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
    let event = LogEvent {
        id: raw.id,
        displayed: raw.displayed,
        reward: raw.reward,
        pool: raw
            .pool
            .into_iter()
            .map(|a| PoolArm { arm: a.arm, x: a.x })
            .collect(),
    };
    event.validate().map_err(err)?;
    Ok(event)
}

/// Streams events from a JSON-lines reader, skipping blank lines and
/// checking that every event has the same context dimension.
pub struct LogReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    dim: Option<usize>,
}

impl<R: BufRead> LogReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            dim: None,
        }
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = Result<LogEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let event = match parse_event(&line, self.line_no) {
                Ok(e) => e,
                Err(e) => return Some(Err(e)),
            };
            match self.dim {
                None => self.dim = Some(event.dim()),
                Some(d) if d != event.dim() => {
                    return Some(Err(Error::Parse {
                        line: self.line_no,
                        message: format!("context dimension {} differs from earlier events ({d})", event.dim()),
                    }))
                }
                _ => {}
            }
            return Some(Ok(event));
        }
    }
}

pub fn write_log<W: Write>(events: &[LogEvent], mut out: W) -> Result<()> {
    for e in events {
        writeln!(out, "{}", e.to_json_line())?;
    }
    Ok(())
}

/// Synthetic uniformly-logged events: pool contexts `N(0, I_d)`, displayed
/// arm uniform over the pool, reward `Bernoulli(μ(xᵀθ*))` of the displayed
/// arm. Arm ids are `a0 .. a{K-1}`.
pub fn generate_synthetic_log(
    arms: usize,
    dim: usize,
    theta_star: &[f64],
    n_events: usize,
    seed: u64,
) -> Result<Vec<LogEvent>> {
    if arms < 2 || n_events < 1 {
        return Err(Error::InvalidParameter(format!(
            "synthetic log needs >= 2 arms and >= 1 event (got {arms}, {n_events})"
        )));
    }
    if theta_star.len() != dim {
        return Err(Error::InvalidParameter("theta has the wrong dimension".into()));
    }
    let mut rng = RandomSource::seed_from_u64(seed);
    let ids: Vec<String> = (0..arms).map(|a| format!("a{a}")).collect();
    let events = (0..n_events)
        .map(|i| {
            let pool: Vec<PoolArm> = ids
                .iter()
                .map(|id| PoolArm {
                    arm: id.clone(),
                    x: (0..dim).map(|_| rng.normal()).collect(),
                })
                .collect();
            let shown = rng.index(arms);
            let p = crate::policies::sigmoid(dot(&pool[shown].x, theta_star));
            LogEvent {
                id: i as u64,
                displayed: pool[shown].arm.clone(),
                reward: rng.bernoulli(p) as u8,
                pool,
            }
        })
        .collect();
    Ok(events)
}

/// A policy evaluated over a changing pool of identified arms.
pub trait ReplayPolicy {
    /// Index into `pool` of the chosen arm.
    fn select(&mut self, pool: &[PoolArm], rng: &mut RandomSource) -> Result<usize>;

    fn observe(&mut self, arm: &PoolArm, reward: u8) -> Result<()>;

    fn history_len(&self) -> usize;

    /// Hash of everything learned from feedback.
    fn state_digest(&self) -> u64;
}

pub type PolicyFactory = Box<dyn Fn() -> Result<Box<dyn ReplayPolicy>> + Send + Sync>;

fn pool_contexts(pool: &[PoolArm]) -> Vec<Vec<f64>> {
    pool.iter().map(|a| a.x.clone()).collect()
}

/// One model shared by all arms; contexts alone distinguish them.
pub struct SharedPolicy {
    inner: Box<dyn Policy>,
}

impl SharedPolicy {
    pub fn new(inner: Box<dyn Policy>) -> Self {
        Self { inner }
    }
}

impl ReplayPolicy for SharedPolicy {
    fn select(&mut self, pool: &[PoolArm], rng: &mut RandomSource) -> Result<usize> {
        self.inner.select(&pool_contexts(pool), rng)
    }

    fn observe(&mut self, arm: &PoolArm, reward: u8) -> Result<()> {
        self.inner.observe(&arm.x, 0, reward)
    }

    fn history_len(&self) -> usize {
        self.inner.history_len()
    }

    fn state_digest(&self) -> u64 {
        self.inner.state_digest()
    }
}

type ModelFactory = Box<dyn Fn() -> Result<Box<dyn Policy>> + Send + Sync>;

/// One independent model per arm id, created on first sight. Each pool arm
/// is scored by its own model and the best score wins, the smallest id on
/// ties.
pub struct DisjointPolicy {
    make_model: ModelFactory,
    models: BTreeMap<String, Box<dyn Policy>>,
}

impl DisjointPolicy {
    pub fn new(make_model: impl Fn() -> Result<Box<dyn Policy>> + Send + Sync + 'static) -> Self {
        Self {
            make_model: Box::new(make_model),
            models: BTreeMap::new(),
        }
    }

    pub fn model(&self, arm: &str) -> Option<&dyn Policy> {
        self.models.get(arm).map(|m| m.as_ref())
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    fn model_mut(&mut self, arm: &str) -> Result<&mut Box<dyn Policy>> {
        if !self.models.contains_key(arm) {
            let model = (self.make_model)()?;
            self.models.insert(arm.to_string(), model);
        }
        Ok(self.models.get_mut(arm).expect("inserted above"))
    }

    /// Per-arm scores in pool order.
    pub fn scores(&mut self, pool: &[PoolArm], rng: &mut RandomSource) -> Result<Vec<f64>> {
        pool.iter()
            .map(|a| {
                let model = self.model_mut(&a.arm)?;
                Ok(model.score_arms(std::slice::from_ref(&a.x), rng)?[0])
            })
            .collect()
    }
}

impl ReplayPolicy for DisjointPolicy {
    fn select(&mut self, pool: &[PoolArm], rng: &mut RandomSource) -> Result<usize> {
        if pool.is_empty() {
            return Err(Error::InvalidInput("empty pool".into()));
        }
        let scores = self.scores(pool, rng)?;
        let mut best = 0;
        for i in 1..pool.len() {
            if scores[i] > scores[best] || (scores[i] == scores[best] && pool[i].arm < pool[best].arm) {
                best = i;
            }
        }
        Ok(best)
    }

    fn observe(&mut self, arm: &PoolArm, reward: u8) -> Result<()> {
        self.model_mut(&arm.arm)?.observe(&arm.x, 0, reward)
    }

    fn history_len(&self) -> usize {
        self.models.values().map(|m| m.history_len()).sum()
    }

    fn state_digest(&self) -> u64 {
        let mut h = crate::policies::Digest::new();
        for (id, m) in &self.models {
            // untouched models carry no learned state
            if m.history_len() == 0 {
                continue;
            }
            for b in id.bytes() {
                h.word(b as u64);
            }
            h.word(m.state_digest());
        }
        h.finish()
    }
}

/// Factory for [`DisjointPolicy`] instances whose per-arm models follow
/// `spec`.
pub fn disjoint_policy_factory(spec: PolicySpec, dim: usize) -> PolicyFactory {
    Box::new(move || {
        spec.validate()?;
        let spec = spec.clone();
        let policy: Box<dyn ReplayPolicy> = Box::new(DisjointPolicy::new(move || spec.build(dim)));
        Ok(policy)
    })
}

/// Factory for [`SharedPolicy`] instances.
pub fn shared_policy_factory(spec: PolicySpec, dim: usize) -> PolicyFactory {
    Box::new(move || Ok(Box::new(SharedPolicy::new(spec.build(dim)?)) as Box<dyn ReplayPolicy>))
}

/// Greedy policy under a known coefficient vector; does not learn.
#[derive(Debug, Clone)]
pub struct GreedyOraclePolicy {
    pub theta: Vec<f64>,
}

impl ReplayPolicy for GreedyOraclePolicy {
    fn select(&mut self, pool: &[PoolArm], _rng: &mut RandomSource) -> Result<usize> {
        let scores: Vec<f64> = pool.iter().map(|a| dot(&a.x, &self.theta)).collect();
        Ok(argmax(&scores))
    }

    fn observe(&mut self, _arm: &PoolArm, _reward: u8) -> Result<()> {
        Ok(())
    }

    fn history_len(&self) -> usize {
        0
    }

    fn state_digest(&self) -> u64 {
        0
    }
}

/// Always the given arm id when present, otherwise the first pool entry.
#[derive(Debug, Clone)]
pub struct FixedArmPolicy {
    pub arm: String,
}

impl ReplayPolicy for FixedArmPolicy {
    fn select(&mut self, pool: &[PoolArm], _rng: &mut RandomSource) -> Result<usize> {
        Ok(pool.iter().position(|a| a.arm == self.arm).unwrap_or(0))
    }

    fn observe(&mut self, _arm: &PoolArm, _reward: u8) -> Result<()> {
        Ok(())
    }

    fn history_len(&self) -> usize {
        0
    }

    fn state_digest(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayConfig {
    /// Valid events per delayed update.
    pub update_batch: usize,
    /// Stop after this many valid events.
    pub budget: Option<usize>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            update_batch: DEFAULT_UPDATE_BATCH,
            budget: None,
        }
    }
}

pub const DEFAULT_UPDATE_BATCH: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRow {
    /// 1-based valid-event index.
    pub valid_t: usize,
    pub arm: String,
    pub reward: u8,
    /// Running CTR after this event.
    pub ctr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayReport {
    pub events_seen: usize,
    pub valid_events: usize,
    pub clicks: usize,
    pub rows: Vec<ReplayRow>,
}

impl ReplayReport {
    pub fn final_ctr(&self) -> f64 {
        if self.valid_events == 0 {
            0.0
        } else {
            self.clicks as f64 / self.valid_events as f64
        }
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.events_seen == 0 {
            0.0
        } else {
            self.valid_events as f64 / self.events_seen as f64
        }
    }

    pub fn ctr_trace(&self) -> Vec<(usize, f64)> {
        self.rows.iter().map(|r| (r.valid_t, r.ctr)).collect()
    }
}

/// Replay `events` against `policy`.
pub fn replay<I>(
    policy: &mut dyn ReplayPolicy,
    events: I,
    config: ReplayConfig,
    rng: &mut RandomSource,
) -> Result<ReplayReport>
where
    I: IntoIterator<Item = Result<LogEvent>>,
{
    if config.update_batch < 1 {
        return Err(Error::InvalidParameter("update batch must be >= 1".into()));
    }
    let mut report = ReplayReport::default();
    let mut queue: Vec<(PoolArm, u8)> = Vec::with_capacity(config.update_batch);
    if config.budget == Some(0) {
        return Ok(report);
    }
    for event in events {
        let event = event?;
        report.events_seen += 1;
        let choice = policy.select(&event.pool, rng)?;
        let chosen = event
            .pool
            .get(choice)
            .ok_or_else(|| Error::InvalidInput(format!("policy chose index {choice} outside the pool")))?;
        if chosen.arm != event.displayed {
            continue;
        }
        report.valid_events += 1;
        report.clicks += event.reward as usize;
        report.rows.push(ReplayRow {
            valid_t: report.valid_events,
            arm: chosen.arm.clone(),
            reward: event.reward,
            ctr: report.clicks as f64 / report.valid_events as f64,
        });
        queue.push((chosen.clone(), event.reward));
        if queue.len() == config.update_batch {
            for (arm, reward) in queue.drain(..) {
                policy.observe(&arm, reward)?;
            }
        }
        if config.budget == Some(report.valid_events) {
            break;
        }
    }
    Ok(report)
}

/// [`replay`] over an in-memory log.
pub fn replay_events(
    policy: &mut dyn ReplayPolicy,
    events: &[LogEvent],
    config: ReplayConfig,
    rng: &mut RandomSource,
) -> Result<ReplayReport> {
    replay(policy, events.iter().cloned().map(Ok), config, rng)
}
