//! Monte Carlo replay of the transfer: stop-and-wait TCP over `h` hops, each
//! hop running truncated ARQ with duplicate suppression, segments repeated
//! until their TCP ACK gets back.
//!
//! This module deliberately avoids the expectation formulas in
//! [`crate::pathmodel`]; it only needs per-attempt outcome probabilities (or,
//! at bit level, not even those) and counts the bits it actually sends.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framing::{resolve_frames, FrameSizes};
use crate::hopmodel::{attempt_probs, HopParams};
use crate::pathmodel::{scenario_record, EnergyParams, ModelError, PathScenario};
use crate::record::{Record, Value};

pub const RNG_NAME: &str = "ChaCha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fidelity {
    /// Draw each attempt's outcome from its failure/partial/success
    /// probabilities.
    #[serde(rename = "frame")]
    FrameLevel,
    /// Draw individual bit errors and apply the FEC correction threshold.
    #[serde(rename = "bit")]
    BitLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    /// Replay every segment attempt.
    Direct,
    /// Draw the number of failed segment attempts from its geometric law and
    /// replay at most `failure_samples` of them, scaling their mean cost.
    /// Unbiased, and usable when a segment almost never gets through.
    SkipFailures { failure_samples: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: PathScenario,
    pub energy: EnergyParams,
    pub replications: u32,
    pub master_seed: u64,
    pub fidelity: Fidelity,
    pub sampling: Sampling,
    /// Simulate at most this many segments per replication and scale up.
    pub segment_cap: Option<u64>,
    /// Per-segment limit on attempts (or rejection draws) before giving up.
    pub attempt_cap: u64,
    pub parallel: bool,
}

impl SimConfig {
    pub const DEFAULT_ATTEMPT_CAP: u64 = 1_000_000;

    pub fn new(scenario: PathScenario, replications: u32, master_seed: u64) -> Self {
        Self {
            scenario,
            energy: EnergyParams::default(),
            replications,
            master_seed,
            fidelity: Fidelity::FrameLevel,
            sampling: Sampling::Direct,
            segment_cap: None,
            attempt_cap: Self::DEFAULT_ATTEMPT_CAP,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("at least one replication is required")]
    NoReplications,
    #[error("segment cap must be positive")]
    ZeroSegmentCap,
    #[error("attempt cap must be positive")]
    ZeroAttemptCap,
    #[error("failure sample count must be positive")]
    ZeroFailureSamples,
    #[error("a segment attempt can never succeed (success probability {0})")]
    NeverSucceeds(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Link-layer transmissions of data or TCP-ACK frames.
    pub link_attempts: u64,
    /// The subset of `link_attempts` carrying TCP data fragments.
    pub data_link_attempts: u64,
    /// Attempts whose frame was lost.
    pub link_failures: u64,
    /// Attempts delivered whose link ACK was lost.
    pub partial_failures: u64,
    /// Frames dropped after `r` failed attempts.
    pub hop_drops: u64,
    pub segment_sends: u64,
    pub segment_retransmissions: u64,
    pub duplicates_suppressed: u64,
}

impl Counters {
    fn add(&mut self, o: &Counters) {
        self.link_attempts += o.link_attempts;
        self.data_link_attempts += o.data_link_attempts;
        self.link_failures += o.link_failures;
        self.partial_failures += o.partial_failures;
        self.hop_drops += o.hop_drops;
        self.segment_sends += o.segment_sends;
        self.segment_retransmissions += o.segment_retransmissions;
        self.duplicates_suppressed += o.duplicates_suppressed;
    }
}

/// Running count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * self.n as f64 * other.n as f64 / n as f64;
        Moments { n, mean, m2 }
    }

    pub fn sample_variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: PathScenario,
    pub replications: u32,
    pub master_seed: u64,
    pub fidelity: Fidelity,
    pub sampling: Sampling,
    pub segments: u64,
    pub segments_simulated: u64,
    pub mean_total_bits: f64,
    pub stddev: f64,
    pub stderr: f64,
    pub ci95: f64,
    pub mean_joules: f64,
    pub stderr_joules: f64,
    /// Summed over all replications; only events actually replayed.
    pub counters: Counters,
    /// Segments abandoned because the attempt cap fired.
    pub truncated_segments: u64,
}

impl SimReport {
    pub fn truncated(&self) -> bool {
        self.truncated_segments > 0
    }

    /// Whether `expected_bits` lies within `k` standard errors of the mean.
    pub fn agrees_with(&self, expected_bits: f64, k: f64) -> bool {
        (self.mean_total_bits - expected_bits).abs() <= k * self.stderr + 1e-9 * expected_bits.abs()
    }

    pub fn to_record(&self) -> Record {
        let mut rec = scenario_record(&self.scenario, "sim");
        let c = &self.counters;
        rec.push("replications", Value::Int(u64::from(self.replications)));
        rec.push("seed", Value::Int(self.master_seed));
        rec.push("rng", Value::Text(RNG_NAME.to_owned()));
        rec.push(
            "fidelity",
            Value::Text(
                match self.fidelity {
                    Fidelity::FrameLevel => "frame",
                    Fidelity::BitLevel => "bit",
                }
                .to_owned(),
            ),
        );
        rec.push(
            "sampling",
            Value::Text(match self.sampling {
                Sampling::Direct => "direct".to_owned(),
                Sampling::SkipFailures { failure_samples } => format!("skip{failure_samples}"),
            }),
        );
        rec.push("segments", Value::Int(self.segments));
        rec.push("segments_simulated", Value::Int(self.segments_simulated));
        rec.push("mean_total_bits", Value::Num(self.mean_total_bits));
        rec.push("stddev", Value::Num(self.stddev));
        rec.push("stderr", Value::Num(self.stderr));
        rec.push("ci95", Value::Num(self.ci95));
        rec.push("mean_joules", Value::Num(self.mean_joules));
        rec.push("link_attempts", Value::Int(c.link_attempts));
        rec.push("data_link_attempts", Value::Int(c.data_link_attempts));
        rec.push("link_failures", Value::Int(c.link_failures));
        rec.push("partial_failures", Value::Int(c.partial_failures));
        rec.push("hop_drops", Value::Int(c.hop_drops));
        rec.push("segment_sends", Value::Int(c.segment_sends));
        rec.push("segment_retransmissions", Value::Int(c.segment_retransmissions));
        rec.push("duplicates_suppressed", Value::Int(c.duplicates_suppressed));
        rec.push("truncated_segments", Value::Int(self.truncated_segments));
        rec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Fail,
    Partial,
    Success,
}

#[derive(Debug, Clone, Copy)]
enum Channel {
    Frame { fail_below: f64, partial_below: f64 },
    Bit { ber: f64, ln_keep: f64 },
}

/// One hop as seen by one kind of frame.
#[derive(Debug, Clone, Copy)]
struct Link {
    channel: Channel,
    frame: FrameSizes,
    r: u32,
    /// Probability the frame gets across within `r` attempts.
    pass: f64,
}

impl Link {
    fn new(frame: FrameSizes, hop: HopParams, fidelity: Fidelity) -> Self {
        let probs = attempt_probs(frame, hop.ber);
        let channel = match fidelity {
            Fidelity::FrameLevel => Channel::Frame {
                fail_below: probs.p_fail,
                partial_below: probs.p_fail + probs.p_partial,
            },
            Fidelity::BitLevel => Channel::Bit {
                ber: hop.ber,
                ln_keep: (-hop.ber).ln_1p(),
            },
        };
        let pass = if probs.p_fail == 0.0 {
            1.0
        } else {
            -(f64::from(hop.r) * probs.p_fail.ln()).exp_m1()
        };
        Self {
            channel,
            frame,
            r: hop.r,
            pass,
        }
    }

    /// Number of bit errors among `n` bits, counting no further than `limit`.
    fn bit_errors(rng: &mut ChaCha8Rng, n: u64, ber: f64, ln_keep: f64, limit: u64) -> u64 {
        if ber == 0.0 {
            return 0;
        }
        let mut pos = 0u64;
        let mut count = 0u64;
        loop {
            let u: f64 = 1.0 - rng.random::<f64>();
            let gap = (u.ln() / ln_keep).floor();
            if gap >= (n - pos) as f64 {
                return count;
            }
            pos += gap as u64 + 1;
            count += 1;
            if count > limit || pos >= n {
                return count;
            }
        }
    }

    fn attempt(&self, rng: &mut ChaCha8Rng) -> Outcome {
        match self.channel {
            Channel::Frame {
                fail_below,
                partial_below,
            } => {
                let u: f64 = rng.random();
                if u < fail_below {
                    Outcome::Fail
                } else if u < partial_below {
                    Outcome::Partial
                } else {
                    Outcome::Success
                }
            }
            Channel::Bit { ber, ln_keep } => {
                let f = self.frame;
                if Self::bit_errors(rng, f.d_bits, ber, ln_keep, f.c_bits) > f.c_bits {
                    Outcome::Fail
                } else if Self::bit_errors(rng, f.a_bits, ber, ln_keep, 0) > 0 {
                    Outcome::Partial
                } else {
                    Outcome::Success
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    bits: u64,
    counters: Counters,
}

/// Runs ARQ on one hop. Returns whether the receiver got the frame.
fn cross_hop(link: &Link, is_data: bool, rng: &mut ChaCha8Rng, t: &mut Tally) -> bool {
    let mut arrived = false;
    for _ in 0..link.r {
        t.bits += link.frame.d_bits;
        t.counters.link_attempts += 1;
        if is_data {
            t.counters.data_link_attempts += 1;
        }
        let outcome = link.attempt(rng);
        if outcome == Outcome::Fail {
            t.counters.link_failures += 1;
            continue;
        }
        // The receiver acknowledges every copy it decodes but forwards only one.
        t.bits += link.frame.a_bits;
        if arrived {
            t.counters.duplicates_suppressed += 1;
        }
        arrived = true;
        if outcome == Outcome::Success {
            break;
        }
        t.counters.partial_failures += 1;
    }
    if !arrived {
        t.counters.hop_drops += 1;
    }
    arrived
}

struct Path {
    data: Vec<Link>,
    ack: Vec<Link>,
    m: u32,
    p_s: f64,
}

impl Path {
    fn send(links: &[Link], is_data: bool, rng: &mut ChaCha8Rng, t: &mut Tally) -> bool {
        links.iter().all(|l| cross_hop(l, is_data, rng, t))
    }

    /// One segment attempt: every fragment is sent, then the TCP ACK if the
    /// whole segment arrived.
    fn attempt(&self, rng: &mut ChaCha8Rng, t: &mut Tally) -> bool {
        let mut complete = true;
        for _ in 0..self.m {
            complete &= Self::send(&self.data, true, rng, t);
        }
        complete && Self::send(&self.ack, false, rng, t)
    }
}

/// Draws `N >= 0` failures before the first success of a Bernoulli(`p`)
/// sequence.
fn failures_before_success(p: f64, rng: &mut ChaCha8Rng) -> f64 {
    if p >= 1.0 {
        return 0.0;
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    (u.ln() / (-p).ln_1p()).floor()
}

#[derive(Debug, Clone, Copy, Default)]
struct Replication {
    total_bits: f64,
    counters: Counters,
    truncated_segments: u64,
}

struct Runner<'a> {
    path: Path,
    config: &'a SimConfig,
    simulated: u64,
    scale: f64,
}

impl Runner<'_> {
    fn replication(&self, index: u32) -> Replication {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.master_seed);
        rng.set_stream(u64::from(index));

        let mut out = Replication::default();
        let mut bits = 0.0;
        for _ in 0..self.simulated {
            let (seg_bits, counters, truncated) = match self.config.sampling {
                Sampling::Direct => self.direct_segment(&mut rng),
                Sampling::SkipFailures { failure_samples } => self.skipping_segment(&mut rng, failure_samples),
            };
            bits += seg_bits;
            out.counters.add(&counters);
            out.truncated_segments += u64::from(truncated);
        }
        out.total_bits = bits * self.scale;
        out
    }

    fn direct_segment(&self, rng: &mut ChaCha8Rng) -> (f64, Counters, bool) {
        let mut t = Tally::default();
        let mut sends = 0u64;
        let mut delivered = false;
        while sends < self.config.attempt_cap {
            sends += 1;
            if self.path.attempt(rng, &mut t) {
                delivered = true;
                break;
            }
        }
        t.counters.segment_sends += sends;
        t.counters.segment_retransmissions += sends - 1;
        (t.bits as f64, t.counters, !delivered)
    }

    /// Repeats `draw` on scratch tallies until it returns `want`; keeps only
    /// the accepted draw.
    fn conditioned(
        &self,
        rng: &mut ChaCha8Rng,
        want: bool,
        mut draw: impl FnMut(&mut ChaCha8Rng, &mut Tally) -> bool,
    ) -> Option<Tally> {
        for _ in 0..self.config.attempt_cap {
            let mut scratch = Tally::default();
            if draw(rng, &mut scratch) == want {
                return Some(scratch);
            }
        }
        None
    }

    fn skipping_segment(&self, rng: &mut ChaCha8Rng, samples: u32) -> (f64, Counters, bool) {
        let path = &self.path;
        let failures = failures_before_success(path.p_s, rng);
        let mut counters = Counters::default();
        let mut bits = 0.0;

        let replayed = failures.min(f64::from(samples)) as u64;
        let mut failed_bits = 0u64;
        for _ in 0..replayed {
            match self.conditioned(rng, false, |rng, t| path.attempt(rng, t)) {
                Some(t) => {
                    failed_bits += t.bits;
                    counters.add(&t.counters);
                }
                None => return (bits, counters, true),
            }
        }
        if replayed > 0 {
            bits += failed_bits as f64 / replayed as f64 * failures;
        }

        // A successful attempt is m delivered fragments and a delivered ACK,
        // each independent, so condition each one separately.
        for _ in 0..path.m {
            match self.conditioned(rng, true, |rng, t| Path::send(&path.data, true, rng, t)) {
                Some(t) => {
                    bits += t.bits as f64;
                    counters.add(&t.counters);
                }
                None => return (bits, counters, true),
            }
        }
        match self.conditioned(rng, true, |rng, t| Path::send(&path.ack, false, rng, t)) {
            Some(t) => {
                bits += t.bits as f64;
                counters.add(&t.counters);
            }
            None => return (bits, counters, true),
        }

        counters.segment_sends += failures as u64 + 1;
        counters.segment_retransmissions += failures as u64;
        (bits, counters, false)
    }
}

pub fn simulate(config: &SimConfig) -> Result<SimReport, SimError> {
    let scenario = &config.scenario;
    scenario.validate()?;
    config.energy.validate()?;
    if config.replications == 0 {
        return Err(SimError::NoReplications);
    }
    if config.segment_cap == Some(0) {
        return Err(SimError::ZeroSegmentCap);
    }
    if config.attempt_cap == 0 {
        return Err(SimError::ZeroAttemptCap);
    }
    if config.sampling == (Sampling::SkipFailures { failure_samples: 0 }) {
        return Err(SimError::ZeroFailureSamples);
    }

    let frames = resolve_frames(scenario.mss_bytes, &scenario.layout).map_err(ModelError::from)?;
    let data: Vec<Link> = scenario
        .hops
        .iter()
        .map(|&h| Link::new(frames.data_frame(), h, config.fidelity))
        .collect();
    let ack: Vec<Link> = scenario
        .hops
        .iter()
        .rev()
        .map(|&h| Link::new(frames.ack_frame(), h, config.fidelity))
        .collect();
    let q_data: f64 = data.iter().map(|l| l.pass).product();
    let q_ack: f64 = ack.iter().map(|l| l.pass).product();
    let p_s = q_data.powi(frames.m as i32) * q_ack;
    if matches!(config.sampling, Sampling::SkipFailures { .. }) && p_s <= 0.0 {
        return Err(SimError::NeverSucceeds(p_s));
    }

    let segments = scenario.segments();
    let simulated = config.segment_cap.map_or(segments, |cap| cap.min(segments));
    let runner = Runner {
        path: Path {
            data,
            ack,
            m: frames.m,
            p_s,
        },
        config,
        simulated,
        scale: segments as f64 / simulated as f64,
    };

    let reps: Vec<Replication> = if config.parallel {
        (0..config.replications)
            .into_par_iter()
            .map(|i| runner.replication(i))
            .collect()
    } else {
        (0..config.replications).map(|i| runner.replication(i)).collect()
    };

    // Fold in replication order so the result does not depend on scheduling.
    let mut moments = Moments::default();
    let mut counters = Counters::default();
    let mut truncated_segments = 0;
    for rep in &reps {
        moments.push(rep.total_bits);
        counters.add(&rep.counters);
        truncated_segments += rep.truncated_segments;
    }

    let stddev = moments.sample_variance().sqrt();
    let stderr = stddev / f64::from(config.replications).sqrt();
    Ok(SimReport {
        scenario: scenario.clone(),
        replications: config.replications,
        master_seed: config.master_seed,
        fidelity: config.fidelity,
        sampling: config.sampling,
        segments,
        segments_simulated: simulated,
        mean_total_bits: moments.mean,
        stddev,
        stderr,
        ci95: 1.96 * stderr,
        mean_joules: config.energy.joules(moments.mean),
        stderr_joules: config.energy.joules(stderr),
        counters,
        truncated_segments,
    })
}
