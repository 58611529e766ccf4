//! One-hop link model: per-attempt outcome probabilities under independent
//! bit errors, and the expected bits spent by truncated ARQ with at most `r`
//! attempts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framing::FrameSizes;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopParams {
    /// Independent per-bit error rate `B`.
    pub ber: f64,
    /// Maximum link-layer transmission attempts.
    pub r: u32,
}

impl HopParams {
    pub fn new(ber: f64, r: u32) -> Result<Self, HopError> {
        let hop = Self { ber, r };
        hop.validate()?;
        Ok(hop)
    }

    pub fn validate(&self) -> Result<(), HopError> {
        if !(0.0..1.0).contains(&self.ber) {
            return Err(HopError::InvalidBer(self.ber));
        }
        if self.r == 0 {
            return Err(HopError::ZeroAttempts);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HopError {
    #[error("bit error rate must lie in [0, 1), got {0}")]
    InvalidBer(f64),
    #[error("at least one link-layer attempt is required")]
    ZeroAttempts,
}

/// Outcome probabilities of a single link-layer attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptProbs {
    /// Data frame lost (more bit errors than FEC can correct).
    pub p_fail: f64,
    /// Data frame delivered, link ACK lost.
    pub p_partial: f64,
    /// Data frame and link ACK both delivered.
    pub p_succ: f64,
}

/// Truncated-ARQ expectations for one hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopModel {
    pub probs: AttemptProbs,
    /// Probability the receiver never gets the frame within `r` attempts.
    pub f: f64,
    /// `1 - f`, computed without cancellation.
    pub pass: f64,
    /// Expected bits sent given the frame got through. `None` when the hop
    /// never delivers (`f = 1`).
    pub h_s: Option<f64>,
    /// Bits sent given the frame did not get through.
    pub h_f: f64,
}

impl HopModel {
    pub fn is_degenerate(&self) -> bool {
        self.h_s.is_none()
    }
}

/// Sums a run of binomial pmf terms starting at `start`, moving in the
/// given direction, until the terms are negligible or the range
/// ends. Works on a log scale so `(1 - B)^d` may underflow freely.
fn binomial_tail(d: u64, ber: f64, start: u64, upward: bool) -> f64 {
    let ln_b = ber.ln();
    let ln_q = (-ber).ln_1p();
    // ln C(d, start)
    let k = start.min(d - start);
    let ln_choose: f64 = (1..=k).map(|j| ((d - k + j) as f64 / j as f64).ln()).sum();
    let ln_first = ln_choose + start as f64 * ln_b + (d - start) as f64 * ln_q;

    let odds = ber / (1.0 - ber);
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut i = start;
    loop {
        let ratio = if upward {
            if i == d {
                break;
            }
            let r = (d - i) as f64 / (i + 1) as f64 * odds;
            i += 1;
            r
        } else {
            if i == 0 {
                break;
            }
            let r = i as f64 / (d - i + 1) as f64 / odds;
            i -= 1;
            r
        };
        term *= ratio;
        sum += term;
        if ratio < 1.0 && term < sum * 1e-18 {
            break;
        }
    }
    (ln_first + sum.ln()).exp()
}

/// Probability that a `d_bits` frame carries more than `c_bits` bit errors.
///
/// Sums whichever binomial tail lies away from the mean, so small failure
/// probabilities keep full relative precision.
pub fn frame_error_prob(d_bits: u64, c_bits: u64, ber: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&ber));
    if ber == 0.0 || c_bits >= d_bits {
        return 0.0;
    }
    let mean = d_bits as f64 * ber;
    let p = if (c_bits + 1) as f64 > mean {
        binomial_tail(d_bits, ber, c_bits + 1, true)
    } else {
        1.0 - binomial_tail(d_bits, ber, c_bits, false)
    };
    p.clamp(0.0, 1.0)
}

pub fn attempt_probs(frame: FrameSizes, ber: f64) -> AttemptProbs {
    let p_fail = frame_error_prob(frame.d_bits, frame.c_bits, ber);
    let ack_log = frame.a_bits as f64 * (-ber).ln_1p();
    let ack_ok = ack_log.exp();
    let ack_lost = -ack_log.exp_m1();
    let delivered = 1.0 - p_fail;
    AttemptProbs {
        p_fail,
        p_partial: delivered * ack_lost,
        p_succ: delivered * ack_ok,
    }
}

fn choose(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (1..=k).fold(1.0, |acc, j| acc * f64::from(n - k + j) / f64::from(j))
}

pub fn hop_model(frame: FrameSizes, hop: HopParams) -> HopModel {
    hop_costs(attempt_probs(frame, hop.ber), frame, hop.r)
}

/// Truncated-ARQ costs of one hop for given per-attempt probabilities.
pub fn hop_costs(probs: AttemptProbs, frame: FrameSizes, r: u32) -> HopModel {
    let AttemptProbs {
        p_fail,
        p_partial,
        p_succ,
    } = probs;
    let d = frame.d_bits as f64;
    let a = frame.a_bits as f64;

    let f = p_fail.powi(r as i32);
    let pass = if p_fail == 0.0 {
        1.0
    } else {
        -(f64::from(r) * p_fail.ln()).exp_m1()
    };
    let h_f = f64::from(r) * d;

    let h_s = (pass > 0.0).then(|| {
        // Every attempt a failure or partial failure, with at least one partial.
        let exhausted: f64 = (1..=r)
            .map(|i| {
                choose(r, i)
                    * p_partial.powi(i as i32)
                    * p_fail.powi((r - i) as i32)
                    * (f64::from(r) * d + f64::from(i) * a)
            })
            .sum();
        // First success at attempt k after i partial failures.
        let succeeded: f64 = (1..=r)
            .map(|k| {
                let prior: f64 = (0..k)
                    .map(|i| {
                        choose(k - 1, i)
                            * p_partial.powi(i as i32)
                            * p_fail.powi((k - 1 - i) as i32)
                            * (f64::from(k) * d + f64::from(i + 1) * a)
                    })
                    .sum();
                p_succ * prior
            })
            .sum();
        (exhausted + succeeded) / pass
    });

    HopModel {
        probs,
        f,
        pass,
        h_s,
        h_f,
    }
}
