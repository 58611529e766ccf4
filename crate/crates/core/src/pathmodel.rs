//! Multi-hop and TCP-level expectations.
//!
//! A frame crosses `h` independent hops. A TCP segment is `m` such frames
//! followed by a TCP-ACK frame on the way back; the sender repeats the whole
//! segment until the TCP ACK arrives. Everything here is an expected number
//! of bits sent by all nodes; energy is applied at the end.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framing::{resolve_frames, FragmentTable, FrameLayout, FramingError, ResolvedFrames};
use crate::hopmodel::{hop_model, HopError, HopModel, HopParams};
use crate::record::{Record, Value};

/// Radio energy per bit and the number of listening neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub tx_uj_per_bit: f64,
    pub rx_uj_per_bit: f64,
    pub n_neighbors: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            tx_uj_per_bit: 0.24,
            rx_uj_per_bit: 0.21,
            n_neighbors: 2.0,
        }
    }
}

impl EnergyParams {
    /// Microjoules spent network-wide per bit put on the air.
    pub fn uj_per_bit(&self) -> f64 {
        self.tx_uj_per_bit + self.n_neighbors * self.rx_uj_per_bit
    }

    pub fn joules(&self, bits: f64) -> f64 {
        bits * self.uj_per_bit() * 1e-6
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if ok(self.tx_uj_per_bit) && ok(self.rx_uj_per_bit) && ok(self.n_neighbors) {
            Ok(())
        } else {
            Err(ModelError::InvalidEnergy)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathScenario {
    /// Hops from TCP sender to TCP receiver, in order.
    pub hops: Vec<HopParams>,
    pub layout: FrameLayout,
    pub mss_bytes: u32,
    /// Application bytes `M` to deliver.
    pub transfer_bytes: u64,
}

impl PathScenario {
    pub const DEFAULT_TRANSFER_BYTES: u64 = 51_200;

    pub fn uniform(h: usize, hop: HopParams, layout: FrameLayout, mss_bytes: u32) -> Self {
        Self {
            hops: vec![hop; h],
            layout,
            mss_bytes,
            transfer_bytes: Self::DEFAULT_TRANSFER_BYTES,
        }
    }

    /// Five hops, three attempts, BER 3e-4, no FEC, calibrated layout with the
    /// default per-MSS fragment counts.
    pub fn standard(mss_bytes: u32) -> Self {
        let layout = FrameLayout::calibrated().with_fragment_mode(FragmentTable::default().mode_for(mss_bytes));
        Self::uniform(5, HopParams { ber: 3e-4, r: 3 }, layout, mss_bytes)
    }

    pub fn with_ber(mut self, ber: f64) -> Self {
        self.hops.iter_mut().for_each(|h| h.ber = ber);
        self
    }

    pub fn with_retries(mut self, r: u32) -> Self {
        self.hops.iter_mut().for_each(|h| h.r = r);
        self
    }

    pub fn segments(&self) -> u64 {
        self.transfer_bytes.div_ceil(u64::from(self.mss_bytes))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hops.is_empty() {
            return Err(ModelError::NoHops);
        }
        if self.transfer_bytes == 0 {
            return Err(ModelError::EmptyTransfer);
        }
        for hop in &self.hops {
            hop.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Framing(#[from] FramingError),
    #[error(transparent)]
    Hop(#[from] HopError),
    #[error("a path needs at least one hop")]
    NoHops,
    #[error("transfer size must be positive")]
    EmptyTransfer,
    #[error("energy parameters must be finite and non-negative")]
    InvalidEnergy,
}

/// An expected cost that may be infinite because the segment can never get
/// through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cost {
    Finite(f64),
    Diverges,
}

impl Cost {
    fn from_f64(x: f64) -> Self {
        if x.is_finite() {
            Cost::Finite(x)
        } else {
            Cost::Diverges
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Cost::Finite(x) => Some(x),
            Cost::Diverges => None,
        }
    }

    pub fn map(self, f: impl FnOnce(f64) -> f64) -> Self {
        match self {
            Cost::Finite(x) => Cost::from_f64(f(x)),
            Cost::Diverges => Cost::Diverges,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Cost::Finite(_))
    }
}

impl From<Cost> for Value {
    fn from(c: Cost) -> Self {
        match c {
            Cost::Finite(x) => Value::Num(x),
            Cost::Diverges => Value::Diverges,
        }
    }
}

/// `Q_s = prod (1 - f_i)`.
pub fn path_success_prob(f: impl IntoIterator<Item = f64>) -> f64 {
    f.into_iter().map(|f| 1.0 - f).product()
}

/// End-to-end expectations for one frame crossing a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathBits {
    pub q_s: f64,
    /// `1 - q_s`, summed from per-hop loss probabilities.
    pub q_f: f64,
    /// Expected bits given delivery; `None` if some hop never delivers.
    pub e_s: Option<f64>,
    /// Expected bits given loss; `None` if the frame is never lost.
    pub e_f: Option<f64>,
}

pub fn path_bits(hops: &[HopModel]) -> PathBits {
    let q_s: f64 = hops.iter().map(|h| h.pass).product();
    let e_s = hops.iter().map(|h| h.h_s).sum::<Option<f64>>();

    // Loss at hop k: hops before k delivered, hop k dropped.
    let mut reach = 1.0;
    let mut spent_before = 0.0;
    let mut weighted = 0.0;
    let mut q_f = 0.0;
    for hop in hops {
        let w = reach * hop.f;
        if w > 0.0 {
            weighted += w * (spent_before + hop.h_f);
            q_f += w;
        }
        match hop.h_s {
            Some(hs) => spent_before += hs,
            None => break,
        }
        reach *= hop.pass;
    }
    let e_f = (q_f > 0.0).then(|| weighted / q_f);

    PathBits { q_s, q_f, e_s, e_f }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("fragment failure cost is undefined when every fragment {0}")]
pub struct DegenerateFragments(&'static str);

fn choose(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (1..=k).fold(1.0, |acc, j| acc * f64::from(n - k + j) / f64::from(j))
}

fn check_q(q_s: f64) -> Result<(), DegenerateFragments> {
    if q_s <= 0.0 {
        Err(DegenerateFragments("fails"))
    } else if q_s >= 1.0 {
        Err(DegenerateFragments("succeeds"))
    } else {
        Ok(())
    }
}

/// `sum_{k=1}^{m} C(m,k) (k e_f + (m-k) e_s) (1-q)^k q^(m-k)`: the bits spent on
/// `m` independent fragments, weighted by the event that `k >= 1` fail but
/// not divided by the probability of that event.
pub fn fragment_failure_bits_unnormalized(m: u32, q_s: f64, e_s: f64, e_f: f64) -> f64 {
    (1..=m)
        .map(|k| {
            choose(m, k)
                * (f64::from(k) * e_f + f64::from(m - k) * e_s)
                * (1.0 - q_s).powi(k as i32)
                * q_s.powi((m - k) as i32)
        })
        .sum()
}

/// Expected bits spent on the `m` fragments of a segment given that at least
/// one of them is lost.
pub fn fragment_failure_bits(m: u32, q_s: f64, e_s: f64, e_f: f64) -> Result<f64, DegenerateFragments> {
    check_q(q_s)?;
    let any_lost = -(f64::from(m) * q_s.ln()).exp_m1();
    Ok(fragment_failure_bits_unnormalized(m, q_s, e_s, e_f) / any_lost)
}

/// The published closed form `m (1-q) e_f + m e_s q (1 - q^m)`. Kept for
/// comparison; it is neither the normalized expectation nor the exact value
/// of the unnormalized sum, which is `m (1-q) e_f + m e_s q (1 - q^(m-1))`.
pub fn paper_closed_form_fragment_bits(m: u32, q_s: f64, e_s: f64, e_f: f64) -> f64 {
    let m_f = f64::from(m);
    m_f * (1.0 - q_s) * e_f + m_f * e_s * q_s * (1.0 - q_s.powi(m as i32))
}

/// Which fragment-failure cost feeds the segment failure term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FragmentCost {
    /// Conditional expectation given at least one fragment is lost.
    #[default]
    Normalized,
    /// The raw weighted sum, without conditioning.
    Unnormalized,
    /// The published closed form.
    PaperClosedForm,
}

impl FragmentCost {
    fn eval(self, m: u32, q_s: f64, e_s: f64, e_f: f64) -> Result<f64, DegenerateFragments> {
        match self {
            FragmentCost::Normalized => fragment_failure_bits(m, q_s, e_s, e_f),
            FragmentCost::Unnormalized => {
                check_q(q_s)?;
                Ok(fragment_failure_bits_unnormalized(m, q_s, e_s, e_f))
            }
            FragmentCost::PaperClosedForm => {
                check_q(q_s)?;
                Ok(paper_closed_form_fragment_bits(m, q_s, e_s, e_f))
            }
        }
    }
}

/// Every intermediate and final quantity of one model evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub scenario: PathScenario,
    pub energy: EnergyParams,
    pub frames: ResolvedFrames,
    pub data_hops: Vec<HopModel>,
    /// ACK hop models, in the order the TCP ACK crosses them.
    pub ack_hops: Vec<HopModel>,
    pub q_s: f64,
    pub q_s_ack: f64,
    pub e_s: Option<f64>,
    pub e_f: Option<f64>,
    pub e_s_ack: Option<f64>,
    pub e_f_ack: Option<f64>,
    /// Expected fragment bits given at least one fragment is lost.
    pub i_f: Option<f64>,
    /// Probability one segment attempt (all fragments plus TCP ACK) succeeds.
    pub p_s: f64,
    pub s_s: Option<f64>,
    pub s_f: Option<f64>,
    /// Expected bits per delivered segment.
    pub s: Cost,
    pub segments: u64,
    pub total_bits: Cost,
    pub total_joules: Cost,
}

impl ModelReport {
    pub fn diverges(&self) -> bool {
        !self.total_bits.is_finite()
    }

    pub fn to_record(&self) -> Record {
        let opt = |x: Option<f64>| x.map_or(Value::Undefined, Value::Num);
        let mut rec = scenario_record(&self.scenario, "model");
        rec.push("m", Value::Int(u64::from(self.frames.m)));
        rec.push("d_data", Value::Int(self.frames.d_data_bits));
        rec.push("c_data", Value::Int(self.frames.c_data_bits));
        rec.push("d_ack", Value::Int(self.frames.d_ack_bits));
        rec.push("c_ack", Value::Int(self.frames.c_ack_bits));
        rec.push("q_s", Value::Num(self.q_s));
        rec.push("q_s_ack", Value::Num(self.q_s_ack));
        rec.push("e_s", opt(self.e_s));
        rec.push("e_f", opt(self.e_f));
        rec.push("e_s_ack", opt(self.e_s_ack));
        rec.push("e_f_ack", opt(self.e_f_ack));
        rec.push("i_f", opt(self.i_f));
        rec.push("p_s", Value::Num(self.p_s));
        rec.push("s_s", opt(self.s_s));
        rec.push("s_f", opt(self.s_f));
        rec.push("s", self.s.into());
        rec.push("segments", Value::Int(self.segments));
        rec.push("total_bits", self.total_bits.into());
        rec.push("total_joules", self.total_joules.into());
        rec
    }
}

/// Columns [`ModelReport::to_record`] appends after the scenario columns.
pub(crate) const DETAIL_COLUMNS: [&str; 19] = [
    "m",
    "d_data",
    "c_data",
    "d_ack",
    "c_ack",
    "q_s",
    "q_s_ack",
    "e_s",
    "e_f",
    "e_s_ack",
    "e_f_ack",
    "i_f",
    "p_s",
    "s_s",
    "s_f",
    "s",
    "segments",
    "total_bits",
    "total_joules",
];

/// Leading columns shared by model and simulator records.
pub(crate) fn scenario_record(scenario: &PathScenario, source: &str) -> Record {
    /// The shared value when all hops agree, otherwise the per-hop values
    /// joined with `;`.
    fn per_hop<T: PartialEq + ToString>(xs: Vec<T>, one: impl Fn(&T) -> Value) -> Value {
        if xs.windows(2).all(|w| w[0] == w[1]) {
            one(&xs[0])
        } else {
            Value::Text(xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"))
        }
    }
    let mut rec = Record::default();
    rec.push("source", Value::Text(source.to_owned()));
    rec.push("mss", Value::Int(u64::from(scenario.mss_bytes)));
    rec.push("h", Value::Int(scenario.hops.len() as u64));
    rec.push(
        "ber",
        per_hop(scenario.hops.iter().map(|h| h.ber).collect(), |&b| Value::Num(b)),
    );
    rec.push(
        "r",
        per_hop(scenario.hops.iter().map(|h| h.r).collect(), |&r| {
            Value::Int(u64::from(r))
        }),
    );
    rec.push("alpha", Value::Num(scenario.layout.alpha));
    rec.push("transfer_bytes", Value::Int(scenario.transfer_bytes));
    rec
}

/// Segment-level model from already-evaluated hops.
///
/// `ack_hops` must be in the order the TCP ACK traverses them (receiver to
/// sender).
pub fn segment_model(
    scenario: &PathScenario,
    frames: ResolvedFrames,
    data_hops: Vec<HopModel>,
    ack_hops: Vec<HopModel>,
    energy: EnergyParams,
    fragment_cost: FragmentCost,
) -> ModelReport {
    let m = frames.m;
    let m_f = f64::from(m);
    let data = path_bits(&data_hops);
    let ack = path_bits(&ack_hops);

    // 1 - q_s^m without cancellation.
    let frag_lost = if data.q_f == 0.0 {
        0.0
    } else {
        -(m_f * (-data.q_f).ln_1p()).exp_m1()
    };
    let all_frags = 1.0 - frag_lost;
    let p_s = all_frags * ack.q_s;
    let attempt_fails = frag_lost + all_frags * ack.q_f;

    let i_f = match (data.e_s, data.e_f) {
        (Some(es), Some(ef)) => fragment_cost.eval(m, data.q_s, es, ef).ok(),
        (None, Some(ef)) if data.q_s == 0.0 => Some(m_f * ef),
        _ => None,
    };

    let s_s = match (data.e_s, ack.e_s) {
        (Some(es), Some(esa)) => Some(m_f * es + esa),
        _ => None,
    };

    let s_f = if attempt_fails > 0.0 {
        let frag_term = if frag_lost > 0.0 {
            i_f.map(|i| i * frag_lost)
        } else {
            Some(0.0)
        };
        let ack_term = if all_frags > 0.0 && ack.q_f > 0.0 {
            match (data.e_s, ack.e_f) {
                (Some(es), Some(efa)) => Some((m_f * es + efa) * all_frags * ack.q_f),
                _ => None,
            }
        } else {
            Some(0.0)
        };
        frag_term.zip(ack_term).map(|(a, b)| (a + b) / attempt_fails)
    } else {
        None
    };

    let s = match (s_s, p_s > 0.0) {
        (Some(ss), true) => {
            let retries = attempt_fails / p_s;
            match s_f {
                Some(sf) if retries > 0.0 => Cost::from_f64(sf * retries + ss),
                _ => Cost::Finite(ss),
            }
        }
        _ => Cost::Diverges,
    };

    let segments = scenario.segments();
    let total_bits = s.map(|s| s * segments as f64);
    let total_joules = total_bits.map(|b| energy.joules(b));

    ModelReport {
        scenario: scenario.clone(),
        energy,
        frames,
        data_hops,
        ack_hops,
        q_s: data.q_s,
        q_s_ack: ack.q_s,
        e_s: data.e_s,
        e_f: data.e_f,
        e_s_ack: ack.e_s,
        e_f_ack: ack.e_f,
        i_f,
        p_s,
        s_s,
        s_f,
        s,
        segments,
        total_bits,
        total_joules,
    }
}

pub fn evaluate(scenario: &PathScenario, energy: EnergyParams) -> Result<ModelReport, ModelError> {
    evaluate_with(scenario, energy, FragmentCost::Normalized)
}

pub fn evaluate_with(
    scenario: &PathScenario,
    energy: EnergyParams,
    fragment_cost: FragmentCost,
) -> Result<ModelReport, ModelError> {
    scenario.validate()?;
    energy.validate()?;
    let frames = resolve_frames(scenario.mss_bytes, &scenario.layout)?;
    let data_hops = scenario
        .hops
        .iter()
        .map(|&h| hop_model(frames.data_frame(), h))
        .collect();
    let ack_hops = scenario
        .hops
        .iter()
        .rev()
        .map(|&h| hop_model(frames.ack_frame(), h))
        .collect();
    Ok(segment_model(
        scenario,
        frames,
        data_hops,
        ack_hops,
        energy,
        fragment_cost,
    ))
}
