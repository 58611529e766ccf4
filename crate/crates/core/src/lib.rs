//! Expected energy of a reliable stop-and-wait TCP transfer over a multi-hop
//! lossy wireless path, as a function of bit error rate, link-layer retry
//! limit, FEC redundancy, hop count and segment size.
//!
//! * [`framing`] turns an MSS and header layout into frame sizes.
//! * [`hopmodel`] gives per-attempt probabilities and truncated-ARQ costs.
//! * [`pathmodel`] combines hops into segment and transfer expectations.
//! * [`simulator`] replays the same process by Monte Carlo.
//! * [`explorer`] sweeps parameters and locates MSS crossover frontiers.

pub mod explorer;
pub mod framing;
pub mod hopmodel;
pub mod pathmodel;
pub mod record;
pub mod simulator;

pub use framing::{resolve_frames, FragmentMode, FragmentTable, FrameLayout, ResolvedFrames};
pub use hopmodel::{attempt_probs, frame_error_prob, hop_costs, hop_model, AttemptProbs, HopModel, HopParams};
pub use pathmodel::{evaluate, Cost, EnergyParams, ModelReport, PathScenario};
pub use simulator::{simulate, Fidelity, Sampling, SimConfig, SimReport};
