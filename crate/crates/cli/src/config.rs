//! TOML run configuration. Every field has a default, so an empty file (or
//! none at all) describes the standard five-hop scenario.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, ensure, Context as _};
use lln_energy::explorer::{CrossoverSpec, Family, Grid, SweepAxis};
use lln_energy::framing::{FragmentMode, FragmentTable, FrameLayout};
use lln_energy::hopmodel::HopParams;
use lln_energy::pathmodel::{EnergyParams, PathScenario};
use lln_energy::simulator::{Fidelity, SimConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub layout: LayoutSection,
    /// MSS in bytes -> fragment count, used when `layout.fragment_mode` is
    /// `"table"`.
    pub fragment_table: BTreeMap<String, u32>,
    pub energy: EnergyParams,
    pub sim: SimSection,
    pub sweep: SweepSection,
    pub frontier: FrontierSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut layout = LayoutSection::default();
        layout.fill_defaults();
        Self {
            scenario: ScenarioSection::default(),
            layout,
            fragment_table: FragmentTable::default()
                .0
                .into_iter()
                .map(|(mss, m)| (mss.to_string(), m))
                .collect(),
            energy: EnergyParams::default(),
            sim: SimSection::default(),
            sweep: SweepSection::default(),
            frontier: FrontierSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub hops: usize,
    pub ber: f64,
    pub r: u32,
    pub mss_bytes: u32,
    pub transfer_bytes: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            hops: 5,
            ber: 3e-4,
            r: 3,
            mss_bytes: 64,
            transfer_bytes: PathScenario::DEFAULT_TRANSFER_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FragmentSetting {
    /// Look the MSS up in `[fragment_table]`; unlisted sizes are computed.
    Table,
    /// Fewest fragments that fit the MTU.
    Computed,
    /// Always `fragment_count` fragments.
    Explicit,
}

/// Header sizes may be given in bits (`*_bits`) or bytes (`*_bytes`), not
/// both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtu_bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtu_bytes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ll_data_header_bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ll_data_header_bytes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ll_ack_bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ll_ack_bytes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frag_header_bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frag_header_bytes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ip_header_bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ip_header_bytes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tcp_header_bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tcp_header_bytes: Option<u32>,
    pub alpha: f64,
    pub fragment_mode: FragmentSetting,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fragment_count: Option<u32>,
}

impl Default for LayoutSection {
    /// Header sizes unset; [`LayoutSection::fill_defaults`] supplies them.
    fn default() -> Self {
        Self {
            mtu_bits: None,
            mtu_bytes: None,
            ll_data_header_bits: None,
            ll_data_header_bytes: None,
            ll_ack_bits: None,
            ll_ack_bytes: None,
            frag_header_bits: None,
            frag_header_bytes: None,
            ip_header_bits: None,
            ip_header_bytes: None,
            tcp_header_bits: None,
            tcp_header_bytes: None,
            alpha: 0.0,
            fragment_mode: FragmentSetting::Table,
            fragment_count: None,
        }
    }
}

impl LayoutSection {
    /// Writes the default bit count for every size given in neither unit.
    pub fn fill_defaults(&mut self) {
        let d = FrameLayout::calibrated();
        let fields = [
            (&mut self.mtu_bits, self.mtu_bytes, d.mtu_bits),
            (
                &mut self.ll_data_header_bits,
                self.ll_data_header_bytes,
                d.ll_data_header_bits,
            ),
            (&mut self.ll_ack_bits, self.ll_ack_bytes, d.ll_ack_bits),
            (&mut self.frag_header_bits, self.frag_header_bytes, d.frag_header_bits),
            (&mut self.ip_header_bits, self.ip_header_bytes, d.ip_header_bits),
            (&mut self.tcp_header_bits, self.tcp_header_bytes, d.tcp_header_bits),
        ];
        for (bits, bytes, default) in fields {
            if bits.is_none() && bytes.is_none() {
                *bits = Some(default);
            }
        }
    }
}

fn bits(name: &str, bits: Option<u32>, bytes: Option<u32>, default: u32) -> anyhow::Result<u32> {
    match (bits, bytes) {
        (Some(_), Some(_)) => bail!("layout: set either {name}_bits or {name}_bytes, not both"),
        (Some(b), None) => Ok(b),
        (None, Some(b)) => b
            .checked_mul(8)
            .with_context(|| format!("layout: {name}_bytes = {b} is too large")),
        (None, None) => Ok(default),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingSetting {
    /// Skip-ahead sampling when the segment success probability is small.
    Auto,
    Direct,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub replications: u32,
    pub seed: u64,
    pub fidelity: Fidelity,
    pub sampling: SamplingSetting,
    /// Replayed failed attempts per segment in skip mode.
    pub failure_samples: u32,
    /// Segment success probability below which `auto` skips ahead.
    pub skip_below: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment_cap: Option<u64>,
    pub attempt_cap: u64,
    pub parallel: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            replications: 1000,
            seed: 1,
            fidelity: Fidelity::FrameLevel,
            sampling: SamplingSetting::Auto,
            failure_samples: 16,
            skip_below: 1e-2,
            segment_cap: None,
            attempt_cap: SimConfig::DEFAULT_ATTEMPT_CAP,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Log,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    /// Explicit grid; when set, `scale`/`start`/`stop`/`points` are ignored.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    pub scale: Scale,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub mss: Vec<u32>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Ber,
            values: None,
            scale: Scale::Log,
            start: 1e-6,
            stop: 8e-4,
            points: 30,
            mss: vec![64, 512],
        }
    }
}

impl SweepSection {
    pub fn grid(&self) -> Grid {
        match (&self.values, self.scale) {
            (Some(v), _) => Grid::Explicit(v.clone()),
            (None, Scale::Log) => Grid::Log {
                start: self.start,
                stop: self.stop,
                points: self.points,
            },
            (None, Scale::Linear) => Grid::Linear {
                start: self.start,
                stop: self.stop,
                points: self.points,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyAxis {
    R,
    Alpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontierSection {
    pub family: FamilyAxis,
    pub values: Vec<f64>,
    pub hops: Vec<usize>,
    pub mss_short: u32,
    pub mss_long: u32,
}

impl Default for FrontierSection {
    fn default() -> Self {
        Self {
            family: FamilyAxis::R,
            values: (1..=7).map(f64::from).collect(),
            hops: (1..=9).collect(),
            mss_short: 64,
            mss_long: 512,
        }
    }
}

impl FrontierSection {
    pub fn family(&self) -> anyhow::Result<Family> {
        ensure!(!self.values.is_empty(), "frontier: values must not be empty");
        Ok(match self.family {
            FamilyAxis::Alpha => Family::Alpha(self.values.clone()),
            FamilyAxis::R => Family::Retries(
                self.values
                    .iter()
                    .map(|&v| {
                        ensure!(
                            v >= 1.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX),
                            "frontier: r = {v} is not a positive integer"
                        );
                        Ok(v as u32)
                    })
                    .collect::<anyhow::Result<_>>()?,
            ),
        })
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut config: Self = toml::from_str(text)?;
        config.layout.fill_defaults();
        config.check()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Validates everything that can be checked without running a model.
    pub fn check(&self) -> anyhow::Result<()> {
        let s = &self.scenario;
        ensure!(s.hops > 0, "scenario: hops must be positive");
        HopParams::new(s.ber, s.r).context("scenario")?;
        ensure!(s.mss_bytes > 0, "scenario: mss_bytes must be positive");
        ensure!(s.transfer_bytes > 0, "scenario: transfer_bytes must be positive");
        self.layout()?.validate().context("layout")?;
        self.fragment_table()?;
        self.energy.validate().context("energy")?;
        ensure!(self.sim.replications > 0, "sim: replications must be positive");
        ensure!(self.sim.failure_samples > 0, "sim: failure_samples must be positive");
        ensure!(self.sim.attempt_cap > 0, "sim: attempt_cap must be positive");
        ensure!(self.sim.segment_cap != Some(0), "sim: segment_cap must be positive");
        ensure!(
            (0.0..=1.0).contains(&self.sim.skip_below),
            "sim: skip_below must be a probability"
        );
        ensure!(!self.sweep.mss.is_empty(), "sweep: mss must not be empty");
        self.sweep.grid().values().context("sweep")?;
        self.frontier.family()?;
        ensure!(!self.frontier.hops.is_empty(), "frontier: hops must not be empty");
        ensure!(
            !self.frontier.hops.contains(&0),
            "frontier: hop counts must be positive"
        );
        Ok(())
    }

    pub fn fragment_table(&self) -> anyhow::Result<FragmentTable> {
        let mut table = BTreeMap::new();
        for (mss, &m) in &self.fragment_table {
            let mss: u32 = mss
                .parse()
                .with_context(|| format!("fragment_table: key {mss:?} is not an MSS in bytes"))?;
            ensure!(m > 0, "fragment_table: fragment count for MSS {mss} must be positive");
            table.insert(mss, m);
        }
        Ok(FragmentTable(table))
    }

    /// Layout with the fragment mode left for [`RunConfig::layout_for`] to
    /// pick per MSS.
    pub fn layout(&self) -> anyhow::Result<FrameLayout> {
        let l = &self.layout;
        let d = FrameLayout::calibrated();
        let mode = match l.fragment_mode {
            FragmentSetting::Explicit => {
                let m = l
                    .fragment_count
                    .context("layout: fragment_mode = \"explicit\" needs fragment_count")?;
                FragmentMode::Explicit(m)
            }
            FragmentSetting::Computed | FragmentSetting::Table => FragmentMode::Computed,
        };
        Ok(FrameLayout {
            mtu_bits: bits("mtu", l.mtu_bits, l.mtu_bytes, d.mtu_bits)?,
            ll_data_header_bits: bits(
                "ll_data_header",
                l.ll_data_header_bits,
                l.ll_data_header_bytes,
                d.ll_data_header_bits,
            )?,
            ll_ack_bits: bits("ll_ack", l.ll_ack_bits, l.ll_ack_bytes, d.ll_ack_bits)?,
            frag_header_bits: bits(
                "frag_header",
                l.frag_header_bits,
                l.frag_header_bytes,
                d.frag_header_bits,
            )?,
            ip_header_bits: bits("ip_header", l.ip_header_bits, l.ip_header_bytes, d.ip_header_bits)?,
            tcp_header_bits: bits("tcp_header", l.tcp_header_bits, l.tcp_header_bytes, d.tcp_header_bits)?,
            alpha: l.alpha,
            fragment_mode: mode,
        })
    }

    /// The fragment table when it is in effect.
    pub fn active_table(&self) -> anyhow::Result<Option<FragmentTable>> {
        Ok(match self.layout.fragment_mode {
            FragmentSetting::Table => Some(self.fragment_table()?),
            _ => None,
        })
    }

    pub fn layout_for(&self, mss: u32) -> anyhow::Result<FrameLayout> {
        let layout = self.layout()?;
        Ok(match self.active_table()? {
            Some(table) => layout.with_fragment_mode(table.mode_for(mss)),
            None => layout,
        })
    }

    pub fn scenario(&self) -> anyhow::Result<PathScenario> {
        let s = &self.scenario;
        let layout = self.layout_for(s.mss_bytes)?;
        let mut sc = PathScenario::uniform(s.hops, HopParams { ber: s.ber, r: s.r }, layout, s.mss_bytes);
        sc.transfer_bytes = s.transfer_bytes;
        Ok(sc)
    }

    pub fn crossover_base(&self) -> anyhow::Result<CrossoverSpec> {
        Ok(CrossoverSpec {
            h: self.scenario.hops,
            r: self.scenario.r,
            alpha: self.layout.alpha,
            layout: self.layout()?,
            fragments: self.active_table()?,
            mss_short: self.frontier.mss_short,
            mss_long: self.frontier.mss_long,
            transfer_bytes: self.scenario.transfer_bytes,
            energy: self.energy,
        })
    }
}
