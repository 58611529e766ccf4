//! Parameter sweeps and MSS crossover frontiers.
//!
//! A sweep varies one parameter over a grid and evaluates the model for each
//! grid point and segment size. A crossover is the bit error rate at which a
//! long segment stops being cheaper than a short one; a frontier maps that
//! rate over hop counts for a family of retry limits or FEC ratios.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framing::{FragmentTable, FrameLayout};
use crate::hopmodel::HopParams;
use crate::pathmodel::{
    evaluate, scenario_record, Cost, EnergyParams, ModelError, ModelReport, PathScenario, DETAIL_COLUMNS,
};
use crate::record::{Record, Value};

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Ber,
    #[serde(rename = "r")]
    Retries,
    Alpha,
    #[serde(rename = "h")]
    Hops,
    Mss,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Ber => "ber",
            SweepAxis::Retries => "r",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Hops => "h",
            SweepAxis::Mss => "mss",
        }
    }

    fn is_integral(self) -> bool {
        matches!(self, SweepAxis::Retries | SweepAxis::Hops | SweepAxis::Mss)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid values, either listed or generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    Explicit(Vec<f64>),
    /// `points` values evenly spaced in log scale, both ends included.
    Log {
        start: f64,
        stop: f64,
        points: usize,
    },
    /// `points` values evenly spaced, both ends included.
    Linear {
        start: f64,
        stop: f64,
        points: usize,
    },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>, ExplorerError> {
        let spaced = |start: f64, stop: f64, points: usize, log: bool| -> Result<Vec<f64>, ExplorerError> {
            if points == 0 {
                return Err(ExplorerError::EmptyGrid);
            }
            if !start.is_finite() || !stop.is_finite() || (log && (start <= 0.0 || stop <= 0.0)) {
                return Err(ExplorerError::InvalidRange { start, stop });
            }
            if points == 1 {
                return Ok(vec![start]);
            }
            let (a, b) = if log { (start.ln(), stop.ln()) } else { (start, stop) };
            let n = (points - 1) as f64;
            Ok((0..points)
                .map(|i| {
                    // pin the endpoints exactly
                    if i == 0 {
                        return start;
                    }
                    if i == points - 1 {
                        return stop;
                    }
                    let x = a + (b - a) * i as f64 / n;
                    if log {
                        x.exp()
                    } else {
                        x
                    }
                })
                .collect())
        };
        let values = match self {
            Grid::Explicit(v) => v.clone(),
            Grid::Log { start, stop, points } => spaced(*start, *stop, *points, true)?,
            Grid::Linear { start, stop, points } => spaced(*start, *stop, *points, false)?,
        };
        if values.is_empty() {
            return Err(ExplorerError::EmptyGrid);
        }
        let rising = values.windows(2).all(|w| w[0] < w[1]);
        let falling = values.windows(2).all(|w| w[0] > w[1]);
        if !(rising || falling) {
            return Err(ExplorerError::NotMonotone);
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExplorerError {
    #[error("grid is empty")]
    EmptyGrid,
    #[error("grid must be strictly monotone")]
    NotMonotone,
    #[error("grid range {start}..{stop} is not usable")]
    InvalidRange { start: f64, stop: f64 },
    #[error("{axis} takes positive integers, got {value}")]
    NotInteger { axis: SweepAxis, value: f64 },
    #[error("at least one MSS is needed")]
    NoMss,
    #[error("a family needs at least one member")]
    EmptyFamily,
    #[error("hop counts must be positive")]
    ZeroHops,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Resolves the fragment mode for each MSS; without a table the base
/// layout's mode is used unchanged.
fn layout_for(base: &FrameLayout, fragments: Option<&FragmentTable>, mss: u32) -> FrameLayout {
    match fragments {
        Some(table) => base.clone().with_fragment_mode(table.mode_for(mss)),
        None => base.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: PathScenario,
    pub energy: EnergyParams,
    pub axis: SweepAxis,
    pub grid: Grid,
    /// Segment sizes compared at every grid point. Ignored for the MSS axis.
    pub mss: Vec<u32>,
    pub fragments: Option<FragmentTable>,
}

impl SweepSpec {
    pub fn new(base: PathScenario, axis: SweepAxis, grid: Grid) -> Self {
        Self {
            base,
            energy: EnergyParams::default(),
            axis,
            grid,
            mss: vec![64, 512],
            fragments: Some(FragmentTable::default()),
        }
    }

    fn points(&self) -> Result<Vec<(f64, PathScenario)>, ExplorerError> {
        self.energy.validate()?;
        let values = self.grid.values()?;
        if self.axis.is_integral() {
            if let Some(&value) = values
                .iter()
                .find(|v| !(v.fract() == 0.0 && **v >= 1.0 && **v <= f64::from(u32::MAX)))
            {
                return Err(ExplorerError::NotInteger { axis: self.axis, value });
            }
        }
        let mss_list = if self.axis == SweepAxis::Mss {
            vec![0]
        } else {
            self.mss.clone()
        };
        if mss_list.is_empty() {
            return Err(ExplorerError::NoMss);
        }
        if self.base.hops.is_empty() {
            return Err(ModelError::NoHops.into());
        }

        let mut points = Vec::with_capacity(values.len() * mss_list.len());
        for &v in &values {
            for &mss in &mss_list {
                let mut sc = self.base.clone();
                match self.axis {
                    SweepAxis::Ber => sc = sc.with_ber(v),
                    SweepAxis::Retries => sc = sc.with_retries(v as u32),
                    SweepAxis::Alpha => sc.layout.alpha = v,
                    SweepAxis::Hops => sc.hops = vec![sc.hops[0]; v as usize],
                    SweepAxis::Mss => {}
                }
                sc.mss_bytes = if self.axis == SweepAxis::Mss { v as u32 } else { mss };
                sc.layout = layout_for(&sc.layout, self.fragments.as_ref(), sc.mss_bytes);
                points.push((v, sc));
            }
        }
        Ok(points)
    }
}

/// One evaluated grid point. Per-point failures are kept, not raised.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub scenario: PathScenario,
    pub report: Result<ModelReport, ModelError>,
}

impl SweepRow {
    pub fn total_joules(&self) -> Option<Cost> {
        self.report.as_ref().ok().map(|r| r.total_joules)
    }

    pub fn to_record(&self) -> Record {
        let mut rec = Record::default();
        rec.push("axis", Value::Text(self.axis.name().to_owned()));
        rec.push("value", Value::Num(self.value));
        match &self.report {
            Ok(report) => {
                rec.extend(report.to_record());
                rec.push("error", Value::Text(String::new()));
            }
            Err(e) => {
                rec.extend(scenario_record(&self.scenario, "model"));
                DETAIL_COLUMNS.iter().for_each(|&k| rec.push(k, Value::Undefined));
                rec.push("error", Value::Text(e.to_string()));
            }
        }
        rec
    }
}

/// Evaluates every (grid point, MSS) pair, grid-major, in grid order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, ExplorerError> {
    let points = spec.points()?;
    Ok(points
        .into_par_iter()
        .map(|(value, scenario)| SweepRow {
            axis: spec.axis,
            value,
            report: evaluate(&scenario, spec.energy),
            scenario,
        })
        .collect())
}

/// Fixed parameters of a crossover search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverSpec {
    pub h: usize,
    pub r: u32,
    pub alpha: f64,
    pub layout: FrameLayout,
    pub fragments: Option<FragmentTable>,
    pub mss_short: u32,
    pub mss_long: u32,
    pub transfer_bytes: u64,
    pub energy: EnergyParams,
}

impl CrossoverSpec {
    pub const SCAN_LO: f64 = 1e-7;
    pub const SCAN_HI: f64 = 1e-1;
    /// Scan points per decade of BER.
    pub const SCAN_DENSITY: usize = 20;
    pub const REL_TOL: f64 = 1e-3;

    /// Calibrated layout, default fragment table, MSS 64 against 512.
    pub fn new(h: usize, r: u32, alpha: f64) -> Self {
        Self {
            h,
            r,
            alpha,
            layout: FrameLayout::calibrated(),
            fragments: Some(FragmentTable::default()),
            mss_short: 64,
            mss_long: 512,
            transfer_bytes: PathScenario::DEFAULT_TRANSFER_BYTES,
            energy: EnergyParams::default(),
        }
    }

    pub fn scenario(&self, mss: u32, ber: f64) -> PathScenario {
        let layout = layout_for(
            &self.layout.clone().with_alpha(self.alpha),
            self.fragments.as_ref(),
            mss,
        );
        let mut sc = PathScenario::uniform(self.h, HopParams { ber, r: self.r }, layout, mss);
        sc.transfer_bytes = self.transfer_bytes;
        sc
    }

    /// `E_long(B) - E_short(B)` in joules. A diverging side counts as
    /// infinitely expensive; both diverging gives NaN.
    pub fn gap(&self, ber: f64) -> Result<f64, ModelError> {
        let joules = |mss| -> Result<f64, ModelError> {
            let report = evaluate(&self.scenario(mss, ber), self.energy)?;
            Ok(report.total_joules.value().unwrap_or(f64::INFINITY))
        };
        Ok(joules(self.mss_long)? - joules(self.mss_short)?)
    }
}

/// Where the preferred segment size flips from long to short.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub h: usize,
    pub r: u32,
    pub alpha: f64,
    pub crossover_ber: f64,
    /// Long MSS is strictly cheaper here.
    pub ber_lo: f64,
    /// Long MSS is not cheaper here.
    pub ber_hi: f64,
    /// The scan saw more than one sign change; the smallest crossover is
    /// reported.
    pub multiple: bool,
}

impl FrontierPoint {
    pub fn flags(&self) -> &'static str {
        if self.multiple {
            "multiple"
        } else {
            ""
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrossoverError {
    #[error("no crossover in range: the {0} MSS is preferred throughout")]
    NoCrossover(&'static str),
    #[error("energies are not comparable anywhere in the scan range")]
    Incomparable,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl CrossoverError {
    pub fn flag(&self) -> &'static str {
        match self {
            CrossoverError::NoCrossover(_) => "no_crossover",
            CrossoverError::Incomparable => "incomparable",
            CrossoverError::Model(_) => "model_error",
        }
    }
}

/// Finds the smallest BER at which the long MSS stops being cheaper.
///
/// A geometric scan brackets sign changes of the energy gap; bisection in log
/// BER then narrows the first rising change to the relative tolerance.
pub fn crossover_ber(spec: &CrossoverSpec) -> Result<FrontierPoint, CrossoverError> {
    if spec.h == 0 {
        return Err(ModelError::NoHops.into());
    }
    let decades = (CrossoverSpec::SCAN_HI / CrossoverSpec::SCAN_LO).log10();
    let points = (decades * CrossoverSpec::SCAN_DENSITY as f64).round() as usize + 1;
    let scan = Grid::Log {
        start: CrossoverSpec::SCAN_LO,
        stop: CrossoverSpec::SCAN_HI,
        points,
    }
    .values()
    .expect("scan grid is valid");

    let mut signs = Vec::with_capacity(scan.len());
    for &ber in &scan {
        let g = spec.gap(ber)?;
        if !g.is_nan() {
            signs.push((ber, g < 0.0));
        }
    }
    if signs.is_empty() {
        return Err(CrossoverError::Incomparable);
    }
    let changes = signs.windows(2).filter(|w| w[0].1 != w[1].1).count();
    let Some(first) = signs.windows(2).find(|w| w[0].1 && !w[1].1) else {
        let preferred = if signs[0].1 { "long" } else { "short" };
        return Err(CrossoverError::NoCrossover(preferred));
    };

    let (mut lo, mut hi) = (first[0].0, first[1].0);
    while hi / lo - 1.0 > CrossoverSpec::REL_TOL {
        let mid = (lo * hi).sqrt();
        let g = spec.gap(mid)?;
        if g.is_nan() {
            break;
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(FrontierPoint {
        h: spec.h,
        r: spec.r,
        alpha: spec.alpha,
        crossover_ber: (lo * hi).sqrt(),
        ber_lo: lo,
        ber_hi: hi,
        multiple: changes > 1,
    })
}

/// Curve members of a frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[serde(rename = "r")]
    Retries(Vec<u32>),
    Alpha(Vec<f64>),
}

impl Family {
    fn len(&self) -> usize {
        match self {
            Family::Retries(v) => v.len(),
            Family::Alpha(v) => v.len(),
        }
    }

    fn member(&self, i: usize) -> f64 {
        match self {
            Family::Retries(v) => f64::from(v[i]),
            Family::Alpha(v) => v[i],
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrontierRow {
    pub family_value: f64,
    pub h: usize,
    pub result: Result<FrontierPoint, CrossoverError>,
}

impl FrontierRow {
    pub fn to_record(&self) -> Record {
        let mut rec = Record::default();
        rec.push("family_value", Value::Num(self.family_value));
        rec.push("h", Value::Int(self.h as u64));
        match &self.result {
            Ok(p) => {
                rec.push("crossover_ber", Value::Num(p.crossover_ber));
                rec.push("ber_lo", Value::Num(p.ber_lo));
                rec.push("ber_hi", Value::Num(p.ber_hi));
                rec.push("flags", Value::Text(p.flags().to_owned()));
            }
            Err(e) => {
                rec.push("crossover_ber", Value::Undefined);
                rec.push("ber_lo", Value::Undefined);
                rec.push("ber_hi", Value::Undefined);
                rec.push("flags", Value::Text(e.flag().to_owned()));
            }
        }
        rec
    }
}

/// Crossover BER for every family member and hop count, member-major, in
/// input order. `base` supplies whichever of `r`/`alpha` the family does not
/// vary.
pub fn frontier(base: &CrossoverSpec, family: &Family, hops: &[usize]) -> Result<Vec<FrontierRow>, ExplorerError> {
    if family.len() == 0 {
        return Err(ExplorerError::EmptyFamily);
    }
    if hops.is_empty() {
        return Err(ExplorerError::EmptyGrid);
    }
    if hops.contains(&0) {
        return Err(ExplorerError::ZeroHops);
    }
    let jobs: Vec<(usize, usize)> = (0..family.len())
        .flat_map(|i| hops.iter().map(move |&h| (i, h)))
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(i, h)| {
            let mut spec = base.clone();
            spec.h = h;
            match family {
                Family::Retries(v) => spec.r = v[i],
                Family::Alpha(v) => spec.alpha = v[i],
            }
            FrontierRow {
                family_value: family.member(i),
                h,
                result: crossover_ber(&spec),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framing::FragmentMode;

    #[test]
    fn grids() {
        let v = Grid::Log {
            start: 1e-6,
            stop: 1e-3,
            points: 4,
        }
        .values()
        .unwrap();
        assert_eq!(v[0], 1e-6);
        assert_eq!(v[3], 1e-3);
        assert!((v[1] / 1e-5 - 1.0).abs() < 1e-12);
        let v = Grid::Linear {
            start: 2.0,
            stop: 7.0,
            points: 6,
        }
        .values()
        .unwrap();
        assert_eq!(v, [2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(Grid::Explicit(vec![]).values(), Err(ExplorerError::EmptyGrid));
        assert_eq!(Grid::Explicit(vec![1.0, 1.0]).values(), Err(ExplorerError::NotMonotone));
        assert_eq!(Grid::Explicit(vec![3.0, 2.0]).values().unwrap(), [3.0, 2.0]);
        assert!(Grid::Log {
            start: 0.0,
            stop: 1.0,
            points: 3
        }
        .values()
        .is_err());
    }

    #[test]
    fn integer_axes_reject_fractions() {
        let spec = SweepSpec::new(
            PathScenario::standard(64),
            SweepAxis::Retries,
            Grid::Explicit(vec![1.0, 2.5]),
        );
        assert!(matches!(sweep(&spec), Err(ExplorerError::NotInteger { .. })));
    }

    #[test]
    fn sweep_rows_are_grid_major() {
        let spec = SweepSpec::new(
            PathScenario::standard(64),
            SweepAxis::Ber,
            Grid::Explicit(vec![1e-6, 1e-4, 4e-4]),
        );
        let rows = sweep(&spec).unwrap();
        assert_eq!(rows.len(), 6);
        let order: Vec<(f64, u32)> = rows.iter().map(|r| (r.value, r.scenario.mss_bytes)).collect();
        assert_eq!(
            order,
            [
                (1e-6, 64),
                (1e-6, 512),
                (1e-4, 64),
                (1e-4, 512),
                (4e-4, 64),
                (4e-4, 512)
            ]
        );
        // the table gives 512 bytes eight fragments
        assert_eq!(rows[1].report.as_ref().unwrap().frames.m, 8);
        let direct = evaluate(&PathScenario::standard(512).with_ber(1e-4), EnergyParams::default()).unwrap();
        assert_eq!(rows[3].report.as_ref().unwrap().total_joules, direct.total_joules);
    }

    #[test]
    fn sweep_keeps_failures_and_divergence() {
        // very high BER with one attempt: p_s underflows, the cost diverges
        let mut base = PathScenario::standard(512).with_retries(1);
        base.hops.truncate(5);
        let spec = SweepSpec::new(base, SweepAxis::Ber, Grid::Explicit(vec![1e-4, 0.2]));
        let rows = sweep(&spec).unwrap();
        let last = rows[3].to_record();
        assert_eq!(last.get("total_joules"), Some(&Value::Diverges));

        // an FEC ratio no fragment count can fit
        let layout = FrameLayout::calibrated().with_fragment_mode(FragmentMode::Computed);
        let base = PathScenario::uniform(5, HopParams { ber: 3e-4, r: 1 }, layout, 512);
        let mut spec = SweepSpec::new(base, SweepAxis::Alpha, Grid::Explicit(vec![0.01, 30.0]));
        spec.fragments = None;
        spec.mss = vec![512];
        let rows = sweep(&spec).unwrap();
        assert!(rows[0].report.is_ok());
        assert!(rows[1].report.is_err());
        let ok = rows[0].to_record();
        let bad = rows[1].to_record();
        assert_eq!(ok.keys().collect::<Vec<_>>(), bad.keys().collect::<Vec<_>>());
        assert_eq!(bad.get("total_bits"), Some(&Value::Undefined));
    }

    #[test]
    fn hop_and_mss_axes() {
        let spec = SweepSpec::new(
            PathScenario::standard(64),
            SweepAxis::Hops,
            Grid::Explicit(vec![1.0, 3.0]),
        );
        let rows = sweep(&spec).unwrap();
        assert_eq!(rows[2].scenario.hops.len(), 3);
        let spec = SweepSpec::new(
            PathScenario::standard(64),
            SweepAxis::Mss,
            Grid::Explicit(vec![64.0, 128.0, 512.0]),
        );
        let rows = sweep(&spec).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].scenario.layout.fragment_mode, FragmentMode::Computed);
        assert_eq!(rows[2].scenario.layout.fragment_mode, FragmentMode::Explicit(8));
    }

    #[test]
    fn crossover_brackets_a_sign_change() {
        let spec = CrossoverSpec::new(5, 3, 0.0);
        let p = crossover_ber(&spec).unwrap();
        assert!(p.ber_lo < p.crossover_ber && p.crossover_ber < p.ber_hi);
        assert!(p.ber_hi / p.ber_lo - 1.0 <= CrossoverSpec::REL_TOL);
        assert!(spec.gap(p.ber_lo).unwrap() < 0.0);
        assert!(spec.gap(p.ber_hi).unwrap() >= 0.0);
        assert!(!p.multiple);
    }

    #[test]
    fn no_crossover_when_one_size_always_wins() {
        // the same MSS on both sides never changes sign
        let mut spec = CrossoverSpec::new(2, 3, 0.0);
        spec.mss_long = 64;
        assert_eq!(crossover_ber(&spec), Err(CrossoverError::NoCrossover("short")));
    }

    #[test]
    fn more_retries_favor_long_segments_on_one_hop() {
        let few = crossover_ber(&CrossoverSpec::new(1, 1, 0.0)).unwrap();
        let many = crossover_ber(&CrossoverSpec::new(1, 30, 0.0)).unwrap();
        assert!(many.crossover_ber > 5.0 * few.crossover_ber);
    }

    #[test]
    fn frontier_is_member_major_with_gaps() {
        let mut base = CrossoverSpec::new(1, 1, 0.0);
        let rows = frontier(&base, &Family::Retries(vec![1, 2]), &[1, 2, 3]).unwrap();
        let order: Vec<(f64, usize)> = rows.iter().map(|r| (r.family_value, r.h)).collect();
        assert_eq!(order, [(1.0, 1), (1.0, 2), (1.0, 3), (2.0, 1), (2.0, 2), (2.0, 3)]);
        assert!(rows.iter().all(|r| r.result.is_ok()));

        base.mss_long = 64;
        let rows = frontier(&base, &Family::Alpha(vec![0.0]), &[2]).unwrap();
        let rec = rows[0].to_record();
        assert_eq!(rec.get("flags"), Some(&Value::Text("no_crossover".into())));
        assert_eq!(
            rec.keys().collect::<Vec<_>>(),
            ["family_value", "h", "crossover_ber", "ber_lo", "ber_hi", "flags"]
        );
        assert_eq!(
            frontier(&base, &Family::Retries(vec![]), &[1]).unwrap_err(),
            ExplorerError::EmptyFamily
        );
        assert_eq!(
            frontier(&base, &Family::Retries(vec![1]), &[0]).unwrap_err(),
            ExplorerError::ZeroHops
        );
    }
}
