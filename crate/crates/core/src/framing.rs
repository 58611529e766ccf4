//! Frame sizing: turns an MSS and a header/MTU/FEC layout into the bit
//! counts the link model works with.
//!
//! A TCP segment (payload plus TCP and compressed IP headers) is split into
//! `m` fragments. Each fragment gets a link-layer header (and, when the
//! segment is actually fragmented, an adaptation-layer fragment header) to
//! form `K` information bits. FEC then stretches the frame to
//! `D = ceil(K * (1 + alpha))` bits, which can correct `floor((D - K) / 2)`
//! bit errors. Link-layer acknowledgements carry no redundancy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How many fragments a TCP segment is split into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FragmentMode {
    /// Use exactly this many fragments; the MTU is not enforced.
    Explicit(u32),
    /// Use the smallest fragment count whose data frames fit in the MTU.
    Computed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub mtu_bits: u32,
    pub ll_data_header_bits: u32,
    /// Size `A` of a link-layer acknowledgement frame.
    pub ll_ack_bits: u32,
    /// Adaptation-layer header added to every fragment when `m > 1`.
    pub frag_header_bits: u32,
    pub ip_header_bits: u32,
    pub tcp_header_bits: u32,
    /// FEC redundancy ratio `(D - K) / K`.
    pub alpha: f64,
    pub fragment_mode: FragmentMode,
}

impl Default for FrameLayout {
    /// IEEE 802.15.4 MTU with the stock header sizes, no FEC, no fragment
    /// header and a single fragment per segment.
    fn default() -> Self {
        Self {
            mtu_bits: 127 * 8,
            ll_data_header_bits: 120,
            ll_ack_bits: 40,
            frag_header_bits: 0,
            ip_header_bits: 160,
            tcp_header_bits: 160,
            alpha: 0.0,
            fragment_mode: FragmentMode::Explicit(1),
        }
    }
}

impl FrameLayout {
    /// Per-fragment header budget that best reproduces the published energy
    /// figures for fragmented (MSS = 512, eight fragment) transfers.
    pub const CALIBRATED_FRAG_HEADER_BITS: u32 = 136;

    /// The default layout with the calibrated fragment header.
    pub fn calibrated() -> Self {
        Self {
            frag_header_bits: Self::CALIBRATED_FRAG_HEADER_BITS,
            ..Self::default()
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_fragment_mode(mut self, mode: FragmentMode) -> Self {
        self.fragment_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), FramingError> {
        if self.mtu_bits <= self.ll_data_header_bits + self.frag_header_bits {
            return Err(FramingError::MtuTooSmall {
                mtu_bits: self.mtu_bits,
                header_bits: self.ll_data_header_bits + self.frag_header_bits,
            });
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(FramingError::InvalidAlpha(self.alpha));
        }
        if self.ll_ack_bits == 0 {
            return Err(FramingError::EmptyAck);
        }
        if self.fragment_mode == FragmentMode::Explicit(0) {
            return Err(FramingError::ZeroFragments);
        }
        Ok(())
    }

    /// Bits of one TCP segment before fragmentation.
    pub fn segment_bits(&self, mss_bytes: u32) -> u64 {
        8 * u64::from(mss_bytes) + u64::from(self.tcp_header_bits) + u64::from(self.ip_header_bits)
    }

    fn data_info_bits(&self, payload_bits: u64, m: u64) -> u64 {
        let frag = if m > 1 { u64::from(self.frag_header_bits) } else { 0 };
        payload_bits.div_ceil(m) + u64::from(self.ll_data_header_bits) + frag
    }
}

/// Bit-level quantities for the data fragments and the TCP-ACK frame of one
/// segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedFrames {
    pub m: u32,
    pub k_data_bits: u64,
    pub d_data_bits: u64,
    pub c_data_bits: u64,
    pub k_ack_bits: u64,
    pub d_ack_bits: u64,
    pub c_ack_bits: u64,
    /// Link-layer acknowledgement size `A` (never FEC protected).
    pub ll_ack_bits: u64,
}

impl ResolvedFrames {
    pub fn data_frame(&self) -> FrameSizes {
        FrameSizes {
            d_bits: self.d_data_bits,
            c_bits: self.c_data_bits,
            a_bits: self.ll_ack_bits,
        }
    }

    pub fn ack_frame(&self) -> FrameSizes {
        FrameSizes {
            d_bits: self.d_ack_bits,
            c_bits: self.c_ack_bits,
            a_bits: self.ll_ack_bits,
        }
    }
}

/// Sizes the one-hop model needs for a frame: total bits `D`, correctable
/// bits `c`, and the link-layer ACK size `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSizes {
    pub d_bits: u64,
    pub c_bits: u64,
    pub a_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FramingError {
    #[error("MSS must be at least one byte")]
    ZeroMss,
    #[error("MTU of {mtu_bits} bits leaves no room after {header_bits} header bits")]
    MtuTooSmall { mtu_bits: u32, header_bits: u32 },
    #[error("redundancy ratio must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error("link-layer ACK frame must be at least one bit")]
    EmptyAck,
    #[error("explicit fragment count must be positive")]
    ZeroFragments,
    #[error("no fragment count fits a {payload_bits}-bit segment into a {mtu_bits}-bit MTU")]
    CannotFragment { payload_bits: u64, mtu_bits: u32 },
    #[error("TCP-ACK frame of {d_ack_bits} bits exceeds the {mtu_bits}-bit MTU")]
    AckTooLarge { d_ack_bits: u64, mtu_bits: u32 },
}

/// `ceil(k * (1 + alpha))`, treating products within rounding noise of an
/// integer as that integer.
fn coded_size(k: u64, alpha: f64) -> u64 {
    if alpha == 0.0 {
        return k;
    }
    let x = k as f64 * (1.0 + alpha);
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

fn correctable(d: u64, k: u64) -> u64 {
    (d - k) / 2
}

pub fn resolve_frames(mss_bytes: u32, layout: &FrameLayout) -> Result<ResolvedFrames, FramingError> {
    if mss_bytes == 0 {
        return Err(FramingError::ZeroMss);
    }
    layout.validate()?;

    let payload_bits = layout.segment_bits(mss_bytes);
    let mtu = u64::from(layout.mtu_bits);

    let k_ack_bits =
        u64::from(layout.tcp_header_bits) + u64::from(layout.ip_header_bits) + u64::from(layout.ll_data_header_bits);
    let d_ack_bits = coded_size(k_ack_bits, layout.alpha);
    if d_ack_bits > mtu {
        return Err(FramingError::AckTooLarge {
            d_ack_bits,
            mtu_bits: layout.mtu_bits,
        });
    }

    let m = match layout.fragment_mode {
        FragmentMode::Explicit(m) => u64::from(m),
        FragmentMode::Computed => {
            let cannot = FramingError::CannotFragment {
                payload_bits,
                mtu_bits: layout.mtu_bits,
            };
            let fits = |m: u64| coded_size(layout.data_info_bits(payload_bits, m), layout.alpha) <= mtu;
            // One payload bit per fragment is the best any real split can do.
            if !fits(1) && !fits(payload_bits) {
                return Err(cannot);
            }
            (1..=payload_bits).find(|&m| fits(m)).ok_or(cannot)?
        }
    };

    let k_data_bits = layout.data_info_bits(payload_bits, m);
    let d_data_bits = coded_size(k_data_bits, layout.alpha);

    Ok(ResolvedFrames {
        m: u32::try_from(m).expect("fragment count bounded by segment bits"),
        k_data_bits,
        d_data_bits,
        c_data_bits: correctable(d_data_bits, k_data_bits),
        k_ack_bits,
        d_ack_bits,
        c_ack_bits: correctable(d_ack_bits, k_ack_bits),
        ll_ack_bits: u64::from(layout.ll_ack_bits),
    })
}

/// Fragment counts pinned per MSS; any MSS not listed falls back to
/// [`FragmentMode::Computed`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentTable(pub BTreeMap<u32, u32>);

impl Default for FragmentTable {
    fn default() -> Self {
        Self(BTreeMap::from([(64, 1), (512, 8)]))
    }
}

impl FragmentTable {
    pub fn mode_for(&self, mss_bytes: u32) -> FragmentMode {
        self.0
            .get(&mss_bytes)
            .map_or(FragmentMode::Computed, |&m| FragmentMode::Explicit(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn explicit(m: u32) -> FrameLayout {
        FrameLayout::default().with_fragment_mode(FragmentMode::Explicit(m))
    }

    #[test]
    fn mss64_single_fragment() {
        let f = resolve_frames(64, &explicit(1)).unwrap();
        assert_eq!(f.m, 1);
        assert_eq!(f.k_data_bits, 952);
        assert_eq!(f.d_data_bits, 952);
        assert_eq!(f.c_data_bits, 0);
        assert_eq!(f.k_ack_bits, 440);
        assert_eq!(f.d_ack_bits, 440);
        assert_eq!(f.ll_ack_bits, 40);
    }

    #[test]
    fn mss512_eight_fragments() {
        let f = resolve_frames(512, &explicit(8)).unwrap();
        assert_eq!(f.m, 8);
        assert_eq!(f.k_data_bits, 4416 / 8 + 120);
        assert_eq!(f.d_data_bits, 672);
        assert_eq!(f.c_data_bits, 0);
    }

    #[test]
    fn fragment_header_only_when_fragmented() {
        let layout = FrameLayout::calibrated();
        let one = resolve_frames(64, &layout.clone().with_fragment_mode(FragmentMode::Explicit(1))).unwrap();
        assert_eq!(one.k_data_bits, 952);
        let eight = resolve_frames(512, &layout.with_fragment_mode(FragmentMode::Explicit(8))).unwrap();
        assert_eq!(eight.k_data_bits, 672 + 136);
    }

    #[test]
    fn alpha_one_doubles_and_corrects_half() {
        assert_eq!(coded_size(400, 1.0), 800);
        assert_eq!(correctable(800, 400), 200);
    }

    #[test]
    fn coded_size_rounds_up_but_ignores_float_noise() {
        assert_eq!(coded_size(1000, 0.1), 1100);
        assert_eq!(coded_size(824, 0.1), 907);
        assert_eq!(coded_size(952, 0.01), 962);
    }

    #[test]
    fn ack_frame_is_protected_like_data() {
        let f = resolve_frames(64, &explicit(1).with_alpha(0.5)).unwrap();
        assert_eq!(f.d_ack_bits, 660);
        assert_eq!(f.c_ack_bits, 110);
        assert_eq!(f.ll_ack_bits, 40);
    }

    #[test]
    fn computed_mode_fits_mtu() {
        let layout = FrameLayout::default().with_fragment_mode(FragmentMode::Computed);
        let f = resolve_frames(64, &layout).unwrap();
        assert_eq!(f.m, 1);
        let f = resolve_frames(512, &layout).unwrap();
        // ceil(4416/5) + 120 = 1004 <= 1016, ceil(4416/4) + 120 = 1224 > 1016
        assert_eq!(f.m, 5);
        assert!(f.d_data_bits <= 1016);
    }

    #[test]
    fn computed_mode_stairstep_in_alpha() {
        let base = FrameLayout::default().with_fragment_mode(FragmentMode::Computed);
        let mut last = 0;
        for i in 0..=100 {
            let alpha = i as f64 / 100.0;
            let f = resolve_frames(512, &base.clone().with_alpha(alpha)).unwrap();
            assert!(f.m >= last);
            assert!(f.d_data_bits <= 1016);
            last = f.m;
        }
        assert!(last > 5);
    }

    #[test]
    fn rejects_invalid_layouts() {
        assert_eq!(resolve_frames(0, &explicit(1)), Err(FramingError::ZeroMss));
        let bad = FrameLayout {
            mtu_bits: 120,
            ..FrameLayout::default()
        };
        assert!(matches!(
            resolve_frames(64, &bad),
            Err(FramingError::MtuTooSmall { .. })
        ));
        let bad = FrameLayout {
            ll_ack_bits: 0,
            ..FrameLayout::default()
        };
        assert_eq!(resolve_frames(64, &bad), Err(FramingError::EmptyAck));
        assert_eq!(
            resolve_frames(64, &explicit(1).with_alpha(-0.1)),
            Err(FramingError::InvalidAlpha(-0.1))
        );
        assert_eq!(resolve_frames(64, &explicit(0)), Err(FramingError::ZeroFragments));
    }

    #[test]
    fn rejects_alpha_that_overflows_header_only_frame() {
        let layout = FrameLayout::default().with_alpha(1.5);
        assert!(matches!(
            resolve_frames(64, &layout),
            Err(FramingError::AckTooLarge { .. })
        ));
        let layout = FrameLayout::default()
            .with_fragment_mode(FragmentMode::Computed)
            .with_alpha(1.5);
        assert!(resolve_frames(64, &layout).is_err());
    }

    #[test]
    fn computed_mode_reports_unfittable_segment() {
        // The header alone fits, but not once FEC redundancy is added.
        let layout = FrameLayout {
            frag_header_bits: 800,
            ..FrameLayout::default()
        }
        .with_fragment_mode(FragmentMode::Computed)
        .with_alpha(0.2);
        assert!(matches!(
            resolve_frames(64, &layout),
            Err(FramingError::CannotFragment { .. })
        ));
        // m = 1 carries no fragment header and still fits.
        let f = resolve_frames(8, &layout.with_alpha(0.0)).unwrap();
        assert_eq!(f.m, 1);
    }

    #[test]
    fn fragment_table_lookup() {
        let t = FragmentTable::default();
        assert_eq!(t.mode_for(64), FragmentMode::Explicit(1));
        assert_eq!(t.mode_for(512), FragmentMode::Explicit(8));
        assert_eq!(t.mode_for(128), FragmentMode::Computed);
    }
}
