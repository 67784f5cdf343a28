//! Physical configuration: arrays, carrier, blockage and virtual sampling planes.
//!
//! Coordinates: x is the propagation axis with the Tx plane at x = 0 and the
//! Rx plane at x = D; y is transverse. All lengths are in meters.

use serde::{Deserialize, Serialize};

use crate::{invalid, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Uniform linear array along y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub num_elements: usize,
    pub spacing: f64,
    #[serde(default)]
    pub center_offset: f64,
}

impl ArrayConfig {
    pub fn new(num_elements: usize, spacing: f64, center_offset: f64) -> Result<Self> {
        let a = Self {
            num_elements,
            spacing,
            center_offset,
        };
        a.validate()?;
        Ok(a)
    }

    /// Half-wavelength array centered on y = 0.
    pub fn half_wavelength(num_elements: usize, carrier: &CarrierConfig) -> Self {
        Self {
            num_elements,
            spacing: carrier.wavelength() / 2.0,
            center_offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_elements == 0 {
            return Err(invalid("num_elements", "must be at least 1"));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(invalid("spacing", format!("must be positive, got {}", self.spacing)));
        }
        if !self.center_offset.is_finite() {
            return Err(invalid("center_offset", "must be finite"));
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<f64> {
        element_positions(self)
    }

    /// End-to-end length (N - 1) d.
    pub fn aperture(&self) -> f64 {
        (self.num_elements as f64 - 1.0) * self.spacing
    }
}

/// Element ordinates `(i - (N+1)/2) d + offset`, ascending.
pub fn element_positions(array: &ArrayConfig) -> Vec<f64> {
    let n = array.num_elements as f64;
    (1..=array.num_elements)
        .map(|i| (i as f64 - (n + 1.0) / 2.0) * array.spacing + array.center_offset)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarrierConfig {
    pub frequency: f64,
}

impl CarrierConfig {
    pub fn new(frequency: f64) -> Result<Self> {
        if !(frequency > 0.0) || !frequency.is_finite() {
            return Err(invalid("frequency", format!("must be positive, got {frequency}")));
        }
        Ok(Self { frequency })
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength()
    }
}

impl Default for CarrierConfig {
    fn default() -> Self {
        Self { frequency: 140e9 }
    }
}

/// Rectangle x in [L, L+W], y in [-T2, T1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockageGeometry {
    pub distance_from_tx: f64,
    pub width_along_axis: f64,
    pub extent_above: f64,
    pub extent_below: f64,
}

impl BlockageGeometry {
    pub fn validate(&self, link_distance: f64) -> Result<()> {
        let l = self.distance_from_tx;
        let w = self.width_along_axis;
        if !(w >= 0.0) {
            return Err(invalid("blockage.width_along_axis", "must be non-negative"));
        }
        if !(l > 0.0) {
            return Err(invalid("blockage.distance_from_tx", "must be positive"));
        }
        if !(l + w < link_distance) {
            return Err(invalid(
                "blockage.distance_from_tx",
                format!("blockage [{l}, {}] must end before the Rx plane at {link_distance}", l + w),
            ));
        }
        if !(self.extent_above + self.extent_below >= 0.0) {
            return Err(invalid("blockage.extent_above", "T1 + T2 must be non-negative"));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.distance_from_tx
            && x <= self.distance_from_tx + self.width_along_axis
            && y >= -self.extent_below
            && y <= self.extent_above
    }

    /// Transverse occupancy test on a plane inside the blockage.
    pub fn blocks_y(&self, y: f64) -> bool {
        y >= -self.extent_below && y <= self.extent_above
    }

    pub fn height(&self) -> f64 {
        self.extent_above + self.extent_below
    }
}

/// Ray/blockage intersection ordinates (b1, b2, b3, b4) on the Rx plane for
/// rays leaving a Tx element at `tx_y`.
pub fn shadow_bounds(tx_y: f64, blockage: &BlockageGeometry, link_distance: f64) -> [f64; 4] {
    let l = blockage.distance_from_tx;
    let lw = l + blockage.width_along_axis;
    let t1 = blockage.extent_above;
    let t2 = blockage.extent_below;
    let d = link_distance;
    [
        (t1 - tx_y) / l * d + tx_y,
        (t1 - tx_y) / lw * d + tx_y,
        (-t2 - tx_y) / l * d + tx_y,
        (-t2 - tx_y) / lw * d + tx_y,
    ]
}

/// Blocked Rx interval `[min(b3, b4), max(b1, b2)]`.
pub fn blocked_interval(tx_y: f64, blockage: &BlockageGeometry, link_distance: f64) -> (f64, f64) {
    let b = shadow_bounds(tx_y, blockage, link_distance);
    (b[2].min(b[3]), b[0].max(b[1]))
}

/// Virtual sampling planes inside the blockage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualArrayConfig {
    /// Number of planes M.
    pub count: usize,
    /// Elements per plane N (half-wavelength spacing, centered on y = 0).
    pub elements_per_array: usize,
    /// Plane spacing; the first plane sits at x = L.
    pub plane_spacing: f64,
}

impl VirtualArrayConfig {
    /// M planes spread uniformly over [L, L+W], endpoints included when M >= 2.
    pub fn spanning(count: usize, elements_per_array: usize, width: f64) -> Self {
        let plane_spacing = if count >= 2 && width > 0.0 {
            width / (count as f64 - 1.0)
        } else {
            width.max(1e-3)
        };
        Self {
            count,
            elements_per_array,
            plane_spacing,
        }
    }

    pub fn validate(&self, blockage: Option<&BlockageGeometry>) -> Result<()> {
        if self.count == 0 {
            return Err(invalid("virtual_arrays.count", "must be at least 1"));
        }
        if self.elements_per_array == 0 {
            return Err(invalid("virtual_arrays.elements_per_array", "must be at least 1"));
        }
        if !(self.plane_spacing > 0.0) {
            return Err(invalid("virtual_arrays.plane_spacing", "must be positive"));
        }
        if let Some(b) = blockage {
            let span = (self.count as f64 - 1.0) * self.plane_spacing;
            if span > b.width_along_axis * (1.0 + 1e-9) + 1e-15 {
                return Err(invalid(
                    "virtual_arrays.plane_spacing",
                    format!("planes span {span} m but the blockage is {} m wide", b.width_along_axis),
                ));
            }
        }
        Ok(())
    }

    pub fn plane_positions(&self, first: f64) -> Vec<f64> {
        (0..self.count)
            .map(|m| first + m as f64 * self.plane_spacing)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub tx: ArrayConfig,
    pub rx: ArrayConfig,
    pub carrier: CarrierConfig,
    pub link_distance: f64,
    pub blockage: Option<BlockageGeometry>,
    pub virtual_arrays: VirtualArrayConfig,
}

impl ScenarioConfig {
    /// Symmetric N x N half-wavelength link at 140 GHz over 3 m with a thin
    /// screen at 1.5 m whose top edge sits at `height` (None leaves the link clear).
    pub fn reference(n: usize, height: Option<f64>) -> Self {
        let carrier = CarrierConfig::default();
        let width = 0.01;
        Self {
            tx: ArrayConfig::half_wavelength(n, &carrier),
            rx: ArrayConfig::half_wavelength(n, &carrier),
            carrier,
            link_distance: 3.0,
            blockage: height.map(|h| BlockageGeometry {
                distance_from_tx: 1.5,
                width_along_axis: width,
                extent_above: h,
                extent_below: 1.0,
            }),
            virtual_arrays: VirtualArrayConfig::spanning(2, 2 * n, width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tx.validate()?;
        self.rx.validate()?;
        CarrierConfig::new(self.carrier.frequency)?;
        if !(self.link_distance > 0.0) || !self.link_distance.is_finite() {
            return Err(invalid("link_distance", "must be positive"));
        }
        if let Some(b) = &self.blockage {
            b.validate(self.link_distance)?;
        }
        self.virtual_arrays.validate(self.blockage.as_ref())
    }

    pub fn with_blockage(&self, blockage: Option<BlockageGeometry>) -> Self {
        let mut s = self.clone();
        s.blockage = blockage;
        s
    }

    /// Same scenario with the blockage top edge moved to `h`.
    pub fn with_height(&self, h: f64) -> Self {
        let mut s = self.clone();
        if let Some(b) = s.blockage.as_mut() {
            b.extent_above = h;
        }
        s
    }

    pub fn with_blockage_distance(&self, l: f64) -> Self {
        let mut s = self.clone();
        if let Some(b) = s.blockage.as_mut() {
            b.distance_from_tx = l;
        }
        s
    }

    pub fn wavelength(&self) -> f64 {
        self.carrier.wavelength()
    }

    pub fn wavenumber(&self) -> f64 {
        self.carrier.wavenumber()
    }

    /// Virtual-plane element ordinates (half-wavelength grid centered on 0).
    pub fn virtual_positions(&self) -> Vec<f64> {
        element_positions(&ArrayConfig {
            num_elements: self.virtual_arrays.elements_per_array,
            spacing: self.virtual_spacing(),
            center_offset: 0.0,
        })
    }

    pub fn virtual_spacing(&self) -> f64 {
        self.wavelength() / 2.0
    }

    /// Plane x positions; without a blockage a single plane at mid-link.
    pub fn virtual_planes(&self) -> Vec<f64> {
        match &self.blockage {
            Some(b) => self.virtual_arrays.plane_positions(b.distance_from_tx),
            None => {
                let mid = self.link_distance / 2.0;
                let span = (self.virtual_arrays.count as f64 - 1.0) * self.virtual_arrays.plane_spacing;
                self.virtual_arrays.plane_positions(mid - span / 2.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn positions_small() {
        let a = ArrayConfig::new(2, 1.0, 0.0).unwrap();
        assert_eq!(a.positions(), vec![-0.5, 0.5]);
        let a = ArrayConfig::new(3, 0.5, 0.0).unwrap();
        assert_eq!(a.positions(), vec![-0.5, 0.0, 0.5]);
    }

    #[test]
    fn span_256_half_wavelength() {
        let c = CarrierConfig::default();
        let a = ArrayConfig::half_wavelength(256, &c);
        let p = a.positions();
        let span = p[255] - p[0];
        assert!((span - 255.0 * SPEED_OF_LIGHT / (2.0 * 140e9)).abs() < 1e-12);
        assert!((span - 0.273).abs() < 5e-4);
    }

    #[test]
    fn carrier_consistency() {
        let c = CarrierConfig::new(140e9).unwrap();
        assert!((c.wavelength() * c.frequency - SPEED_OF_LIGHT).abs() < 1e-6);
        assert!(CarrierConfig::new(0.0).is_err());
    }

    #[test]
    fn shadow_bounds_examples() {
        let blk = BlockageGeometry {
            distance_from_tx: 1.5,
            width_along_axis: 0.0,
            extent_above: 0.1,
            extent_below: 0.0,
        };
        let b = shadow_bounds(0.0, &blk, 3.0);
        assert!((b[0] - 0.2).abs() < 1e-15 && (b[1] - 0.2).abs() < 1e-15);

        let blk = BlockageGeometry {
            width_along_axis: 0.5,
            ..blk
        };
        let b = shadow_bounds(0.05, &blk, 3.0);
        assert!((b[0] - 0.15).abs() < 1e-15);
        assert!((b[1] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn shadow_bounds_symmetric() {
        let h = 0.07;
        let blk = BlockageGeometry {
            distance_from_tx: 1.2,
            width_along_axis: 0.3,
            extent_above: h,
            extent_below: h,
        };
        let b = shadow_bounds(0.0, &blk, 3.0);
        assert!((b[0] - h * 3.0 / 1.2).abs() < 1e-14);
        assert!((b[2] + h * 3.0 / 1.2).abs() < 1e-14);
    }

    #[test]
    fn reference_scenario_blocked_region() {
        // Rx elements shadowed from every Tx element at h = 3.6 cm.
        let s = ScenarioConfig::reference(256, Some(0.036));
        s.validate().unwrap();
        let b = s.blockage.unwrap();
        let top = *s.tx.positions().last().unwrap();
        let (_, hi) = blocked_interval(top, &b, 3.0);
        assert!((hi + 0.063).abs() < 1.5e-3, "{hi}");
        assert!((s.rx.positions()[0] + 0.136).abs() < 1e-3);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut s = ScenarioConfig::reference(8, Some(0.0));
        s.link_distance = 1.0;
        assert!(s.validate().is_err());
        let mut s = ScenarioConfig::reference(8, Some(0.0));
        s.virtual_arrays.count = 5;
        assert!(s.validate().is_err());
        assert!(ArrayConfig::new(0, 1.0, 0.0).is_err());
        assert!(ArrayConfig::new(4, -1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn positions_odd_symmetric(n in 1usize..300, sp in 1e-4f64..1.0) {
            let a = ArrayConfig::new(n, sp, 0.0).unwrap();
            let p = a.positions();
            for (x, y) in p.iter().zip(p.iter().rev()) {
                prop_assert!((x + y).abs() <= 1e-12 * sp * n as f64);
            }
        }

        #[test]
        fn positions_mean_and_order(n in 1usize..200, sp in 1e-4f64..1.0, off in -1.0f64..1.0) {
            let a = ArrayConfig::new(n, sp, off).unwrap();
            let p = a.positions();
            let mean = p.iter().sum::<f64>() / n as f64;
            prop_assert!((mean - off).abs() < 1e-9);
            prop_assert!(p.windows(2).all(|w| w[1] > w[0]));
        }

        #[test]
        fn shadow_bound_b2_between(ty in -0.2f64..0.09, t1 in 0.1f64..0.3,
                                   l in 0.5f64..1.5, w in 0.01f64..0.5) {
            // tx below the top edge: the far-edge ray lands between the near-edge ray and tx_y
            let blk = BlockageGeometry { distance_from_tx: l, width_along_axis: w,
                                         extent_above: t1, extent_below: 0.0 };
            let b = shadow_bounds(ty, &blk, 3.0);
            prop_assert!(b[1] <= b[0] && b[1] >= ty);
        }
    }
}
