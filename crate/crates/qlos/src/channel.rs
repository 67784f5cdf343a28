//! Quasi-LoS channel models.
//!
//! * GCM: straight-line rays, blocked rays contribute nothing.
//! * WCM: Rayleigh-Sommerfeld propagation through masked virtual planes.
//! * CGWCM: free-space GCM hops between masked virtual planes.
//!
//! All models use the `exp(-jkr)` phase convention. The Rayleigh-Sommerfeld
//! kernel is written accordingly as `x/(2 pi r^2) exp(-jkr) (1/r + jk)`, the
//! complex conjugate of the `exp(+jkr)` form.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scenario::{blocked_interval, ScenarioConfig, SPEED_OF_LIGHT};
use crate::{CMat, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    Gcm,
    Wcm,
    Cgwcm,
    Synthetic,
    Composite,
}

impl ChannelModel {
    pub fn name(self) -> &'static str {
        match self {
            ChannelModel::Gcm => "gcm",
            ChannelModel::Wcm => "wcm",
            ChannelModel::Cgwcm => "cgwcm",
            ChannelModel::Synthetic => "synthetic",
            ChannelModel::Composite => "composite",
        }
    }
}

impl std::str::FromStr for ChannelModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcm" => Ok(ChannelModel::Gcm),
            "wcm" => Ok(ChannelModel::Wcm),
            "cgwcm" => Ok(ChannelModel::Cgwcm),
            other => Err(crate::invalid("model", format!("unknown channel model '{other}', expected gcm, wcm or cgwcm"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChannelMatrix {
    /// N_r x N_t.
    pub entries: CMat,
    pub model: ChannelModel,
    pub calibrated: bool,
}

impl ChannelMatrix {
    pub fn new(entries: CMat, model: ChannelModel) -> Self {
        Self {
            entries,
            model,
            calibrated: false,
        }
    }

    pub fn norm(&self) -> f64 {
        self.entries.norm()
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }
}

/// Free-space GCM gain `lambda/(4 pi r) exp(-jkr)`.
#[inline]
pub fn free_space_gain(r: f64, wavelength: f64, k: f64) -> Complex64 {
    Complex64::from_polar(wavelength / (4.0 * PI * r), -k * r)
}

/// Rayleigh-Sommerfeld kernel for a line source parallel to the blockage
/// edge, at axial distance `x` and transverse offset `dy`. Proportional to
/// (x/r) H1(kr) of the second kind, evaluated with its large-argument series
/// (kr > 10 in every use here). With a Riemann weight it composes across
/// planes, so chaining through open planes matches a single hop.
pub fn line_kernel(x: f64, dy: f64, k: f64) -> Complex64 {
    let r = x.hypot(dy);
    let z = k * r;
    let series = Complex64::new(1.0 + 0.117_187_5 / (z * z), -0.375 / z + 0.102_539_062_5 / (z * z * z));
    Complex64::from_polar((x / r) * (k / (2.0 * PI * r)).sqrt(), -(z - PI / 4.0)) * series
}

/// Ray-based channel. Entry (j, i) is zero when Rx element j lies in the
/// geometric shadow cast from Tx element i.
pub fn gcm_channel(scenario: &ScenarioConfig) -> ChannelMatrix {
    let yt = scenario.tx.positions();
    let yr = scenario.rx.positions();
    let lam = scenario.wavelength();
    let k = scenario.wavenumber();
    let d = scenario.link_distance;
    let mut h = CMat::zeros(yr.len(), yt.len());
    for (i, &ty) in yt.iter().enumerate() {
        let shadow = scenario.blockage.as_ref().map(|b| blocked_interval(ty, b, d));
        for (j, &ry) in yr.iter().enumerate() {
            if let Some((lo, hi)) = shadow {
                if ry >= lo && ry <= hi {
                    continue;
                }
            }
            let r = (d * d + (ry - ty).powi(2)).sqrt();
            h[(j, i)] = free_space_gain(r, lam, k);
        }
    }
    ChannelMatrix::new(h, ChannelModel::Gcm)
}

/// Fraction of Tx/Rx ray pairs in geometric shadow.
pub fn occlusion_fraction(scenario: &ScenarioConfig) -> f64 {
    let Some(b) = scenario.blockage.as_ref() else {
        return 0.0;
    };
    let yt = scenario.tx.positions();
    let yr = scenario.rx.positions();
    let mut blocked = 0usize;
    for &ty in &yt {
        let (lo, hi) = blocked_interval(ty, b, scenario.link_distance);
        blocked += yr.iter().filter(|&&y| y >= lo && y <= hi).count();
    }
    blocked as f64 / (yt.len() * yr.len()) as f64
}

/// Rx indices shadowed from every Tx element.
pub fn fully_blocked_rx(scenario: &ScenarioConfig) -> Vec<usize> {
    let Some(b) = scenario.blockage.as_ref() else {
        return Vec::new();
    };
    let yt = scenario.tx.positions();
    let yr = scenario.rx.positions();
    let spans: Vec<_> = yt
        .iter()
        .map(|&ty| blocked_interval(ty, b, scenario.link_distance))
        .collect();
    (0..yr.len())
        .filter(|&j| spans.iter().all(|&(lo, hi)| yr[j] >= lo && yr[j] <= hi))
        .collect()
}

/// Sampled field on a transverse line at `plane_x`.
#[derive(Clone, Debug)]
pub struct FieldVector {
    pub plane_x: f64,
    pub positions: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl FieldVector {
    pub fn new(plane_x: f64, positions: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if positions.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} positions vs {} values",
                positions.len(),
                values.len()
            )));
        }
        if positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Geometry("field positions must be strictly ascending".into()));
        }
        Ok(Self {
            plane_x,
            positions,
            values,
        })
    }

    /// Riemann weight: sample spacing, or 1 for a single point source.
    fn weight(&self) -> f64 {
        if self.positions.len() < 2 {
            1.0
        } else {
            (self.positions[self.positions.len() - 1] - self.positions[0])
                / (self.positions.len() - 1) as f64
        }
    }
}

/// Discretized Rayleigh-Sommerfeld propagation to the plane `target_x`.
pub fn rs_propagate(
    input: &FieldVector,
    target_x: f64,
    target_positions: &[f64],
    carrier: &crate::scenario::CarrierConfig,
) -> Result<FieldVector> {
    let dx = target_x - input.plane_x;
    if !(dx > 0.0) {
        return Err(Error::Geometry(format!(
            "target plane {target_x} must lie beyond the source plane {}",
            input.plane_x
        )));
    }
    let k = carrier.wavenumber();
    let w = input.weight();
    let values = target_positions
        .iter()
        .map(|&y| {
            input
                .positions
                .iter()
                .zip(&input.values)
                .map(|(&yp, &e)| line_kernel(dx, y - yp, k) * e)
                .sum::<Complex64>()
                * w
        })
        .collect();
    FieldVector::new(target_x, target_positions.to_vec(), values)
}

/// Binary transmission mask of the virtual positions on a plane at `x`.
pub fn plane_mask(scenario: &ScenarioConfig, x: f64, positions: &[f64]) -> Vec<bool> {
    match &scenario.blockage {
        Some(b) => positions.iter().map(|&y| !b.contains(x, y)).collect(),
        None => vec![true; positions.len()],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kernel {
    Rs,
    Gcm,
}

fn kernel_matrix(kernel: Kernel, dx: f64, to: &[f64], from: &[f64], weight: f64, lam: f64, k: f64) -> CMat {
    DMatrix::from_fn(to.len(), from.len(), |j, i| {
        let dy = to[j] - from[i];
        match kernel {
            Kernel::Rs => line_kernel(dx, dy, k) * weight,
            Kernel::Gcm => free_space_gain((dx * dx + dy * dy).sqrt(), lam, k) * weight,
        }
    })
}

fn zero_rows(m: &mut CMat, mask: &[bool]) {
    for (r, &keep) in mask.iter().enumerate() {
        if !keep {
            m.row_mut(r).fill(Complex64::new(0.0, 0.0));
        }
    }
}

// Tx -> plane 1 -> ... -> plane M -> Rx, masking every plane when `masked`.
fn cascade(scenario: &ScenarioConfig, kernel: Kernel, masked: bool) -> CMat {
    let yt = scenario.tx.positions();
    let yr = scenario.rx.positions();
    let yv = scenario.virtual_positions();
    let xs = scenario.virtual_planes();
    let lam = scenario.wavelength();
    let k = scenario.wavenumber();
    // WCM hops carry the Riemann weight of the virtual grid; the point-source
    // launch does not. CGWCM hops are plain GCM matrices.
    let hop_w = match kernel {
        Kernel::Rs => scenario.virtual_spacing(),
        Kernel::Gcm => 1.0,
    };
    let mask_for = |x: f64| {
        if masked {
            plane_mask(scenario, x, &yv)
        } else {
            vec![true; yv.len()]
        }
    };
    let mut x = kernel_matrix(kernel, xs[0], &yv, &yt, 1.0, lam, k);
    zero_rows(&mut x, &mask_for(xs[0]));
    for w in xs.windows(2) {
        let mut hop = kernel_matrix(kernel, w[1] - w[0], &yv, &yv, hop_w, lam, k);
        zero_rows(&mut hop, &mask_for(w[1]));
        x = hop * x;
    }
    let last = *xs.last().unwrap();
    let out = kernel_matrix(kernel, scenario.link_distance - last, &yr, &yv, hop_w, lam, k);
    out * x
}

/// Wave-based channel. Without a blockage this is the single-hop RS matrix.
pub fn wcm_channel(scenario: &ScenarioConfig) -> Result<ChannelMatrix> {
    check_virtual(scenario)?;
    let h = if scenario.blockage.is_none() {
        let yt = scenario.tx.positions();
        let yr = scenario.rx.positions();
        kernel_matrix(
            Kernel::Rs,
            scenario.link_distance,
            &yr,
            &yt,
            1.0,
            scenario.wavelength(),
            scenario.wavenumber(),
        )
    } else {
        cascade(scenario, Kernel::Rs, true)
    };
    Ok(ChannelMatrix::new(h, ChannelModel::Wcm))
}

/// WCM chain through the virtual planes with all masks open.
pub fn wcm_unmasked(scenario: &ScenarioConfig) -> Result<ChannelMatrix> {
    check_virtual(scenario)?;
    Ok(ChannelMatrix::new(cascade(scenario, Kernel::Rs, false), ChannelModel::Wcm))
}

/// Cascaded GCM/WCM channel `H_PR prod(B_m . H_(m-1)m) (B_1 . H_TP)`.
pub fn cgwcm_channel(scenario: &ScenarioConfig) -> Result<ChannelMatrix> {
    check_virtual(scenario)?;
    Ok(ChannelMatrix::new(cascade(scenario, Kernel::Gcm, true), ChannelModel::Cgwcm))
}

/// CGWCM chain with all masks open (the LoS reference used for calibration).
pub fn cgwcm_unmasked(scenario: &ScenarioConfig) -> Result<ChannelMatrix> {
    check_virtual(scenario)?;
    Ok(ChannelMatrix::new(cascade(scenario, Kernel::Gcm, false), ChannelModel::Cgwcm))
}

fn check_virtual(scenario: &ScenarioConfig) -> Result<()> {
    if scenario.virtual_arrays.count < 1 {
        return Err(crate::invalid("virtual_arrays.count", "must be at least 1"));
    }
    scenario.validate()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub amplitude: f64,
    pub phase: f64,
}

/// Amplitude and phase that map `model_los` onto `gcm_los`.
///
/// The phase is the mean argument of the entrywise ratio, measured around its
/// circular mean so offsets near +-pi do not wrap.
pub fn calibrate(model_los: &ChannelMatrix, gcm_los: &ChannelMatrix) -> Result<CalibrationParams> {
    if model_los.entries.shape() != gcm_los.entries.shape() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            model_los.entries.shape(),
            gcm_los.entries.shape()
        )));
    }
    let nm = model_los.norm();
    if nm == 0.0 {
        return Err(Error::Calibration("model channel is all zero".into()));
    }
    let amplitude = gcm_los.norm() / nm;
    let ratios: Vec<Complex64> = model_los
        .entries
        .iter()
        .zip(gcm_los.entries.iter())
        .filter(|(m, g)| m.norm() > 0.0 && g.norm() > 0.0)
        .map(|(m, g)| g / m)
        .collect();
    if ratios.is_empty() {
        return Err(Error::Calibration("no entry pair with both values nonzero".into()));
    }
    let reference = ratios.iter().map(|q| q / q.norm()).sum::<Complex64>().arg();
    let rot = Complex64::from_polar(1.0, -reference);
    let mean_dev = ratios.iter().map(|q| (q * rot).arg()).sum::<f64>() / ratios.len() as f64;
    Ok(CalibrationParams {
        amplitude,
        phase: wrap_phase(reference + mean_dev),
    })
}

fn wrap_phase(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

pub fn apply_calibration(channel: &ChannelMatrix, params: &CalibrationParams) -> Result<ChannelMatrix> {
    if channel.calibrated {
        return Err(Error::AlreadyCalibrated);
    }
    let s = Complex64::from_polar(params.amplitude, params.phase);
    Ok(ChannelMatrix {
        entries: channel.entries.map(|e| e * s),
        model: channel.model,
        calibrated: true,
    })
}

/// Calibrated quasi-LoS channel for the wave-aware models; GCM is returned as is.
pub fn calibrated_quasi_los(scenario: &ScenarioConfig, model: ChannelModel) -> Result<ChannelMatrix> {
    let gcm_los = gcm_channel(&scenario.with_blockage(None));
    match model {
        ChannelModel::Gcm => Ok(gcm_channel(scenario)),
        ChannelModel::Cgwcm => {
            let p = calibrate(&cgwcm_unmasked(scenario)?, &gcm_los)?;
            apply_calibration(&cgwcm_channel(scenario)?, &p)
        }
        ChannelModel::Wcm => {
            let p = calibrate(&wcm_unmasked(scenario)?, &gcm_los)?;
            let blocked = if scenario.blockage.is_some() {
                wcm_channel(scenario)?
            } else {
                wcm_unmasked(scenario)?
            };
            apply_calibration(&blocked, &p)
        }
        other => Err(Error::Calibration(format!("no quasi-LoS builder for {}", other.name()))),
    }
}

/// Relative Frobenius error `||a - b|| / ||b||` in dB.
pub fn relative_error_db(a: &ChannelMatrix, reference: &ChannelMatrix) -> f64 {
    20.0 * ((&a.entries - &reference.entries).norm() / reference.norm()).log10()
}

/// One NLoS component. Angles are measured from the link axis at the Tx
/// (departure) and from the reversed axis at the Rx (arrival); both must point
/// to the same side so the rays meet at a single scatterer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlosRay {
    /// Power relative to the LoS Frobenius norm, dB.
    pub gain_db: f64,
    pub departure_angle: f64,
    pub arrival_angle: f64,
    /// Extra delay over the direct path, seconds.
    pub excess_delay: f64,
}

impl NlosRay {
    /// Scatterer at the intersection of the departure and arrival rays.
    pub fn scatterer(&self, link_distance: f64) -> Result<(f64, f64)> {
        let (tt, tr) = (self.departure_angle.tan(), self.arrival_angle.tan());
        if tt * tr <= 0.0 || !(tt + tr).is_finite() {
            return Err(Error::Geometry(format!(
                "departure {} and arrival {} rays do not meet",
                self.departure_angle, self.arrival_angle
            )));
        }
        let x = link_distance * tr / (tt + tr);
        Ok((x, x * tt))
    }

    /// Ray through the scatterer at (x, y), excess delay from geometry.
    pub fn through(x: f64, y: f64, link_distance: f64, gain_db: f64) -> Self {
        let path = x.hypot(y) + (link_distance - x).hypot(y);
        Self {
            gain_db,
            departure_angle: (y / x).atan(),
            arrival_angle: (y / (link_distance - x)).atan(),
            excess_delay: (path - link_distance) / SPEED_OF_LIGHT,
        }
    }
}

/// Seeded random scatterers in the box `x in [D/6, 5D/6]`, `|y| in y_range`.
pub fn random_rays<R: Rng>(
    rng: &mut R,
    count: usize,
    link_distance: f64,
    gain_db_range: (f64, f64),
    y_range: (f64, f64),
) -> Vec<NlosRay> {
    (0..count)
        .map(|_| {
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let y = side * rng.random_range(y_range.0..=y_range.1);
            let x = rng.random_range(link_distance / 6.0..=5.0 * link_distance / 6.0);
            let g = rng.random_range(gain_db_range.0..=gain_db_range.1);
            NlosRay::through(x, y, link_distance, g)
        })
        .collect()
}

/// NLoS part only: sum of unit-norm near-field outer products scaled by
/// `10^(gain/20) ||H_LoS||` with phase `exp(-j 2 pi f (D/c + tau))`.
pub fn nlos_component(scenario: &ScenarioConfig, los_norm: f64, rays: &[NlosRay]) -> Result<CMat> {
    let yt = scenario.tx.positions();
    let yr = scenario.rx.positions();
    let k = scenario.wavenumber();
    let d = scenario.link_distance;
    let mut h = CMat::zeros(yr.len(), yt.len());
    for ray in rays {
        if ray.gain_db > 0.0 {
            return Err(crate::invalid("nlos.gain_db", format!("{} dB exceeds the LoS power", ray.gain_db)));
        }
        let (sx, sy) = ray.scatterer(d)?;
        let rt0 = sx.hypot(sy);
        let rr0 = (d - sx).hypot(sy);
        let at: Vec<Complex64> = yt
            .iter()
            .map(|&y| Complex64::from_polar(1.0, -k * (sx.hypot(sy - y) - rt0)))
            .collect();
        let ar: Vec<Complex64> = yr
            .iter()
            .map(|&y| Complex64::from_polar(1.0, -k * ((d - sx).hypot(sy - y) - rr0)))
            .collect();
        let norm = ((yt.len() * yr.len()) as f64).sqrt();
        let phase = -2.0 * PI * scenario.carrier.frequency * (d / SPEED_OF_LIGHT + ray.excess_delay);
        let g = Complex64::from_polar(10f64.powf(ray.gain_db / 20.0) * los_norm / norm, phase);
        for (j, &r) in ar.iter().enumerate() {
            for (i, &t) in at.iter().enumerate() {
                h[(j, i)] += g * r * t;
            }
        }
    }
    Ok(h)
}

/// LoS (or quasi-LoS) channel plus NLoS rays. Ray gains are relative to the
/// norm of `los_reference`, which stays fixed when the blockage changes.
pub fn synth_multipath_channel(
    scenario: &ScenarioConfig,
    los: &ChannelMatrix,
    los_reference_norm: f64,
    rays: &[NlosRay],
) -> Result<ChannelMatrix> {
    if los.entries.shape() != (scenario.rx.num_elements, scenario.tx.num_elements) {
        return Err(Error::Dimension("LoS channel does not match the scenario arrays".into()));
    }
    let model = if rays.is_empty() {
        los.model
    } else {
        ChannelModel::Composite
    };
    Ok(ChannelMatrix {
        entries: &los.entries + nlos_component(scenario, los_reference_norm, rays)?,
        model,
        calibrated: los.calibrated,
    })
}

/// Configured K-factor: LoS power over summed ray powers, dB.
pub fn k_factor_db(rays: &[NlosRay]) -> f64 {
    let p: f64 = rays.iter().map(|r| 10f64.powf(r.gain_db / 10.0)).sum();
    -10.0 * p.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ArrayConfig, BlockageGeometry, CarrierConfig, VirtualArrayConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn tiny(n: usize, blockage: Option<BlockageGeometry>) -> ScenarioConfig {
        let mut s = ScenarioConfig::reference(n, None);
        s.blockage = blockage;
        s
    }

    #[test]
    fn gcm_single_entry_gain() {
        let s = tiny(1, None);
        let h = gcm_channel(&s);
        let mag = h.entries[(0, 0)].norm();
        let want = SPEED_OF_LIGHT / (4.0 * PI * 140e9 * 3.0);
        assert!((mag - want).abs() < 1e-18);
        assert!((mag - 5.68e-5).abs() < 1e-7);
    }

    #[test]
    fn gcm_full_occlusion_is_zero() {
        let b = BlockageGeometry {
            distance_from_tx: 1.5,
            width_along_axis: 0.01,
            extent_above: 1e6,
            extent_below: 1e6,
        };
        let h = gcm_channel(&tiny(8, Some(b)));
        assert_eq!(h.norm(), 0.0);
    }

    #[test]
    fn gcm_single_blocked_ray() {
        // 2x2 link with elements at y = +-0.5 and D = 4. A thin screen at
        // x = 2 covering y in [-0.6, -0.4] cuts only the (-0.5 -> -0.5) ray;
        // the crossing rays pass it at y = 0.
        let carrier = CarrierConfig::default();
        let s = ScenarioConfig {
            tx: ArrayConfig::new(2, 1.0, 0.0).unwrap(),
            rx: ArrayConfig::new(2, 1.0, 0.0).unwrap(),
            carrier,
            link_distance: 4.0,
            blockage: Some(BlockageGeometry {
                distance_from_tx: 2.0,
                width_along_axis: 0.0,
                extent_above: -0.4,
                extent_below: 0.6,
            }),
            virtual_arrays: VirtualArrayConfig::spanning(1, 4, 0.0),
        };
        let h = gcm_channel(&s);
        let zeros: Vec<_> = (0..2)
            .flat_map(|j| (0..2).map(move |i| (j, i)))
            .filter(|&(j, i)| h.entries[(j, i)].norm() == 0.0)
            .collect();
        assert_eq!(zeros, vec![(0, 0)]);
    }

    #[test]
    fn gcm_reciprocity() {
        let mut s = tiny(16, None);
        s.rx = ArrayConfig::new(11, 0.002, 0.01).unwrap();
        let h = gcm_channel(&s);
        let mut t = s.clone();
        std::mem::swap(&mut t.tx, &mut t.rx);
        let g = gcm_channel(&t);
        assert!((&h.entries - g.entries.transpose()).norm() < 1e-15 * h.norm());
    }

    #[test]
    fn rs_symmetric_input_gives_symmetric_output() {
        let c = CarrierConfig::default();
        let ys: Vec<f64> = (-20..=20).map(|i| i as f64 * 1e-3).collect();
        let vals: Vec<Complex64> = ys.iter().map(|y| Complex64::new((-y * y * 1e4).exp(), 0.3)).collect();
        let f = FieldVector::new(0.0, ys.clone(), vals).unwrap();
        let out = rs_propagate(&f, 0.5, &ys, &c).unwrap();
        let n = ys.len();
        for i in 0..n {
            assert!((out.values[i] - out.values[n - 1 - i]).norm() < 1e-12 * out.values[i].norm().max(1e-300));
        }
    }

    #[test]
    fn rs_line_source_cylindrical_phase() {
        let c = CarrierConfig::default();
        let k = c.wavenumber();
        let src = FieldVector::new(0.0, vec![0.0], vec![Complex64::new(1.0, 0.0)]).unwrap();
        let ys: Vec<f64> = (0..21).map(|i| -0.1 + 0.01 * i as f64).collect();
        let x = 3.0;
        let out = rs_propagate(&src, x, &ys, &c).unwrap();
        let p0 = out.values[10].arg();
        for (y, v) in ys.iter().zip(&out.values) {
            let r = x.hypot(*y);
            // the series correction shifts the phase by at most 3/(8kr)
            let got = (v.arg() - p0 + k * (r - x) + PI).rem_euclid(2.0 * PI) - PI;
            assert!(got.abs() < 1e-6, "y={y}: {got}");
            let amp = (x / r) * (k / (2.0 * PI * r)).sqrt();
            assert!((v.norm() / amp - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn line_kernel_composes() {
        // one hop equals two hops through a wide, dense intermediate plane
        let k = CarrierConfig::default().wavenumber();
        let dv = 1e-4;
        let ys: Vec<f64> = (-6000..=6000).map(|i| i as f64 * dv).collect();
        for (a, b) in [(1.5, 0.01), (1.5, 0.002)] {
            for y in [0.0, 0.02] {
                let direct = line_kernel(a + b, y, k);
                let two: Complex64 = ys.iter().map(|&v| line_kernel(b, y - v, k) * line_kernel(a, v, k)).sum::<Complex64>() * dv;
                assert!((two - direct).norm() < 1e-3 * direct.norm(), "{two} vs {direct}");
            }
        }
    }

    #[test]
    fn wcm_open_planes_nearly_independent_of_plane_count() {
        // Residual differences come from edge diffraction at the truncated
        // virtual planes, which decays slowly with their width.
        let base = ScenarioConfig::reference(16, Some(0.0));
        let mut prev: Option<ChannelMatrix> = None;
        for m in [1, 2, 3, 5] {
            let mut s = base.clone();
            s.virtual_arrays = VirtualArrayConfig::spanning(m, 512, 0.01);
            let h = wcm_unmasked(&s).unwrap();
            if let Some(p) = &prev {
                let rel = (&h.entries - &p.entries).norm() / p.norm();
                assert!(rel < 3e-2, "M = {m}: {rel}");
            }
            prev = Some(h);
        }
    }

    #[test]
    fn rs_converges_with_grid_density() {
        let c = CarrierConfig::default();
        let field = |n: usize| {
            let ys: Vec<f64> = (0..n).map(|i| -0.02 + 0.04 * i as f64 / (n - 1) as f64).collect();
            let v = ys.iter().map(|y| Complex64::new((-(y / 0.008).powi(2)).exp(), 0.0)).collect();
            FieldVector::new(0.0, ys, v).unwrap()
        };
        let targets: Vec<f64> = (0..11).map(|i| -0.05 + 0.01 * i as f64).collect();
        let a = rs_propagate(&field(801), 1.0, &targets, &c).unwrap();
        let b = rs_propagate(&field(1601), 1.0, &targets, &c).unwrap();
        let diff: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = b.values.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-4, "{}", diff / norm);
    }

    #[test]
    fn rs_rejects_coincident_plane() {
        let c = CarrierConfig::default();
        let f = FieldVector::new(1.0, vec![0.0], vec![Complex64::new(1.0, 0.0)]).unwrap();
        assert!(rs_propagate(&f, 1.0, &[0.0], &c).is_err());
    }

    #[test]
    fn wcm_without_blockage_is_single_hop() {
        let s = tiny(8, None);
        let h = wcm_channel(&s).unwrap();
        let c = s.carrier;
        let yt = s.tx.positions();
        let yr = s.rx.positions();
        for (i, &t) in yt.iter().enumerate() {
            let src = FieldVector::new(0.0, vec![t], vec![Complex64::new(1.0, 0.0)]).unwrap();
            let col = rs_propagate(&src, s.link_distance, &yr, &c).unwrap();
            for j in 0..yr.len() {
                assert!((h.entries[(j, i)] - col.values[j]).norm() <= 1e-12 * col.values[j].norm());
            }
        }
    }

    #[test]
    fn full_masks_give_zero() {
        let b = BlockageGeometry {
            distance_from_tx: 1.5,
            width_along_axis: 0.01,
            extent_above: 10.0,
            extent_below: 10.0,
        };
        let s = tiny(8, Some(b));
        assert_eq!(wcm_channel(&s).unwrap().norm(), 0.0);
        assert_eq!(cgwcm_channel(&s).unwrap().norm(), 0.0);
    }

    #[test]
    fn diffraction_reaches_shadow() {
        let s = ScenarioConfig::reference(8, Some(0.0));
        let shadow = fully_blocked_rx(&s);
        assert!(!shadow.is_empty());
        let g = gcm_channel(&s);
        let w = calibrated_quasi_los(&s, ChannelModel::Wcm).unwrap();
        let c = calibrated_quasi_los(&s, ChannelModel::Cgwcm).unwrap();
        let p = |h: &ChannelMatrix| shadow.iter().map(|&j| h.entries.row(j).norm_squared()).sum::<f64>();
        assert_eq!(p(&g), 0.0);
        assert!(p(&w) > 0.0 && p(&c) > 0.0);
    }

    #[test]
    fn wcm_dense_oracle_agrees() {
        // 4x finer virtual grid with the same aperture changes the calibrated
        // WCM only slightly.
        let s = ScenarioConfig::reference(8, Some(0.0));
        let w = calibrated_quasi_los(&s, ChannelModel::Wcm).unwrap();
        let yv = s.virtual_positions();
        let yt = s.tx.positions();
        let yr = s.rx.positions();
        let k = s.wavenumber();
        let fine: Vec<f64> = {
            let lo = yv[0];
            let hi = *yv.last().unwrap();
            let n = 4 * (yv.len() - 1) + 1;
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        };
        let dv = fine[1] - fine[0];
        let b = s.blockage.unwrap();
        let xs = s.virtual_planes();
        let mut h = CMat::zeros(yr.len(), yt.len());
        for (i, &t) in yt.iter().enumerate() {
            let mut e: Vec<Complex64> = fine.iter().map(|&y| if b.contains(xs[0], y) { 0.0.into() } else { line_kernel(xs[0], y - t, k) }).collect();
            for p in xs.windows(2) {
                e = fine
                    .iter()
                    .map(|&y| {
                        if b.contains(p[1], y) {
                            return 0.0.into();
                        }
                        fine.iter().zip(&e).map(|(&yp, &v)| line_kernel(p[1] - p[0], y - yp, k) * v).sum::<Complex64>() * dv
                    })
                    .collect();
            }
            let last = *xs.last().unwrap();
            for (j, &y) in yr.iter().enumerate() {
                h[(j, i)] = fine.iter().zip(&e).map(|(&yp, &v)| line_kernel(s.link_distance - last, y - yp, k) * v).sum::<Complex64>() * dv;
            }
        }
        let mut sl = s.clone();
        sl.blockage = None;
        // calibrate the oracle with its own unmasked chain
        let mut hl = CMat::zeros(yr.len(), yt.len());
        for (i, &t) in yt.iter().enumerate() {
            let mut e: Vec<Complex64> = fine.iter().map(|&y| line_kernel(xs[0], y - t, k)).collect();
            for p in xs.windows(2) {
                e = fine.iter().map(|&y| fine.iter().zip(&e).map(|(&yp, &v)| line_kernel(p[1] - p[0], y - yp, k) * v).sum::<Complex64>() * dv).collect();
            }
            let last = *xs.last().unwrap();
            for (j, &y) in yr.iter().enumerate() {
                hl[(j, i)] = fine.iter().zip(&e).map(|(&yp, &v)| line_kernel(s.link_distance - last, y - yp, k) * v).sum::<Complex64>() * dv;
            }
        }
        let p = calibrate(&ChannelMatrix::new(hl, ChannelModel::Wcm), &gcm_channel(&sl)).unwrap();
        let oracle = apply_calibration(&ChannelMatrix::new(h, ChannelModel::Wcm), &p).unwrap();
        let shadow = fully_blocked_rx(&s);
        for &j in &shadow {
            assert!(oracle.entries.row(j).norm() > 0.0);
        }
        let e = relative_error_db(&w, &oracle);
        assert!(e < -10.0, "{e}");
    }

    #[test]
    fn cgwcm_single_plane_is_two_hop_product() {
        let mut s = tiny(8, None);
        s.virtual_arrays = VirtualArrayConfig::spanning(1, 16, 0.0);
        let h = cgwcm_unmasked(&s).unwrap();
        let yt = s.tx.positions();
        let yr = s.rx.positions();
        let yv = s.virtual_positions();
        let x = s.virtual_planes()[0];
        let lam = s.wavelength();
        let k = s.wavenumber();
        let tp = CMat::from_fn(yv.len(), yt.len(), |j, i| free_space_gain(x.hypot(yv[j] - yt[i]), lam, k));
        let pr = CMat::from_fn(yr.len(), yv.len(), |j, i| free_space_gain((3.0 - x).hypot(yr[j] - yv[i]), lam, k));
        let want = pr * tp;
        assert!((&h.entries - &want).norm() < 1e-12 * want.norm());
    }

    #[test]
    fn cgwcm_beats_gcm_small_scenario() {
        let s = ScenarioConfig::reference(8, Some(0.0));
        let w = calibrated_quasi_los(&s, ChannelModel::Wcm).unwrap();
        let c = calibrated_quasi_los(&s, ChannelModel::Cgwcm).unwrap();
        let g = gcm_channel(&s);
        assert!(relative_error_db(&c, &w) < relative_error_db(&g, &w));
    }

    #[test]
    fn calibration_examples() {
        let s = ScenarioConfig::reference(16, None);
        let g = gcm_channel(&s);
        let p = calibrate(&g, &g).unwrap();
        assert!((p.amplitude - 1.0).abs() < 1e-15 && p.phase.abs() < 1e-15);

        let scaled = ChannelMatrix::new(g.entries.map(|e| e * Complex64::from_polar(2.0, PI / 4.0)), ChannelModel::Cgwcm);
        let p = calibrate(&scaled, &g).unwrap();
        assert!((p.amplitude - 0.5).abs() < 1e-12);
        assert!((p.phase + PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_offset_near_pi_does_not_wrap() {
        let s = ScenarioConfig::reference(16, None);
        let g = gcm_channel(&s);
        let mut e = g.entries.clone();
        for (n, v) in e.iter_mut().enumerate() {
            // spread of +-0.05 rad around pi
            let jitter = 0.05 * ((n % 7) as f64 / 3.0 - 1.0);
            *v *= Complex64::from_polar(1.0, PI + jitter);
        }
        let p = calibrate(&ChannelMatrix::new(e, ChannelModel::Cgwcm), &g).unwrap();
        assert!((p.phase.abs() - PI).abs() < 0.06, "{}", p.phase);
    }

    #[test]
    fn calibration_equalizes_norms() {
        let s = ScenarioConfig::reference(64, None);
        let g = gcm_channel(&s);
        let c = cgwcm_unmasked(&s).unwrap();
        let p = calibrate(&c, &g).unwrap();
        let cal = apply_calibration(&c, &p).unwrap();
        assert!((cal.norm() - g.norm()).abs() <= 1e-12 * g.norm());
        assert!(matches!(apply_calibration(&cal, &p), Err(Error::AlreadyCalibrated)));
    }

    #[test]
    fn calibration_rejects_zero() {
        let s = ScenarioConfig::reference(4, None);
        let g = gcm_channel(&s);
        let z = ChannelMatrix::new(CMat::zeros(4, 4), ChannelModel::Cgwcm);
        assert!(calibrate(&z, &g).is_err());
    }

    #[test]
    fn apply_calibration_scalar_action() {
        let s = ScenarioConfig::reference(4, None);
        let g = gcm_channel(&s);
        let id = apply_calibration(&g, &CalibrationParams { amplitude: 1.0, phase: 0.0 }).unwrap();
        assert!((&id.entries - &g.entries).norm() == 0.0);
        let neg = apply_calibration(&g, &CalibrationParams { amplitude: 0.5, phase: PI }).unwrap();
        assert!((&neg.entries + g.entries.map(|e| e * 0.5)).norm() < 1e-18);
    }

    #[test]
    fn multipath_empty_and_rank_one() {
        let s = ScenarioConfig::reference(16, None);
        let g = gcm_channel(&s);
        let same = synth_multipath_channel(&s, &g, g.norm(), &[]).unwrap();
        assert_eq!((&same.entries - &g.entries).norm(), 0.0);

        let ray = NlosRay::through(1.0, 0.8, 3.0, -10.0);
        let zero = ChannelMatrix::new(CMat::zeros(16, 16), ChannelModel::Gcm);
        let h = synth_multipath_channel(&s, &zero, g.norm(), &[ray]).unwrap();
        let sv = h.entries.clone().svd(false, false).singular_values;
        assert!(sv[1] < 1e-10 * sv[0]);
        assert!((h.norm() - g.norm() * 0.1_f64.sqrt()).abs() < 1e-12 * g.norm());
    }

    #[test]
    fn k_factor_matches_ray_powers() {
        let s = ScenarioConfig::reference(32, None);
        let g = gcm_channel(&s);
        let rays = [NlosRay::through(1.0, 0.9, 3.0, -12.0), NlosRay::through(2.2, -1.1, 3.0, -15.0)];
        let zero = ChannelMatrix::new(CMat::zeros(32, 32), ChannelModel::Gcm);
        let each: f64 = rays
            .iter()
            .map(|r| synth_multipath_channel(&s, &zero, g.norm(), &[*r]).unwrap().entries.norm_squared())
            .sum();
        let k = 10.0 * (g.entries.norm_squared() / each).log10();
        assert!((k - k_factor_db(&rays)).abs() < 0.1, "{k} vs {}", k_factor_db(&rays));
    }

    #[test]
    fn multipath_rejects_positive_gain() {
        let s = ScenarioConfig::reference(4, None);
        let g = gcm_channel(&s);
        assert!(synth_multipath_channel(&s, &g, g.norm(), &[NlosRay::through(1.0, 1.0, 3.0, 1.0)]).is_err());
    }

    #[test]
    fn scatterer_round_trip() {
        let r = NlosRay::through(1.3, -0.7, 3.0, -20.0);
        let (x, y) = r.scatterer(3.0).unwrap();
        assert!((x - 1.3).abs() < 1e-12 && (y + 0.7).abs() < 1e-12);
        assert!(r.excess_delay > 0.0);
    }

    #[test]
    fn random_rays_seeded() {
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert_eq!(random_rays(&mut a, 4, 3.0, (-25.0, -15.0), (0.6, 1.5)), random_rays(&mut b, 4, 3.0, (-25.0, -15.0), (0.6, 1.5)));
    }

    proptest! {
        #[test]
        fn gcm_entries_zero_or_free_space(h in -0.1f64..0.1, w in 0.0f64..0.3) {
            let mut s = ScenarioConfig::reference(16, Some(h));
            s.blockage.as_mut().unwrap().width_along_axis = w;
            s.virtual_arrays = VirtualArrayConfig::spanning(1, 32, w);
            let g = gcm_channel(&s);
            let yt = s.tx.positions();
            let yr = s.rx.positions();
            for i in 0..16 {
                for j in 0..16 {
                    let m = g.entries[(j, i)].norm();
                    let r = 3.0f64.hypot(yr[j] - yt[i]);
                    let want = SPEED_OF_LIGHT / (4.0 * PI * 140e9 * r);
                    prop_assert!(m == 0.0 || (m - want).abs() < 1e-15);
                }
            }
        }

        #[test]
        fn calibration_recovers_scalar(amp in 0.01f64..100.0, ph in -3.1f64..3.1) {
            let s = ScenarioConfig::reference(8, None);
            let g = gcm_channel(&s);
            let m = ChannelMatrix::new(g.entries.map(|e| e * Complex64::from_polar(amp, ph)), ChannelModel::Cgwcm);
            let p = calibrate(&m, &g).unwrap();
            prop_assert!((p.amplitude * amp - 1.0).abs() < 1e-12);
            prop_assert!((wrap_phase(p.phase + ph)).abs() < 1e-9);
        }
    }
}
