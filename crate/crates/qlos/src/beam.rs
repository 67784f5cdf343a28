//! Focusing, steering and Airy beam codewords plus 2-D field rendering.
//!
//! A codeword with parameters (a, r, theta) has element phases
//! `k (a y^3 + cos^2(theta)/(2r) y^2 - sin(theta) y)` and modulus 1/sqrt(N).
//! `r = inf` drops the quadratic term (far-field steering).

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::line_kernel;
use crate::scenario::{ArrayConfig, CarrierConfig, ScenarioConfig};
use crate::{invalid, CVec, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    /// Cubic coefficient a, 1/m^2.
    pub curving: f64,
    /// Focus distance r, m. Infinite for a steering beam.
    pub focus_distance: f64,
    /// Focus angle theta, rad.
    pub focus_angle: f64,
}

impl BeamParams {
    pub fn new(curving: f64, focus_distance: f64, focus_angle: f64) -> Result<Self> {
        let p = Self {
            curving,
            focus_distance,
            focus_angle,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn focusing(focus_distance: f64, focus_angle: f64) -> Self {
        Self {
            curving: 0.0,
            focus_distance,
            focus_angle,
        }
    }

    pub fn steering(focus_angle: f64) -> Self {
        Self::focusing(f64::INFINITY, focus_angle)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.curving.is_finite() {
            return Err(invalid("curving", "must be finite"));
        }
        if !(self.focus_distance > 0.0) {
            return Err(invalid("focus_distance", "must be positive"));
        }
        if !(self.focus_angle.abs() < FRAC_PI_2) {
            return Err(invalid("focus_angle", "must lie in (-pi/2, pi/2)"));
        }
        Ok(())
    }

    /// Quadratic coefficient cos^2(theta)/r.
    pub fn curvature_term(&self) -> f64 {
        self.focus_angle.cos().powi(2) / self.focus_distance
    }
}

/// Near-field focusing phase `k (cos^2(theta)/(2r) y^2 - sin(theta) y)`.
pub fn focusing_phase(position: f64, r: f64, theta: f64, carrier: &CarrierConfig) -> f64 {
    let k = carrier.wavenumber();
    k * (theta.cos().powi(2) / (2.0 * r) * position * position - theta.sin() * position)
}

/// Full codeword phase including the cubic term.
pub fn airy_phase(position: f64, params: &BeamParams, carrier: &CarrierConfig) -> f64 {
    let k = carrier.wavenumber();
    k * params.curving * position.powi(3)
        + focusing_phase(position, params.focus_distance, params.focus_angle, carrier)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamVector {
    pub params: BeamParams,
    pub weights: CVec,
}

impl BeamVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn airy_beam_vector(params: &BeamParams, array: &ArrayConfig, carrier: &CarrierConfig) -> BeamVector {
    let pos = array.positions();
    beam_from_positions(params, &pos, carrier)
}

pub(crate) fn beam_from_positions(params: &BeamParams, pos: &[f64], carrier: &CarrierConfig) -> BeamVector {
    let amp = 1.0 / (pos.len() as f64).sqrt();
    let weights = CVec::from_iterator(
        pos.len(),
        pos.iter().map(|&y| Complex64::from_polar(amp, airy_phase(y, params, carrier))),
    );
    BeamVector {
        params: *params,
        weights,
    }
}

pub fn steering_vector(theta: f64, array: &ArrayConfig, carrier: &CarrierConfig) -> BeamVector {
    airy_beam_vector(&BeamParams::steering(theta), array, carrier)
}

/// Truncated Airy aperture `Ai(y/y_o) exp(b y/y_o)`. Reference generator only.
pub fn airy_aperture_amplitude(position: f64, scale: f64, truncation: f64) -> Result<Complex64> {
    if !(scale > 0.0) || !(truncation >= 0.0) {
        return Err(invalid("airy_aperture", "scale must be positive and truncation non-negative"));
    }
    let s = position / scale;
    Ok(Complex64::new(crate::numerics::airy_ai(s) * (truncation * s).exp(), 0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub ny: usize,
}

impl GridSpec {
    pub fn xs(&self) -> Vec<f64> {
        linspace(self.x_min, self.x_max, self.nx)
    }

    pub fn ys(&self) -> Vec<f64> {
        linspace(self.y_min, self.y_max, self.ny)
    }
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

pub const DB_FLOOR: f64 = -60.0;

/// Power map in dB relative to the map maximum, floored at -60 dB.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldMap {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `power_db[iy][ix]`.
    pub power_db: Vec<Vec<f64>>,
    /// Cells inside the blockage.
    pub masked: Vec<Vec<bool>>,
    pub mask_applied: bool,
}

/// Field radiated by the weighted Tx aperture, sampled on the line at `x`,
/// with the blockage applied at every virtual plane before `x`.
pub fn field_on_line(beam: &BeamVector, scenario: &ScenarioConfig, x: f64, ys: &[f64]) -> Result<Vec<Complex64>> {
    let planes = PlaneChain::new(beam, scenario)?;
    planes.field(x, ys)
}

struct PlaneChain<'a> {
    tx: Vec<f64>,
    dt: f64,
    weights: &'a CVec,
    k: f64,
    yv: Vec<f64>,
    dv: f64,
    // (plane x, masked field on yv)
    planes: Vec<(f64, Vec<Complex64>)>,
}

impl<'a> PlaneChain<'a> {
    fn new(beam: &'a BeamVector, scenario: &ScenarioConfig) -> Result<Self> {
        if beam.len() != scenario.tx.num_elements {
            return Err(Error::Dimension(format!(
                "beam has {} weights, Tx array {} elements",
                beam.len(),
                scenario.tx.num_elements
            )));
        }
        let tx = scenario.tx.positions();
        let dt = scenario.tx.spacing;
        let k = scenario.wavenumber();
        let yv = scenario.virtual_positions();
        let dv = scenario.virtual_spacing();
        let mut chain = Self {
            tx,
            dt,
            weights: &beam.weights,
            k,
            yv,
            dv,
            planes: Vec::new(),
        };
        if let Some(b) = scenario.blockage {
            let xs = scenario.virtual_planes();
            let mut prev: Option<(f64, Vec<Complex64>)> = None;
            for &x in &xs {
                let mut e = match &prev {
                    None => chain.direct(x, &chain.yv),
                    Some((px, pe)) => chain.hop(*px, pe, x, &chain.yv),
                };
                for (v, &y) in e.iter_mut().zip(&chain.yv) {
                    if b.contains(x, y) {
                        *v = Complex64::new(0.0, 0.0);
                    }
                }
                chain.planes.push((x, e.clone()));
                prev = Some((x, e));
            }
        }
        Ok(chain)
    }

    fn direct(&self, x: f64, ys: &[f64]) -> Vec<Complex64> {
        ys.iter()
            .map(|&y| {
                self.tx
                    .iter()
                    .zip(self.weights.iter())
                    .map(|(&t, &w)| line_kernel(x, y - t, self.k) * w)
                    .sum::<Complex64>()
                    * self.dt
            })
            .collect()
    }

    fn hop(&self, from_x: f64, field: &[Complex64], x: f64, ys: &[f64]) -> Vec<Complex64> {
        ys.iter()
            .map(|&y| {
                self.yv
                    .iter()
                    .zip(field)
                    .filter(|(_, e)| e.re != 0.0 || e.im != 0.0)
                    .map(|(&yp, &e)| line_kernel(x - from_x, y - yp, self.k) * e)
                    .sum::<Complex64>()
                    * self.dv
            })
            .collect()
    }

    fn field(&self, x: f64, ys: &[f64]) -> Result<Vec<Complex64>> {
        if !(x > 0.0) {
            return Err(Error::Geometry(format!("field line at x = {x} must lie beyond the aperture")));
        }
        // last masked plane strictly before x
        match self.planes.iter().rev().find(|(px, _)| *px < x) {
            Some((px, e)) => Ok(self.hop(*px, e, x, ys)),
            None => Ok(self.direct(x, ys)),
        }
    }
}

pub fn render_field_map(beam: &BeamVector, scenario: &ScenarioConfig, grid: &GridSpec) -> Result<FieldMap> {
    if !(grid.x_min > 0.0) {
        return Err(Error::Geometry("field-map grid must start beyond the x = 0 aperture".into()));
    }
    if grid.nx == 0 || grid.ny == 0 || !(grid.x_max >= grid.x_min) || !(grid.y_max >= grid.y_min) {
        return Err(invalid("grid", "needs non-empty ascending axes"));
    }
    let chain = PlaneChain::new(beam, scenario)?;
    let xs = grid.xs();
    let ys = grid.ys();
    let columns: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| chain.field(x, &ys).map(|c| c.iter().map(|v| v.norm_sqr()).collect()))
        .collect::<Result<_>>()?;
    let masked: Vec<Vec<bool>> = ys
        .iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| scenario.blockage.map(|b| b.contains(x, y)).unwrap_or(false))
                .collect()
        })
        .collect();
    let mut peak = 0.0f64;
    for (ix, col) in columns.iter().enumerate() {
        for (iy, &p) in col.iter().enumerate() {
            if !masked[iy][ix] {
                peak = peak.max(p);
            }
        }
    }
    let power_db = (0..ys.len())
        .map(|iy| {
            (0..xs.len())
                .map(|ix| {
                    let p = columns[ix][iy];
                    if masked[iy][ix] || peak == 0.0 || p == 0.0 {
                        DB_FLOOR
                    } else {
                        (10.0 * (p / peak).log10()).max(DB_FLOOR)
                    }
                })
                .collect()
        })
        .collect();
    Ok(FieldMap {
        xs,
        ys,
        power_db,
        masked,
        mask_applied: scenario.blockage.is_some(),
    })
}

/// Power-weighted mean ordinate of a field line.
pub fn energy_centroid(ys: &[f64], field: &[Complex64]) -> f64 {
    let p: Vec<f64> = field.iter().map(|v| v.norm_sqr()).collect();
    let total: f64 = p.iter().sum();
    ys.iter().zip(&p).map(|(y, q)| y * q).sum::<f64>() / total
}
