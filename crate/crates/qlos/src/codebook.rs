//! Beam correlations, sampling intervals and codebooks.
//!
//! Closed-form correlations for codewords differing in one native coordinate:
//!
//! * curving: `|A(x)/x|` with x the normalized cubic difference,
//! * distance: `|B(x) + j D(x)| / x` with x the normalized quadratic difference,
//! * angle: the Dirichlet kernel in `k d (sin t1 - sin t2)`.
//!
//! `alpha_bar_of`, `beta_bar_of` and `gamma_bar_of` map parameter
//! differences onto those arguments for a uniform array.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::beam::{airy_beam_vector, beam_from_positions, BeamParams, BeamVector};
use crate::numerics::{airy_cos_integral, first_descent_bracket, fresnel_integrals, solve_monotone_root};
use crate::scenario::ScenarioConfig;
use crate::{invalid, Error, Result};

const SMALL: f64 = 1e-9;

pub fn curving_correlation_closed(alpha_bar: f64) -> f64 {
    let x = alpha_bar.abs();
    if x < SMALL {
        return 1.0;
    }
    (airy_cos_integral(x).unwrap_or(f64::NAN) / x).abs()
}

pub fn distance_correlation_closed(beta_bar: f64) -> f64 {
    let x = beta_bar.abs();
    if x < SMALL {
        return 1.0;
    }
    let (b, d) = fresnel_integrals(x).unwrap_or((f64::NAN, f64::NAN));
    b.hypot(d) / x
}

pub fn angle_correlation_closed(gamma_bar: f64, n: usize) -> f64 {
    let s = (gamma_bar / 2.0).sin();
    if s.abs() < 1e-300 {
        return 1.0;
    }
    ((n as f64 * gamma_bar / 2.0).sin() / (n as f64 * s)).abs()
}

/// Normalized cubic difference for a curving step `delta_a`.
pub fn alpha_bar_of(delta_a: f64, n: usize, spacing: f64, wavelength: f64) -> f64 {
    (4.0 * delta_a.abs() / wavelength).cbrt() * n as f64 * spacing / 2.0
}

/// Normalized quadratic difference for a step `delta_q` in cos^2(theta)/r.
pub fn beta_bar_of(delta_q: f64, n: usize, spacing: f64, wavelength: f64) -> f64 {
    (2.0 * delta_q.abs() / wavelength).sqrt() * n as f64 * spacing / 2.0
}

/// Phase-slope difference for a step `delta_sin` in sin(theta).
pub fn gamma_bar_of(delta_sin: f64, spacing: f64, wavelength: f64) -> f64 {
    2.0 * PI / wavelength * spacing * delta_sin
}

/// |v1^H v2|.
pub fn beam_correlation_numeric(v1: &BeamVector, v2: &BeamVector) -> Result<f64> {
    if v1.len() != v2.len() {
        return Err(Error::Dimension(format!("{} vs {}", v1.len(), v2.len())));
    }
    Ok(v1.weights.dotc(&v2.weights).norm())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalRule {
    /// `s_a = alpha^3/(d^2 N^3)`, `s_r = beta^2/(d N^2)`.
    #[default]
    Formula,
    /// Intervals found by inverting the numeric correlation of actual codewords.
    Empirical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub xi_a: f64,
    pub xi_r: f64,
    /// Angular orthogonality index u.
    pub u: u32,
    /// Curving range [-curving_max, curving_max]; None scales 2 * (256/N)^3.
    pub curving_max: Option<f64>,
    /// Closest focus distance; None uses the Tx aperture length.
    pub r_min: Option<f64>,
    /// Override for the solved alpha_bar.
    pub alpha_bar: Option<f64>,
    /// Override for the solved beta_bar.
    pub beta_bar: Option<f64>,
    pub interval_rule: IntervalRule,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            xi_a: 0.4,
            xi_r: 0.15,
            u: 1,
            curving_max: None,
            r_min: None,
            alpha_bar: None,
            beta_bar: None,
            interval_rule: IntervalRule::Formula,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub xi_a: f64,
    pub xi_r: f64,
    pub u: u32,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub gamma_bar: f64,
    /// Formula intervals.
    pub s_a: f64,
    pub s_r: f64,
    pub s_theta: f64,
    /// Numeric-correlation intervals.
    pub s_a_empirical: f64,
    pub s_r_empirical: f64,
    pub interval_rule: IntervalRule,
    pub r_max: f64,
    pub r_min: f64,
    /// Ascending.
    pub a_grid: Vec<f64>,
    /// Ascending focus distances.
    pub r_grid: Vec<f64>,
    /// Ascending angles.
    pub theta_grid: Vec<f64>,
}

impl SamplingPlan {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.a_grid.len(), self.r_grid.len(), self.theta_grid.len())
    }

    pub fn a_min(&self) -> f64 {
        self.a_grid[0]
    }

    pub fn a_max(&self) -> f64 {
        *self.a_grid.last().unwrap()
    }

    /// Intervals actually used for the grids.
    pub fn active_intervals(&self) -> (f64, f64) {
        match self.interval_rule {
            IntervalRule::Formula => (self.s_a, self.s_r),
            IntervalRule::Empirical => (self.s_a_empirical, self.s_r_empirical),
        }
    }
}

/// First crossing of the curving correlation with `xi`.
pub fn solve_alpha_bar(xi: f64) -> Result<f64> {
    let br = first_descent_bracket(curving_correlation_closed, xi, 1e-6, 0.01, 20.0)?;
    solve_monotone_root(curving_correlation_closed, xi, br)
}

/// First crossing of the distance correlation with `xi`.
pub fn solve_beta_bar(xi: f64) -> Result<f64> {
    let br = first_descent_bracket(distance_correlation_closed, xi, 1e-6, 0.01, 20.0)?;
    solve_monotone_root(distance_correlation_closed, xi, br)
}

// Smallest positive step giving the target correlation between two codewords
// built by `pair(step)`.
fn invert_numeric<F: Fn(f64) -> f64>(corr: F, xi: f64, guess: f64) -> Result<f64> {
    let step = guess / 50.0;
    let br = first_descent_bracket(&corr, xi, 0.0, step, guess * 100.0)?;
    solve_monotone_root(&corr, xi, br)
}

pub fn solve_sampling_plan(cfg: &PlanConfig, scenario: &ScenarioConfig) -> Result<SamplingPlan> {
    for (name, xi) in [("plan.xi_a", cfg.xi_a), ("plan.xi_r", cfg.xi_r)] {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(invalid(name, format!("target correlation must lie in (0, 1), got {xi}")));
        }
    }
    if cfg.u == 0 {
        return Err(invalid("plan.u", "must be at least 1"));
    }
    let n = scenario.tx.num_elements;
    let nf = n as f64;
    let d = scenario.tx.spacing;
    let lam = scenario.wavelength();
    let alpha_bar = match cfg.alpha_bar {
        Some(v) => v,
        None => solve_alpha_bar(cfg.xi_a)?,
    };
    let beta_bar = match cfg.beta_bar {
        Some(v) => v,
        None => solve_beta_bar(cfg.xi_r)?,
    };
    let gamma_bar = 2.0 * PI * cfg.u as f64 / nf;
    let s_a = alpha_bar.powi(3) / (d * d * nf.powi(3));
    let s_r = beta_bar.powi(2) / (d * nf * nf);
    let s_theta = 2.0 * cfg.u as f64 / nf;

    let r_max = scenario.link_distance;
    let c = scenario.carrier;
    let pos = scenario.tx.positions();
    let s_a_empirical = invert_numeric(
        |da| {
            let v1 = beam_from_positions(&BeamParams::focusing(r_max, 0.0), &pos, &c);
            let v2 = beam_from_positions(&BeamParams { curving: da, ..BeamParams::focusing(r_max, 0.0) }, &pos, &c);
            v1.weights.dotc(&v2.weights).norm()
        },
        cfg.xi_a,
        s_a.max(1e-12),
    )?;
    let s_r_empirical = invert_numeric(
        |dq| {
            let v1 = beam_from_positions(&BeamParams::focusing(r_max, 0.0), &pos, &c);
            let v2 = beam_from_positions(&BeamParams::focusing(1.0 / (1.0 / r_max + dq), 0.0), &pos, &c);
            v1.weights.dotc(&v2.weights).norm()
        },
        cfg.xi_r,
        s_r.max(1e-12),
    )?;
    let (sa, sr) = match cfg.interval_rule {
        IntervalRule::Formula => (s_a, s_r),
        IntervalRule::Empirical => (s_a_empirical, s_r_empirical),
    };

    let curving_max = cfg.curving_max.unwrap_or(2.0 * (256.0 / nf).powi(3));
    if !(curving_max >= 0.0) {
        return Err(invalid("plan.curving_max", "must be non-negative"));
    }
    let half = (curving_max / sa + 1e-9).floor() as i64;
    let a_grid: Vec<f64> = (-half..=half).map(|j| j as f64 * sa).collect();

    let r_min = cfg.r_min.unwrap_or(scenario.tx.aperture().max(lam));
    if !(r_min > 0.0 && r_min <= r_max) {
        return Err(invalid("plan.r_min", format!("must lie in (0, {r_max}], got {r_min}")));
    }
    let mut r_grid = Vec::new();
    let mut k = 0usize;
    loop {
        let r = 1.0 / (1.0 / r_max + k as f64 * sr);
        if r < r_min * (1.0 - 1e-12) {
            break;
        }
        r_grid.push(r);
        k += 1;
    }
    r_grid.reverse();

    let v_count = ((2.0 / s_theta) - 1e-9).ceil() as usize - 1;
    let theta_grid: Vec<f64> = (1..=v_count).map(|v| (-1.0 + v as f64 * s_theta).asin()).collect();

    Ok(SamplingPlan {
        xi_a: cfg.xi_a,
        xi_r: cfg.xi_r,
        u: cfg.u,
        alpha_bar,
        beta_bar,
        gamma_bar,
        s_a,
        s_r,
        s_theta,
        s_a_empirical,
        s_r_empirical,
        interval_rule: cfg.interval_rule,
        r_max,
        r_min,
        a_grid,
        r_grid,
        theta_grid,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookScheme {
    Exhaustive,
    HierarchicalStage1,
    HierarchicalStage2,
    LowComplexityStage1,
    LowComplexityStage2,
    FarFieldSteering,
    NearFieldFocusing,
}

impl CodebookScheme {
    pub fn name(self) -> &'static str {
        match self {
            CodebookScheme::Exhaustive => "exhaustive",
            CodebookScheme::HierarchicalStage1 => "hierarchical_stage1",
            CodebookScheme::HierarchicalStage2 => "hierarchical_stage2",
            CodebookScheme::LowComplexityStage1 => "low_complexity_stage1",
            CodebookScheme::LowComplexityStage2 => "low_complexity_stage2",
            CodebookScheme::FarFieldSteering => "far_field_steering",
            CodebookScheme::NearFieldFocusing => "near_field_focusing",
        }
    }
}

/// Ordered codeword parameters; vectors are synthesized on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub scheme: CodebookScheme,
    pub entries: Vec<BeamParams>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vector(&self, index: usize, scenario: &ScenarioConfig) -> BeamVector {
        airy_beam_vector(&self.entries[index], &scenario.tx, &scenario.carrier)
    }
}

/// Builds the stage-2 curving sweep at a given focus.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Factory {
    pub scheme: CodebookScheme,
    pub a_grid: Vec<f64>,
}

impl Stage2Factory {
    pub fn build(&self, focus_distance: f64, focus_angle: f64) -> Codebook {
        let mut grid = self.a_grid.clone();
        if !grid.iter().any(|&a| a == 0.0) {
            grid.push(0.0);
            grid.sort_by(f64::total_cmp);
        }
        Codebook {
            scheme: self.scheme,
            entries: grid
                .into_iter()
                .map(|a| BeamParams {
                    curving: a,
                    focus_distance,
                    focus_angle,
                })
                .collect(),
        }
    }
}

/// Full (a, r, theta) grid in lexicographic order.
pub fn build_exhaustive_codebook(plan: &SamplingPlan) -> Codebook {
    let mut entries = Vec::with_capacity(plan.a_grid.len() * plan.r_grid.len() * plan.theta_grid.len());
    for &a in &plan.a_grid {
        for &r in &plan.r_grid {
            for &t in &plan.theta_grid {
                entries.push(BeamParams {
                    curving: a,
                    focus_distance: r,
                    focus_angle: t,
                });
            }
        }
    }
    Codebook {
        scheme: CodebookScheme::Exhaustive,
        entries,
    }
}

/// Grid points inside the LoS strip `0 <= r cos(theta) <= D`, `|r sin(theta)| <= L_a/2`.
pub fn build_los_region_points(scenario: &ScenarioConfig, plan: &SamplingPlan) -> Vec<(f64, f64)> {
    let d = scenario.link_distance;
    let half = scenario.tx.aperture() / 2.0;
    let mut pts = Vec::new();
    for &r in &plan.r_grid {
        for &t in &plan.theta_grid {
            let x = r * t.cos();
            if (0.0..=d * (1.0 + 1e-12)).contains(&x) && (r * t.sin()).abs() <= half * (1.0 + 1e-12) {
                pts.push((r, t));
            }
        }
    }
    pts
}

pub fn build_hierarchical_codebooks(plan: &SamplingPlan, scenario: &ScenarioConfig) -> (Codebook, Stage2Factory) {
    let stage1 = Codebook {
        scheme: CodebookScheme::HierarchicalStage1,
        entries: build_los_region_points(scenario, plan)
            .into_iter()
            .map(|(r, t)| BeamParams::focusing(r, t))
            .collect(),
    };
    (
        stage1,
        Stage2Factory {
            scheme: CodebookScheme::HierarchicalStage2,
            a_grid: plan.a_grid.clone(),
        },
    )
}

/// Stage 1 focuses on the curve cos(theta)/r = 1/D within +-atan(L_a/(2D)).
pub fn build_low_complexity_codebooks(scenario: &ScenarioConfig, plan: &SamplingPlan) -> (Codebook, Stage2Factory) {
    let d = scenario.link_distance;
    let tmax = (scenario.tx.aperture() / (2.0 * d)).atan();
    let vmax = (tmax.sin() / plan.s_theta + 1e-9).floor() as i64;
    let entries = (-vmax..=vmax)
        .map(|v| {
            let t = (v as f64 * plan.s_theta).asin();
            BeamParams::focusing(d * t.cos(), t)
        })
        .collect();
    (
        Codebook {
            scheme: CodebookScheme::LowComplexityStage1,
            entries,
        },
        Stage2Factory {
            scheme: CodebookScheme::LowComplexityStage2,
            a_grid: plan.a_grid.clone(),
        },
    )
}

/// Steering beams over the angle grid.
pub fn build_farfield_codebook(plan: &SamplingPlan) -> Codebook {
    Codebook {
        scheme: CodebookScheme::FarFieldSteering,
        entries: plan.theta_grid.iter().map(|&t| BeamParams::steering(t)).collect(),
    }
}

/// Focusing beams aimed at each Rx element.
pub fn build_nearfield_codebook(scenario: &ScenarioConfig) -> Codebook {
    let d = scenario.link_distance;
    Codebook {
        scheme: CodebookScheme::NearFieldFocusing,
        entries: scenario
            .rx
            .positions()
            .into_iter()
            .map(|y| BeamParams::focusing(d.hypot(y), (y / d).atan()))
            .collect(),
    }
}
