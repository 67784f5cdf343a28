//! Hybrid precoder/combiner design, spectral efficiency and scenario sweeps.

use std::fmt;
use std::str::FromStr;

use nalgebra::SVD;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beam::{airy_beam_vector, BeamParams};
use crate::channel::{calibrated_quasi_los, gcm_channel, nlos_component, occlusion_fraction, random_rays, ChannelMatrix, ChannelModel, NlosRay};
use crate::codebook::{build_exhaustive_codebook, build_hierarchical_codebooks, build_low_complexity_codebooks, solve_sampling_plan, PlanConfig, SamplingPlan};
use crate::scenario::ScenarioConfig;
use crate::search::{
    exhaustive_search, farfield_steering_search, hierarchical_search, low_complexity_search, nearfield_focusing_search, noise_for_reference_se,
    ProbeCombiner, SearchResult, TrainingConfig,
};
use crate::{invalid, CMat, Error, Result};

/// Condition number above which R_n is inverted through a pseudo-inverse.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct Beamformers {
    pub analog_precoder: CMat,
    pub digital_precoder: CMat,
    pub analog_combiner: CMat,
    pub digital_combiner: CMat,
    /// Unconstrained benchmark; the analog stages carry the full weights.
    pub full_digital: bool,
    pub notes: Vec<String>,
}

impl Beamformers {
    pub fn precoder(&self) -> CMat {
        &self.analog_precoder * &self.digital_precoder
    }

    pub fn combiner(&self) -> CMat {
        &self.analog_combiner * &self.digital_combiner
    }

    pub fn num_streams(&self) -> usize {
        self.digital_precoder.ncols()
    }
}

pub fn effective_channel(channel: &CMat, analog_precoder: &CMat) -> Result<CMat> {
    if channel.ncols() != analog_precoder.nrows() {
        return Err(Error::Dimension(format!("channel has {} columns, precoder {} rows", channel.ncols(), analog_precoder.nrows())));
    }
    Ok(channel * analog_precoder)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvdDesign {
    pub digital_precoder: CMat,
    pub optimal_combiner: CMat,
    pub rank_deficient: bool,
}

/// Top right/left singular vectors of `effective`; the digital precoder is
/// scaled so that `||F_RF F_BB||_F^2 = N_s`.
pub fn svd_precoder_combiner(analog_precoder: &CMat, effective: &CMat, num_streams: usize) -> Result<SvdDesign> {
    if num_streams == 0 || num_streams > effective.nrows().min(effective.ncols()) {
        return Err(invalid("num_streams", format!("{num_streams} streams for a {}x{} effective channel", effective.nrows(), effective.ncols())));
    }
    if analog_precoder.ncols() != effective.ncols() {
        return Err(Error::Dimension("analog precoder and effective channel disagree on L_t".into()));
    }
    let svd = SVD::new(effective.clone(), true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::NonFinite("effective channel svd")),
    };
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let smax = s[order[0]];
    let mut f_bb = CMat::zeros(effective.ncols(), num_streams);
    let mut w = CMat::zeros(effective.nrows(), num_streams);
    let mut rank_deficient = false;
    for (col, &i) in order.iter().take(num_streams).enumerate() {
        if !(s[i] > 1e-12 * smax) || smax == 0.0 {
            rank_deficient = true;
            continue;
        }
        f_bb.set_column(col, &vt.row(i).adjoint());
        w.set_column(col, &u.column(i));
    }
    let norm = (analog_precoder * &f_bb).norm();
    if norm > 0.0 {
        f_bb *= Complex64::from((num_streams as f64).sqrt() / norm);
    }
    Ok(SvdDesign {
        digital_precoder: f_bb,
        optimal_combiner: w,
        rank_deficient,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinerSplit {
    pub analog: CMat,
    pub digital: CMat,
    /// `||W_opt - W_RF W_BB||_F` before renormalization.
    pub residual: f64,
}

fn unit_phase(z: Complex64) -> Complex64 {
    if z.norm() > 0.0 {
        z / z.norm()
    } else {
        Complex64::new(1.0, 0.0)
    }
}

/// Phase extraction for the analog combiner, least squares for the digital
/// one. Extra RF chains beyond N_s get DFT columns.
pub fn decompose_combiner(optimal: &CMat, num_rf: usize) -> Result<CombinerSplit> {
    let (nr, ns) = optimal.shape();
    if num_rf < ns {
        return Err(invalid("num_rf", format!("{num_rf} RF chains for {ns} streams")));
    }
    let scale = 1.0 / (nr as f64).sqrt();
    let mut analog = CMat::zeros(nr, num_rf);
    for c in 0..num_rf {
        for r in 0..nr {
            analog[(r, c)] = if c < ns {
                unit_phase(optimal[(r, c)]) * scale
            } else {
                Complex64::from_polar(scale, 2.0 * std::f64::consts::PI * (c * r) as f64 / nr as f64)
            };
        }
    }
    let pinv = analog.clone().pseudo_inverse(1e-12).map_err(|_| Error::NonFinite("analog combiner pseudo-inverse"))?;
    let mut digital = pinv * optimal;
    let residual = (optimal - &analog * &digital).norm();
    let norm = (&analog * &digital).norm();
    if norm > 0.0 {
        digital *= Complex64::from((ns as f64).sqrt() / norm);
    }
    Ok(CombinerSplit { analog, digital, residual })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEfficiency {
    pub bits: f64,
    pub ill_conditioned: bool,
}

/// `log2 det(I + rho/N_s R_n^-1 W^H H F F^H H^H W)` with `R_n = sigma^2 W^H W`.
pub fn spectral_efficiency(precoder: &CMat, combiner: &CMat, channel: &CMat, transmit_power: f64, noise_power: f64) -> Result<SpectralEfficiency> {
    if !(noise_power > 0.0) {
        return Err(invalid("noise_power", "must be positive"));
    }
    if channel.ncols() != precoder.nrows() || channel.nrows() != combiner.nrows() {
        return Err(Error::Dimension("precoder, channel and combiner shapes disagree".into()));
    }
    let ns = precoder.ncols().max(1) as f64;
    let g = combiner.adjoint() * channel * precoder;
    let rn = combiner.adjoint() * combiner * Complex64::from(noise_power);
    let sv = rn.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let ill = !(smin > 0.0) || smax / smin > CONDITION_LIMIT;
    let rinv = if ill {
        rn.pseudo_inverse(smax * 1e-12).map_err(|_| Error::NonFinite("noise covariance"))?
    } else {
        rn.try_inverse().ok_or(Error::NonFinite("noise covariance"))?
    };
    let m = rinv * &g * g.adjoint() * Complex64::from(transmit_power / ns);
    let id = CMat::identity(m.nrows(), m.ncols());
    let det = (id + m).determinant();
    let bits = det.norm().log2();
    if !bits.is_finite() {
        return Err(Error::NonFinite("spectral efficiency"));
    }
    Ok(SpectralEfficiency { bits, ill_conditioned: ill })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    PerfectCsi,
    NonBlockedLos,
    NonBlockedQuasiLos,
    NlosOnly,
    Exhaustive,
    Hierarchical,
    LowComplexity,
    NearFieldFocusing,
    FarFieldSteering,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::PerfectCsi,
        Scheme::NonBlockedLos,
        Scheme::NonBlockedQuasiLos,
        Scheme::NlosOnly,
        Scheme::Exhaustive,
        Scheme::Hierarchical,
        Scheme::LowComplexity,
        Scheme::NearFieldFocusing,
        Scheme::FarFieldSteering,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::PerfectCsi => "perfect_csi",
            Scheme::NonBlockedLos => "nonblocked_los",
            Scheme::NonBlockedQuasiLos => "nonblocked_quasi_los",
            Scheme::NlosOnly => "nlos_only",
            Scheme::Exhaustive => "exhaustive",
            Scheme::Hierarchical => "hier",
            Scheme::LowComplexity => "lowc",
            Scheme::NearFieldFocusing => "nf",
            Scheme::FarFieldSteering => "ff",
        }
    }

    pub fn is_search(self) -> bool {
        matches!(
            self,
            Scheme::Exhaustive | Scheme::Hierarchical | Scheme::LowComplexity | Scheme::NearFieldFocusing | Scheme::FarFieldSteering
        )
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let alias = match s {
            "hierarchical" => "hier",
            "low_complexity" => "lowc",
            "near_field" | "near_field_focusing" => "nf",
            "far_field" | "far_field_steering" => "ff",
            other => other,
        };
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == alias)
            .ok_or_else(|| invalid("scheme", format!("unknown scheme '{s}'")))
    }
}

/// Which channel the digital stage of the searched schemes is designed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DesignChannel {
    #[default]
    NonBlocked,
    Blocked,
}

/// LoS, quasi-LoS and NLoS parts for one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub los: CMat,
    pub quasi_los: CMat,
    pub nlos: CMat,
    pub occlusion: f64,
}

impl ChannelSet {
    pub fn build(scenario: &ScenarioConfig, model: ChannelModel, rays: &[NlosRay]) -> Result<Self> {
        let los = gcm_channel(&scenario.with_blockage(None));
        let quasi_los = calibrated_quasi_los(scenario, model)?;
        let nlos = nlos_component(scenario, los.norm(), rays)?;
        Ok(Self {
            occlusion: occlusion_fraction(scenario),
            los: los.entries,
            quasi_los: quasi_los.entries,
            nlos,
        })
    }

    pub fn nonblocked(&self) -> CMat {
        &self.los + &self.nlos
    }

    pub fn blocked(&self) -> CMat {
        &self.quasi_los + &self.nlos
    }
}

fn full_digital(h: &CMat, num_streams: usize) -> Result<Beamformers> {
    let ident = CMat::identity(h.ncols(), h.ncols());
    let d = svd_precoder_combiner(&ident, h, num_streams)?;
    let mut notes = Vec::new();
    if d.rank_deficient {
        notes.push("rank_deficient".to_string());
    }
    Ok(Beamformers {
        analog_precoder: d.digital_precoder,
        digital_precoder: CMat::identity(num_streams, num_streams),
        analog_combiner: d.optimal_combiner,
        digital_combiner: CMat::identity(num_streams, num_streams),
        full_digital: true,
        notes,
    })
}

/// Hybrid beamformers for a searched codeword: the digital precoder and the
/// optimal combiner come from the SVD of `design * F_A`.
pub fn hybrid_from_codeword(params: &BeamParams, scenario: &ScenarioConfig, design: &CMat) -> Result<Beamformers> {
    let v = airy_beam_vector(params, &scenario.tx, &scenario.carrier);
    let f_rf = CMat::from_column_slice(v.len(), 1, v.weights.as_slice());
    let eff = effective_channel(design, &f_rf)?;
    let d = svd_precoder_combiner(&f_rf, &eff, 1)?;
    let split = decompose_combiner(&d.optimal_combiner, 1)?;
    let mut notes = Vec::new();
    if d.rank_deficient {
        notes.push("rank_deficient".to_string());
    }
    Ok(Beamformers {
        analog_precoder: f_rf,
        digital_precoder: d.digital_precoder,
        analog_combiner: split.analog,
        digital_combiner: split.digital,
        full_digital: false,
        notes,
    })
}

/// Beamformers and evaluation channel for one scheme.
pub fn build_scheme_beamformers(
    scheme: Scheme,
    selected: Option<&BeamParams>,
    channels: &ChannelSet,
    scenario: &ScenarioConfig,
    design: DesignChannel,
) -> Result<(Beamformers, CMat)> {
    let blocked = channels.blocked();
    match scheme {
        Scheme::PerfectCsi => Ok((full_digital(&blocked, 1)?, blocked)),
        Scheme::NonBlockedLos => {
            let nb = channels.nonblocked();
            Ok((full_digital(&nb, 1)?, nb))
        }
        Scheme::NonBlockedQuasiLos => Ok((full_digital(&channels.nonblocked(), 1)?, blocked)),
        Scheme::NlosOnly => Ok((full_digital(&channels.nlos, 1)?, channels.nlos.clone())),
        _ => {
            let p = selected.ok_or_else(|| invalid("scheme", format!("{scheme} needs a search result")))?;
            let d = match design {
                DesignChannel::NonBlocked => channels.nonblocked(),
                DesignChannel::Blocked => blocked.clone(),
            };
            Ok((hybrid_from_codeword(p, scenario, &d)?, blocked))
        }
    }
}

pub fn run_scheme_search(
    scheme: Scheme,
    plan: &SamplingPlan,
    scenario: &ScenarioConfig,
    blocked: &CMat,
    training: &TrainingConfig,
) -> Result<Option<SearchResult>> {
    let h = ChannelMatrix::new(blocked.clone(), ChannelModel::Composite);
    let r = match scheme {
        Scheme::Exhaustive => exhaustive_search(&build_exhaustive_codebook(plan), &h, training, scenario)?,
        Scheme::Hierarchical => {
            let (s1, s2) = build_hierarchical_codebooks(plan, scenario);
            hierarchical_search(&s1, &s2, &h, training, scenario)?
        }
        Scheme::LowComplexity => {
            let (s1, s2) = build_low_complexity_codebooks(scenario, plan);
            low_complexity_search(&s1, &s2, &h, training, scenario)?
        }
        Scheme::NearFieldFocusing => nearfield_focusing_search(&h, training, scenario)?,
        Scheme::FarFieldSteering => farfield_steering_search(plan, &h, training, scenario)?,
        _ => return Ok(None),
    };
    Ok(Some(r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultipathConfig {
    pub num_rays: usize,
    pub gain_db_min: f64,
    pub gain_db_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for MultipathConfig {
    fn default() -> Self {
        Self {
            num_rays: 4,
            gain_db_min: -25.0,
            gain_db_max: -15.0,
            y_min: 0.6,
            y_max: 1.5,
        }
    }
}

impl MultipathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_db_min <= self.gain_db_max && self.gain_db_max <= 0.0) {
            return Err(invalid("multipath.gain_db_max", "need gain_db_min <= gain_db_max <= 0"));
        }
        if !(self.y_min > 0.0 && self.y_min <= self.y_max) {
            return Err(invalid("multipath.y_min", "need 0 < y_min <= y_max"));
        }
        Ok(())
    }

    pub fn rays(&self, link_distance: f64, seed: u64) -> Vec<NlosRay> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_rays(&mut rng, self.num_rays, link_distance, (self.gain_db_min, self.gain_db_max), (self.y_min, self.y_max))
    }
}

/// Everything a sweep needs besides the swept axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub scenario: ScenarioConfig,
    pub plan: PlanConfig,
    pub model: ChannelModel,
    pub multipath: MultipathConfig,
    pub transmit_power: f64,
    /// None derives it from `reference_se`.
    pub noise_power: Option<f64>,
    /// Target SE of the unblocked LoS optimum, bits/s/Hz.
    pub reference_se: f64,
    pub probe: ProbeCombiner,
    pub design: DesignChannel,
    pub seed: u64,
}

impl Experiment {
    pub fn reference(n: usize, height: Option<f64>) -> Self {
        Self {
            scenario: ScenarioConfig::reference(n, height),
            plan: PlanConfig::default(),
            model: ChannelModel::Cgwcm,
            multipath: MultipathConfig::default(),
            transmit_power: 1.0,
            noise_power: None,
            reference_se: 15.0,
            probe: ProbeCombiner::Omnidirectional,
            design: DesignChannel::NonBlocked,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.multipath.validate()?;
        if !(self.transmit_power > 0.0) {
            return Err(invalid("training.transmit_power", "must be positive"));
        }
        if let Some(n) = self.noise_power {
            if !(n > 0.0) {
                return Err(invalid("training.noise_power", "must be positive"));
            }
        }
        if !(self.reference_se > 0.0) {
            return Err(invalid("training.reference_se", "must be positive"));
        }
        Ok(())
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power.unwrap_or_else(|| {
            let los = gcm_channel(&self.scenario.with_blockage(None));
            noise_for_reference_se(&los, self.transmit_power, self.reference_se)
        })
    }

    pub fn training(&self, noise_power: f64, transmit_power: f64, seed: u64) -> TrainingConfig {
        TrainingConfig {
            transmit_power,
            noise_power,
            rx_probe_combiner: self.probe,
            rng_seed: seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub spectral_efficiency: f64,
    pub overhead: usize,
    pub selected: Option<BeamParams>,
    pub notes: Vec<String>,
}

/// Independent stream per (repetition seed, point, scheme).
pub fn mix_seed(seed: u64, point: usize, scheme: usize) -> u64 {
    let mut z = seed ^ ((point as u64) << 24) ^ ((scheme as u64) << 56);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn se_note(se: &SpectralEfficiency, bf: &Beamformers) -> Vec<String> {
    let mut notes = bf.notes.clone();
    if se.ill_conditioned {
        notes.push("ill_conditioned".to_string());
    }
    notes
}

/// Evaluates every scheme on one scenario. `budget` truncates the search
/// traces for overhead sweeps.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_schemes(
    experiment: &Experiment,
    plan: &SamplingPlan,
    scenario: &ScenarioConfig,
    channels: &ChannelSet,
    schemes: &[Scheme],
    transmit_power: f64,
    noise_power: f64,
    seed: u64,
) -> Result<Vec<SchemeOutcome>> {
    let searches = search_all(experiment, plan, scenario, channels, schemes, transmit_power, noise_power, seed)?;
    outcomes_from_searches(experiment, scenario, channels, schemes, &searches, None, transmit_power, noise_power)
}

#[allow(clippy::too_many_arguments)]
fn search_all(
    experiment: &Experiment,
    plan: &SamplingPlan,
    scenario: &ScenarioConfig,
    channels: &ChannelSet,
    schemes: &[Scheme],
    transmit_power: f64,
    noise_power: f64,
    seed: u64,
) -> Result<Vec<Option<SearchResult>>> {
    let blocked = channels.blocked();
    schemes
        .iter()
        .map(|&s| {
            let idx = Scheme::ALL.iter().position(|&x| x == s).unwrap();
            let training = experiment.training(noise_power, transmit_power, mix_seed(seed, 0, idx));
            run_scheme_search(s, plan, scenario, &blocked, &training)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn outcomes_from_searches(
    experiment: &Experiment,
    scenario: &ScenarioConfig,
    channels: &ChannelSet,
    schemes: &[Scheme],
    searches: &[Option<SearchResult>],
    budget: Option<usize>,
    transmit_power: f64,
    noise_power: f64,
) -> Result<Vec<SchemeOutcome>> {
    schemes
        .iter()
        .zip(searches)
        .map(|(&scheme, search)| {
            let (selected, overhead) = match search {
                Some(r) => match budget {
                    Some(b) => (r.best_within(b), b.min(r.overhead)),
                    None => (Some(r.selected), r.overhead),
                },
                None => (None, 0),
            };
            if scheme.is_search() && selected.is_none() {
                return Ok(SchemeOutcome {
                    scheme,
                    spectral_efficiency: 0.0,
                    overhead,
                    selected: None,
                    notes: vec!["no_slots".to_string()],
                });
            }
            let (bf, h) = build_scheme_beamformers(scheme, selected.as_ref(), channels, scenario, experiment.design)?;
            let se = spectral_efficiency(&bf.precoder(), &bf.combiner(), &h, transmit_power, noise_power)?;
            Ok(SchemeOutcome {
                scheme,
                spectral_efficiency: se.bits,
                overhead,
                selected,
                notes: se_note(&se, &bf),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    BlockageHeight,
    BlockageDistance,
    Overhead,
    /// Grid values in dB relative to the configured transmit power.
    TransmitPower,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::BlockageHeight => "height",
            SweepVariable::BlockageDistance => "distance",
            SweepVariable::Overhead => "overhead",
            SweepVariable::TransmitPower => "transmit_power",
        }
    }
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "height" | "blockage_height" => Ok(SweepVariable::BlockageHeight),
            "distance" | "blockage_distance" => Ok(SweepVariable::BlockageDistance),
            "overhead" => Ok(SweepVariable::Overhead),
            "transmit_power" | "power" => Ok(SweepVariable::TransmitPower),
            other => Err(invalid("sweep.variable", format!("unknown sweep variable '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub repetitions: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(invalid("sweep.grid", "must not be empty"));
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep.grid", "values must be finite"));
        }
        if self.schemes.is_empty() {
            return Err(invalid("sweep.schemes", "must not be empty"));
        }
        if self.repetitions == 0 {
            return Err(invalid("sweep.repetitions", "must be at least 1"));
        }
        if self.variable == SweepVariable::Overhead && self.grid.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(invalid("sweep.grid", "overhead budgets must be non-negative integers"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sweep_variable: SweepVariable,
    pub value: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub spectral_efficiency: f64,
    pub overhead_slots: usize,
    pub notes: String,
}

fn point_scenario(base: &ScenarioConfig, variable: SweepVariable, value: f64) -> Result<ScenarioConfig> {
    let s = match variable {
        SweepVariable::BlockageHeight | SweepVariable::BlockageDistance if base.blockage.is_none() => {
            return Err(invalid("blockage", "a blockage sweep needs a configured blockage"));
        }
        SweepVariable::BlockageHeight => base.with_height(value),
        SweepVariable::BlockageDistance => base.with_blockage_distance(value),
        _ => base.clone(),
    };
    s.validate()?;
    Ok(s)
}

/// Runs grid points in parallel; rows come back in (repetition, value,
/// scheme) order regardless of scheduling.
pub fn run_sweep(spec: &SweepSpec, experiment: &Experiment) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    experiment.validate()?;
    let plan = solve_sampling_plan(&experiment.plan, &experiment.scenario)?;
    let noise = experiment.noise_power();
    let base = &experiment.scenario;
    let d = base.link_distance;

    let jobs: Vec<(usize, usize)> = if spec.variable == SweepVariable::Overhead {
        (0..spec.repetitions).map(|r| (r, 0)).collect()
    } else {
        (0..spec.repetitions).flat_map(|r| (0..spec.grid.len()).map(move |i| (r, i))).collect()
    };

    let blocks: Vec<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|&(rep, i)| -> Result<Vec<SweepRow>> {
            let seed = experiment.seed.wrapping_add(rep as u64);
            let rays = experiment.multipath.rays(d, seed);
            let value = spec.grid[i];
            let scenario = point_scenario(base, spec.variable, value)?;
            let channels = ChannelSet::build(&scenario, experiment.model, &rays)?;
            let occ = format!("occlusion={:.4}", channels.occlusion);
            let row = |value: f64, o: SchemeOutcome| SweepRow {
                sweep_variable: spec.variable,
                value,
                scheme: o.scheme,
                seed,
                spectral_efficiency: o.spectral_efficiency,
                overhead_slots: o.overhead,
                notes: std::iter::once(occ.clone()).chain(o.notes).collect::<Vec<_>>().join(";"),
            };
            match spec.variable {
                SweepVariable::Overhead => {
                    let searches = search_all(experiment, &plan, &scenario, &channels, &spec.schemes, experiment.transmit_power, noise, mix_seed(seed, 0, 0))?;
                    let mut rows = Vec::new();
                    for &b in &spec.grid {
                        let out = outcomes_from_searches(experiment, &scenario, &channels, &spec.schemes, &searches, Some(b as usize), experiment.transmit_power, noise)?;
                        rows.extend(out.into_iter().map(|o| row(b, o)));
                    }
                    Ok(rows)
                }
                _ => {
                    let rho = if spec.variable == SweepVariable::TransmitPower {
                        experiment.transmit_power * 10f64.powf(value / 10.0)
                    } else {
                        experiment.transmit_power
                    };
                    let out = evaluate_schemes(experiment, &plan, &scenario, &channels, &spec.schemes, rho, noise, mix_seed(seed, i, 0))?;
                    Ok(out.into_iter().map(|o| row(value, o)).collect())
                }
            }
        })
        .collect::<Result<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CVec;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, cc: usize) -> CMat {
        CMat::from_fn(r, cc, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn effective_channel_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_matrix(&mut rng, 4, 4);
        let f = CMat::from_element(4, 1, c(0.5, 0.0));
        let e = effective_channel(&h, &f).unwrap();
        for r in 0..4 {
            let sum: Complex64 = (0..4).map(|j| h[(r, j)]).sum();
            assert!((e[(r, 0)] - sum * 0.5).norm() < 1e-14);
        }
        let g = random_matrix(&mut rng, 4, 2);
        let e = effective_channel(&h, &g).unwrap();
        for r in 0..4 {
            for col in 0..2 {
                let v: Complex64 = (0..4).map(|j| h[(r, j)] * g[(j, col)]).sum();
                assert!((e[(r, col)] - v).norm() < 1e-14);
            }
        }
        assert_eq!(effective_channel(&CMat::zeros(3, 4), &f).unwrap().norm(), 0.0);
        assert!(effective_channel(&h, &CMat::zeros(3, 1)).is_err());
    }

    #[test]
    fn svd_rank_one_and_diagonal() {
        let u = CVec::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let v = CVec::from_vec(vec![c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let h = &u * v.adjoint() * c(3.0, 0.0);
        let id = CMat::identity(3, 3);
        let d = svd_precoder_combiner(&id, &h, 1).unwrap();
        assert!((d.digital_precoder.column(0).dotc(&v).norm() - 1.0).abs() < 1e-12);
        assert!((d.optimal_combiner.column(0).dotc(&u).norm() - 1.0).abs() < 1e-12);
        assert!(d.rank_deficient == false);

        let diag = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(5.0, 0.0), c(2.0, 0.0)]));
        let d = svd_precoder_combiner(&CMat::identity(3, 3), &diag, 2).unwrap();
        let s = (2.0f64).sqrt() / (2.0f64).sqrt();
        assert!((d.digital_precoder[(1, 0)].norm() - s).abs() < 1e-12);
        assert!((d.digital_precoder[(2, 1)].norm() - s).abs() < 1e-12);
        assert!(svd_precoder_combiner(&CMat::identity(3, 3), &diag, 4).is_err());
        let z = svd_precoder_combiner(&CMat::identity(3, 3), &CMat::zeros(3, 3), 1).unwrap();
        assert!(z.rank_deficient);
    }

    #[test]
    fn svd_pair_dominates_random_digital_precoders() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_matrix(&mut rng, 6, 6);
        // orthogonal constant-modulus columns keep ||F_RF F_BB|| = ||F_BB||
        let f_rf = CMat::from_fn(6, 3, |r, col| Complex64::from_polar(6f64.sqrt().recip(), 2.0 * std::f64::consts::PI * (r * col) as f64 / 6.0));
        let eff = effective_channel(&h, &f_rf).unwrap();
        let d = svd_precoder_combiner(&f_rf, &eff, 1).unwrap();
        let best = spectral_efficiency(&(&f_rf * &d.digital_precoder), &d.optimal_combiner, &h, 1.0, 0.1).unwrap().bits;
        for _ in 0..100 {
            let mut fbb = random_matrix(&mut rng, 3, 1);
            let n = (&f_rf * &fbb).norm();
            fbb /= c(n, 0.0);
            let w = &h * &f_rf * &fbb;
            let se = spectral_efficiency(&(&f_rf * &fbb), &w, &h, 1.0, 0.1).unwrap().bits;
            assert!(se <= best + 1e-9);
        }
    }

    #[test]
    fn decompose_examples() {
        let cm = CMat::from_fn(4, 1, |r, _| Complex64::from_polar(0.5, r as f64));
        let s = decompose_combiner(&cm, 1).unwrap();
        assert!(s.residual < 1e-12);
        assert!((s.digital[(0, 0)].norm() - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_matrix(&mut rng, 8, 1);
        let w = &w / c(w.norm(), 0.0);
        let s = decompose_combiner(&w, 1).unwrap();
        for r in 0..8 {
            assert!((s.analog[(r, 0)].arg() - w[(r, 0)].arg()).abs() < 1e-12);
            assert!((s.analog[(r, 0)].norm() - 8f64.sqrt().recip()).abs() < 1e-15);
        }
        assert!(((&s.analog * &s.digital).norm() - 1.0).abs() < 1e-12);
        for _ in 0..100 {
            let a = CMat::from_fn(8, 1, |_, _| Complex64::from_polar(8f64.sqrt().recip(), rng.random_range(0.0..6.3)));
            let ls = a.clone().pseudo_inverse(1e-12).unwrap() * &w;
            assert!(s.residual <= (&w - &a * ls).norm() + 1e-12);
        }
        assert!(decompose_combiner(&random_matrix(&mut rng, 8, 2), 1).is_err());
        let wide = decompose_combiner(&random_matrix(&mut rng, 8, 2), 3).unwrap();
        assert_eq!(wide.analog.shape(), (8, 3));
    }

    #[test]
    fn se_closed_cases() {
        let h = CMat::from_element(1, 1, c(0.3, 0.4));
        let one = CMat::from_element(1, 1, c(1.0, 0.0));
        let se = spectral_efficiency(&one, &one, &h, 2.0, 0.5).unwrap();
        assert!((se.bits - (1.0 + 2.0 * 0.25 / 0.5f64).log2()).abs() < 1e-12);
        assert_eq!(spectral_efficiency(&one, &one, &CMat::zeros(1, 1), 2.0, 0.5).unwrap().bits, 0.0);
        let diag = CMat::from_diagonal(&CVec::from_vec(vec![c(2.0, 0.0), c(0.5, 0.0)]));
        let id = CMat::identity(2, 2);
        let se = spectral_efficiency(&id, &id, &diag, 4.0, 1.0).unwrap();
        let hand = (1.0 + 2.0 * 4.0f64).log2() + (1.0 + 2.0 * 0.25f64).log2();
        assert!((se.bits - hand).abs() < 1e-12);
        assert!(spectral_efficiency(&id, &id, &diag, 4.0, 0.0).is_err());
        let w = CMat::from_column_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        assert!(spectral_efficiency(&id, &w, &diag, 4.0, 1.0).unwrap().ill_conditioned);
    }

    fn small_set(h: Option<f64>) -> (Experiment, ChannelSet) {
        let e = Experiment::reference(32, h);
        let rays = e.multipath.rays(3.0, 5);
        let set = ChannelSet::build(&e.scenario, e.model, &rays).unwrap();
        (e, set)
    }

    #[test]
    fn scheme_invariants() {
        let (e, set) = small_set(Some(0.0));
        let noise = e.noise_power();
        let plan = solve_sampling_plan(&e.plan, &e.scenario).unwrap();
        let out = evaluate_schemes(&e, &plan, &e.scenario, &set, &Scheme::ALL, 1.0, noise, 9).unwrap();
        let perfect = out[0].spectral_efficiency;
        for o in &out[4..] {
            assert!(o.spectral_efficiency <= perfect + 1e-9, "{o:?}");
            let (bf, _) = build_scheme_beamformers(o.scheme, o.selected.as_ref(), &set, &e.scenario, e.design).unwrap();
            assert!((bf.precoder().norm_squared() - 1.0).abs() < 1e-12);
            assert!((bf.combiner().norm_squared() - 1.0).abs() < 1e-12);
            let nt = (32f64).sqrt().recip();
            assert!(bf.analog_precoder.iter().all(|z| (z.norm() - nt).abs() < 1e-12));
            assert!(bf.analog_combiner.iter().all(|z| (z.norm() - nt).abs() < 1e-12));
        }
        // perfect CSI on the unblocked channel is the non-blocked LoS benchmark
        let clear = ChannelSet {
            quasi_los: set.los.clone(),
            ..set.clone()
        };
        let a = build_scheme_beamformers(Scheme::PerfectCsi, None, &clear, &e.scenario, e.design).unwrap();
        let b = build_scheme_beamformers(Scheme::NonBlockedLos, None, &clear, &e.scenario, e.design).unwrap();
        let sa = spectral_efficiency(&a.0.precoder(), &a.0.combiner(), &a.1, 1.0, noise).unwrap().bits;
        let sb = spectral_efficiency(&b.0.precoder(), &b.0.combiner(), &b.1, 1.0, noise).unwrap().bits;
        assert!((sa - sb).abs() < 1e-12);
    }

    #[test]
    fn phase_and_scale_invariance() {
        let (e, set) = small_set(Some(0.02));
        let p = BeamParams::new(0.5, 2.0, 0.01).unwrap();
        let bf = hybrid_from_codeword(&p, &e.scenario, &set.nonblocked()).unwrap();
        let h = set.blocked();
        let base = spectral_efficiency(&bf.precoder(), &bf.combiner(), &h, 1.0, 1e-6).unwrap().bits;
        let ph = Complex64::from_polar(1.0, 1.234);
        let rot = spectral_efficiency(&(bf.precoder() * ph), &(bf.combiner() * ph.conj()), &h, 1.0, 1e-6).unwrap().bits;
        assert!((base - rot).abs() < 1e-9);
        let k = 3.7;
        let scaled = spectral_efficiency(&bf.precoder(), &bf.combiner(), &(&h * c(k, 0.0)), 1.0, 1e-6 * k * k).unwrap().bits;
        assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("hierarchical".parse::<Scheme>().unwrap(), Scheme::Hierarchical);
        assert!("bogus".parse::<Scheme>().is_err());
        assert_eq!("height".parse::<SweepVariable>().unwrap(), SweepVariable::BlockageHeight);
    }

    #[test]
    fn single_point_single_row() {
        let e = Experiment::reference(16, Some(0.0));
        let spec = SweepSpec {
            variable: SweepVariable::BlockageHeight,
            grid: vec![0.0],
            schemes: vec![Scheme::LowComplexity],
            repetitions: 1,
        };
        let rows = run_sweep(&spec, &e).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].overhead_slots > 0);
        let bad = SweepSpec { grid: vec![], ..spec.clone() };
        assert!(run_sweep(&bad, &e).is_err());
        let bad = SweepSpec { repetitions: 0, ..spec };
        assert!(run_sweep(&bad, &e).is_err());
    }

    #[test]
    fn overhead_sweep_best_so_far_monotone() {
        let e = Experiment::reference(16, Some(0.0));
        let spec = SweepSpec {
            variable: SweepVariable::Overhead,
            grid: (0..12).map(|i| (i * 4) as f64).collect(),
            schemes: vec![Scheme::Hierarchical],
            repetitions: 1,
        };
        let rows = run_sweep(&spec, &e).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[0].notes.contains("no_slots"), true);
        assert!(rows.windows(2).all(|w| w[1].overhead_slots >= w[0].overhead_slots));
    }

    #[test]
    fn mixed_seeds_differ() {
        assert_ne!(mix_seed(1, 0, 0), mix_seed(1, 1, 0));
        assert_ne!(mix_seed(1, 0, 0), mix_seed(1, 0, 1));
        assert_eq!(mix_seed(5, 3, 2), mix_seed(5, 3, 2));
    }
}
