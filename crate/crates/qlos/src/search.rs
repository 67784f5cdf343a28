//! Noisy received-power beam training over codebooks.
//!
//! Each slot transmits one codeword and records a power: either through a
//! fixed omnidirectional Rx combiner or as the full-array received energy.

use nalgebra::SVD;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::beam::{airy_beam_vector, BeamParams, BeamVector};
use crate::channel::ChannelMatrix;
use crate::codebook::{build_farfield_codebook, build_nearfield_codebook, Codebook, CodebookScheme, SamplingPlan, Stage2Factory};
use crate::scenario::ScenarioConfig;
use crate::{invalid, CMat, CVec, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeCombiner {
    /// All-ones combiner scaled by 1/sqrt(N_r).
    #[default]
    Omnidirectional,
    /// Received energy summed over all Rx elements.
    FullArrayNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub transmit_power: f64,
    pub noise_power: f64,
    pub rx_probe_combiner: ProbeCombiner,
    pub rng_seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.transmit_power > 0.0 && self.transmit_power.is_finite()) {
            return Err(invalid("training.transmit_power", "must be positive"));
        }
        if !(self.noise_power >= 0.0 && self.noise_power.is_finite()) {
            return Err(invalid("training.noise_power", "must be non-negative"));
        }
        Ok(())
    }
}

/// Noise power placing `reference` at `se_bits` b/s/Hz with its dominant
/// singular mode.
pub fn noise_for_reference_se(reference: &ChannelMatrix, transmit_power: f64, se_bits: f64) -> f64 {
    let s = reference.entries.singular_values();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    transmit_power * smax * smax / (2f64.powf(se_bits) - 1.0)
}

fn complex_noise<R: Rng>(rng: &mut R, std: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * std, im * std)
}

/// One training slot with an explicit combiner draw.
pub fn measure_slot<R: Rng>(codeword: &BeamVector, channel: &ChannelMatrix, cfg: &TrainingConfig, rng: &mut R) -> Result<f64> {
    let h = &channel.entries;
    if codeword.len() != h.ncols() {
        return Err(Error::Dimension(format!("codeword {} vs channel {} columns", codeword.len(), h.ncols())));
    }
    let std = (cfg.noise_power / 2.0).sqrt();
    let y: CVec = h * &codeword.weights * Complex64::from(cfg.transmit_power.sqrt());
    let y = y.map(|v| v + complex_noise(rng, std));
    Ok(match cfg.rx_probe_combiner {
        ProbeCombiner::Omnidirectional => {
            let s: Complex64 = y.iter().sum();
            s.norm_sqr() / h.nrows() as f64
        }
        ProbeCombiner::FullArrayNorm => y.norm_squared(),
    })
}

/// Reduced measurement operator. For the full-array probe the channel is
/// rotated onto its singular basis so each slot costs rank(H) products.
pub struct Prober {
    op: CMat,
    extra_dims: usize,
    amplitude: f64,
    std: f64,
    rng: ChaCha8Rng,
}

impl Prober {
    pub fn new(channel: &ChannelMatrix, cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let h = &channel.entries;
        let (op, extra_dims) = match cfg.rx_probe_combiner {
            ProbeCombiner::Omnidirectional => {
                let ones = CVec::from_element(h.nrows(), Complex64::from(1.0 / (h.nrows() as f64).sqrt()));
                (CMat::from_row_slice(1, h.ncols(), (ones.transpose() * h).as_slice()), 0)
            }
            ProbeCombiner::FullArrayNorm => {
                let svd = SVD::new(h.clone(), false, true);
                let vt = svd.v_t.ok_or(Error::NonFinite("channel svd"))?;
                let s = &svd.singular_values;
                let smax = s.iter().cloned().fold(0.0, f64::max);
                let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > 1e-10 * smax).collect();
                let mut op = CMat::zeros(keep.len(), h.ncols());
                for (row, &i) in keep.iter().enumerate() {
                    let scaled = vt.row(i) * Complex64::from(s[i]);
                    op.set_row(row, &scaled);
                }
                (op, h.nrows() - keep.len())
            }
        };
        Ok(Self {
            op,
            extra_dims,
            amplitude: cfg.transmit_power.sqrt(),
            std: (cfg.noise_power / 2.0).sqrt(),
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
        })
    }

    pub fn measure(&mut self, weights: &CVec) -> f64 {
        let mut p = 0.0;
        for i in 0..self.op.nrows() {
            let s = self.op.row(i).transpose().dot(weights) * self.amplitude;
            p += (s + complex_noise(&mut self.rng, self.std)).norm_sqr();
        }
        for _ in 0..self.extra_dims {
            p += complex_noise(&mut self.rng, self.std).norm_sqr();
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub slot: usize,
    pub stage: u8,
    pub index: usize,
    pub params: BeamParams,
    pub power: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub scheme: CodebookScheme,
    pub selected: BeamParams,
    pub trace: Vec<TraceEntry>,
    pub overhead: usize,
    pub stage1_winner: Option<BeamParams>,
}

impl SearchResult {
    /// Best codeword among the first `budget` slots.
    pub fn best_within(&self, budget: usize) -> Option<BeamParams> {
        best_of(&self.trace[..budget.min(self.trace.len())]).map(|e| e.params)
    }
}

// strict comparison keeps the earliest slot on ties
fn best_of(trace: &[TraceEntry]) -> Option<&TraceEntry> {
    let mut best: Option<&TraceEntry> = None;
    for e in trace {
        if best.is_none_or(|b| e.power > b.power) {
            best = Some(e);
        }
    }
    best
}

fn sweep(codebook: &Codebook, stage: u8, scenario: &ScenarioConfig, prober: &mut Prober, trace: &mut Vec<TraceEntry>) -> Result<BeamParams> {
    if codebook.is_empty() {
        return Err(invalid("codebook", format!("{} codebook is empty", codebook.scheme.name())));
    }
    let start = trace.len();
    for (index, params) in codebook.entries.iter().enumerate() {
        let v = airy_beam_vector(params, &scenario.tx, &scenario.carrier);
        let power = prober.measure(&v.weights);
        trace.push(TraceEntry {
            slot: trace.len(),
            stage,
            index,
            params: *params,
            power,
        });
    }
    Ok(best_of(&trace[start..]).unwrap().params)
}

fn check_dims(channel: &ChannelMatrix, scenario: &ScenarioConfig) -> Result<()> {
    if channel.ncols() != scenario.tx.num_elements || channel.nrows() != scenario.rx.num_elements {
        return Err(Error::Dimension(format!(
            "channel {}x{} vs arrays {}x{}",
            channel.nrows(),
            channel.ncols(),
            scenario.rx.num_elements,
            scenario.tx.num_elements
        )));
    }
    Ok(())
}

/// Single-stage sweep over every codeword.
pub fn single_stage_search(codebook: &Codebook, channel: &ChannelMatrix, cfg: &TrainingConfig, scenario: &ScenarioConfig) -> Result<SearchResult> {
    check_dims(channel, scenario)?;
    let mut prober = Prober::new(channel, cfg)?;
    let mut trace = Vec::with_capacity(codebook.len());
    let selected = sweep(codebook, 1, scenario, &mut prober, &mut trace)?;
    Ok(SearchResult {
        scheme: codebook.scheme,
        selected,
        overhead: trace.len(),
        trace,
        stage1_winner: None,
    })
}

pub fn exhaustive_search(codebook: &Codebook, channel: &ChannelMatrix, cfg: &TrainingConfig, scenario: &ScenarioConfig) -> Result<SearchResult> {
    single_stage_search(codebook, channel, cfg, scenario)
}

/// Steering beams over the plan's angle grid.
pub fn farfield_steering_search(plan: &SamplingPlan, channel: &ChannelMatrix, cfg: &TrainingConfig, scenario: &ScenarioConfig) -> Result<SearchResult> {
    single_stage_search(&build_farfield_codebook(plan), channel, cfg, scenario)
}

/// Focusing beams on each Rx element; overhead N_r.
pub fn nearfield_focusing_search(channel: &ChannelMatrix, cfg: &TrainingConfig, scenario: &ScenarioConfig) -> Result<SearchResult> {
    single_stage_search(&build_nearfield_codebook(scenario), channel, cfg, scenario)
}

/// Focusing sweep followed by a curving sweep at the stage-1 focus.
pub fn two_stage_search(
    stage1: &Codebook,
    stage2: &Stage2Factory,
    channel: &ChannelMatrix,
    cfg: &TrainingConfig,
    scenario: &ScenarioConfig,
) -> Result<SearchResult> {
    check_dims(channel, scenario)?;
    let mut prober = Prober::new(channel, cfg)?;
    let mut trace = Vec::with_capacity(stage1.len() + stage2.a_grid.len() + 1);
    let w1 = sweep(stage1, 1, scenario, &mut prober, &mut trace)?;
    let cb2 = stage2.build(w1.focus_distance, w1.focus_angle);
    let selected = sweep(&cb2, 2, scenario, &mut prober, &mut trace)?;
    Ok(SearchResult {
        scheme: stage2.scheme,
        selected,
        overhead: trace.len(),
        trace,
        stage1_winner: Some(w1),
    })
}

pub fn hierarchical_search(
    stage1: &Codebook,
    stage2: &Stage2Factory,
    channel: &ChannelMatrix,
    cfg: &TrainingConfig,
    scenario: &ScenarioConfig,
) -> Result<SearchResult> {
    two_stage_search(stage1, stage2, channel, cfg, scenario)
}

pub fn low_complexity_search(
    stage1: &Codebook,
    stage2: &Stage2Factory,
    channel: &ChannelMatrix,
    cfg: &TrainingConfig,
    scenario: &ScenarioConfig,
) -> Result<SearchResult> {
    two_stage_search(stage1, stage2, channel, cfg, scenario)
}
