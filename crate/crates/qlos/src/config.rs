//! TOML run configuration.
//!
//! ```toml
//! [tx]
//! num_elements = 64
//! [rx]
//! num_elements = 64
//! [blockage]
//! distance_from_tx = 1.5
//! width_along_axis = 0.01
//! extent_above = 0.036
//! extent_below = 1.0
//! [sweep]
//! variable = "height"
//! grid = [0.0, 0.02, 0.04]
//! schemes = ["perfect_csi", "hier", "lowc"]
//! ```
//!
//! Omitted element spacings default to half a wavelength.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelModel;
use crate::codebook::PlanConfig;
use crate::eval::{DesignChannel, Experiment, MultipathConfig, Scheme, SweepSpec, SweepVariable};
use crate::scenario::{ArrayConfig, BlockageGeometry, CarrierConfig, ScenarioConfig, VirtualArrayConfig};
use crate::search::ProbeCombiner;
use crate::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub num_elements: usize,
    pub spacing: Option<f64>,
    #[serde(default)]
    pub center_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarrierSection {
    pub frequency: f64,
}

impl Default for CarrierSection {
    fn default() -> Self {
        Self {
            frequency: CarrierConfig::default().frequency,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    pub distance: f64,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self { distance: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VirtualSection {
    pub count: usize,
    /// Defaults to twice the larger array.
    pub elements_per_array: Option<usize>,
    /// Defaults to spreading the planes across the blockage width.
    pub plane_spacing: Option<f64>,
}

impl Default for VirtualSection {
    fn default() -> Self {
        Self {
            count: 2,
            elements_per_array: None,
            plane_spacing: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub model: ChannelModel,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { model: ChannelModel::Cgwcm }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub transmit_power: f64,
    /// Derived from `reference_se` when absent.
    pub noise_power: Option<f64>,
    /// SE of the unblocked LoS optimum used to set the noise level.
    pub reference_se: f64,
    pub probe: ProbeCombiner,
    pub design: DesignChannel,
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            transmit_power: 1.0,
            noise_power: None,
            reference_se: 15.0,
            probe: ProbeCombiner::Omnidirectional,
            design: DesignChannel::NonBlocked,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub variable: Option<String>,
    pub grid: Vec<f64>,
    pub schemes: Vec<String>,
    pub repetitions: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            variable: None,
            grid: Vec::new(),
            schemes: Vec::new(),
            repetitions: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub carrier: CarrierSection,
    pub tx: ArraySection,
    pub rx: ArraySection,
    #[serde(default)]
    pub link: LinkSection,
    pub blockage: Option<BlockageGeometry>,
    #[serde(default)]
    pub virtual_arrays: VirtualSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub multipath: MultipathConfig,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let carrier = CarrierConfig::new(self.carrier.frequency)?;
        let array = |a: &ArraySection| -> Result<ArrayConfig> { ArrayConfig::new(a.num_elements, a.spacing.unwrap_or(carrier.wavelength() / 2.0), a.center_offset) };
        let tx = array(&self.tx)?;
        let rx = array(&self.rx)?;
        let width = self.blockage.map(|b| b.width_along_axis).unwrap_or(0.01);
        let n = self.virtual_arrays.elements_per_array.unwrap_or(2 * tx.num_elements.max(rx.num_elements));
        let mut va = VirtualArrayConfig::spanning(self.virtual_arrays.count, n, width);
        if let Some(s) = self.virtual_arrays.plane_spacing {
            va.plane_spacing = s;
        }
        let s = ScenarioConfig {
            tx,
            rx,
            carrier,
            link_distance: self.link.distance,
            blockage: self.blockage,
            virtual_arrays: va,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn experiment(&self, seed: Option<u64>) -> Result<Experiment> {
        let e = Experiment {
            scenario: self.scenario()?,
            plan: self.plan.clone(),
            model: self.channel.model,
            multipath: self.multipath.clone(),
            transmit_power: self.training.transmit_power,
            noise_power: self.training.noise_power,
            reference_se: self.training.reference_se,
            probe: self.training.probe,
            design: self.training.design,
            seed: seed.unwrap_or(self.training.seed),
        };
        e.validate()?;
        Ok(e)
    }

    pub fn sweep_spec(&self, variable: Option<SweepVariable>) -> Result<SweepSpec> {
        let variable = match (variable, &self.sweep.variable) {
            (Some(v), _) => v,
            (None, Some(s)) => s.parse()?,
            (None, None) => return Err(invalid("sweep.variable", "not set in the config or on the command line")),
        };
        let schemes = if self.sweep.schemes.is_empty() {
            Scheme::ALL.to_vec()
        } else {
            self.sweep.schemes.iter().map(|s| s.parse()).collect::<Result<Vec<Scheme>>>()?
        };
        let spec = SweepSpec {
            variable,
            grid: self.sweep.grid.clone(),
            schemes,
            repetitions: self.sweep.repetitions,
        };
        spec.validate()?;
        Ok(spec)
    }
}
