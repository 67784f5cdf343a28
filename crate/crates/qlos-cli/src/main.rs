use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qlos::beam::{airy_beam_vector, render_field_map, BeamParams, GridSpec};
use qlos::channel::{
    calibrated_quasi_los, fully_blocked_rx, gcm_channel, occlusion_fraction, relative_error_db, wcm_channel, ChannelMatrix, ChannelModel,
};
use qlos::codebook::{
    build_exhaustive_codebook, build_farfield_codebook, build_hierarchical_codebooks, build_low_complexity_codebooks, build_nearfield_codebook,
    solve_sampling_plan, Codebook,
};
use qlos::config::RunConfig;
use qlos::eval::{build_scheme_beamformers, mix_seed, run_scheme_search, run_sweep, spectral_efficiency, ChannelSet, Scheme, SweepVariable};
use qlos::export;

#[derive(Parser, Debug)]
#[command(name = "qlos", version, about = "Quasi-LoS THz link simulator")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Export a channel matrix and its summary.
    Channel(ChannelArgs),
    /// Render a beam field map.
    Fieldmap(FieldmapArgs),
    /// Export a codebook and the sampling plan.
    Codebook(SchemeArgs),
    /// Run one beam search and export its trace.
    Search(SchemeArgs),
    /// Run a parameter sweep.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct ChannelArgs {
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Report GCM and CGWCM errors against WCM.
    #[arg(long)]
    compare: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Gcm,
    Wcm,
    Cgwcm,
}

impl From<ModelArg> for ChannelModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Gcm => ChannelModel::Gcm,
            ModelArg::Wcm => ChannelModel::Wcm,
            ModelArg::Cgwcm => ChannelModel::Cgwcm,
        }
    }
}

#[derive(Args, Debug)]
struct FieldmapArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    a: f64,
    /// Focus distance; omit for a steering beam.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long, default_value_t = 200)]
    nx: usize,
    #[arg(long, default_value_t = 200)]
    ny: usize,
    #[arg(long)]
    x_min: Option<f64>,
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y_max: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Exhaustive,
    Hier,
    Lowc,
    Ff,
    Nf,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Exhaustive => Scheme::Exhaustive,
            SchemeArg::Hier => Scheme::Hierarchical,
            SchemeArg::Lowc => Scheme::LowComplexity,
            SchemeArg::Ff => Scheme::FarFieldSteering,
            SchemeArg::Nf => Scheme::NearFieldFocusing,
        }
    }
}

#[derive(Args, Debug)]
struct SchemeArgs {
    #[arg(long, value_enum)]
    scheme: SchemeArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepArg {
    Height,
    Distance,
    Overhead,
    TransmitPower,
}

impl From<SweepArg> for SweepVariable {
    fn from(s: SweepArg) -> Self {
        match s {
            SweepArg::Height => SweepVariable::BlockageHeight,
            SweepArg::Distance => SweepVariable::BlockageDistance,
            SweepArg::Overhead => SweepVariable::Overhead,
            SweepArg::TransmitPower => SweepVariable::TransmitPower,
        }
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Defaults to the variable in the config.
    #[arg(long, value_enum)]
    sweep: Option<SweepArg>,
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        for sub in ["results", "grids"] {
            fs::create_dir_all(dir.join(sub)).with_context(|| format!("creating {}", dir.join(sub).display()))?;
        }
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn file(&self, rel: &str) -> Result<BufWriter<File>> {
        let p = self.dir.join(rel);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    }
}

fn write_manifest(out: &Output, cli: &Cli, config_path: &Path, config: &RunConfig, seed: u64, command: &str) -> Result<()> {
    let scenario = config.scenario()?;
    let plan = solve_sampling_plan(&config.plan, &scenario)?;
    let mut w = out.file("manifest.txt")?;
    writeln!(w, "tool qlos {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "command {command}")?;
    writeln!(w, "config {}", config_path.display())?;
    writeln!(w, "output {}", out.dir.display())?;
    writeln!(w, "seed {seed}")?;
    writeln!(w, "seed_override {}", cli.seed.map_or("none".to_string(), |s| s.to_string()))?;
    writeln!(w, "\n[resolved_config]\n{}", config.to_toml()?)?;
    writeln!(w, "[scenario]\ntx_spacing {}\nrx_spacing {}\nwavelength {}\nvirtual_plane_spacing {}\nvirtual_elements {}\n", scenario.tx.spacing, scenario.rx.spacing, scenario.wavelength(), scenario.virtual_arrays.plane_spacing, scenario.virtual_arrays.elements_per_array)?;
    writeln!(w, "[plan]\n{}", export::plan_summary(&plan))?;
    w.flush()?;
    Ok(())
}

fn model_channel(scenario: &qlos::scenario::ScenarioConfig, model: ChannelModel) -> Result<ChannelMatrix> {
    Ok(match model {
        ChannelModel::Gcm => gcm_channel(scenario),
        m => calibrated_quasi_los(scenario, m)?,
    })
}

fn cmd_channel(out: &Output, config: &RunConfig, args: &ChannelArgs) -> Result<()> {
    let scenario = config.scenario()?;
    let model = args.model.map(ChannelModel::from).unwrap_or(config.channel.model);
    let h = model_channel(&scenario, model)?;
    export::write_channel(out.file(&format!("grids/channel_{}.bin", model.name()))?, &h)?;
    let mut w = csv::Writer::from_writer(out.file("results/channel_summary.csv")?);
    w.write_record(["model", "frobenius_norm", "occlusion", "fully_blocked_rx", "err_vs_wcm_db"])?;
    let occ = occlusion_fraction(&scenario);
    let blocked = fully_blocked_rx(&scenario).len();
    let reference = if args.compare { Some(calibrated_quasi_los(&scenario, ChannelModel::Wcm)?) } else { None };
    let models = if args.compare { vec![ChannelModel::Gcm, ChannelModel::Cgwcm] } else { vec![model] };
    for m in models {
        let hm = if m == model { h.clone() } else { model_channel(&scenario, m)? };
        let err = reference.as_ref().map(|r| relative_error_db(&hm, r));
        w.write_record([m.name().to_string(), hm.norm().to_string(), occ.to_string(), blocked.to_string(), err.map_or(String::new(), |e| e.to_string())])?;
        match err {
            Some(e) => println!("{} norm {:.6e} err_vs_wcm {:.3} dB", m.name(), hm.norm(), e),
            None => println!("{} norm {:.6e}", m.name(), hm.norm()),
        }
    }
    w.flush()?;
    if scenario.blockage.is_some() && args.compare {
        // keep the reference export next to the comparison
        export::write_channel(out.file("grids/channel_wcm.bin")?, &wcm_channel(&scenario)?)?;
    }
    Ok(())
}

fn cmd_fieldmap(out: &Output, config: &RunConfig, args: &FieldmapArgs) -> Result<()> {
    let scenario = config.scenario()?;
    let params = BeamParams::new(args.a, args.r.unwrap_or(f64::INFINITY), args.theta)?;
    let half = scenario.tx.aperture();
    let grid = GridSpec {
        x_min: args.x_min.unwrap_or(scenario.link_distance / 100.0),
        x_max: args.x_max.unwrap_or(scenario.link_distance),
        nx: args.nx,
        y_min: args.y_min.unwrap_or(-half),
        y_max: args.y_max.unwrap_or(half),
        ny: args.ny,
    };
    if grid.nx < 2 || grid.ny < 2 || !(grid.x_max > grid.x_min) || !(grid.y_max > grid.y_min) {
        bail!("invalid grid: need at least 2x2 points over non-empty ranges");
    }
    let beam = airy_beam_vector(&params, &scenario.tx, &scenario.carrier);
    let map = render_field_map(&beam, &scenario, &grid)?;
    export::write_fieldmap_csv(out.file("results/fieldmap.csv")?, &map)?;
    export::write_fieldmap_bin(out.file("grids/fieldmap.bin")?, &map)?;
    Ok(())
}

fn scheme_codebooks(scheme: Scheme, config: &RunConfig) -> Result<Vec<Codebook>> {
    let scenario = config.scenario()?;
    let plan = solve_sampling_plan(&config.plan, &scenario)?;
    Ok(match scheme {
        Scheme::Exhaustive => vec![build_exhaustive_codebook(&plan)],
        Scheme::Hierarchical => {
            let (s1, f2) = build_hierarchical_codebooks(&plan, &scenario);
            let p = s1.entries.first().copied().unwrap_or(BeamParams::focusing(scenario.link_distance, 0.0));
            vec![s1, f2.build(p.focus_distance, p.focus_angle)]
        }
        Scheme::LowComplexity => {
            let (s1, f2) = build_low_complexity_codebooks(&scenario, &plan);
            let p = s1.entries[s1.len() / 2];
            vec![s1, f2.build(p.focus_distance, p.focus_angle)]
        }
        Scheme::FarFieldSteering => vec![build_farfield_codebook(&plan)],
        Scheme::NearFieldFocusing => vec![build_nearfield_codebook(&scenario)],
        other => bail!("{other} has no codebook"),
    })
}

fn cmd_codebook(out: &Output, config: &RunConfig, args: &SchemeArgs) -> Result<()> {
    let scheme = Scheme::from(args.scheme);
    for (i, cb) in scheme_codebooks(scheme, config)?.iter().enumerate() {
        let name = format!("results/codebook_{}_stage{}.csv", scheme.name(), i + 1);
        export::write_codebook_csv(out.file(&name)?, cb)?;
        println!("{} stage {} size {}", scheme.name(), i + 1, cb.len());
    }
    Ok(())
}

fn cmd_search(out: &Output, config: &RunConfig, args: &SchemeArgs, seed: Option<u64>) -> Result<()> {
    let exp = config.experiment(seed)?;
    let scheme = Scheme::from(args.scheme);
    let plan = solve_sampling_plan(&exp.plan, &exp.scenario)?;
    let rays = exp.multipath.rays(exp.scenario.link_distance, exp.seed);
    let channels = ChannelSet::build(&exp.scenario, exp.model, &rays)?;
    let noise = exp.noise_power();
    let idx = Scheme::ALL.iter().position(|&s| s == scheme).unwrap_or(0);
    let training = exp.training(noise, exp.transmit_power, mix_seed(exp.seed, 0, idx));
    let result = run_scheme_search(scheme, &plan, &exp.scenario, &channels.blocked(), &training)?.context("scheme does not search")?;
    export::write_trace_csv(out.file(&format!("results/trace_{}.csv", scheme.name()))?, &result)?;
    let (bf, h) = build_scheme_beamformers(scheme, Some(&result.selected), &channels, &exp.scenario, exp.design)?;
    let se = spectral_efficiency(&bf.precoder(), &bf.combiner(), &h, exp.transmit_power, noise)?;
    let mut w = csv::Writer::from_writer(out.file("results/search_summary.csv")?);
    w.write_record(["scheme", "overhead_slots", "a", "r", "theta", "spectral_efficiency_bps_hz", "occlusion"])?;
    let p = result.selected;
    w.write_record([
        scheme.name().to_string(),
        result.overhead.to_string(),
        p.curving.to_string(),
        p.focus_distance.to_string(),
        p.focus_angle.to_string(),
        se.bits.to_string(),
        channels.occlusion.to_string(),
    ])?;
    w.flush()?;
    println!("{} overhead {} se {:.4}", scheme.name(), result.overhead, se.bits);
    Ok(())
}

fn cmd_sweep(out: &Output, config: &RunConfig, args: &SweepArgs, seed: Option<u64>) -> Result<()> {
    let exp = config.experiment(seed)?;
    let spec = config.sweep_spec(args.sweep.map(SweepVariable::from))?;
    let rows = run_sweep(&spec, &exp)?;
    export::write_sweep_csv(out.file(&format!("results/sweep_{}.csv", spec.variable.name()))?, &rows)?;
    println!("{} rows", rows.len());
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("QLOS_THREADS") {
        let n: usize = v.parse().with_context(|| format!("QLOS_THREADS must be a positive integer, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let config_path = cli.config.as_ref().context("--config is required")?;
    let out_dir = cli.out.as_ref().context("--out is required")?;
    let config = RunConfig::load(config_path).with_context(|| format!("loading {}", config_path.display()))?;
    // validate before touching the output directory
    let exp = config.experiment(cli.seed)?;
    let out = Output::create(out_dir)?;
    let command = match &cli.command {
        Command::Channel(a) => format!("channel model={:?} compare={}", a.model, a.compare),
        Command::Fieldmap(a) => format!("fieldmap {a:?}"),
        Command::Codebook(a) => format!("codebook scheme={:?}", a.scheme),
        Command::Search(a) => format!("search scheme={:?}", a.scheme),
        Command::Sweep(a) => format!("sweep variable={:?}", a.sweep),
    };
    write_manifest(&out, cli, config_path, &config, exp.seed, &command)?;
    match &cli.command {
        Command::Channel(a) => cmd_channel(&out, &config, a),
        Command::Fieldmap(a) => cmd_fieldmap(&out, &config, a),
        Command::Codebook(a) => cmd_codebook(&out, &config, a),
        Command::Search(a) => cmd_search(&out, &config, a, cli.seed),
        Command::Sweep(a) => cmd_sweep(&out, &config, a, cli.seed),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
