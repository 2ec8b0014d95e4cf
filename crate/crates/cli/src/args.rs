use std::path::PathBuf;

use adv_sdf::experiment::Shape;
use adv_sdf::extract::GridSpec;
use adv_sdf::field::{Activation, FieldConfig, InitScheme};
use adv_sdf::metrics::{EvalConfig, DEFAULT_SAMPLES, DEFAULT_TAU};
use adv_sdf::trainer::{Mode, SelectionConfig, TrainConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "adv-sdf", version, about = "Neural SDF reconstruction from sparse point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a field to a point cloud and extract its zero level set.
    Reconstruct(ReconstructArgs),
    /// Compare a reconstructed mesh against a reference mesh.
    Evaluate(EvaluateArgs),
    /// Train once per adversarial radius and tabulate the results.
    AblateRadius(AblateArgs),
    /// Track distance to the reference over training, plain vs adversarial.
    Curves(CurvesArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Reconstruct(_) => "reconstruct",
            Command::Evaluate(_) => "evaluate",
            Command::AblateRadius(_) => "ablate-radius",
            Command::Curves(_) => "curves",
            Command::Replay(_) => "replay",
        }
    }
}

/// Writes every option as `arg.<flag>` so that [`Command`] can be rebuilt.
pub trait Record {
    fn record(&self, m: &mut Manifest);
}

fn parse_mode(s: &str) -> Result<Mode, adv_sdf::Error> {
    s.parse()
}

fn parse_shape(s: &str) -> Result<Shape, adv_sdf::Error> {
    s.parse()
}

/// Hidden layer that receives the input again, or `none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipLayer(pub Option<usize>);

impl std::str::FromStr for SkipLayer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(SkipLayer(None));
        }
        s.parse()
            .map(|n| SkipLayer(Some(n)))
            .map_err(|_| format!("expected a layer index or `none`, got `{s}`"))
    }
}

impl std::fmt::Display for SkipLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Some(n) => write!(f, "{n}"),
            None => f.write_str("none"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Softplus,
}

impl std::fmt::Display for ActivationArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ActivationArg::Relu => "relu",
            ActivationArg::Softplus => "softplus",
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "adversarial-local", value_parser = parse_mode)]
    pub mode: Mode,
    #[arg(long, default_value_t = 40_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 5000)]
    pub batch: usize,
    /// Neighbours used for the local scale of each point.
    #[arg(long, default_value_t = 51)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Adversarial radius as a fraction of the local scale.
    #[arg(long, default_value_t = 1e-2)]
    pub rho_scale: f64,
    #[arg(long, default_value_t = 25)]
    pub queries_per_point: usize,
    #[arg(long, default_value_t = 1000)]
    pub snapshot_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value = "4")]
    pub skip_layer: SkipLayer,
    #[arg(long, value_enum, default_value_t = ActivationArg::Relu)]
    pub activation: ActivationArg,
    #[arg(long, default_value_t = 100.0)]
    pub softplus_beta: f64,
    /// Radius of the sphere the untrained field approximates.
    #[arg(long, default_value_t = 0.5)]
    pub init_radius: f64,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        self.config_for(self.mode, self.rho_scale, self.seed)
    }

    pub fn config_for(&self, mode: Mode, rho_scale: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            n_iterations: self.iters,
            batch_size: self.batch,
            k: self.k,
            learning_rate: self.lr,
            rho_scale,
            queries_per_point: self.queries_per_point,
            snapshot_every: self.snapshot_every,
            mode,
            seed,
            field: FieldConfig {
                hidden_layers: self.layers,
                hidden_width: self.width,
                skip_layer: self.skip_layer.0,
                activation: match self.activation {
                    ActivationArg::Relu => Activation::Relu,
                    ActivationArg::Softplus => Activation::Softplus {
                        beta: self.softplus_beta,
                    },
                },
                init: InitScheme::Geometric {
                    radius: self.init_radius,
                },
                seed: 0,
            },
        }
    }
}

impl Record for TrainArgs {
    fn record(&self, m: &mut Manifest) {
        m.set_arg("mode", self.mode);
        m.set_arg("iters", self.iters);
        m.set_arg("batch", self.batch);
        m.set_arg("k", self.k);
        m.set_arg("lr", self.lr);
        m.set_arg("rho-scale", self.rho_scale);
        m.set_arg("queries-per-point", self.queries_per_point);
        m.set_arg("snapshot-every", self.snapshot_every);
        m.set_arg("seed", self.seed);
        m.set_arg("layers", self.layers);
        m.set_arg("width", self.width);
        m.set_arg("skip-layer", self.skip_layer);
        m.set_arg("activation", self.activation);
        m.set_arg("softplus-beta", self.softplus_beta);
        m.set_arg("init-radius", self.init_radius);
    }
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Grid nodes per axis for the output mesh.
    #[arg(long, default_value_t = 128)]
    pub grid_res: usize,
    /// Grid nodes per axis when scoring snapshots.
    #[arg(long, default_value_t = 64)]
    pub select_res: usize,
    /// Surface samples per snapshot when scoring.
    #[arg(long, default_value_t = 10_000)]
    pub select_samples: usize,
}

impl GridArgs {
    pub fn selection(&self, seed: u64) -> SelectionConfig {
        SelectionConfig {
            grid: GridSpec::with_resolution(self.select_res),
            n_samples: self.select_samples,
            seed,
            ..SelectionConfig::default()
        }
    }

    pub fn output(&self, seed: u64) -> SelectionConfig {
        SelectionConfig {
            grid: GridSpec::with_resolution(self.grid_res),
            ..self.selection(seed)
        }
    }
}

impl Record for GridArgs {
    fn record(&self, m: &mut Manifest) {
        m.set_arg("grid-res", self.grid_res);
        m.set_arg("select-res", self.select_res);
        m.set_arg("select-samples", self.select_samples);
    }
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// F-score distance threshold.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Surface samples per mesh.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
}

impl MetricArgs {
    pub fn config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            n_samples: self.samples,
            tau: self.tau,
            seed,
        }
    }
}

impl Record for MetricArgs {
    fn record(&self, m: &mut Manifest) {
        m.set_arg("tau", self.tau);
        m.set_arg("samples", self.samples);
    }
}

/// A point cloud file, or noisy samples of a built-in shape.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Point cloud (.xyz, .txt or .ply).
    #[arg(long, required_unless_present = "shape", conflicts_with = "shape")]
    pub input: Option<PathBuf>,
    /// Sample a built-in shape (sphere or torus) instead of reading a file.
    #[arg(long, value_parser = parse_shape)]
    pub shape: Option<Shape>,
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    /// Noise standard deviation added to built-in shape samples.
    #[arg(long, default_value_t = 0.005)]
    pub noise: f64,
    /// Reference mesh for evaluation; built-in shapes supply their own.
    #[arg(long)]
    pub gt: Option<PathBuf>,
}

impl Record for InputArgs {
    fn record(&self, m: &mut Manifest) {
        if let Some(p) = &self.input {
            m.set_arg("input", p.display());
        }
        if let Some(s) = self.shape {
            m.set_arg("shape", s);
        }
        m.set_arg("points", self.points);
        m.set_arg("noise", self.noise);
        if let Some(p) = &self.gt {
            m.set_arg("gt", p.display());
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[arg(long, default_value = "adv-sdf-out")]
    pub out: PathBuf,
}

impl Record for ReconstructArgs {
    fn record(&self, m: &mut Manifest) {
        self.input.record(m);
        self.train.record(m);
        self.grid.record(m);
        self.metrics.record(m);
        m.set_arg("out", self.out.display());
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Reconstructed mesh (.obj or .ply).
    #[arg(long, alias = "input")]
    pub pred: PathBuf,
    /// Reference mesh (.obj or .ply).
    #[arg(long)]
    pub gt: PathBuf,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "adv-sdf-out")]
    pub out: PathBuf,
}

impl Record for EvaluateArgs {
    fn record(&self, m: &mut Manifest) {
        m.set_arg("pred", self.pred.display());
        m.set_arg("gt", self.gt.display());
        self.metrics.record(m);
        m.set_arg("seed", self.seed);
        m.set_arg("out", self.out.display());
    }
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Repeat for seeds `seed .. seed + seeds`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value = "adv-sdf-out")]
    pub out: PathBuf,
}

impl Record for AblateArgs {
    fn record(&self, m: &mut Manifest) {
        self.input.record(m);
        self.train.record(m);
        self.grid.record(m);
        self.metrics.record(m);
        m.set_arg("seeds", self.seeds);
        m.set_arg("out", self.out.display());
    }
}

#[derive(Debug, Clone, Args)]
pub struct CurvesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Skip distances to the reference; only losses and input distances.
    #[arg(long)]
    pub no_gt: bool,
    /// Surface samples per mesh for distances to the reference.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Repeat for seeds `seed .. seed + seeds`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value = "adv-sdf-out")]
    pub out: PathBuf,
}

impl Record for CurvesArgs {
    fn record(&self, m: &mut Manifest) {
        self.input.record(m);
        self.train.record(m);
        self.grid.record(m);
        if self.no_gt {
            m.set_arg("no-gt", "");
        }
        m.set_arg("samples", self.samples);
        m.set_arg("seeds", self.seeds);
        m.set_arg("out", self.out.display());
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Rebuilds the command line recorded in `m`.
pub fn argv_from_manifest(m: &Manifest, out: Option<&std::path::Path>) -> anyhow::Result<Vec<String>> {
    let command = m.get("command").unwrap_or_default();
    if command == "replay" {
        anyhow::bail!("a replay manifest cannot be replayed");
    }
    let mut argv = vec!["adv-sdf".to_string(), command.to_string()];
    for (flag, value) in m.args() {
        if flag == "out" && out.is_some() {
            continue;
        }
        argv.push(format!("--{flag}"));
        if !value.is_empty() {
            argv.push(value.to_string());
        }
    }
    if let Some(o) = out {
        argv.push("--out".into());
        argv.push(o.display().to_string());
    }
    Ok(argv)
}
