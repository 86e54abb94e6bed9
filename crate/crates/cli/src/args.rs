use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "blockpotts",
    version,
    about = "Experiments with the block spin Potts model"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// Directory for all outputs [default: .]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Seed for every random stream [default: 0]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// JSON file with default values for any flag; flags take precedence
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Heat-bath chains; writes count-matrix trajectories as CSV
    Simulate(SimulateArgs),
    /// Exact law of the count matrix; writes CSV plus a JSON header
    Exact(ExactArgs),
    /// Maximizers of the free energy G; writes a JSON report
    Equilibria(EquilibriaArgs),
    /// Phase classification over a grid of effective couplings g; writes CSV
    PhaseDiagram(PhaseDiagramArgs),
    /// Exhaustive check of the log-Sobolev inequalities; writes a JSON report
    LsiCheck(LsiCheckArgs),
    /// Tails of block colour counts against the concentration bound; writes CSV
    Concentration(ConcentrationArgs),
    /// Samples G on the two-column manifold; writes CSV
    Landscape(LandscapeArgs),
}

/// Model flags shared by most commands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Number of colours [default: 3]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    /// Number of blocks [default: number of --sizes, else 2]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    /// Inter-block coupling [default: 0.5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Intra-block coupling [default: 1.0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Block proportions, comma separated [default: block fractions, else uniform]
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    /// Block sizes, comma separated
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
}

macro_rules! optional_args {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Args, Serialize)]
        pub struct $name {
            #[command(flatten)]
            #[serde(flatten)]
            pub model: ModelArgs,
            $(
                $(#[$fmeta])*
                #[arg(long)]
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }
    };
}

optional_args!(SimulateArgs {
    /// Recorded sweeps per chain [default: 1000]
    sweeps: usize,
    /// Keep one sample every this many sweeps [default: 1]
    thin: usize,
    /// Unrecorded sweeps before recording [default: sweeps/10]
    burn_in: usize,
    /// Independent chains [default: 1]
    chains: usize,
    /// `random` or `uniform-color:C` with C in 1..q [default: random]
    init: String,
    /// `random` or `systematic` site order [default: random]
    scan: String,
    /// Output CSV file name [default: simulate.csv]
    out: PathBuf,
});

optional_args!(ExactArgs {
    /// Largest support size to enumerate [default: 10000000]
    cap: u128,
    /// Output CSV file name [default: exact.csv]
    out: PathBuf,
});

optional_args!(EquilibriaArgs {
    /// Random restarts per number of large columns [default: 32]
    starts: usize,
    /// Random restarts of the full-matrix ascent [default: 8]
    full_starts: usize,
    /// Output JSON file name [default: equilibria.json]
    out: PathBuf,
});

optional_args!(PhaseDiagramArgs {
    /// Ratio alpha/beta used to realize each g [default: 0.5]
    ratio: f64,
    /// First g [default: 2.0]
    g_min: f64,
    /// Last g (inclusive) [default: 3.5]
    g_max: f64,
    /// Grid step [default: 0.05]
    g_step: f64,
    /// Random restarts per number of large columns [default: 8]
    starts: usize,
    /// Output CSV file name [default: phase_diagram.csv]
    out: PathBuf,
});

optional_args!(LsiCheckArgs {
    /// Random Gaussian observables [default: 100]
    num_f: usize,
    /// Standard deviation of the random observables [default: 1.0]
    amplitude: f64,
    /// Largest configuration space to enumerate [default: 1048576]
    cap: u128,
    /// Output JSON file name [default: lsi_check.json]
    out: PathBuf,
});

optional_args!(ConcentrationArgs {
    /// Recorded sweeps [default: 10000]
    sweeps: usize,
    /// Keep one sample every this many sweeps [default: 1]
    thin: usize,
    /// Block index, 1-based [default: 1]
    block: usize,
    /// Colour, 1-based [default: 1]
    color: usize,
    /// Largest deviation t [default: block size / 2]
    t_max: f64,
    /// Number of t values in (0, t_max] [default: 10]
    t_points: usize,
    /// Use exact tails instead of a chain (small systems)
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    exact: bool,
    /// Override the measured gamma1
    gamma1: f64,
    /// Override the measured gamma2 = 1 − ‖J‖₂
    gamma2: f64,
    /// Output CSV file name [default: concentration.csv]
    out: PathBuf,
});

optional_args!(LandscapeArgs {
    /// Number of large columns, 1..q−1 [default: 1]
    r: usize,
    /// Mesh points per block [default: 50]
    mesh: usize,
    /// Output CSV file name [default: landscape.csv]
    out: PathBuf,
});

/// Settings after merging flags over the config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub q: Option<usize>,
    pub s: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<Vec<f64>>,
    pub sizes: Option<Vec<usize>>,
}

macro_rules! settings {
    ($name:ident { $($field:ident : $ty:ty = $default:expr),* $(,)? }) => {
        #[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            pub q: Option<usize>,
            pub s: Option<usize>,
            pub alpha: Option<f64>,
            pub beta: Option<f64>,
            pub gamma: Option<Vec<f64>>,
            pub sizes: Option<Vec<usize>>,
            $(pub $field: $ty,)*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { q: None, s: None, alpha: None, beta: None, gamma: None, sizes: None, $($field: $default,)* }
            }
        }

        impl $name {
            pub fn model(&self) -> ModelSettings {
                ModelSettings {
                    q: self.q,
                    s: self.s,
                    alpha: self.alpha,
                    beta: self.beta,
                    gamma: self.gamma.clone(),
                    sizes: self.sizes.clone(),
                }
            }
        }
    };
}

settings!(SimulateSettings {
    sweeps: usize = 1000,
    thin: usize = 1,
    burn_in: Option<usize> = None,
    chains: usize = 1,
    init: String = "random".into(),
    scan: String = "random".into(),
    out: PathBuf = "simulate.csv".into(),
});

settings!(ExactSettings {
    cap: u128 = blockpotts::exact::DEFAULT_SUPPORT_CAP,
    out: PathBuf = "exact.csv".into(),
});

settings!(EquilibriaSettings {
    starts: usize = 32,
    full_starts: usize = 8,
    out: PathBuf = "equilibria.json".into(),
});

settings!(PhaseDiagramSettings {
    ratio: f64 = 0.5,
    g_min: f64 = 2.0,
    g_max: f64 = 3.5,
    g_step: f64 = 0.05,
    starts: usize = 8,
    out: PathBuf = "phase_diagram.csv".into(),
});

settings!(LsiCheckSettings {
    num_f: usize = 100,
    amplitude: f64 = 1.0,
    cap: u128 = 1 << 20,
    out: PathBuf = "lsi_check.json".into(),
});

settings!(ConcentrationSettings {
    sweeps: usize = 10_000,
    thin: usize = 1,
    block: usize = 1,
    color: usize = 1,
    t_max: Option<f64> = None,
    t_points: usize = 10,
    exact: bool = false,
    gamma1: Option<f64> = None,
    gamma2: Option<f64> = None,
    out: PathBuf = "concentration.csv".into(),
});

settings!(LandscapeSettings {
    r: usize = 1,
    mesh: usize = 50,
    out: PathBuf = "landscape.csv".into(),
});

/// Global settings after merging.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GlobalSettings {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}
