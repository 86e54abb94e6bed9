use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use blockpotts::equilibria::{
    couplings_for_g, equilibrium_matrices, maximize_g, potts_fixed_point_u, MaximizeOptions,
};
use blockpotts::exact::{exact_distribution, ExactOptions};
use blockpotts::glauber::{run_chain, run_chains, ChainOptions, InitialState, ScanOrder};
use blockpotts::lsi::{
    concentration_report, exact_concentration_report, gamma1_counts, interdependence_matrix_counts,
    lsi_constants, matrix_norms, verify_lsi_suite, ConcentrationRow, LsiSuiteOptions,
};
use blockpotts::rate::{free_energy_g, g_landscape};
use blockpotts::{BlockStructure, ModelParams};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::args::*;
use crate::manifest::{manifest_path, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Capacity(String),
    NonConvergence(String),
    ConditionNotMet(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Capacity(_) => 3,
            CliError::NonConvergence(_) => 4,
            CliError::ConditionNotMet(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "invalid arguments: {m}"),
            CliError::Io(m) => write!(f, "i/o failure: {m}"),
            CliError::Capacity(m) => write!(f, "capacity exceeded: {m}"),
            CliError::NonConvergence(m) => write!(f, "optimizer did not converge: {m}"),
            CliError::ConditionNotMet(m) => write!(f, "condition not met: {m}"),
        }
    }
}

impl From<blockpotts::Error> for CliError {
    fn from(e: blockpotts::Error) -> Self {
        use blockpotts::Error as E;
        match e {
            E::Capacity { required, cap } => CliError::Capacity(format!(
                "required support size {required} exceeds the cap {cap}"
            )),
            E::NonConvergence {
                message,
                best_value,
                ..
            } => CliError::NonConvergence(format!("{message} (best value {best_value})")),
            E::ConditionNotMet(m) => CliError::ConditionNotMet(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn load_config(path: Option<&Path>) -> CliResult<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::Usage(format!(
            "{}: config must be a JSON object",
            path.display()
        ))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

/// Flags override file values key by key.
fn merge<A: Serialize, S: DeserializeOwned>(
    mut file: Map<String, Value>,
    args: &A,
) -> CliResult<S> {
    let flags = serde_json::to_value(args).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Value::Object(flags) = flags {
        file.extend(flags);
    }
    serde_json::from_value(Value::Object(file))
        .map_err(|e| CliError::Usage(format!("settings: {e}")))
}

fn resolve_global(args: &GlobalArgs, file: &mut Map<String, Value>) -> CliResult<GlobalSettings> {
    let mut global = Map::new();
    for key in ["out_dir", "seed", "threads"] {
        if let Some(v) = file.remove(key) {
            global.insert(key.to_string(), v);
        }
    }
    global.entry("out_dir").or_insert(Value::String(".".into()));
    global.entry("seed").or_insert(Value::from(0u64));
    merge(global, args)
}

pub fn run(cli: Cli) -> CliResult<Vec<String>> {
    let mut file = load_config(cli.global.config.as_deref())?;
    let global = resolve_global(&cli.global, &mut file)?;
    if let Some(threads) = global.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    fs::create_dir_all(&global.out_dir)?;
    match &cli.command {
        Command::Simulate(a) => simulate(&global, merge(file, a)?),
        Command::Exact(a) => exact(&global, merge(file, a)?),
        Command::Equilibria(a) => equilibria(&global, merge(file, a)?),
        Command::PhaseDiagram(a) => phase_diagram(&global, merge(file, a)?),
        Command::LsiCheck(a) => lsi_check(&global, merge(file, a)?),
        Command::Concentration(a) => concentration(&global, merge(file, a)?),
        Command::Landscape(a) => landscape(&global, merge(file, a)?),
    }
}

/// Model parameters and, when `default_sizes` is given or `--sizes` was
/// passed, the block structure.
fn resolve_model(
    m: &ModelSettings,
    default_per_block: Option<usize>,
) -> CliResult<(ModelParams, Option<BlockStructure>)> {
    if let (Some(s), Some(sizes)) = (m.s, &m.sizes) {
        if s != sizes.len() {
            return Err(CliError::Usage(format!(
                "--s {s} conflicts with {} values in --sizes",
                sizes.len()
            )));
        }
    }
    let s = m.s.or(m.sizes.as_ref().map(Vec::len)).unwrap_or(2);
    if s == 0 {
        return Err(CliError::Usage("at least one block is required".into()));
    }
    let sizes = m
        .sizes
        .clone()
        .or_else(|| default_per_block.map(|n| vec![n; s]));
    let blocks = sizes.map(BlockStructure::new).transpose()?;
    let gamma = match (&m.gamma, &blocks) {
        (Some(g), _) => g.clone(),
        (None, Some(b)) => b.proportions(),
        (None, None) => vec![1.0 / s as f64; s],
    };
    let params = ModelParams::new(
        m.q.unwrap_or(3),
        s,
        m.alpha.unwrap_or(0.5),
        m.beta.unwrap_or(1.0),
        gamma,
    )?;
    Ok((params, blocks))
}

fn output(global: &GlobalSettings, name: &Path) -> PathBuf {
    global.out_dir.join(name)
}

fn write_file(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> CliResult<()> {
    let file =
        fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    write(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> CliResult<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn finish<S: Serialize>(
    command: &str,
    global: &GlobalSettings,
    settings: &S,
    params: &ModelParams,
    blocks: Option<&BlockStructure>,
    outputs: Vec<PathBuf>,
) -> CliResult<Vec<String>> {
    let settings = serde_json::to_value(settings).map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest = RunManifest::new(
        command,
        params,
        blocks.map(|b| b.sizes()),
        global.seed,
        settings,
        &outputs,
    );
    let path = manifest_path(&outputs[0]);
    write_json(&path, &manifest)?;
    Ok(outputs
        .iter()
        .chain(std::iter::once(&path))
        .map(|p| format!("wrote {}", p.display()))
        .collect())
}

fn parse_init(init: &str, q: usize) -> CliResult<InitialState> {
    if init == "random" {
        return Ok(InitialState::Random);
    }
    if let Some(c) = init.strip_prefix("uniform-color:") {
        if let Ok(c) = c.parse::<usize>() {
            if (1..=q).contains(&c) {
                return Ok(InitialState::UniformColor((c - 1) as u8));
            }
        }
    }
    Err(CliError::Usage(format!(
        "--init must be `random` or `uniform-color:C` with C in 1..={q}, got `{init}`"
    )))
}

fn simulate(global: &GlobalSettings, set: SimulateSettings) -> CliResult<Vec<String>> {
    let (params, blocks) = resolve_model(&set.model(), Some(10))?;
    let blocks = blocks.expect("sizes defaulted");
    if set.sweeps == 0 || set.thin == 0 || set.chains == 0 {
        return Err(CliError::Usage(
            "--sweeps, --thin and --chains must be at least 1".into(),
        ));
    }
    let scan = match set.scan.as_str() {
        "random" => ScanOrder::Random,
        "systematic" => ScanOrder::Systematic,
        other => {
            return Err(CliError::Usage(format!(
                "--scan must be `random` or `systematic`, got `{other}`"
            )))
        }
    };
    let options = ChainOptions {
        sweeps: set.sweeps,
        thin: set.thin,
        burn_in: set.burn_in,
        seed: global.seed,
        stream: 0,
        init: parse_init(&set.init, params.q)?,
        scan,
    };
    let chains = run_chains(&blocks, &params, &options, set.chains)?;
    let path = output(global, &set.out);
    write_file(&path, |w| {
        for (i, chain) in chains.iter().enumerate() {
            chain.write_csv(&mut *w, i, i == 0)?;
        }
        Ok(())
    })?;
    finish("simulate", global, &set, &params, Some(&blocks), vec![path])
}

fn exact(global: &GlobalSettings, set: ExactSettings) -> CliResult<Vec<String>> {
    let (params, blocks) = resolve_model(&set.model(), Some(4))?;
    let blocks = blocks.expect("sizes defaulted");
    let dist = exact_distribution(&blocks, &params, ExactOptions { cap: set.cap })?;
    let csv = output(global, &set.out);
    write_file(&csv, |w| dist.write_csv(w))?;
    let stem = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let header = csv.with_file_name(format!("{stem}.header.json"));
    write_json(&header, &dist.header())?;
    finish(
        "exact",
        global,
        &set,
        &params,
        Some(&blocks),
        vec![csv, header],
    )
}

fn equilibria(global: &GlobalSettings, set: EquilibriaSettings) -> CliResult<Vec<String>> {
    let (params, blocks) = resolve_model(&set.model(), None)?;
    let options = MaximizeOptions {
        starts_per_r: set.starts,
        full_matrix_starts: set.full_starts,
        seed: global.seed,
        ..Default::default()
    };
    let report = maximize_g(&params, &options)?;
    let path = output(global, &set.out);
    write_json(&path, &report)?;
    let mut lines = finish(
        "equilibria",
        global,
        &set,
        &params,
        blocks.as_ref(),
        vec![path],
    )?;
    lines.insert(
        0,
        format!(
            "phase {} with {} maximizer(s), sup G = {}",
            report.phase,
            report.maximizers.len(),
            report.sup_g
        ),
    );
    Ok(lines)
}

fn phase_diagram(global: &GlobalSettings, set: PhaseDiagramSettings) -> CliResult<Vec<String>> {
    let m = set.model();
    if m.alpha.is_some() || m.beta.is_some() || m.sizes.is_some() {
        return Err(CliError::Usage(
            "phase-diagram derives alpha and beta from g and --ratio; drop --alpha/--beta/--sizes"
                .into(),
        ));
    }
    let valid = set.g_step > 0.0 && set.g_max >= set.g_min && set.g_min > 0.0;
    if !valid {
        return Err(CliError::Usage(
            "need 0 < g-min <= g-max and g-step > 0".into(),
        ));
    }
    if !(0.0..=1.0).contains(&set.ratio) {
        return Err(CliError::Usage("--ratio must lie in [0, 1]".into()));
    }
    let q = m.q.unwrap_or(3);
    let s = m.s.unwrap_or(2);
    if let Some(gamma) = &m.gamma {
        if gamma.len() != s || gamma.iter().any(|&g| (g - 1.0 / s as f64).abs() > 1e-12) {
            return Err(CliError::Usage(
                "phase-diagram needs equal block proportions".into(),
            ));
        }
    }
    let points = ((set.g_max - set.g_min) / set.g_step + 1e-9).floor() as usize + 1;
    let options = MaximizeOptions {
        starts_per_r: set.starts,
        seed: global.seed,
        ..Default::default()
    };
    let mut rows = Vec::with_capacity(points);
    let mut first = None;
    for i in 0..points {
        let g = set.g_min + set.g_step * i as f64;
        let (alpha, beta) = couplings_for_g(g, s, set.ratio);
        let params = ModelParams::uniform(q, s, alpha, beta)?;
        let report = maximize_g(&params, &options)?;
        let (q_mat, nus) = equilibrium_matrices(g, &params)?;
        let g_q = free_energy_g(&q_mat, &params)?;
        let g_nu = free_energy_g(&nus[0], &params)?;
        rows.push(format!(
            "{g},{},{},{g_q},{g_nu}",
            report.phase,
            potts_fixed_point_u(g, q)
        ));
        first.get_or_insert(params);
    }
    let path = output(global, &set.out);
    write_file(&path, |w| {
        writeln!(w, "g,phase,u,G_Q,G_nu1")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    finish(
        "phase-diagram",
        global,
        &set,
        &first.expect("at least one grid point"),
        None,
        vec![path],
    )
}

fn lsi_check(global: &GlobalSettings, set: LsiCheckSettings) -> CliResult<Vec<String>> {
    let (params, blocks) = resolve_model(&set.model(), Some(2))?;
    let blocks = blocks.expect("sizes defaulted");
    let options = LsiSuiteOptions {
        num_f: set.num_f,
        seed: global.seed,
        amplitude: set.amplitude,
        cap: set.cap,
    };
    let report = verify_lsi_suite(&blocks, &params, &options)?;
    let path = output(global, &set.out);
    write_json(&path, &report)?;
    let mut lines = finish(
        "lsi-check",
        global,
        &set,
        &params,
        Some(&blocks),
        vec![path],
    )?;
    lines.insert(
        0,
        format!(
            "{} observables, {} violation(s): {}",
            report.observables_tested,
            report.outcomes.iter().map(|o| o.violations).sum::<usize>(),
            if report.passed { "PASS" } else { "FAIL" }
        ),
    );
    Ok(lines)
}

fn concentration(global: &GlobalSettings, set: ConcentrationSettings) -> CliResult<Vec<String>> {
    let (params, blocks) = resolve_model(&set.model(), Some(50))?;
    let blocks = blocks.expect("sizes defaulted");
    if !(1..=params.s).contains(&set.block) || !(1..=params.q).contains(&set.color) {
        return Err(CliError::Usage(format!(
            "--block must lie in 1..={} and --color in 1..={}",
            params.s, params.q
        )));
    }
    if set.t_points == 0 || set.sweeps == 0 || set.thin == 0 {
        return Err(CliError::Usage(
            "--t-points, --sweeps and --thin must be at least 1".into(),
        ));
    }
    let (k, c) = (set.block - 1, set.color - 1);
    let gamma1 = match set.gamma1 {
        Some(g) => g,
        None => gamma1_counts(&blocks, &params)?,
    };
    let gamma2 = match set.gamma2 {
        Some(g) => g,
        None => 1.0 - matrix_norms(&interdependence_matrix_counts(&blocks, &params)?).two_norm,
    };
    if gamma2.is_nan() || gamma2 <= 0.0 {
        return Err(CliError::ConditionNotMet(format!(
            "gamma2 = {gamma2} leaves no spectral margin"
        )));
    }
    let constants = lsi_constants(gamma1, gamma2)?;
    let t_max = set.t_max.unwrap_or(blocks.size(k) as f64 / 2.0);
    let grid: Vec<f64> = (1..=set.t_points)
        .map(|i| t_max * i as f64 / set.t_points as f64)
        .collect();
    let rows: Vec<ConcentrationRow> = if set.exact {
        let dist = exact_distribution(&blocks, &params, ExactOptions::default())?;
        exact_concentration_report(&dist, &constants, k, c, &grid)?
    } else {
        let options = ChainOptions {
            sweeps: set.sweeps,
            thin: set.thin,
            seed: global.seed,
            ..Default::default()
        };
        let summary = run_chain(&blocks, &params, &options)?;
        concentration_report(&summary, &constants, &params.gamma, k, c, &grid)?
    };
    let path = output(global, &set.out);
    write_file(&path, |w| {
        writeln!(w, "t,tail,standard_error,bound,asymptotic_bound,flagged")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.t, r.tail, r.standard_error, r.bound, r.asymptotic_bound, r.flagged
            )?;
        }
        Ok(())
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let constants_path = path.with_file_name(format!("{stem}.constants.json"));
    write_json(&constants_path, &constants)?;
    let mut lines = finish(
        "concentration",
        global,
        &set,
        &params,
        Some(&blocks),
        vec![path, constants_path],
    )?;
    let flagged = rows.iter().filter(|r| r.flagged).count();
    lines.insert(
        0,
        format!(
            "{} t values, {flagged} flagged (sigma3^2 = {})",
            rows.len(),
            constants.sigma3_sq
        ),
    );
    Ok(lines)
}

fn landscape(global: &GlobalSettings, set: LandscapeSettings) -> CliResult<Vec<String>> {
    let (params, blocks) = resolve_model(&set.model(), None)?;
    let points = g_landscape(&params, set.r, set.mesh)?;
    let path = output(global, &set.out);
    write_file(&path, |w| {
        write!(w, "r")?;
        for k in 1..=params.s {
            write!(w, ",mu_plus_{k}")?;
        }
        writeln!(w, ",G")?;
        for p in &points {
            write!(w, "{}", p.r)?;
            for x in &p.mu_plus {
                write!(w, ",{x}")?;
            }
            writeln!(w, ",{}", p.g_value)?;
        }
        Ok(())
    })?;
    finish(
        "landscape",
        global,
        &set,
        &params,
        blocks.as_ref(),
        vec![path],
    )
}
