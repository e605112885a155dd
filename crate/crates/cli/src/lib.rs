//! The `calcheck` command line: `check`, `monitor`, `simulate`, `report`.

pub mod records;

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use calcheck::dist::ModelKind;
use calcheck::hyptest::{HypothesisSpec, Sidedness};
use calcheck::metric::LevelGrid;
use calcheck::pipeline::{sha256_hex, RecipeConfig, RunReport, Table};
use calcheck::seqtest::EValueConfig;
use calcheck::sim::{drift_sweep, run_robot_sim, run_weather_sim, RobotSimConfig, SweepReport, WeatherSimConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) | CliError::Io { .. } => EXIT_DATA,
        }
    }
}

impl From<calcheck::Error> for CliError {
    fn from(e: calcheck::Error) -> Self {
        use calcheck::Error::*;
        match e {
            Config(_) | UnsupportedMetric(_) | Unsupported(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<records::RecordError> for CliError {
    fn from(e: records::RecordError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Parser)]
#[command(name = "calcheck", version, about = "Calibration checks for probabilistic forecasts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Batch check of a record file; exits 1 when calibration is rejected.
    Check {
        /// JSON-lines record file.
        input: PathBuf,
        #[command(flatten)]
        recipe: RecipeArgs,
        /// Directory for report.json and the curve tables.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Streams records through the e-value monitor, printing one trace row per
    /// step; exits 1 on alarm.
    Monitor {
        /// JSON-lines record file, or `-` for stdin.
        input: String,
        #[command(flatten)]
        recipe: RecipeArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generates synthetic records.
    Simulate(SimulateArgs),
    /// Re-renders a saved report.
    Report {
        report: PathBuf,
        /// Also write the curve tables as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RecipeArgs {
    /// TOML recipe; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// gaussian | mv_gaussian | particles | parametric | set_provider (detected from the records when omitted).
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub testing: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated nominal levels.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// `two` or `one` (overconfidence only).
    #[arg(long)]
    pub sided: Option<String>,
    /// Number of variance bins.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Monitored coverage level.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Alternative coverage for the e-value.
    #[arg(long)]
    pub p_alt: Option<f64>,
    #[arg(long, env = "CALCHECK_SEED")]
    pub seed: Option<u64>,
}

impl RecipeArgs {
    /// The merged recipe, plus whether the model kind was fixed by the user.
    pub fn resolve(&self) -> Result<(RecipeConfig, bool), CliError> {
        let (mut cfg, mut model_fixed) = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(io_err(p))?;
                let cfg =
                    RecipeConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let has_model = text.lines().any(|l| l.trim_start().starts_with("model"));
                (cfg, has_model)
            }
            None => (RecipeConfig::default(), false),
        };
        if let Some(m) = &self.model {
            cfg.model = m.parse::<ModelKind>().map_err(|e| CliError::Config(e.to_string()))?;
            model_fixed = true;
        }
        if let Some(m) = &self.metric {
            cfg.metric = m.clone();
        }
        if let Some(t) = &self.testing {
            cfg.testing = t.clone();
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
            if let Some(ev) = cfg.evalue.as_mut() {
                ev.alpha = a;
            }
        }
        if let Some(l) = &self.levels {
            cfg.levels = LevelGrid::parse_list(l).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.sided.is_some() || self.tolerance.is_some() {
            let sidedness = match &self.sided {
                Some(s) => s.parse::<Sidedness>().map_err(|e| CliError::Config(e.to_string()))?,
                None => cfg.hypothesis.sidedness,
            };
            let tol = self.tolerance.unwrap_or(cfg.hypothesis.tolerance);
            cfg.hypothesis = HypothesisSpec::new(sidedness, tol).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(b) = self.bins {
            cfg.bins = Some(b);
        }
        if self.lambda.is_some() || self.p_alt.is_some() {
            let level = self.lambda.or(cfg.evalue.map(|e| e.level)).unwrap_or(0.9);
            let p_alt = self.p_alt.or(cfg.evalue.filter(|_| self.lambda.is_none()).map(|e| e.p_alt));
            let ev = match p_alt {
                Some(p) => EValueConfig::new(level, p, cfg.alpha),
                None => EValueConfig::with_default_alt(level, cfg.alpha),
            };
            cfg.evalue = Some(ev.map_err(|e| CliError::Config(e.to_string()))?);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok((cfg, model_fixed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Weather,
    Robot,
    #[value(name = "drift_sweep", alias = "drift-sweep")]
    DriftSweep,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub kind: SimKind,
    /// TOML file with simulator settings.
    #[arg(long)]
    pub sim_config: Option<PathBuf>,
    #[arg(long, env = "CALCHECK_SEED")]
    pub seed: Option<u64>,
    /// Weather: additive mean bias, in units of the noise sd.
    #[arg(long)]
    pub bias: Option<f64>,
    /// Weather: widen the forecast sd so the bias leaves total dispersion unchanged.
    #[arg(long)]
    pub exact_dispersion: bool,
    /// Weather: multiply the forecast sd.
    #[arg(long)]
    pub sd_scale: Option<f64>,
    /// Robot: drift multiplier.
    #[arg(long)]
    pub drift_multiplier: Option<f64>,
    /// Sweep: comma-separated drift multipliers.
    #[arg(long, default_value = "0.5,1,2")]
    pub multipliers: String,
    /// Sweep: seeds per multiplier.
    #[arg(long, default_value_t = 20)]
    pub n_seeds: usize,
    #[arg(long, default_value_t = 0.9)]
    pub lambda: f64,
    #[arg(long)]
    pub p_alt: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command, writing to the given stdout. Returns the exit code.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<i32, CliError> {
    match cli.command {
        Command::Check { input, recipe, out } => check(&input, &recipe, out.as_deref(), stdout),
        Command::Monitor { input, recipe, out } => monitor(&input, &recipe, out.as_deref(), stdout),
        Command::Simulate(args) => simulate(&args, stdout),
        Command::Report { report, out } => render(&report, out.as_deref(), stdout),
    }
}

fn emit(stdout: &mut dyn Write, text: &str) -> Result<(), CliError> {
    match stdout.write_all(text.as_bytes()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(io_err(Path::new("<stdout>"))),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_report(dir: &Path, report: &RunReport) -> Result<(), CliError> {
    ensure_dir(dir)?;
    write_file(&dir.join("report.json"), &report.to_json())?;
    write_tables(dir, &report.curves)
}

fn write_tables(dir: &Path, tables: &[Table]) -> Result<(), CliError> {
    tables.iter().try_for_each(|t| write_file(&dir.join(format!("{}.csv", t.name)), &t.to_csv()))
}

fn fixed_kind(cfg: &RecipeConfig, fixed: bool) -> Option<ModelKind> {
    fixed.then_some(cfg.model)
}

fn check(input: &Path, recipe: &RecipeArgs, out: Option<&Path>, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let (mut cfg, fixed) = recipe.resolve()?;
    let bytes = fs::read(input).map_err(io_err(input))?;
    let (recs, kind) = records::parse_records(bytes.as_slice(), fixed_kind(&cfg, fixed))?;
    cfg.model = kind;
    let report = calcheck::pipeline::Pipeline::default().run_check_with_digest(&cfg, &recs, sha256_hex(&bytes))?;
    if let Some(dir) = out {
        write_report(dir, &report)?;
    }
    emit(stdout, &report.to_json())?;
    emit(stdout, "\n")?;
    Ok(if report.rejects() { EXIT_REJECT } else { EXIT_OK })
}

fn monitor(input: &str, recipe: &RecipeArgs, out: Option<&Path>, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let (mut cfg, fixed) = recipe.resolve()?;
    let reader: Box<dyn BufRead> = if input == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        let p = Path::new(input);
        Box::new(BufReader::new(fs::File::open(p).map_err(io_err(p))?))
    };
    // the kind has to be known before the pipeline sees the first record
    let mut lines = reader.lines().peekable();
    let mut leading = Vec::new();
    let kind = match fixed_kind(&cfg, fixed) {
        Some(k) => k,
        None => loop {
            match lines.next() {
                Some(Ok(l)) if l.trim().is_empty() => leading.push(l),
                Some(Ok(l)) => {
                    let k = records::detect_kind(&l).ok_or_else(|| {
                        CliError::Data(format!(
                            "line {}: cannot tell the model kind from this record",
                            leading.len() + 1
                        ))
                    })?;
                    leading.push(l);
                    break k;
                }
                Some(Err(e)) => return Err(CliError::Data(e.to_string())),
                None => return Err(CliError::Data("no records in input".into())),
            }
        },
    };
    cfg.model = kind;
    let text_stream = leading.into_iter().map(Ok).chain(lines);
    let joined = JoinedLines { inner: Box::new(text_stream), pending: Vec::new(), pos: 0 };
    let stream = records::RecordReader::new(BufReader::new(joined), Some(kind))
        .map(|r| r.map_err(|e| calcheck::Error::InvalidArgument(e.to_string())));
    emit(stdout, "t,e_value,log_e,threshold,alarmed\n")?;
    let mut write_failed = None;
    let report = calcheck::pipeline::run_monitor(&cfg, stream, |row| {
        let line = format!("{},{},{},{},{}\n", row.t, row.e_value, row.log_e, row.threshold, row.alarmed);
        if write_failed.is_none() {
            match stdout.write_all(line.as_bytes()).and_then(|_| stdout.flush()) {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => write_failed = Some(e),
                _ => {}
            }
        }
    })?;
    if let Some(e) = write_failed {
        return Err(CliError::Io { path: "<stdout>".into(), source: e });
    }
    if let Some(dir) = out {
        write_report(dir, &report)?;
    }
    let m = report.monitor.as_ref().expect("monitor runs carry a summary");
    let mut stderr = io::stderr();
    match m.final_state.first_crossing {
        Some(t) => {
            let _ = writeln!(stderr, "alarm: first crossing at t={t}, peak E={:.4e}", m.final_state.peak_log_e.exp());
        }
        None => {
            let _ = writeln!(stderr, "no alarm after {} steps, E={:.4e}", m.final_state.t, m.final_state.e_value());
        }
    }
    if let Some(msg) = &m.interruption {
        let _ = writeln!(stderr, "stream interrupted: {msg}");
    }
    Ok(if m.final_state.alarmed {
        EXIT_REJECT
    } else if !m.complete {
        EXIT_DATA
    } else {
        EXIT_OK
    })
}

/// Re-joins a line iterator into a byte stream, so that already-peeked lines
/// and the rest of the input read as one source.
struct JoinedLines {
    inner: Box<dyn Iterator<Item = io::Result<String>>>,
    pending: Vec<u8>,
    pos: usize,
}

impl io::Read for JoinedLines {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.pending.len() {
            match self.inner.next() {
                None => return Ok(0),
                Some(line) => {
                    self.pending = line?.into_bytes();
                    self.pending.push(b'\n');
                    self.pos = 0;
                }
            }
        }
        let n = buf.len().min(self.pending.len() - self.pos);
        buf[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad number `{x}` in list"))))
        .collect()
}

fn load_sim<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    ensure_dir(&args.out)?;
    match args.kind {
        SimKind::Weather => {
            let mut cfg: WeatherSimConfig = load_sim(args.sim_config.as_deref())?;
            if let Some(b) = args.bias {
                cfg = if args.exact_dispersion {
                    cfg.with_exact_dispersion_bias(b)
                } else {
                    WeatherSimConfig { injected_mean_bias: b, ..cfg }
                };
            }
            if let Some(s) = args.sd_scale {
                cfg.injected_sd_scale = s;
            }
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let recs = run_weather_sim(&cfg)?;
            let text = records::emit_records(&recs).map_err(CliError::Data)?;
            write_file(&args.out.join("records.jsonl"), &text)?;
            emit(stdout, &format!("wrote {} records to {}\n", recs.len(), args.out.join("records.jsonl").display()))?;
        }
        SimKind::Robot => {
            let mut cfg: RobotSimConfig = load_sim(args.sim_config.as_deref())?;
            if let Some(m) = args.drift_multiplier {
                cfg.drift_multiplier = m;
            }
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let run = run_robot_sim(&cfg)?;
            let text = records::emit_records(&run.records).map_err(CliError::Data)?;
            write_file(&args.out.join("records.jsonl"), &text)?;
            let mut track = Table::new("track", &["t", "true_x", "true_y", "filter_x", "filter_y"]);
            for (i, (tr, fm)) in run.truth.iter().zip(&run.filter_mean).enumerate() {
                track.rows.push(vec![(i + 1) as f64, tr[0], tr[1], fm[0], fm[1]]);
            }
            write_tables(&args.out, &[track])?;
            emit(
                stdout,
                &format!("wrote {} records to {}\n", run.records.len(), args.out.join("records.jsonl").display()),
            )?;
        }
        SimKind::DriftSweep => {
            let mut cfg: RobotSimConfig = load_sim(args.sim_config.as_deref())?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let ev = match args.p_alt {
                Some(p) => EValueConfig::new(args.lambda, p, args.alpha),
                None => EValueConfig::with_default_alt(args.lambda, args.alpha),
            }
            .map_err(|e| CliError::Config(e.to_string()))?;
            let multipliers = parse_list(&args.multipliers)?;
            if args.n_seeds == 0 {
                return Err(CliError::Config("--n-seeds must be positive".into()));
            }
            let sweep = drift_sweep(&cfg, &multipliers, args.n_seeds, &ev)?;
            write_sweep(&args.out, &sweep)?;
            emit(stdout, &sweep_summary(&sweep).to_csv())?;
        }
    }
    Ok(EXIT_OK)
}

fn sweep_summary(sweep: &SweepReport) -> Table {
    let mut t = Table::new(
        "sweep_summary",
        &["multiplier", "n_seeds", "alarms", "median_first_crossing", "censored_median_first_crossing"],
    );
    for s in &sweep.summaries {
        t.rows.push(vec![
            s.multiplier,
            s.n_seeds as f64,
            s.alarms as f64,
            s.median_first_crossing.unwrap_or(f64::NAN),
            s.censored_median_first_crossing,
        ]);
    }
    t
}

fn write_sweep(dir: &Path, sweep: &SweepReport) -> Result<(), CliError> {
    let mut env = Table::new("envelope", &["multiplier", "t", "q05", "q50", "q95"]);
    for s in &sweep.summaries {
        for r in &s.envelope {
            env.rows.push(vec![s.multiplier, r.t as f64, r.q05, r.q50, r.q95]);
        }
    }
    write_tables(dir, &[sweep_summary(sweep), env])?;
    let json = serde_json::to_string_pretty(sweep).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&dir.join("sweep.json"), &json)
}

fn render(path: &Path, out: Option<&Path>, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let report = RunReport::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let r = &report.report;
    let mut s = String::new();
    s.push_str(&format!("decision:  {:?}\n", report.decision));
    s.push_str(&format!("test:      {}\n", r.test));
    s.push_str(&format!("statistic: {}\n", r.statistic));
    s.push_str(&format!("threshold: {}\n", r.threshold));
    s.push_str(&format!("alpha:     {}\n", r.alpha));
    s.push_str(&format!("p-value:   {}\n", r.p_value));
    s.push_str(&format!("input:     sha256 {}\n", report.provenance.input_digest));
    if let Some(levels) = &r.per_level {
        s.push_str("\nlevel      count/n      p-value      bounds        reject\n");
        for l in levels {
            s.push_str(&format!(
                "{:<10} {:>5}/{:<6} {:<12.4e} [{}, {}]{:>8}\n",
                l.level, l.count, l.n, l.p_value, l.lower_bound, l.upper_bound, l.reject
            ));
        }
    }
    if let Some(bins) = &report.bins {
        s.push_str("\nbin  n      uncertainty range        decision  p-value\n");
        for b in bins {
            s.push_str(&format!(
                "{:<4} {:<6} [{:.4}, {:.4}]  {:?}  {:.4e}\n",
                b.bin, b.n, b.uncertainty_min, b.uncertainty_max, b.report.decision, b.report.p_value
            ));
        }
    }
    if let Some(m) = &report.monitor {
        let st = &m.final_state;
        s.push_str(&format!(
            "\nmonitor: t={} E={:.4e} peak={:.4e} first_crossing={} complete={}\n",
            st.t,
            st.e_value(),
            st.peak_log_e.exp(),
            st.first_crossing.map_or("none".to_string(), |t| t.to_string()),
            m.complete
        ));
    }
    emit(stdout, &s)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_tables(dir, &report.curves)?;
    }
    Ok(EXIT_OK)
}
