//! Command implementations behind the `dmvc` binary.
//!
//! Exit codes: 0 on success, 1 for runtime or numeric failures, 2 for
//! usage and configuration errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmvc::dataio::{load_dataset, save_view};
use dmvc::deepclust::log_tsv;
use dmvc::pipeline::{self, Method, MethodSettings, Profile, RunReport};
use dmvc::synthgen::{self, SynthConfig};
use dmvc::Manifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] dmvc::Error),
    #[error("{0}")]
    Usage(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_usage() => 2,
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dmvc", version, about = "Multi-view clustering of precomputed feature views")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-view dataset with a manifest.
    Synth(SynthArgs),
    /// Run one method on a dataset.
    Cluster(ClusterArgs),
    /// Mean and standard deviation of NMI over datasets, methods and seeds.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Paper,
    Small,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Small => Profile::Small,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Preset name (easy, complementary, hard) or path to a JSON config.
    #[arg(long)]
    pub config: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Network profile recorded in the manifest for deep methods.
    #[arg(long, value_enum, default_value = "small")]
    pub profile: ProfileArg,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// km, ac, idec, cc[:clusterer], mvec[:clusterer], dmvc-fix or dmvc.
    #[arg(long)]
    pub method: String,
    /// Restrict the run to one view.
    #[arg(long)]
    pub view: Option<String>,
    /// Number of clusters; defaults to the number of label classes.
    #[arg(long)]
    pub k: Option<usize>,
    /// Defaults to the manifest seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Require ground-truth labels and report NMI against them.
    #[arg(long)]
    pub nmi: bool,
    /// Overrides the manifest's network profile.
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Directory for the partition, report, embeddings and training log.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Comma-separated manifest paths.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub manifests: Vec<PathBuf>,
    /// Comma-separated method tokens.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub methods: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn load_synth_config(config: &str) -> CliResult<SynthConfig> {
    let path = Path::new(config);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        return serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid synth config {}: {e}", path.display())));
    }
    if synthgen::PRESETS.contains(&config) {
        return Ok(SynthConfig::preset(config)?);
    }
    Err(CliError::Usage(format!(
        "{config:?} is neither a config file nor a preset ({})",
        synthgen::PRESETS.join(", ")
    )))
}

/// Writes the dataset and returns the manifest path.
pub fn synth(args: &SynthArgs) -> CliResult<PathBuf> {
    let mut config = load_synth_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let dataset = synthgen::generate(&config)?;
    let profile = match args.profile {
        ProfileArg::Paper => "paper",
        ProfileArg::Small => "small",
    };
    let mut methods = BTreeMap::new();
    methods.insert("profile".to_string(), serde_json::json!(profile));
    Ok(synthgen::write_dataset(&dataset, &args.out, config.seed, methods)?)
}

fn settings_for(manifest: &Manifest, profile: Option<ProfileArg>) -> CliResult<MethodSettings> {
    let mut settings = MethodSettings::from_manifest_methods(&manifest.methods)?;
    if let Some(p) = profile {
        settings.profile = p.into();
    }
    Ok(settings)
}

#[derive(Debug, Clone)]
pub struct ClusterOutput {
    pub report: RunReport,
    pub files: Vec<PathBuf>,
}

pub fn cluster(args: &ClusterArgs) -> CliResult<ClusterOutput> {
    let method: Method = args.method.parse()?;
    let manifest = Manifest::load(&args.manifest)?;
    let dataset = load_dataset(&manifest)?;
    let truth = dataset.ground_truth();
    if args.nmi && truth.is_none() {
        return Err(CliError::Usage(format!(
            "--nmi needs ground-truth labels but {} declares none",
            args.manifest.display()
        )));
    }
    let k = match (args.k, &truth) {
        (Some(k), _) => k,
        (None, Some(t)) => t.k(),
        (None, None) => {
            return Err(CliError::Usage(
                "--k is required when the dataset has no labels".into(),
            ))
        }
    };
    let seed = args.seed.unwrap_or(manifest.seed);
    let settings = settings_for(&manifest, args.profile)?;
    let outcome = pipeline::run(&dataset, method, k, seed, args.view.as_deref(), &settings)?;

    let mut files = Vec::new();
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("partition.txt");
        outcome.partition.save(&path)?;
        files.push(path);
        for (name, p) in &outcome.per_view {
            let path = dir.join(format!("partition_{name}.txt"));
            p.save(&path)?;
            files.push(path);
        }
        let path = dir.join("report.tsv");
        write_file(&path, outcome.report.to_tsv())?;
        files.push(path);
        for emb in &outcome.embeddings {
            let path = if matches!(method, Method::PerView(_)) {
                dir.join(format!("embedding_{}.mvcv", emb.name()))
            } else {
                dir.join("embedding.mvcv")
            };
            save_view(emb, &path)?;
            files.push(path);
        }
        if !outcome.log.is_empty() {
            let path = dir.join("train_log.tsv");
            write_file(&path, log_tsv(&outcome.log))?;
            files.push(path);
        }
    }
    Ok(ClusterOutput {
        report: outcome.report,
        files,
    })
}

/// Mean and sample standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// NMI scores indexed `[method][dataset]`, one entry per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    pub scores: Vec<Vec<Vec<f64>>>,
}

impl BenchTable {
    pub fn mean_std(&self, method: usize, dataset: usize) -> (f64, f64) {
        mean_std(&self.scores[method][dataset])
    }

    /// Mean over datasets of the per-dataset means.
    pub fn average(&self, method: usize) -> f64 {
        let means: Vec<f64> = (0..self.datasets.len()).map(|d| self.mean_std(method, d).0).collect();
        means.iter().sum::<f64>() / means.len() as f64
    }

    /// Tab-separated, methods as rows. The best mean in each column is
    /// suffixed with `*`.
    pub fn to_tsv(&self) -> String {
        let n_cols = self.datasets.len() + 1;
        let cell = |m: usize, c: usize| {
            if c < self.datasets.len() {
                self.mean_std(m, c).0
            } else {
                self.average(m)
            }
        };
        let best: Vec<f64> = (0..n_cols)
            .map(|c| (0..self.methods.len()).map(|m| cell(m, c)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut out = String::from("method");
        for d in &self.datasets {
            out.push('\t');
            out.push_str(d);
        }
        out.push_str("\taverage\n");
        for (m, name) in self.methods.iter().enumerate() {
            out.push_str(name);
            for (c, &top) in best.iter().enumerate() {
                let mark = if cell(m, c) == top { "*" } else { "" };
                if c < self.datasets.len() {
                    let (mean, std) = self.mean_std(m, c);
                    let _ = write!(out, "\t{mean:.4}±{std:.4}{mark}");
                } else {
                    let _ = write!(out, "\t{:.4}{mark}", cell(m, c));
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn bench(args: &BenchArgs) -> CliResult<BenchTable> {
    if args.methods.is_empty() {
        return Err(CliError::Usage("--methods must name at least one method".into()));
    }
    if args.manifests.is_empty() || args.seeds.is_empty() {
        return Err(CliError::Usage("--manifests and --seeds must be non-empty".into()));
    }
    let methods = args
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = BenchTable {
        datasets: Vec::new(),
        methods: args.methods.clone(),
        scores: vec![Vec::new(); methods.len()],
    };
    for path in &args.manifests {
        let manifest = Manifest::load(path)?;
        let dataset = load_dataset(&manifest)?;
        let truth = dataset.ground_truth().ok_or_else(|| {
            CliError::Usage(format!("{} declares no labels; bench needs them", path.display()))
        })?;
        let settings = settings_for(&manifest, args.profile)?;
        table.datasets.push(dataset.name().to_string());
        for (m, &method) in methods.iter().enumerate() {
            let mut scores = Vec::with_capacity(args.seeds.len());
            for &seed in &args.seeds {
                let out = pipeline::run(&dataset, method, truth.k(), seed, None, &settings)?;
                scores.push(out.report.final_nmi.expect("labels are attached"));
            }
            table.scores[m].push(scores);
        }
    }
    Ok(table)
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(&a).map(|path| format!("{}\n", path.display())),
        Command::Cluster(a) => cluster(&a).map(|out| out.report.to_tsv()),
        Command::Bench(a) => bench(&a).and_then(|table| {
            let tsv = table.to_tsv();
            if let Some(path) = &a.out {
                write_file(path, &tsv)?;
            }
            Ok(tsv)
        }),
    };
    match result {
        Ok(text) => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_uses_sample_variance() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }

    #[test]
    fn table_marks_column_best() {
        let table = BenchTable {
            datasets: vec!["x".into(), "y".into()],
            methods: vec!["km".into(), "cc".into()],
            scores: vec![vec![vec![0.5], vec![0.9]], vec![vec![0.7], vec![0.8]]],
        };
        let tsv = table.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "method\tx\ty\taverage");
        assert_eq!(lines[1], "km\t0.5000±0.0000\t0.9000±0.0000*\t0.7000");
        assert_eq!(lines[2], "cc\t0.7000±0.0000*\t0.8000±0.0000\t0.7500*");
    }

    #[test]
    fn error_exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::from(dmvc::Error::Config("x".into())).exit_code(), 2);
        let div = dmvc::Error::Divergence {
            stage: "s".into(),
            iteration: 0,
        };
        assert_eq!(CliError::from(div).exit_code(), 1);
    }
}
