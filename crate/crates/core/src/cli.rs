//! Command-line front end.
//!
//! Every subcommand reads its inputs, runs to completion, and only then writes
//! its artifact, so a failed run leaves no partial output behind. Failures
//! print one line `error<TAB>Kind<TAB>message` on standard error and map to
//! exit codes: 1 usage/config, 2 data, 3 numeric.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::cluster::{best_of_restarts, Algorithm, CovMode, DEFAULT_MAX_ITERS, DEFAULT_RESTARTS};
use crate::corpus::{align, label_partition, load_embeddings, load_labels, EmbeddingMatrix, FieldKind, LabelTable, Partition};
use crate::error::{Error, Result};
use crate::infometrics::MiReport;
use crate::probe::{save_probe, TrainConfig};
use crate::sweep::{
    append_probe_report, render_probe_rows, render_report, run_probe_task, run_sweep, ProbeTask, SpeakerSide,
    SweepConfig, DEFAULT_K_LIST, PROBE_REPORT_HEADER,
};
use crate::viz::{exemplars, load_texts, render_exemplars, render_projection, tsne_project, ExemplarConfig, ExemplarMode, TsneConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "embprobe", version, about = "Probe sentence embeddings with classifiers and clustering")]
pub struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster embeddings over a K grid and score each clustering with MI/NMI/ANMI.
    ClusterSweep(SweepArgs),
    /// Train a linear probe on frozen embeddings.
    Classify(ClassifyArgs),
    /// Compare two labelings given as `id<TAB>label` files.
    Metrics(MetricsArgs),
    /// tSNE projection to 2-D, written as `id,x,y,label` CSV.
    Project(ProjectArgs),
    /// List sample utterances from a few clusters.
    Exemplars(ExemplarArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClustererArg {
    Kmeans,
    Gmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovModeArg {
    Diag,
    Full,
    Spherical,
}

impl From<CovModeArg> for CovMode {
    fn from(m: CovModeArg) -> Self {
        match m {
            CovModeArg::Diag => CovMode::Diag,
            CovModeArg::Full => CovMode::Full,
            CovModeArg::Spherical => CovMode::Spherical,
        }
    }
}

fn algorithm(c: ClustererArg, cov: CovModeArg) -> Algorithm {
    match c {
        ClustererArg::Kmeans => Algorithm::KMeans,
        ClustererArg::Gmm => Algorithm::Gmm(cov.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExemplarModeArg {
    Random,
    NearestCentroid,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Single-label field to score against (repeatable).
    #[arg(long = "field")]
    pub fields: Vec<String>,
    /// Multi-label field to score against (repeatable).
    #[arg(long = "multi-label")]
    pub multi_label: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub speaker: Vec<SpeakerSide>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "kmeans")]
    pub clusterer: Vec<ClustererArg>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_K_LIST.to_vec())]
    pub k_list: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "diag")]
    pub cov_mode: CovModeArg,
    /// Report path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add an `anmi_best` column: the best ANMI over all restarts.
    #[arg(long)]
    pub diagnostic: bool,
    /// Fill `wall_time_ms` (otherwise 0, keeping reports reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Drop rows whose label is empty for the field being scored.
    #[arg(long)]
    pub exclude_empty: bool,
    #[arg(long, default_value = "model")]
    pub model_tag: String,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("target").required(true).args(["field", "multi_label"])))]
pub struct ClassifyArgs {
    /// Training split.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub valid_embeddings: PathBuf,
    /// Held-out split; validation metrics are reported when omitted.
    #[arg(long)]
    pub test_embeddings: Option<PathBuf>,
    /// Labels covering the ids of every split.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long)]
    pub multi_label: Option<String>,
    #[arg(long, default_value = "all")]
    pub speaker: SpeakerSide,
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    /// Sigmoid decision threshold for multi-label fields.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model")]
    pub model_tag: String,
    /// Report path (rows are appended); standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub save_probe: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "true")]
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Label file used to color points and to filter by speaker.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    pub field: Option<String>,
    #[arg(long, default_value = "all")]
    pub speaker: SpeakerSide,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// PCA pre-reduction dimension; 0 disables it.
    #[arg(long, default_value_t = 50)]
    pub pca_dims: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the per-iteration KL divergence as `iter,kl` CSV.
    #[arg(long)]
    pub kl_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExemplarArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// TSV with `id` and `text` columns.
    #[arg(long)]
    pub texts: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    pub speaker: SpeakerSide,
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "kmeans")]
    pub clusterer: ClustererArg,
    #[arg(long, value_enum, default_value = "diag")]
    pub cov_mode: CovModeArg,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub iters: usize,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value_t = 5)]
    pub samples: usize,
    #[arg(long, value_enum, default_value = "random")]
    pub mode: ExemplarModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the subcommand, and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            let flat: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            eprintln!("error\tUsageError\t{}", flat.join(" | "));
            return EXIT_USAGE;
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))
            .and_then(|pool| pool.install(|| run(cli.command))),
        None => run(cli.command),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r', '\t'], " ");
            eprintln!("error\t{}\t{msg}", e.kind());
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) => EXIT_USAGE,
        Error::Divergence(_) | Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::ClusterSweep(a) => cluster_sweep(a),
        Command::Classify(a) => classify(a),
        Command::Metrics(a) => metrics(a),
        Command::Project(a) => project(a),
        Command::Exemplars(a) => exemplar_listing(a),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|()| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn cluster_sweep(a: SweepArgs) -> Result<()> {
    if a.fields.is_empty() && a.multi_label.is_empty() {
        return Err(Error::Config("give at least one --field or --multi-label".into()));
    }
    let schema: Vec<(&str, FieldKind)> = a
        .fields
        .iter()
        .map(|f| (f.as_str(), FieldKind::Single))
        .chain(a.multi_label.iter().map(|f| (f.as_str(), FieldKind::Multi)))
        .collect();
    let mut clusterers: Vec<Algorithm> = a.clusterer.iter().map(|&c| algorithm(c, a.cov_mode)).collect();
    clusterers.dedup();
    let mut speakers = a.speaker.clone();
    speakers.dedup();
    let cfg = SweepConfig {
        model_tag: a.model_tag,
        k_list: a.k_list,
        restarts: a.restarts,
        max_iters: a.iters,
        clusterers,
        speakers,
        fields: schema.iter().map(|(f, _)| (*f).to_owned()).collect(),
        base_seed: a.seed,
        exclude_empty: a.exclude_empty,
        diagnostic: a.diagnostic,
        record_timing: a.timing,
    };
    let emb = load_embeddings(&a.embeddings)?;
    let labels = load_labels(&a.labels, &schema)?;
    let rows = run_sweep(&emb, &labels, &cfg)?;
    write_output(a.out.as_deref(), &render_report(&rows)?)
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let (field, kind) = match (&a.field, &a.multi_label) {
        (Some(f), None) => (f.as_str(), FieldKind::Single),
        (None, Some(f)) => (f.as_str(), FieldKind::Multi),
        _ => return Err(Error::Config("give exactly one of --field or --multi-label".into())),
    };
    let cfg = TrainConfig {
        learning_rate: a.lr,
        clip_norm: a.clip,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        threshold: a.threshold,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let train = load_embeddings(&a.embeddings)?;
    let valid = load_embeddings(&a.valid_embeddings)?;
    let test = a.test_embeddings.as_ref().map(load_embeddings).transpose()?;
    let labels = load_labels(&a.labels, &[(field, kind)])?;
    let outcome = run_probe_task(
        ProbeTask {
            model_tag: &a.model_tag,
            field,
            speaker: a.speaker,
            labels: &labels,
            train: &train,
            valid: &valid,
            test: test.as_ref(),
        },
        &cfg,
    )?;
    log::info!(
        "{field}: best epoch {} of {}, {} classes",
        outcome.training.best_epoch,
        outcome.training.history.len(),
        outcome.class_names.len()
    );
    if let Some(path) = &a.save_probe {
        save_probe(&outcome.training.model, path)?;
    }
    match &a.out {
        Some(path) => append_probe_report(&outcome.rows, path),
        None => write_output(None, &format!("{PROBE_REPORT_HEADER}\n{}", render_probe_rows(&outcome.rows))),
    }
}

/// Reads `id<TAB>label` lines; a leading `id<TAB>label` header is skipped.
pub fn parse_assignment_file(body: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in body.split('\n').enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || (i == 0 && line == "id\tlabel") {
            continue;
        }
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("line {}: expected id<TAB>label", i + 1)))?;
        if !seen.insert(id.to_owned()) {
            return Err(Error::DuplicateId(id.to_owned()));
        }
        out.push((id.to_owned(), label.to_owned()));
    }
    if out.is_empty() {
        return Err(Error::Empty("no assignments".into()));
    }
    Ok(out)
}

fn read_assignments(path: &Path) -> Result<Vec<(String, String)>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_assignment_file(&body).map_err(|e| e.context(path.display().to_string()))
}

/// Joins two assignment lists on id (order of `truth`) into partitions.
pub fn join_partitions(pred: &[(String, String)], truth: &[(String, String)]) -> Result<(Partition, Partition)> {
    let lookup: std::collections::HashMap<&str, &str> =
        pred.iter().map(|(id, l)| (id.as_str(), l.as_str())).collect();
    let mut unmatched: Vec<String> = truth
        .iter()
        .filter(|(id, _)| !lookup.contains_key(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    if unmatched.is_empty() && pred.len() != truth.len() {
        let truth_ids: std::collections::HashSet<&str> = truth.iter().map(|(id, _)| id.as_str()).collect();
        unmatched = pred
            .iter()
            .filter(|(id, _)| !truth_ids.contains(id.as_str()))
            .map(|(id, _)| id.clone())
            .collect();
    }
    if !unmatched.is_empty() {
        return Err(Error::Join(unmatched));
    }
    let p = Partition::from_keys(truth.iter().map(|(id, _)| lookup[id.as_str()].to_owned()));
    let t = Partition::from_keys(truth.iter().map(|(_, l)| l.clone()));
    Ok((p, t))
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let pred = read_assignments(&a.pred)?;
    let truth = read_assignments(&a.truth)?;
    let (p, t) = join_partitions(&pred, &truth)?;
    let r = MiReport::compare(&p, &t)?;
    let text = format!(
        "n={}\nmi={:.6}\nnmi={:.6}\nemi={:.6}\nanmi={:.6}\nh_pred={:.6}\nh_true={:.6}\n",
        p.n_items(),
        r.mi,
        r.nmi,
        r.emi,
        r.anmi,
        r.h_a,
        r.h_b
    );
    write_output(None, &text)
}

/// Loads embeddings and, when labels are given, aligns and filters them.
fn load_aligned(
    embeddings: &Path,
    labels: Option<&Path>,
    schema: &[(&str, FieldKind)],
    speaker: SpeakerSide,
) -> Result<(EmbeddingMatrix, Option<LabelTable>)> {
    let emb = load_embeddings(embeddings)?;
    match labels {
        Some(path) => {
            let table = load_labels(path, schema)?;
            let (emb, table) = align(&emb, &table, speaker.filter())?;
            Ok((emb, Some(table)))
        }
        None if speaker != SpeakerSide::All => Err(Error::Config("--speaker needs --labels".into())),
        None => Ok((emb, None)),
    }
}

fn project(a: ProjectArgs) -> Result<()> {
    let schema: Vec<(&str, FieldKind)> = a.field.iter().map(|f| (f.as_str(), FieldKind::Multi)).collect();
    let (emb, table) = load_aligned(&a.embeddings, a.labels.as_deref(), &schema, a.speaker)?;
    let cfg = TsneConfig {
        perplexity: a.perplexity,
        iters: a.iters,
        seed: a.seed,
        pca_dims: (a.pca_dims > 0).then_some(a.pca_dims),
        ..TsneConfig::default()
    };
    let proj = tsne_project(&emb, &cfg)?;
    let point_labels = match (&table, &a.field) {
        (Some(t), Some(f)) => Some(label_partition(t, f).map(|p| {
            p.assignments().iter().map(|&c| p.class_names()[c].clone()).collect::<Vec<_>>()
        })?),
        _ => None,
    };
    let csv = render_projection(&proj, point_labels.as_deref());
    if let Some(path) = &a.kl_out {
        let mut kl = String::from("iter,kl\n");
        for (i, v) in proj.kl_history.iter().enumerate() {
            kl.push_str(&format!("{i},{v:e}\n"));
        }
        fs::write(path, kl).map_err(|e| Error::io(path, e))?;
    }
    write_output(a.out.as_deref(), &csv)
}

fn exemplar_listing(a: ExemplarArgs) -> Result<()> {
    let (emb, _) = load_aligned(&a.embeddings, a.labels.as_deref(), &[], a.speaker)?;
    let texts = load_texts(&a.texts)?;
    let algo = algorithm(a.clusterer, a.cov_mode);
    let result = best_of_restarts(&emb, a.k, algo, a.restarts, a.iters, a.seed)?;
    let cfg = ExemplarConfig {
        clusters_to_show: a.clusters,
        samples_per_cluster: a.samples,
        mode: match a.mode {
            ExemplarModeArg::Random => ExemplarMode::Random,
            ExemplarModeArg::NearestCentroid => ExemplarMode::NearestCentroid,
        },
        seed: a.seed,
    };
    let blocks = exemplars(&result, &emb, &texts, &cfg)?;
    write_output(a.out.as_deref(), &render_exemplars(&blocks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_files() {
        let rows = parse_assignment_file("id\tlabel\na\tx\nb\ty\n").unwrap();
        assert_eq!(rows.len(), 2);
        assert!(matches!(parse_assignment_file("a\tx\na\ty\n"), Err(Error::DuplicateId(_))));
        assert!(matches!(parse_assignment_file("a x\n"), Err(Error::Format(_))));
    }

    #[test]
    fn joins_by_id_not_position() {
        let pred = parse_assignment_file("b\t1\na\t0\nc\t0\n").unwrap();
        let truth = parse_assignment_file("a\tq\nb\tr\nc\tq\n").unwrap();
        let (p, t) = join_partitions(&pred, &truth).unwrap();
        assert_eq!(p.assignments(), t.assignments());
        let extra = parse_assignment_file("a\t0\nb\t1\nc\t0\nd\t1\n").unwrap();
        assert!(matches!(join_partitions(&extra, &truth), Err(Error::Join(ids)) if ids == ["d"]));
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(dispatch(["embprobe", "cluster-sweep", "--labels", "x.tsv"]), EXIT_USAGE);
        assert_eq!(dispatch(["embprobe", "no-such-command"]), EXIT_USAGE);
        assert_eq!(dispatch(["embprobe", "metrics", "--pred", "p", "--true", "t", "--bogus"]), EXIT_USAGE);
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Format("x".into()).context("f")), EXIT_DATA);
        assert_eq!(exit_code(&Error::Divergence("x".into())), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::Numeric("x".into())), EXIT_NUMERIC);
    }
}
