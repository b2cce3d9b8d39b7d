//! The experiment grid: clustering sweeps over K and classifier-probe runs.
//!
//! A sweep clusters each speaker side once per K and scores the result
//! against every requested label field. Restart seeds derive from the base
//! seed and a stable hash of the grid cell, and all results are gathered in
//! grid order, so reports are byte-identical under any thread count.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::cluster::{all_restarts, gmm_fit_from, select_best, Algorithm, ClusterResult};
use crate::corpus::{align, label_partition, EmbeddingMatrix, FieldKind, LabelTable, LabelValue, Partition, Speaker};
use crate::error::{Error, Result};
use crate::fmt::{csv_field, sig6};
use crate::infometrics::{anmi, contingency, MiReport};
use crate::probe::{evaluate_probe, train_probe, Head, ProbeMetrics, Split, Targets, TrainConfig, TrainOutcome};

pub const DEFAULT_K_LIST: [usize; 7] = [4, 8, 16, 32, 64, 128, 256];
pub const REPORT_HEADER: &str = "model,task,speaker,clusterer,k,seed,fit_score,mi,nmi,anmi,wall_time_ms";
pub const PROBE_REPORT_HEADER: &str = "model,task,speaker,head,metric,value";

/// Which utterances to keep: one speaker or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpeakerSide {
    All,
    Only(Speaker),
}

impl SpeakerSide {
    pub fn filter(self) -> Option<Speaker> {
        match self {
            SpeakerSide::All => None,
            SpeakerSide::Only(s) => Some(s),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpeakerSide::All => "all",
            SpeakerSide::Only(s) => s.as_str(),
        }
    }
}

impl FromStr for SpeakerSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            Ok(SpeakerSide::All)
        } else {
            s.parse().map(SpeakerSide::Only)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub model_tag: String,
    pub k_list: Vec<usize>,
    pub restarts: usize,
    pub max_iters: usize,
    pub clusterers: Vec<Algorithm>,
    pub speakers: Vec<SpeakerSide>,
    pub fields: Vec<String>,
    pub base_seed: u64,
    /// Drop rows whose label set is empty, separately for each field.
    pub exclude_empty: bool,
    /// Also report the best ANMI over restarts (selection by label agreement).
    pub diagnostic: bool,
    /// Record wall time; when off the column is written as 0.
    pub record_timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            model_tag: "model".into(),
            k_list: DEFAULT_K_LIST.to_vec(),
            restarts: crate::cluster::DEFAULT_RESTARTS,
            max_iters: crate::cluster::DEFAULT_MAX_ITERS,
            clusterers: vec![Algorithm::KMeans],
            speakers: vec![SpeakerSide::All],
            fields: Vec::new(),
            base_seed: 0,
            exclude_empty: false,
            diagnostic: false,
            record_timing: false,
        }
    }
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        if self.k_list.is_empty() {
            return Err(Error::Config("k_list is empty".into()));
        }
        if self.k_list.windows(2).any(|w| w[0] >= w[1]) || self.k_list[0] == 0 {
            return Err(Error::Config(format!(
                "k_list must be positive and strictly increasing: {:?}",
                self.k_list
            )));
        }
        if self.restarts == 0 || self.max_iters == 0 {
            return Err(Error::Config("restarts and max_iters must be at least 1".into()));
        }
        for (what, empty) in [
            ("clusterers", self.clusterers.is_empty()),
            ("speakers", self.speakers.is_empty()),
            ("fields", self.fields.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("no {what} requested")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub model_tag: String,
    pub task: String,
    pub speaker: SpeakerSide,
    pub clusterer: &'static str,
    pub k: usize,
    pub chosen_seed: u64,
    pub fit_score: f64,
    pub mi: f64,
    pub nmi: f64,
    pub anmi: f64,
    pub wall_time_ms: u64,
    pub anmi_best: Option<f64>,
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn stable_hash(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            h ^= 0x1f;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        for b in part.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}

/// One clustering target: a speaker side, optionally narrowed to the rows
/// that carry a non-empty label for one field.
struct Group {
    speaker: SpeakerSide,
    subset_key: String,
    data: EmbeddingMatrix,
    truths: Vec<(String, Partition)>,
}

fn build_groups(emb: &EmbeddingMatrix, labels: &LabelTable, cfg: &SweepConfig) -> Result<Vec<Group>> {
    let mut groups = Vec::new();
    for &side in &cfg.speakers {
        let (data, table) = align(emb, labels, side.filter())
            .map_err(|e| e.context(format!("speaker {}", side.as_str())))?;
        if !cfg.exclude_empty {
            let truths = cfg
                .fields
                .iter()
                .map(|f| Ok((f.clone(), label_partition(&table, f)?)))
                .collect::<Result<Vec<_>>>()?;
            groups.push(Group {
                speaker: side,
                subset_key: String::new(),
                data,
                truths,
            });
            continue;
        }
        for field in &cfg.fields {
            let keep: Vec<usize> = table
                .values(field)?
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_empty())
                .map(|(i, _)| i)
                .collect();
            if keep.is_empty() {
                return Err(Error::Empty(format!(
                    "no labelled rows for field {field:?}, speaker {}",
                    side.as_str()
                )));
            }
            let subset = table.select_rows(&keep);
            groups.push(Group {
                speaker: side,
                subset_key: field.clone(),
                data: data.select_rows(&keep)?,
                truths: vec![(field.clone(), label_partition(&subset, field)?)],
            });
        }
    }
    Ok(groups)
}

struct CellResult {
    algo: Algorithm,
    best: ClusterResult,
    all: Vec<ClusterResult>,
    wall_time_ms: u64,
}

fn run_cell(group: &Group, k: usize, cfg: &SweepConfig) -> Result<Vec<CellResult>> {
    let seed = cfg
        .base_seed
        .wrapping_add(stable_hash(&[group.speaker.as_str(), &group.subset_key, &k.to_string()]));
    let started = Instant::now();
    let km = all_restarts(&group.data, k, Algorithm::KMeans, cfg.restarts, cfg.max_iters, seed)?;
    let km_ms = started.elapsed().as_millis() as u64;
    let mut out = Vec::new();
    for &algo in &cfg.clusterers {
        let (all, ms) = match algo {
            Algorithm::KMeans => (km.clone(), km_ms),
            Algorithm::Gmm(mode) => {
                let started = Instant::now();
                let fits = km
                    .par_iter()
                    .map(|init| gmm_fit_from(&group.data, init, cfg.max_iters, mode))
                    .collect::<Result<Vec<_>>>()?;
                (fits, km_ms + started.elapsed().as_millis() as u64)
            }
        };
        let best = all[select_best(&all, algo).expect("restarts >= 1")].clone();
        log::info!(
            "cell speaker={} subset={} clusterer={} k={} seed={} score={} ({} ms)",
            group.speaker.as_str(),
            if group.subset_key.is_empty() { "-" } else { &group.subset_key },
            algo.name(),
            k,
            best.seed,
            sig6(best.fit_score),
            ms
        );
        out.push(CellResult {
            algo,
            best,
            all: if cfg.diagnostic { all } else { Vec::new() },
            wall_time_ms: if cfg.record_timing { ms } else { 0 },
        });
    }
    Ok(out)
}

/// Runs the full grid; one row per (field, speaker, clusterer, k).
pub fn run_sweep(emb: &EmbeddingMatrix, labels: &LabelTable, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let clusterer_names: BTreeSet<&str> = cfg.clusterers.iter().map(|a| a.name()).collect();
    if clusterer_names.len() != cfg.clusterers.len() {
        return Err(Error::Config("each clusterer may be requested once".into()));
    }
    let groups = build_groups(emb, labels, cfg)?;
    for g in &groups {
        let max_k = *cfg.k_list.last().unwrap();
        if max_k > g.data.n_rows() {
            return Err(Error::Config(format!(
                "k = {max_k} exceeds the {} rows available for speaker {}",
                g.data.n_rows(),
                g.speaker.as_str()
            )));
        }
    }

    let cells: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| cfg.k_list.iter().map(move |&k| (g, k)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(g, k)| {
            run_cell(&groups[g], k, cfg).map_err(|e| {
                e.context(format!("speaker {} k {k}", groups[g].speaker.as_str()))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (&(g, k), cell) in cells.iter().zip(&results) {
        let group = &groups[g];
        for (field, truth) in &group.truths {
            for r in cell {
                let report = MiReport::compare(&r.best.partition, truth)?;
                let anmi_best = if cfg.diagnostic {
                    let mut best = f64::NEG_INFINITY;
                    for fit in &r.all {
                        best = best.max(anmi(&contingency(&fit.partition, truth)?));
                    }
                    Some(best)
                } else {
                    None
                };
                rows.push(SweepRow {
                    model_tag: cfg.model_tag.clone(),
                    task: field.clone(),
                    speaker: group.speaker,
                    clusterer: r.algo.name(),
                    k,
                    chosen_seed: r.best.seed,
                    fit_score: r.best.fit_score,
                    mi: report.mi,
                    nmi: report.nmi,
                    anmi: report.anmi,
                    wall_time_ms: r.wall_time_ms,
                    anmi_best,
                });
            }
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        (&a.task, a.speaker.as_str(), a.clusterer, a.k).cmp(&(&b.task, b.speaker.as_str(), b.clusterer, b.k))
    });
}

/// CSV text of the sweep report, sorted by (field, speaker, clusterer, k).
pub fn render_report(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Empty("no sweep rows to report".into()));
    }
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let diagnostic = rows.iter().any(|r| r.anmi_best.is_some());
    let mut out = String::from(REPORT_HEADER);
    if diagnostic {
        out.push_str(",anmi_best");
    }
    out.push('\n');
    for r in &rows {
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.model_tag),
            csv_field(&r.task),
            r.speaker.as_str(),
            r.clusterer,
            r.k,
            r.chosen_seed,
            sig6(r.fit_score),
            sig6(r.mi),
            sig6(r.nmi),
            sig6(r.anmi),
            r.wall_time_ms
        )
        .unwrap();
        if diagnostic {
            out.push(',');
            out.push_str(&r.anmi_best.map(sig6).unwrap_or_default());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn emit_report(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render_report(rows)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub model_tag: String,
    pub task: String,
    pub speaker: SpeakerSide,
    pub head: Head,
    pub metric: String,
    pub value: f64,
}

/// Inputs for one classifier-probe run. Splits are separate embedding
/// matrices sharing one label table.
#[derive(Debug, Clone, Copy)]
pub struct ProbeTask<'a> {
    pub model_tag: &'a str,
    pub field: &'a str,
    pub speaker: SpeakerSide,
    pub labels: &'a LabelTable,
    pub train: &'a EmbeddingMatrix,
    pub valid: &'a EmbeddingMatrix,
    pub test: Option<&'a EmbeddingMatrix>,
}

#[derive(Debug, Clone)]
pub struct ProbeTaskOutcome {
    pub head: Head,
    pub class_names: Vec<String>,
    pub training: TrainOutcome,
    pub test_metrics: ProbeMetrics,
    /// True when no test split was given and validation was reported instead.
    pub used_valid_as_test: bool,
    pub rows: Vec<ProbeRow>,
}

fn targets_for(values: &[LabelValue], kind: FieldKind, classes: &[String]) -> Targets {
    let index = |name: &str| classes.binary_search_by(|c| c.as_str().cmp(name)).expect("class in vocabulary");
    match kind {
        FieldKind::Single => Targets::Classes {
            labels: values.iter().map(|v| index(&v.class_name())).collect(),
            n_classes: classes.len(),
        },
        FieldKind::Multi => {
            let mut hot = vec![false; values.len() * classes.len()];
            for (i, v) in values.iter().enumerate() {
                for tok in v.tokens() {
                    hot[i * classes.len() + index(tok)] = true;
                }
            }
            Targets::MultiHot {
                values: hot,
                n_classes: classes.len(),
            }
        }
    }
}

/// Trains on `train`, selects on `valid`, reports on `test` (or `valid` when
/// absent). Single-label fields use a softmax head and report accuracy;
/// multi-label fields use a sigmoid head and report micro-F1.
pub fn run_probe_task(task: ProbeTask<'_>, cfg: &TrainConfig) -> Result<ProbeTaskOutcome> {
    let kind = task.labels.field_kind(task.field)?;
    let head = match kind {
        FieldKind::Single => Head::Softmax,
        FieldKind::Multi => Head::Sigmoid,
    };
    let filter = task.speaker.filter();
    let (train_emb, train_lab) = align(task.train, task.labels, filter).map_err(|e| e.context("train split"))?;
    let (valid_emb, valid_lab) = align(task.valid, task.labels, filter).map_err(|e| e.context("valid split"))?;
    let test = match task.test {
        Some(t) => Some(align(t, task.labels, filter).map_err(|e| e.context("test split"))?),
        None => {
            log::warn!("no test split given; reporting validation metrics for {}", task.field);
            None
        }
    };

    let mut vocab = BTreeSet::new();
    for lab in [Some(&train_lab), Some(&valid_lab), test.as_ref().map(|(_, l)| l)]
        .into_iter()
        .flatten()
    {
        for v in lab.values(task.field)? {
            match kind {
                FieldKind::Single => {
                    vocab.insert(v.class_name());
                }
                FieldKind::Multi => vocab.extend(v.tokens().into_iter().map(str::to_owned)),
            }
        }
    }
    if vocab.is_empty() {
        return Err(Error::Empty(format!("field {:?} has no labels", task.field)));
    }
    let class_names: Vec<String> = vocab.into_iter().collect();
    let train_t = targets_for(train_lab.values(task.field)?, kind, &class_names);
    let valid_t = targets_for(valid_lab.values(task.field)?, kind, &class_names);

    let training = train_probe(
        Split {
            emb: &train_emb,
            targets: &train_t,
        },
        Split {
            emb: &valid_emb,
            targets: &valid_t,
        },
        cfg,
    )?;
    let test_metrics = match &test {
        Some((emb, lab)) => {
            let t = targets_for(lab.values(task.field)?, kind, &class_names);
            evaluate_probe(&training.model, emb, &t, cfg.threshold)?
        }
        None => evaluate_probe(&training.model, &valid_emb, &valid_t, cfg.threshold)?,
    };
    let row = |metric: &str, value: f64| ProbeRow {
        model_tag: task.model_tag.to_owned(),
        task: task.field.to_owned(),
        speaker: task.speaker,
        head,
        metric: metric.to_owned(),
        value,
    };
    let mut rows = vec![match head {
        Head::Softmax => row("accuracy", test_metrics.accuracy),
        Head::Sigmoid => row("micro_f1", test_metrics.micro_f1),
    }];
    if test.is_none() {
        rows.push(row("test_split_missing", 1.0));
    }
    Ok(ProbeTaskOutcome {
        head,
        class_names,
        training,
        test_metrics,
        used_valid_as_test: test.is_none(),
        rows,
    })
}

pub fn render_probe_rows(rows: &[ProbeRow]) -> String {
    let mut out = String::new();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_field(&r.model_tag),
            csv_field(&r.task),
            r.speaker.as_str(),
            r.head.as_str(),
            r.metric,
            sig6(r.value)
        )
        .unwrap();
    }
    out
}

/// Appends rows to a probe report, writing the header when the file is new or empty.
pub fn append_probe_report(rows: &[ProbeRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let needs_header = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut text = String::new();
    if needs_header {
        text.push_str(PROBE_REPORT_HEADER);
        text.push('\n');
    }
    text.push_str(&render_probe_rows(rows));
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
