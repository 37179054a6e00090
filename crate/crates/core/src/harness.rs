//! The signal/noise evaluation matrix.
//!
//! Two models are trained per run, one on signal features and one on
//! noise. Each is evaluated on signal and on noise test inputs, in both
//! decoding modes, giving eight cells. The gap summary compares the cells:
//! a model that reads its input should lose score when the evaluation
//! input is swapped for noise (`delta_eval`) and should beat a model that
//! was trained on noise (`delta_train`).

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{make_noise_like, Corpus, InputKind, SplitDataset};
use crate::decoding::{beam_search_generate, teacher_forced_generate, DecodeConfig, DecodingMode};
use crate::error::{Error, Result};
use crate::metrics::{score_cell, Metric, MetricsReport};
use crate::model::{checkpoint, train, ModelConfig, TrainConfig, TrainedModel};
use crate::rng::derive_seed;
use crate::tokenizer::Vocabulary;

pub(crate) const STREAM_EVAL_NOISE: u64 = 4;

/// Denominator floor for the teacher-forcing inflation ratio.
pub const INFLATION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioCell {
    pub train_input: InputKind,
    pub eval_input: InputKind,
    pub mode: DecodingMode,
}

impl ScenarioCell {
    /// The eight cells in report order: free-running block first.
    pub fn all() -> Vec<ScenarioCell> {
        let mut cells = Vec::with_capacity(8);
        for mode in DecodingMode::ALL {
            for train_input in InputKind::ALL {
                for eval_input in InputKind::ALL {
                    cells.push(ScenarioCell {
                        train_input,
                        eval_input,
                        mode,
                    });
                }
            }
        }
        cells
    }

    /// `<train>_<eval>_<mode>`, used for artifact file names.
    pub fn key(&self) -> String {
        format!("{}_{}_{}", self.train_input, self.eval_input, self.mode)
    }
}

impl fmt::Display for ScenarioCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "train={} eval={} mode={}",
            self.train_input, self.eval_input, self.mode
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub reference: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: ScenarioCell,
    pub metrics: MetricsReport,
    /// First K test sentences.
    pub samples: Vec<Sample>,
    /// Every test sentence, in test-split order.
    pub outputs: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Largest |delta| in BLEU-1 points still counted as signal/noise parity.
    pub parity: f64,
    /// Free-running BLEU-1 `delta_train` above which the model is judged to
    /// learn from its input.
    pub learning: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            parity: 3.0,
            learning: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub thresholds: Thresholds,
    /// Sample sentences kept per cell.
    pub samples: usize,
    pub min_freq: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            thresholds: Thresholds::default(),
            samples: 3,
            min_freq: 1,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.decode.validate()?;
        if self.decode.max_len > self.model.max_len {
            return Err(Error::Config(format!(
                "decode max_len {} exceeds model max_len {}",
                self.decode.max_len, self.model.max_len
            )));
        }
        if self.min_freq == 0 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        Ok(())
    }

    /// Model config with data-dependent sizes filled in.
    pub fn resolved_model(&self, feature_dim: usize, vocab: &Vocabulary) -> ModelConfig {
        ModelConfig {
            feature_dim,
            vocab_size: vocab.len(),
            ..self.model
        }
    }

    pub fn eval_noise_seed(&self) -> u64 {
        derive_seed(self.train.seed, STREAM_EVAL_NOISE)
    }

    /// Every seed the run derives, by role.
    pub fn resolved_seeds(&self) -> Vec<(&'static str, u64)> {
        use crate::model::training as t;
        vec![
            ("init", self.train.seed),
            ("train_noise", derive_seed(self.train.seed, t::STREAM_TRAIN_NOISE)),
            ("dev_noise", derive_seed(self.train.seed, t::STREAM_DEV_NOISE)),
            ("shuffle", derive_seed(self.train.seed, t::STREAM_SHUFFLE)),
            ("eval_noise", self.eval_noise_seed()),
        ]
    }

    /// Short stable hash of the config, used in run ids.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `<UTC timestamp>-<config hash>`.
pub fn make_run_id(config: &HarnessConfig) -> String {
    format!(
        "{}-{}",
        chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ"),
        config.fingerprint()
    )
}

/// Trained models keyed by training input, so both decoding modes and
/// both evaluation inputs share one training.
#[derive(Debug, Default)]
pub struct ModelCache {
    models: HashMap<InputKind, TrainedModel>,
    trainings: usize,
}

impl ModelCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of trainings performed through this cache.
    pub fn trainings(&self) -> usize {
        self.trainings
    }

    pub fn get(&self, kind: InputKind) -> Option<&TrainedModel> {
        self.models.get(&kind)
    }

    pub fn get_or_train(
        &mut self,
        kind: InputKind,
        split: &SplitDataset,
        vocab: &Vocabulary,
        config: &HarnessConfig,
    ) -> Result<&TrainedModel> {
        if !self.models.contains_key(&kind) {
            let mc = config.resolved_model(split.train.feature_dim, vocab);
            let model = train(&mc, &config.train, split, vocab, kind).map_err(|source| Error::Cell {
                cell: format!("training on {kind}"),
                source: Box::new(source),
            })?;
            self.trainings += 1;
            self.models.insert(kind, model);
        }
        Ok(&self.models[&kind])
    }
}

/// Test features for an evaluation input kind.
pub fn eval_corpus(split: &SplitDataset, kind: InputKind, config: &HarnessConfig) -> Corpus {
    match kind {
        InputKind::Signal => split.test.clone(),
        InputKind::Noise => make_noise_like(&split.test, config.eval_noise_seed()),
    }
}

fn evaluate_cell(
    model: &TrainedModel,
    test: &Corpus,
    cell: ScenarioCell,
    vocab: &Vocabulary,
    config: &HarnessConfig,
) -> Result<CellResult> {
    let run = || -> Result<CellResult> {
        let mut outputs = Vec::with_capacity(test.len());
        for pair in &test.pairs {
            let ids = match cell.mode {
                DecodingMode::TeacherForced => {
                    teacher_forced_generate(&model.params, &pair.words, &vocab.encode(&pair.text))?
                }
                DecodingMode::FreeRunning => {
                    beam_search_generate(&model.params, &pair.words, &config.decode)?
                }
            };
            outputs.push(Sample {
                reference: pair.text.clone(),
                hypothesis: vocab.decode(&ids)?,
            });
        }
        let hyps: Vec<&str> = outputs.iter().map(|s| s.hypothesis.as_str()).collect();
        let refs: Vec<&str> = outputs.iter().map(|s| s.reference.as_str()).collect();
        let metrics = score_cell(&hyps, &refs)?;
        Ok(CellResult {
            cell,
            metrics,
            samples: outputs.iter().take(config.samples).cloned().collect(),
            outputs,
        })
    };
    run().map_err(|source| Error::Cell {
        cell: cell.to_string(),
        source: Box::new(source),
    })
}

/// Runs one cell, training its model on a cache miss.
pub fn run_cell(
    split: &SplitDataset,
    cell: ScenarioCell,
    vocab: &Vocabulary,
    config: &HarnessConfig,
    cache: &mut ModelCache,
) -> Result<CellResult> {
    config.validate()?;
    let test = eval_corpus(split, cell.eval_input, config);
    let model = cache.get_or_train(cell.train_input, split, vocab, config)?;
    evaluate_cell(model, &test, cell, vocab, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricGap {
    pub mode: DecodingMode,
    pub metric: Metric,
    /// (train signal, eval signal) minus (train signal, eval noise).
    pub delta_eval: f64,
    /// (train signal, eval signal) minus (train noise, eval signal).
    pub delta_train: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub gaps: Vec<MetricGap>,
    /// Teacher-forced over free-running BLEU-1, both in the signal/signal cell.
    pub tf_inflation: f64,
    /// Every BLEU-1 delta, in both modes, within the parity threshold.
    pub parity: bool,
    /// Free-running BLEU-1 `delta_train` exceeds the learning threshold.
    pub learns_from_input: bool,
}

impl GapSummary {
    pub fn get(&self, mode: DecodingMode, metric: Metric) -> Option<&MetricGap> {
        self.gaps
            .iter()
            .find(|g| g.mode == mode && g.metric == metric)
    }
}

fn find_cell(cells: &[CellResult], train_input: InputKind, eval_input: InputKind, mode: DecodingMode) -> Result<&CellResult> {
    cells
        .iter()
        .find(|c| c.cell == ScenarioCell { train_input, eval_input, mode })
        .ok_or_else(|| Error::InvalidArgument(format!("missing cell {train_input}/{eval_input}/{mode}")))
}

/// Recomputes the gap summary from stored cell results.
pub fn compute_gap(cells: &[CellResult], thresholds: &Thresholds) -> Result<GapSummary> {
    use InputKind::{Noise, Signal};
    let mut gaps = Vec::new();
    for mode in DecodingMode::ALL {
        let ss = find_cell(cells, Signal, Signal, mode)?;
        let sn = find_cell(cells, Signal, Noise, mode)?;
        let ns = find_cell(cells, Noise, Signal, mode)?;
        for metric in Metric::ALL {
            gaps.push(MetricGap {
                mode,
                metric,
                delta_eval: ss.metrics.get(metric) - sn.metrics.get(metric),
                delta_train: ss.metrics.get(metric) - ns.metrics.get(metric),
            });
        }
    }
    let tf = find_cell(cells, Signal, Signal, DecodingMode::TeacherForced)?.metrics.bleu[0];
    let fr = find_cell(cells, Signal, Signal, DecodingMode::FreeRunning)?.metrics.bleu[0];
    let parity = gaps
        .iter()
        .filter(|g| g.metric == Metric::Bleu1)
        .all(|g| g.delta_eval.abs() < thresholds.parity && g.delta_train.abs() < thresholds.parity);
    let learns_from_input = gaps
        .iter()
        .find(|g| g.mode == DecodingMode::FreeRunning && g.metric == Metric::Bleu1)
        .is_some_and(|g| g.delta_train > thresholds.learning);
    Ok(GapSummary {
        gaps,
        tf_inflation: tf / fr.max(INFLATION_EPS),
        parity,
        learns_from_input,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub run_id: String,
    pub config: HarnessConfig,
    pub vocab_size: usize,
    pub test_sentences: usize,
    /// Trainings performed for this report; always 2 for a full run.
    pub trainings: usize,
    /// Best-dev-loss epoch of the (signal, noise) models.
    pub best_epochs: [usize; 2],
    pub cells: Vec<CellResult>,
    pub gap: GapSummary,
}

impl MatrixReport {
    pub fn cell(&self, train_input: InputKind, eval_input: InputKind, mode: DecodingMode) -> Option<&CellResult> {
        find_cell(&self.cells, train_input, eval_input, mode).ok()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Output directory of one run: `<root>/<run_id>/`.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates the directory and writes the config snapshot.
    pub fn create(root: impl AsRef<Path>, run_id: &str, snapshot: &impl Serialize) -> Result<Self> {
        let path = root.as_ref().join(run_id);
        fs::create_dir_all(path.join("cells")).map_err(|e| Error::io(&path, e))?;
        let dir = RunDir { path };
        dir.write("config.json", &serde_json::to_string_pretty(snapshot)?)?;
        Ok(dir)
    }

    pub fn open(path: impl Into<PathBuf>) -> Self {
        RunDir { path: path.into() }
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let file = self.path.join(name);
        fs::write(&file, contents).map_err(|e| Error::io(&file, e))
    }

    pub fn cell_path(&self, cell: &ScenarioCell) -> PathBuf {
        self.path.join("cells").join(format!("{}.jsonl", cell.key()))
    }

    fn write_cell(&self, result: &CellResult) -> Result<()> {
        let mut text = String::new();
        for s in &result.outputs {
            text.push_str(&serde_json::to_string(s)?);
            text.push('\n');
        }
        let file = self.cell_path(&result.cell);
        fs::write(&file, text).map_err(|e| Error::io(&file, e))
    }

    fn write_model(&self, model: &TrainedModel, vocab: &Vocabulary) -> Result<()> {
        let stem = format!("model_{}", model.train_input);
        checkpoint::save(self.path.join(format!("{stem}.bin")), &model.params, &vocab.hash())?;
        #[derive(Serialize)]
        struct Sidecar<'a> {
            initial_train_loss: f64,
            initial_dev_loss: f64,
            best_epoch: usize,
            history: &'a [crate::model::EpochStats],
        }
        let sidecar = Sidecar {
            initial_train_loss: model.initial_train_loss,
            initial_dev_loss: model.initial_dev_loss,
            best_epoch: model.best_epoch,
            history: &model.history,
        };
        self.write(&format!("{stem}.history.json"), &serde_json::to_string_pretty(&sidecar)?)
    }

    pub fn report_path(&self, format: ReportFormat) -> PathBuf {
        self.path.join(match format {
            ReportFormat::Markdown => "report.md",
            ReportFormat::Csv => "report.csv",
        })
    }

    fn write_report(&self, report: &MatrixReport) -> Result<()> {
        self.write("report.json", &serde_json::to_string_pretty(report)?)?;
        for format in [ReportFormat::Markdown, ReportFormat::Csv] {
            let file = self.report_path(format);
            fs::write(&file, render_report(report, format)).map_err(|e| Error::io(&file, e))?;
        }
        Ok(())
    }
}

/// Trains both models, evaluates the eight cells and assembles the report.
///
/// Trainings run one after the other; the evaluation cells run in
/// parallel. With `out`, models, per-cell outputs and reports are written as
/// they become available, so a failing cell leaves earlier artifacts behind.
pub fn run_matrix(
    split: &SplitDataset,
    config: &HarnessConfig,
    run_id: &str,
    out: Option<&RunDir>,
) -> Result<MatrixReport> {
    config.validate()?;
    if split.test.is_empty() {
        return Err(Error::InvalidArgument("test split is empty".into()));
    }
    let vocab = Vocabulary::build(&split.train, config.min_freq)?;
    if let Some(dir) = out {
        vocab.save(dir.path.join("vocab.json"))?;
    }

    let mut cache = ModelCache::new();
    for kind in InputKind::ALL {
        let model = cache.get_or_train(kind, split, &vocab, config)?;
        if let Some(dir) = out {
            dir.write_model(model, &vocab)?;
        }
    }

    let tests: HashMap<InputKind, Corpus> = InputKind::ALL
        .into_iter()
        .map(|k| (k, eval_corpus(split, k, config)))
        .collect();
    let cells = ScenarioCell::all()
        .into_par_iter()
        .map(|cell| {
            let model = cache.get(cell.train_input).expect("both models trained");
            let result = evaluate_cell(model, &tests[&cell.eval_input], cell, &vocab, config)?;
            if let Some(dir) = out {
                dir.write_cell(&result)?;
            }
            Ok(result)
        })
        .collect::<Result<Vec<_>>>()?;

    let gap = compute_gap(&cells, &config.thresholds)?;
    let best_epochs = [
        cache.get(InputKind::Signal).map_or(0, |m| m.best_epoch),
        cache.get(InputKind::Noise).map_or(0, |m| m.best_epoch),
    ];
    let report = MatrixReport {
        run_id: run_id.to_string(),
        config: *config,
        vocab_size: vocab.len(),
        test_sentences: split.test.len(),
        trainings: cache.trainings(),
        best_epochs,
        cells,
        gap,
    };
    if let Some(dir) = out {
        dir.write_report(&report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixStat {
    pub cell: ScenarioCell,
    /// Most common first-two-word opening; ties go to the smaller string.
    pub prefix: String,
    pub count: usize,
    pub total: usize,
    pub frequency: f64,
}

/// Most common two-word opening of the outputs of one cell.
pub fn modal_prefix(hypotheses: &[&str]) -> (String, usize) {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for h in hypotheses {
        let prefix = h.split_whitespace().take(2).collect::<Vec<_>>().join(" ");
        *counts.entry(prefix).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .unwrap_or_default()
}

/// Modal opening and its frequency for each free-running cell.
pub fn mode_collapse_scan(report: &MatrixReport) -> Vec<PrefixStat> {
    report
        .cells
        .iter()
        .filter(|c| c.cell.mode == DecodingMode::FreeRunning)
        .map(|c| {
            let hyps: Vec<&str> = c.outputs.iter().map(|s| s.hypothesis.as_str()).collect();
            let (prefix, count) = modal_prefix(&hyps);
            let total = hyps.len();
            PrefixStat {
                cell: c.cell,
                prefix,
                count,
                total,
                frequency: if total == 0 { 0.0 } else { count as f64 / total as f64 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidArgument(format!("unknown report format {s:?}"))),
        }
    }
}

pub const CSV_HEADER: &str =
    "train_input,eval_input,mode,bleu1,bleu2,bleu3,bleu4,rouge1_p,rouge1_r,rouge1_f,wer";

/// One CSV row (no trailing newline) for a metrics report.
pub fn csv_row(prefix: &[&str], m: &MetricsReport) -> String {
    let mut fields: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    fields.extend(Metric::ALL.iter().map(|&k| format!("{:.2}", m.get(k))));
    fields.join(",")
}

fn mode_label(mode: DecodingMode) -> &'static str {
    match mode {
        DecodingMode::FreeRunning => "free-running",
        DecodingMode::TeacherForced => "teacher-forced",
    }
}

fn markdown_cell(text: &str) -> String {
    if text.is_empty() {
        "(empty)".to_string()
    } else {
        text.replace('|', "\\|")
    }
}

pub fn render_report(report: &MatrixReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for c in &report.cells {
                let prefix = [c.cell.train_input.as_str(), c.cell.eval_input.as_str(), c.cell.mode.as_str()];
                out.push_str(&csv_row(&prefix, &c.metrics));
                out.push('\n');
            }
            out
        }
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_markdown(report: &MatrixReport) -> String {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "# Signal vs noise evaluation\n");
    let _ = writeln!(
        w,
        "Run `{}`: {} test sentences, vocabulary {}, best epochs signal={} noise={}.\n",
        report.run_id, report.test_sentences, report.vocab_size, report.best_epochs[0], report.best_epochs[1]
    );

    let header: Vec<&str> = Metric::ALL.iter().map(|m| m.label()).collect();
    let _ = writeln!(w, "| Decoding | Training | Evaluation | {} |", header.join(" | "));
    let _ = writeln!(w, "|---|---|---|{}", "---:|".repeat(header.len()));
    for c in &report.cells {
        let values: Vec<String> = Metric::ALL
            .iter()
            .map(|&m| format!("{:.2}", c.metrics.get(m)))
            .collect();
        let _ = writeln!(
            w,
            "| {} | {} | {} | {} |",
            mode_label(c.cell.mode),
            c.cell.train_input,
            c.cell.eval_input,
            values.join(" | ")
        );
    }

    let _ = writeln!(w, "\n## Signal vs noise gap\n");
    let _ = writeln!(w, "| Decoding | Metric | Δ eval (signal − noise input) | Δ train (signal − noise training) |");
    let _ = writeln!(w, "|---|---|---:|---:|");
    for g in &report.gap.gaps {
        let _ = writeln!(
            w,
            "| {} | {} | {:.2} | {:.2} |",
            mode_label(g.mode),
            g.metric.label(),
            g.delta_eval,
            g.delta_train
        );
    }
    let _ = writeln!(
        w,
        "\nTeacher-forcing inflation (BLEU-1, signal/signal): {:.2}x",
        report.gap.tf_inflation
    );
    let _ = writeln!(
        w,
        "Signal/noise parity within {:.2} BLEU-1: {}",
        report.config.thresholds.parity,
        if report.gap.parity { "yes" } else { "no" }
    );
    let _ = writeln!(
        w,
        "Model appears to learn from input (free-running Δ train BLEU-1 > {:.2}): {}",
        report.config.thresholds.learning,
        if report.gap.learns_from_input { "yes" } else { "no" }
    );

    let _ = writeln!(w, "\n## Output openings (free-running)\n");
    let _ = writeln!(w, "| Training | Evaluation | Most common opening | Share |");
    let _ = writeln!(w, "|---|---|---|---:|");
    for s in mode_collapse_scan(report) {
        let _ = writeln!(
            w,
            "| {} | {} | {} | {}/{} ({:.2}) |",
            s.cell.train_input,
            s.cell.eval_input,
            markdown_cell(&s.prefix),
            s.count,
            s.total,
            s.frequency
        );
    }

    let _ = writeln!(w, "\n## Decoding samples");
    let n_samples = report.cells.iter().map(|c| c.samples.len()).max().unwrap_or(0);
    for i in 0..n_samples {
        let reference = report
            .cells
            .iter()
            .find_map(|c| c.samples.get(i))
            .map(|s| s.reference.as_str())
            .unwrap_or_default();
        let _ = writeln!(w, "\n### Sample {}\n", i + 1);
        let _ = writeln!(w, "Ground truth: {}\n", markdown_cell(reference));
        let _ = writeln!(w, "| Decoding | Training | Evaluation | Output |");
        let _ = writeln!(w, "|---|---|---|---|");
        for c in &report.cells {
            if let Some(s) = c.samples.get(i) {
                let _ = writeln!(
                    w,
                    "| {} | {} | {} | {} |",
                    mode_label(c.cell.mode),
                    c.cell.train_input,
                    c.cell.eval_input,
                    markdown_cell(&s.hypothesis)
                );
            }
        }
    }
    out
}
