//! The subcommands, written against a generic output sink so tests can
//! capture what the binary prints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use half_core::corpus::{self, prepare_split, split_from_parts, RawRecord, SplitReport, PAD};
use half_core::gradcheck::{GradCheckConfig, GradCheckReport};
use half_core::model::{self, HyperParams, ModelKind};
use half_core::synthetic::{make_synthetic, SyntheticConfig};
use half_core::train::{self, fit, Clock, EpochReport, Example, Recommender, TrainSummary};
use half_core::verify::{check_half_gradients, small_hyperparams};
use half_core::{Fault, FaultRule};
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::records::{read_records, write_records};

/// Tokens of each review shown by `predict --explain`.
pub const SNIPPET_TOKENS: usize = 8;

fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::Other(format!("cannot write output: {e}")))
}

pub struct SplitArgs {
    pub input: PathBuf,
    pub ratios: [f64; 3],
    pub seed: u64,
    pub out: PathBuf,
}

pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "val.jsonl", "test.jsonl"];
pub const SPLIT_REPORT: &str = "split_report.txt";

pub fn report_text(r: &SplitReport) -> String {
    let mut s = format!(
        "train {}\nvalidation {}\ntest {}\ndropped_validation {}\ndropped_test {}\n",
        r.train, r.validation, r.test, r.dropped_validation, r.dropped_test
    );
    for w in &r.warnings {
        s.push_str(&format!("warning {w}\n"));
    }
    s
}

pub fn cmd_split(args: &SplitArgs, out: &mut dyn Write) -> Result<SplitReport, CliError> {
    let records = read_records(&args.input)?;
    let split = corpus::split_dataset(records, args.ratios, args.seed)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io("cannot create", &args.out, e))?;
    for (name, part) in SPLIT_FILES.iter().zip([&split.train, &split.validation, &split.test]) {
        write_records(&args.out.join(name), part)?;
    }
    let text = report_text(&split.report);
    let report_path = args.out.join(SPLIT_REPORT);
    fs::write(&report_path, &text).map_err(|e| CliError::io("cannot write", &report_path, e))?;
    for line in text.lines() {
        emit(out, format_args!("{line}"))?;
    }
    Ok(split.report)
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// One epoch-log line. Wall-clock time is left out so that logs of
/// identical runs are byte-identical.
#[derive(Serialize)]
struct LogLine {
    epoch: usize,
    train_mse: f64,
    validation_mse: Option<f64>,
}

pub fn epoch_log_line(r: &EpochReport) -> String {
    serde_json::to_string(&LogLine {
        epoch: r.epoch,
        train_mse: r.train_mse,
        validation_mse: r.validation_mse,
    })
    .expect("finite floats serialize")
}

pub fn default_epoch_log(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub summary: TrainSummary,
    pub validation_mse: Option<f64>,
    pub test_mse: Option<f64>,
}

fn optional_records(p: &Option<PathBuf>) -> Result<Vec<RawRecord>, CliError> {
    p.as_deref().map_or(Ok(Vec::new()), read_records)
}

fn ids_by_index(index: &std::collections::BTreeMap<String, usize>) -> Vec<String> {
    let mut ids = vec![String::new(); index.len()];
    for (id, &k) in index {
        ids[k] = id.clone();
    }
    ids
}

pub fn cmd_train(config: &RunConfig, out_path: &Path, out: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    let train_path = config
        .train_data
        .as_deref()
        .ok_or_else(|| CliError::Config(String::from("train_data is required")))?;
    config.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    config.hp.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let train_records = read_records(train_path)?;
    let valid_records = optional_records(&config.valid_data)?;
    let test_records = optional_records(&config.test_data)?;
    if train_records.is_empty() {
        return Err(CliError::Data(format!("{} has no records", train_path.display())));
    }

    let split = split_from_parts(train_records, valid_records, test_records);
    for w in &split.report.warnings {
        if !w.starts_with("validation") && !w.starts_with("test") {
            eprintln!("warning: {w}");
        }
    }
    if split.report.dropped() > 0 {
        eprintln!(
            "warning: dropped {} evaluation record(s) with users or items absent from train",
            split.report.dropped()
        );
    }
    let hp = &config.hp;
    let corpus = prepare_split(split, hp.vocab_size, hp.review_len, hp.reviews_per_entity)?;

    let clock = WallClock(Instant::now());
    let mut log = String::new();
    let mut failed_write = None;
    let outcome = fit(&corpus, hp, &config.train, &clock, &mut |r| {
        log.push_str(&epoch_log_line(r));
        log.push('\n');
        let val = r.validation_mse.map_or(String::from("-"), |v| format!("{v:.6}"));
        if let Err(e) = writeln!(
            out,
            "epoch {} train_mse {:.6} val_mse {val} ({:.1}s)",
            r.epoch, r.train_mse, r.seconds
        ) {
            failed_write.get_or_insert(e);
        }
    })?;
    if let Some(e) = failed_write {
        return Err(CliError::Other(format!("cannot write output: {e}")));
    }

    let split = &corpus.split;
    let ckpt = Checkpoint {
        kind: config.train.model,
        params: outcome.params,
        user_ids: ids_by_index(&split.user_index),
        item_ids: ids_by_index(&split.item_index),
        vocab: corpus.vocab.clone(),
        user_bundles: corpus.user_bundles.clone(),
        item_bundles: corpus.item_bundles.clone(),
    };
    checkpoint::save(out_path, &ckpt)?;
    let log_path = config.epoch_log.clone().unwrap_or_else(|| default_epoch_log(out_path));
    fs::write(&log_path, log).map_err(|e| CliError::io("cannot write", &log_path, e))?;

    let rec = Recommender {
        kind: ckpt.kind,
        params: ckpt.params.clone(),
        user_bundles: &ckpt.user_bundles,
        item_bundles: &ckpt.item_bundles,
    };
    let resolve = |rs| train::resolve(rs, &split.user_index, &split.item_index);
    let validation = resolve(&split.validation)?;
    let test = resolve(&split.test)?;
    let validation_mse = if validation.is_empty() {
        None
    } else {
        Some(train::evaluate(&rec, &validation)?)
    };
    let test_mse = if test.is_empty() {
        None
    } else {
        Some(train::evaluate(&rec, &test)?)
    };
    emit(
        out,
        format_args!(
            "best epoch {} of {}",
            outcome.summary.best_epoch,
            outcome.summary.reports.len()
        ),
    )?;
    match validation_mse {
        Some(v) => emit(out, format_args!("validation MSE {v:.6}"))?,
        None => emit(out, format_args!("validation MSE - (no validation data)"))?,
    }
    if let Some(t) = test_mse {
        emit(out, format_args!("test MSE {t:.6}"))?;
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        summary: outcome.summary,
        validation_mse,
        test_mse,
    })
}

pub fn cmd_eval(checkpoint_path: &Path, data: &Path, out: &mut dyn Write) -> Result<f64, CliError> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let records = read_records(data)?;
    let mut examples = Vec::with_capacity(records.len());
    let mut unknown = 0;
    for r in &records {
        match (ckpt.user_index(&r.user_id), ckpt.item_index(&r.item_id)) {
            (Some(user), Some(item)) => examples.push(Example {
                user,
                item,
                rating: r.rating,
            }),
            _ => unknown += 1,
        }
    }
    if unknown > 0 {
        eprintln!("warning: skipped {unknown} record(s) with users or items unknown to the checkpoint");
    }
    if examples.is_empty() {
        return Err(CliError::Data(format!(
            "{} has no records with known users and items",
            data.display()
        )));
    }
    let rec = Recommender {
        kind: ckpt.kind,
        params: ckpt.params,
        user_bundles: &ckpt.user_bundles,
        item_bundles: &ckpt.item_bundles,
    };
    let mse = train::evaluate(&rec, &examples)?;
    emit(out, format_args!("{mse:.6}"))?;
    Ok(mse)
}

/// One review's β weight and opening words.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainedReview {
    pub slot: usize,
    pub weight: f64,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutcome {
    pub rating: f64,
    /// Real reviews ranked by descending weight; empty for LFM.
    pub user_reviews: Vec<ExplainedReview>,
    pub item_reviews: Vec<ExplainedReview>,
}

fn explain(ckpt: &Checkpoint, bundle: &corpus::ReviewBundle, beta: &[f64]) -> Vec<ExplainedReview> {
    let mut rows: Vec<ExplainedReview> = bundle
        .reviews
        .iter()
        .zip(&bundle.mask)
        .zip(beta)
        .enumerate()
        .filter(|(_, ((_, &real), _))| real)
        .map(|(slot, ((tokens, _), &weight))| ExplainedReview {
            slot,
            weight,
            snippet: tokens
                .iter()
                .take_while(|&&t| t != PAD)
                .take(SNIPPET_TOKENS)
                .map(|&t| ckpt.vocab.token(t).unwrap_or("<?>"))
                .collect::<Vec<_>>()
                .join(" "),
        })
        .collect();
    rows.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.slot.cmp(&b.slot)));
    rows
}

pub fn cmd_predict(
    checkpoint_path: &Path,
    user: &str,
    item: &str,
    with_explain: bool,
    out: &mut dyn Write,
) -> Result<PredictOutcome, CliError> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let u = ckpt.user_index(user).ok_or_else(|| CliError::UnknownEntity {
        kind: "user",
        id: user.to_string(),
    })?;
    let i = ckpt.item_index(item).ok_or_else(|| CliError::UnknownEntity {
        kind: "item",
        id: item.to_string(),
    })?;
    let (ub, ib) = (&ckpt.user_bundles[u], &ckpt.item_bundles[i]);
    let outcome = match ckpt.kind {
        ModelKind::Lfm => PredictOutcome {
            rating: model::lfm_predict(&ckpt.params, u, i)?,
            user_reviews: Vec::new(),
            item_reviews: Vec::new(),
        },
        ModelKind::Half => {
            let p = model::forward(&ckpt.params, u, i, ub, ib)?;
            PredictOutcome {
                rating: p.rating,
                user_reviews: explain(&ckpt, ub, &p.review_attn_user),
                item_reviews: explain(&ckpt, ib, &p.review_attn_item),
            }
        }
    };
    emit(out, format_args!("{:.6}", outcome.rating))?;
    if with_explain {
        if ckpt.kind == ModelKind::Lfm {
            emit(out, format_args!("(lfm checkpoint: no review attention to explain)"))?;
        }
        for (who, id, rows) in [
            ("user", user, &outcome.user_reviews),
            ("item", item, &outcome.item_reviews),
        ] {
            if ckpt.kind == ModelKind::Half {
                emit(out, format_args!("{who} {id} reviews by weight:"))?;
            }
            for r in rows {
                emit(out, format_args!("  {:.6}  {}", r.weight, r.snippet))?;
            }
        }
    }
    Ok(outcome)
}

pub fn parse_fault(name: &str) -> Option<FaultRule> {
    match name {
        "conv" => Some(FaultRule::Conv1dFilters),
        "matmul" => Some(FaultRule::MatMulLeft),
        "hadamard" => Some(FaultRule::Hadamard),
        "gather" => Some(FaultRule::Gather),
        _ => None,
    }
}

/// Offset added to a corrupted gradient rule; far above the tolerance.
pub const FAULT_OFFSET: f64 = 1e-2;

pub fn cmd_gradcheck(
    hp: Option<HyperParams>,
    seed: u64,
    corrupt: Option<FaultRule>,
    out: &mut dyn Write,
) -> Result<GradCheckReport, CliError> {
    let hp = hp.unwrap_or_else(small_hyperparams);
    let cfg = GradCheckConfig {
        seed,
        fault: corrupt.map(|rule| Fault {
            rule,
            offset: FAULT_OFFSET,
        }),
        ..GradCheckConfig::default()
    };
    let (report, used) = check_half_gradients(&hp, seed, &cfg)?;
    if used != seed {
        emit(out, format_args!("seed {seed} put a ReLU input on its kink; checked seed {used}"))?;
    }
    for t in &report.tensors {
        emit(
            out,
            format_args!(
                "{:<10} max_rel_error {:.3e} checked {:>5} {}",
                t.name,
                t.max_rel_error,
                t.checked,
                if t.passed { "ok" } else { "FAIL" }
            ),
        )?;
    }
    if report.passed() {
        emit(out, format_args!("PASS: all tensors below {:e}", report.tol))?;
    } else {
        let names: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
        emit(out, format_args!("FAIL: {}", names.join(", ")))?;
    }
    Ok(report)
}

pub fn cmd_make_synthetic(cfg: &SyntheticConfig, path: &Path, out: &mut dyn Write) -> Result<usize, CliError> {
    let d = make_synthetic(cfg);
    write_records(path, &d.records)?;
    emit(out, format_args!("wrote {} records to {}", d.records.len(), path.display()))?;
    Ok(d.records.len())
}
