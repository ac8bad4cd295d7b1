//! Command-line entry point.
//!
//! Each subcommand owns a flat key table. Every key is also a `--flag`
//! (underscores become dashes), `--config FILE` supplies `key = value` lines,
//! and flags win over the file. Exit codes: 0 success, 1 threshold failure or
//! divergence, 2 usage or I/O error.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{value_parser, Arg, ArgMatches, Command};
use ndarray::{concatenate, s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::{align_features, align_raw, evaluate_alignment, tempo_scale, AlignConfig, GroundTruthMap};
use crate::basis::{polar_encode, ComplexBasis};
use crate::classify::{class_distance_ratio, cross_validate_pools, pca_2d, stratified_pools, ClassifierSpec, CvConfig, CvReport, LogRegConfig};
use crate::config::RunConfig;
use crate::data::{
    load_feature_matrix, load_idx, ngram_slice, synth_cqt_like_events, FeatureMatrix, PlantedRepeat, StandardizationStats,
    SynthOptions, DEFAULT_HOP_SECONDS,
};
use crate::discovery::{discover, evaluate_overlap, sections_csv, DiscoveryConfig, RepeatedSection};
use crate::error::{Error, Result};
use crate::gradcheck::{run_grad_check, GradCheckConfig};
use crate::grad::LossPower;
use crate::model::CaeModel;
use crate::optim::OptimizerKind;
use crate::render::{heatmap_svg, line_svg, matrix_to_pgm, scatter_svg, PointColour};
use crate::train::{train_observed, DatasetPairs, NormMode, TrainConfig};
use crate::transforms::{pitch_shift, TransformSpec};

type Keys = &'static [(&'static str, &'static str, &'static str)];

struct Sub {
    name: &'static str,
    about: &'static str,
    keys: Keys,
    run: fn(&RunConfig, &Path) -> Result<bool>,
}

const COMMON: Keys = &[
    ("out", "", "output directory, default runs/<subcommand>"),
    ("seed", "0", "random seed"),
    ("threads", "1", "worker threads; every pipeline runs on one thread, so any value gives identical output"),
];

const SAMPLE_KEYS: Keys = &[
    ("input", "", "feature matrix (FTM1 or CSV) or IDX image file"),
    ("labels", "", "IDX label file, needed with input_format = idx"),
    ("input_format", "features", "features (n-grams of a frame matrix), samples (one row per sample) or idx"),
    ("limit", "0", "use only N samples, 0 for all; labelled sets keep a per-class share"),
    ("hop_frames", "1", "frames between consecutive n-grams"),
];

const TRAIN_KEYS: Keys = &[
    ("ngram", "8", "n-gram length in frames"),
    ("transform", "auto", "circular_shift_1d, pitch_shift, time_shift, compose, rotate_2d or auto"),
    ("shift_min", "-12", "smallest shift for shift transforms"),
    ("shift_max", "12", "largest shift for shift transforms"),
    ("pitch_min", "-12", "compose: smallest pitch shift"),
    ("pitch_max", "12", "compose: largest pitch shift"),
    ("time_min", "-2", "compose: smallest time shift"),
    ("time_max", "2", "compose: largest time shift"),
    ("angle_min", "0", "rotate_2d: smallest angle in radians"),
    ("angle_max", "6.283185307179586", "rotate_2d: angle upper bound in radians (exclusive)"),
    ("pair_scheme", "double", "double or anchored"),
    ("standardize", "auto", "column, global, none or auto"),
    ("n_basis", "256", "number of complex basis rows"),
    ("p_norm", "2", "reconstruction error power, 1 or 2"),
    ("learning_rate", "0.001", "step size"),
    ("batch_size", "1000", "pairs per step"),
    ("epochs", "500", "training epochs"),
    ("transforms_per_epoch", "100000", "pairs drawn per epoch"),
    ("dropout_p", "0.5", "input dropout probability"),
    ("norm_mode", "reset", "penalty, reset or none"),
    ("lambda_mean", "0.01", "penalty weight on the mean row norm"),
    ("lambda_dev", "0.01", "penalty weight on the row norm variance"),
    ("target_norm", "0.4", "row norm after each reset"),
    ("optimizer", "adam", "adam or sgd"),
];

const PROJECT_KEYS: Keys = &[
    ("model", "", "trained model file"),
    ("ngram", "0", "n-gram length in frames, 0 to infer from the model"),
];

const DISCOVER_KEYS: Keys = &[
    ("input", "", "feature matrix (FTM1 or CSV)"),
    ("model", "dft", "trained model file, or dft for the analytic transposition-invariant basis"),
    ("ngram", "32", "n-gram length in frames"),
    ("hop_frames", "1", "frames between consecutive n-grams"),
    ("smoothing", "10", "diagonal smoothing kernel size"),
    ("threshold", "0.01", "similarity threshold after normalization"),
    ("min_length", "10", "shortest reported section, in n-grams"),
    ("max_gap", "2", "largest gap bridged inside one diagonal run"),
    ("planted", "", "optional planted-section CSV from synth, scored by interval overlap"),
    ("iou", "0.8", "IoU needed for a found section to match a planted one"),
];

const ALIGN_KEYS: Keys = &[
    ("perf", "", "first feature matrix"),
    ("score", "", "second feature matrix"),
    ("model", "dft", "trained model file, dft for the analytic basis, or raw to align unprojected n-grams"),
    ("radius", "50", "FastDTW radius"),
    ("tempo_factor", "1", "resample the score so that it plays this many times faster"),
    ("transpose", "0", "shift the score by this many bins"),
    ("gt", "", "optional ground-truth CSV of (time_a, time_b) seconds against the unmodified score"),
    ("ngram", "8", "n-gram length in frames"),
    ("hop_frames", "1", "frames between consecutive n-grams"),
    ("distance", "cosine", "cosine or euclidean"),
];

const CLASSIFY_KEYS: Keys = &[
    ("images", "", "IDX image file"),
    ("labels", "", "IDX label file"),
    ("model", "", "trained model file"),
    ("train_pool", "3000", "size of the class-stratified training pool"),
    ("test_pool", "2000", "size of the disjoint class-stratified test pool, 0 for all remaining images"),
    ("rotate", "true", "rotate every image by a random angle before classification"),
    ("train_size", "1000", "training samples per fold"),
    ("test_size", "2000", "test samples per fold"),
    ("folds", "5", "cross-validation folds"),
    ("l2", "0.01", "logistic regression weight decay"),
    ("logreg_epochs", "1000", "logistic regression gradient steps"),
    ("logreg_lr", "0.5", "logistic regression step size"),
    ("knn", "1,5", "comma-separated k values for k-NN on pixels"),
    ("pca_samples", "1000", "test images in the PCA plots"),
];

const CHECK_GRAD_KEYS: Keys = &[
    ("n_input", "12", "input dimension"),
    ("n_basis", "8", "basis rows"),
    ("batch", "4", "pairs per instance"),
    ("instances", "20", "random instances"),
    ("p_norm", "2", "reconstruction error power, 1 or 2"),
    ("step", "1e-5", "central difference step"),
    ("rel_floor", "1e-6", "denominator floor of the relative error"),
    ("tolerance", "1e-4", "largest accepted relative error"),
    ("residual_margin", "0.01", "p = 1: skip instances with a residual this close to zero"),
    ("flip_sign", "false", "negate the analytic gradient (checker self-test)"),
];

const SYNTH_KEYS: Keys = &[
    ("frames", "400", "frames"),
    ("bins", "84", "frequency bins"),
    ("events", "200", "note events"),
    ("bins_per_octave", "12", "bins per octave"),
    ("partials", "3", "harmonics per note"),
    ("margin_bins", "0", "bins kept free at both edges"),
    ("min_duration", "3", "shortest note in frames"),
    ("max_duration", "12", "longest note in frames"),
    ("noise_floor", "0", "uniform noise amplitude"),
    ("hop_seconds", "0.08997732426303855", "seconds per frame"),
    ("plant_len", "0", "length of a planted repetition, 0 for none"),
    ("plant_src", "0", "first frame of the planted source"),
    ("plant_dst", "0", "first frame of the planted copy"),
    ("plant_shift", "0", "bin shift of the planted copy"),
];

fn subcommands() -> Vec<Sub> {
    vec![
        Sub { name: "train", about: "Train a complex autoencoder on transformation pairs", keys: &[], run: cmd_train },
        Sub { name: "project", about: "Write magnitudes and phases of inputs under a trained model", keys: PROJECT_KEYS, run: cmd_project },
        Sub { name: "discover", about: "Find repeated sections in a feature matrix", keys: DISCOVER_KEYS, run: cmd_discover },
        Sub { name: "align", about: "Align two feature matrices with FastDTW", keys: ALIGN_KEYS, run: cmd_align },
        Sub { name: "classify", about: "Cross-validate classifiers on rotated digits", keys: CLASSIFY_KEYS, run: cmd_classify },
        Sub { name: "check-grad", about: "Compare analytic and finite-difference gradients", keys: CHECK_GRAD_KEYS, run: cmd_check_grad },
        Sub { name: "synth", about: "Write a synthetic constant-Q-like feature matrix", keys: SYNTH_KEYS, run: cmd_synth },
    ]
}

fn all_keys(sub: &Sub) -> Vec<(&'static str, &'static str, &'static str)> {
    let extra: &[Keys] = match sub.name {
        "train" => &[SAMPLE_KEYS, TRAIN_KEYS],
        "project" => &[SAMPLE_KEYS],
        _ => &[],
    };
    extra.iter().copied().chain([sub.keys, COMMON]).flat_map(|k| k.iter().copied()).collect()
}

pub fn command() -> Command {
    let mut root = Command::new("cae")
        .about("Complex autoencoder toolkit: transformation-invariant features, repeated sections, alignment, classification")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sub in subcommands() {
        let mut c = Command::new(sub.name).about(sub.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("key = value settings, overridden by flags"),
        );
        for (key, default, help) in all_keys(&sub) {
            let help = if default.is_empty() { help.to_string() } else { format!("{help} [default: {default}]") };
            c = c.arg(Arg::new(key).long(key.replace('_', "-")).value_name("VALUE").allow_negative_numbers(true).help(help));
        }
        root = root.subcommand(c);
    }
    root
}

/// Parses `args` (program name first), runs one subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let Some((name, sub_matches)) = matches.subcommand() else {
        return 2;
    };
    let sub = subcommands().into_iter().find(|s| s.name == name).expect("clap only accepts known subcommands");
    let result = resolve(&sub, sub_matches).and_then(|(cfg, out)| (sub.run)(&cfg, &out));
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => 1,
                _ => 2,
            }
        }
    }
}

fn resolve(sub: &Sub, m: &ArgMatches) -> Result<(RunConfig, PathBuf)> {
    let keys = all_keys(sub);
    let table: Vec<(&str, &str)> = keys.iter().map(|(k, d, _)| (*k, *d)).collect();
    let mut cfg = RunConfig::with_defaults(&table);
    cfg.set("out", format!("runs/{}", sub.name))?;
    if let Some(path) = m.get_one::<PathBuf>("config") {
        cfg.apply_file(path)?;
    }
    for (key, _, _) in &keys {
        if m.value_source(key) == Some(ValueSource::CommandLine) {
            if let Some(v) = m.get_one::<String>(key) {
                cfg.set(key, v.clone())?;
            }
        }
    }
    if cfg.get::<usize>("threads")? == 0 {
        return Err(Error::Parameter("threads must be at least 1".into()));
    }
    let out = PathBuf::from(cfg.require::<String>("out")?);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    cfg.write_snapshot(&out)?;
    Ok((cfg, out))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

struct Samples {
    x: Array2<f64>,
    grid: (usize, usize),
    labels: Option<Vec<u8>>,
    hop_seconds: f64,
}

/// `model_inputs` lets an `ngram` of 0 be inferred from a model.
fn load_samples(cfg: &RunConfig, model_inputs: Option<usize>) -> Result<Samples> {
    let input: PathBuf = cfg.require("input")?;
    let mut s = match cfg.raw("input_format")? {
        "features" => {
            let fm = load_feature_matrix(&input)?;
            let hop_frames: usize = cfg.get("hop_frames")?;
            let mut ngram: usize = cfg.get("ngram")?;
            if ngram == 0 {
                let n = model_inputs.ok_or_else(|| Error::Parameter("ngram must be positive".into()))?;
                if n % fm.bins() != 0 {
                    return Err(Error::Validation(format!(
                        "model expects {n} inputs, which is not a whole number of {}-bin frames",
                        fm.bins()
                    )));
                }
                ngram = n / fm.bins();
            }
            Samples {
                x: ngram_slice(fm.values.view(), ngram, hop_frames)?,
                grid: (ngram, fm.bins()),
                labels: None,
                hop_seconds: fm.frame_hop_seconds * hop_frames as f64,
            }
        }
        "samples" => {
            let fm = load_feature_matrix(&input)?;
            let n = fm.bins();
            Samples { x: fm.values, grid: (1, n), labels: None, hop_seconds: fm.frame_hop_seconds }
        }
        "idx" => {
            let img = load_idx(&input, &cfg.require::<PathBuf>("labels")?)?;
            Samples { x: img.flattened(), grid: (img.height(), img.width()), labels: Some(img.labels), hop_seconds: 1.0 }
        }
        other => return Err(Error::Parameter(format!("input_format must be features, samples or idx, got {other:?}"))),
    };
    let limit: usize = cfg.get("limit")?;
    if limit > 0 && limit < s.x.nrows() {
        match &mut s.labels {
            // Labelled sets may be sorted by class, so take a per-class share.
            Some(labels) => {
                let (keep, _) = stratified_pools(labels, limit, 0)?;
                s.x = s.x.select(Axis(0), &keep);
                *labels = keep.iter().map(|&i| labels[i]).collect();
            }
            None => s.x = s.x.slice(s![..limit, ..]).to_owned(),
        }
    }
    Ok(s)
}

fn transform_spec(cfg: &RunConfig, kind: &str, grid: (usize, usize)) -> Result<TransformSpec> {
    let mut e = BTreeMap::new();
    let mut put = |k: &str, v: &str| {
        e.insert(format!("transform.{k}"), v.to_string());
    };
    put("kind", kind);
    put("grid_rows", &grid.0.to_string());
    put("grid_cols", &grid.1.to_string());
    match kind {
        "rotate_2d" => {
            put("min", cfg.raw("angle_min")?);
            put("max", cfg.raw("angle_max")?);
        }
        "compose" => {
            for k in ["pitch_min", "pitch_max", "time_min", "time_max"] {
                put(k, cfg.raw(k)?);
            }
        }
        _ => {
            put("min", cfg.raw("shift_min")?);
            put("max", cfg.raw("shift_max")?);
        }
    }
    TransformSpec::from_entries(&e)
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let norm_mode = match cfg.raw("norm_mode")? {
        "penalty" => NormMode::Penalty { lambda_mean: cfg.get("lambda_mean")?, lambda_dev: cfg.get("lambda_dev")? },
        "reset" => NormMode::Reset { target_norm: cfg.get("target_norm")? },
        "none" => NormMode::None,
        other => return Err(Error::Parameter(format!("norm_mode must be penalty, reset or none, got {other:?}"))),
    };
    let optimizer = match cfg.raw("optimizer")? {
        "adam" => OptimizerKind::default(),
        "sgd" => OptimizerKind::Sgd,
        other => return Err(Error::Parameter(format!("optimizer must be adam or sgd, got {other:?}"))),
    };
    Ok(TrainConfig {
        n_basis: cfg.get("n_basis")?,
        p_norm: LossPower::try_from(cfg.get::<u8>("p_norm")?)?,
        learning_rate: cfg.get("learning_rate")?,
        batch_size: cfg.get("batch_size")?,
        epochs: cfg.get("epochs")?,
        transforms_per_epoch: cfg.get("transforms_per_epoch")?,
        dropout_p: cfg.get("dropout_p")?,
        norm_mode,
        rng_seed: cfg.get("seed")?,
        optimizer,
    })
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<bool> {
    print!("{}", cfg.to_text());
    let format = cfg.raw("input_format")?;
    let samples = load_samples(cfg, None)?;
    let kind = match (cfg.raw("transform")?, format) {
        ("auto", "features") => "pitch_shift",
        ("auto", "samples") => "circular_shift_1d",
        ("auto", _) => "rotate_2d",
        (k, _) => k,
    };
    let spec = transform_spec(cfg, kind, samples.grid)?;
    let stats = match (cfg.raw("standardize")?, format) {
        ("column", _) | ("auto", "features") => StandardizationStats::fit(samples.x.view())?,
        ("global", _) | ("auto", "idx") => StandardizationStats::fit_global(samples.x.view())?,
        ("none", _) | ("auto", _) => StandardizationStats::identity(samples.x.ncols()),
        (other, _) => return Err(Error::Parameter(format!("standardize must be column, global, none or auto, got {other:?}"))),
    };
    let z = stats.apply(samples.x.view())?;
    let tc = train_config(cfg)?;
    let mut pairs = DatasetPairs { data: z.view(), spec: &spec, scheme: cfg.get("pair_scheme")? };
    let every = (tc.epochs / 10).max(1);
    let epochs = tc.epochs;
    let outcome = train_observed(&tc, spec.input_len(), &mut pairs, &mut |e, loss| {
        if e == 0 || (e + 1) % every == 0 {
            eprintln!("epoch {}/{epochs}: loss {loss:.6}", e + 1);
        }
    })?;
    let model = CaeModel::new(outcome.basis, stats)?;
    model.save(&out.join("model.cae"), Some(&tc))?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in outcome.loss_history.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", e + 1));
    }
    write_file(&out.join("loss_history.csv"), csv)?;
    write_file(&out.join("loss_history.svg"), line_svg(&outcome.loss_history, "training loss per epoch"))?;
    println!("wrote {}", out.join("model.cae").display());
    Ok(true)
}

fn cmd_project(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let model = CaeModel::load(&cfg.require::<PathBuf>("model")?)?;
    let samples = load_samples(cfg, Some(model.n_input()))?;
    if samples.x.ncols() != model.n_input() {
        return Err(Error::Validation(format!(
            "model expects {} inputs, but the samples have {}",
            model.n_input(),
            samples.x.ncols()
        )));
    }
    let mags = model.magnitudes(samples.x.view())?;
    let (re, im) = model.basis.project_rows(model.stats.apply(samples.x.view())?.view())?;
    let mut phases = Array2::zeros(re.dim());
    for ((r, i), mut p) in re.outer_iter().zip(im.outer_iter()).zip(phases.outer_iter_mut()) {
        p.assign(&polar_encode(r, i)?.phase);
    }
    let fm = FeatureMatrix::new(mags, samples.hop_seconds, "magnitudes")?;
    fm.save_ftm(&out.join("magnitudes.ftm"))?;
    fm.save_csv(&out.join("magnitudes.csv"))?;
    FeatureMatrix::new(phases, samples.hop_seconds, "phases")?.save_csv(&out.join("phases.csv"))?;
    if let Some(labels) = &samples.labels {
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        write_file(&out.join("labels.csv"), format!("label\n{text}"))?;
    }
    println!("projected {} samples onto {} basis rows", fm.frames(), fm.bins());
    Ok(true)
}

/// `dft` builds the analytic basis for `ngram x bins` inputs; anything else is a model path.
fn model_for(spec: &str, ngram: usize, bins: usize) -> Result<CaeModel> {
    if spec == "dft" {
        return Ok(CaeModel::unstandardized(ComplexBasis::dft_along_bins(ngram, bins)));
    }
    let model = CaeModel::load(Path::new(spec))?;
    if model.n_input() != ngram * bins {
        return Err(Error::Validation(format!(
            "model {spec} expects {} inputs, but {ngram}-grams of {bins}-bin frames have {}",
            model.n_input(),
            ngram * bins
        )));
    }
    Ok(model)
}

fn cmd_discover(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let fm = load_feature_matrix(&cfg.require::<PathBuf>("input")?)?;
    let dc = DiscoveryConfig {
        ngram: cfg.get("ngram")?,
        hop_frames: cfg.get("hop_frames")?,
        smoothing: cfg.get("smoothing")?,
        threshold: cfg.get("threshold")?,
        min_length: cfg.get("min_length")?,
        max_gap: cfg.get("max_gap")?,
    };
    let model = model_for(cfg.raw("model")?, dc.ngram, fm.bins())?;
    let res = discover(&fm, &model, &dc)?;
    let hop = fm.frame_hop_seconds * dc.hop_frames as f64;
    let processed = FeatureMatrix::new(res.processed.values.clone(), hop, "processed self-similarity")?;
    processed.save_ftm(&out.join("processed.ftm"))?;
    processed.save_csv(&out.join("processed.csv"))?;
    write_file(&out.join("processed.pgm"), matrix_to_pgm(processed.values.view()))?;
    write_file(&out.join("sections.csv"), sections_csv(&res.sections, hop))?;
    println!("found {} repeated sections", res.sections.len());
    if let Some(planted) = cfg.get_opt::<PathBuf>("planted")? {
        let truth = read_planted(&planted, dc.ngram, dc.hop_frames)?;
        let scores = evaluate_overlap(&res.sections, &truth, cfg.get("iou")?)?;
        println!("planted sections: precision {:.3}, recall {:.3}, F1 {:.3}", scores.precision, scores.recall, scores.f1);
        write_file(&out.join("overlap.json"), to_json(&scores))?;
    }
    Ok(true)
}

/// Planted repetitions in frames, converted to n-gram index ranges.
fn read_planted(path: &Path, ngram: usize, hop_frames: usize) -> Result<Vec<RepeatedSection>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<usize> = line
            .split(',')
            .take(3)
            .map(|c| c.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(format!("{}: line {}", path.display(), k + 1), e.to_string()))?;
        let [src, dst, len] = cells[..] else {
            return Err(Error::format(format!("{}: line {}", path.display(), k + 1), "expected src_start,dst_start,length"));
        };
        if len < ngram {
            continue;
        }
        let span = |start: usize| (start.div_ceil(hop_frames), (start + len - ngram) / hop_frames + 1);
        out.push(RepeatedSection { occurrence_a: span(src), occurrence_b: span(dst), score: 1.0 });
    }
    Ok(out)
}

fn cmd_align(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let perf = load_feature_matrix(&cfg.require::<PathBuf>("perf")?)?;
    let mut score = load_feature_matrix(&cfg.require::<PathBuf>("score")?)?;
    let transpose: i64 = cfg.get("transpose")?;
    let factor: f64 = cfg.get("tempo_factor")?;
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Parameter(format!("tempo_factor must be positive, got {factor}")));
    }
    if transpose != 0 {
        score = FeatureMatrix::new(pitch_shift(score.values.view(), transpose)?, score.frame_hop_seconds, "transposed")?;
    }
    if factor != 1.0 {
        score = tempo_scale(&score, factor)?;
    }
    let acfg = AlignConfig {
        ngram: cfg.get("ngram")?,
        hop_frames: cfg.get("hop_frames")?,
        radius: cfg.get("radius")?,
        distance: cfg.get("distance")?,
    };
    let path = match cfg.raw("model")? {
        "raw" => align_raw(&perf, &score, &acfg)?,
        spec => align_features(&perf, &score, &model_for(spec, acfg.ngram, perf.bins())?, &acfg)?,
    };
    write_file(&out.join("path.csv"), path.to_csv())?;
    println!("path of {} steps, cost {:.4}", path.pairs.len(), path.cost);
    if let Some(gt_path) = cfg.get_opt::<PathBuf>("gt")? {
        let gt = GroundTruthMap::from_csv_str(&read_text(&gt_path)?)
            .map_err(|e| Error::format(gt_path.display().to_string(), e.to_string()))?;
        let gt = GroundTruthMap::new(gt.events().iter().map(|&(a, b)| (a, b / factor)).collect())?;
        let hf = acfg.hop_frames as f64;
        let report = evaluate_alignment(&path, perf.frame_hop_seconds * hf, score.frame_hop_seconds * hf, &gt)?;
        println!(
            "{} events: median error {:.3}s, within 50 ms {:.1}%, within 250 ms {:.1}%",
            report.n_events,
            report.median,
            report.rate_50ms * 100.0,
            report.rate_250ms * 100.0
        );
        write_file(&out.join("report.json"), to_json(&report))?;
    }
    Ok(true)
}

fn rotate_rows(x: &Array2<f64>, spec: &TransformSpec, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(x.dim());
    for (row, mut dst) in x.outer_iter().zip(out.outer_iter_mut()) {
        dst.assign(&spec.apply(row, spec.sample_param(rng))?);
    }
    Ok(out)
}

fn write_cv(out: &Path, stem: &str, r: &CvReport) -> Result<()> {
    write_file(&out.join(format!("{stem}.json")), to_json(r))?;
    write_file(&out.join(format!("{stem}.csv")), r.to_csv())
}

fn cmd_classify(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let digits = load_idx(&cfg.require::<PathBuf>("images")?, &cfg.require::<PathBuf>("labels")?)?;
    let model = CaeModel::load(&cfg.require::<PathBuf>("model")?)?;
    let (h, w) = (digits.height(), digits.width());
    if model.n_input() != h * w {
        return Err(Error::Validation(format!(
            "model expects {} inputs, but {h}x{w} images have {}",
            model.n_input(),
            h * w
        )));
    }
    let pixels = digits.flattened();
    let n_train: usize = cfg.get("train_pool")?;
    let mut n_test: usize = cfg.get("test_pool")?;
    if n_train >= pixels.nrows() {
        return Err(Error::Parameter(format!("train_pool {n_train} leaves no test images out of {}", pixels.nrows())));
    }
    if n_test == 0 || n_train + n_test > pixels.nrows() {
        n_test = pixels.nrows() - n_train;
    }
    // Same per-class split as train's `limit`, so a model trained with
    // limit = train_pool never sees the test pool.
    let (train_idx, test_idx) = stratified_pools(&digits.labels, n_train, n_test)?;
    let n_test = test_idx.len();
    let seed: u64 = cfg.get("seed")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = TransformSpec::rotation(h, w);
    let raw_test = pixels.select(Axis(0), &test_idx);
    let mut train_px = pixels.select(Axis(0), &train_idx);
    let mut test_px = raw_test.clone();
    if cfg.get::<bool>("rotate")? {
        train_px = rotate_rows(&train_px, &spec, &mut rng)?;
        test_px = rotate_rows(&test_px, &spec, &mut rng)?;
    }
    let train_y: Vec<u8> = train_idx.iter().map(|&i| digits.labels[i]).collect();
    let test_y: Vec<u8> = test_idx.iter().map(|&i| digits.labels[i]).collect();
    let (train_y, test_y) = (&train_y[..], &test_y[..]);
    let mag_train = model.magnitudes(train_px.view())?;
    let mag_test = model.magnitudes(test_px.view())?;

    let cv = CvConfig { train_size: cfg.get("train_size")?, folds: cfg.get("folds")?, test_size: cfg.get("test_size")?, seed };
    let logreg = ClassifierSpec::LogReg {
        config: LogRegConfig { l2: cfg.get("l2")?, epochs: cfg.get("logreg_epochs")?, learning_rate: cfg.get("logreg_lr")? },
        standardize: true,
    };
    let mag = cross_validate_pools(mag_train.view(), train_y, mag_test.view(), test_y, &cv, &logreg)?;
    write_cv(out, "cv_logreg_magnitudes", &mag)?;
    println!("logistic regression on magnitudes: error {:.2}% (+/- {:.2})", mag.mean_error * 100.0, mag.std_error * 100.0);
    for k in cfg.raw("knn")?.split(',').map(str::trim).filter(|k| !k.is_empty()) {
        let k: usize = k.parse().map_err(|e| Error::Parameter(format!("knn entry {k:?}: {e}")))?;
        let r = cross_validate_pools(train_px.view(), train_y, test_px.view(), test_y, &cv, &ClassifierSpec::Knn { k })?;
        write_cv(out, &format!("cv_knn{k}_pixels"), &r)?;
        println!("{k}-NN on pixels: error {:.2}% (+/- {:.2})", r.mean_error * 100.0, r.std_error * 100.0);
    }

    let n_pca = cfg.get::<usize>("pca_samples")?.min(n_test);
    if n_pca >= 3 {
        let sub = mag_test.slice(s![..n_pca, ..]);
        let labels = &test_y[..n_pca];
        let pca = pca_2d(sub)?;
        println!("magnitude within/between class distance ratio: {:.3}", class_distance_ratio(sub, labels));
        let mut csv = String::from("pc1,pc2,label\n");
        for (p, l) in pca.scores.outer_iter().zip(labels) {
            csv.push_str(&format!("{},{},{l}\n", p[0], p[1]));
        }
        write_file(&out.join("pca_magnitudes.csv"), csv)?;
        write_file(&out.join("pca_magnitudes.svg"), scatter_svg(pca.scores.view(), PointColour::Labels(labels), "magnitudes, coloured by digit"))?;

        // Phase differences of pairs rotated apart by a random angle.
        let raw_test = raw_test.slice(s![..n_pca, ..]);
        let (mut a, mut b) = (Array2::zeros((n_pca, h * w)), Array2::zeros((n_pca, h * w)));
        let mut angles = Vec::with_capacity(n_pca);
        for (i, row) in raw_test.outer_iter().enumerate() {
            let base = rng.random_range(0.0..2.0 * PI);
            let delta = rng.random_range(0.0..2.0 * PI);
            a.row_mut(i).assign(&spec.apply(row, crate::transforms::TransformParam::Angle(base))?);
            b.row_mut(i).assign(&spec.apply(row, crate::transforms::TransformParam::Angle(base + delta))?);
            angles.push(delta / (2.0 * PI));
        }
        let (za, zb) = (model.stats.apply(a.view())?, model.stats.apply(b.view())?);
        let mut dphi = Array2::zeros((n_pca, model.n_basis()));
        for i in 0..n_pca {
            dphi.row_mut(i).assign(&model.basis.phase_difference(zb.row(i), za.row(i))?);
        }
        let circle = concatenate![Axis(1), dphi.cos(), dphi.sin()];
        let pca = pca_2d(circle.view())?;
        let mut csv = String::from("pc1,pc2,angle\n");
        for (p, t) in pca.scores.outer_iter().zip(&angles) {
            csv.push_str(&format!("{},{},{}\n", p[0], p[1], t * 2.0 * PI));
        }
        write_file(&out.join("pca_phase_difference.csv"), csv)?;
        write_file(
            &out.join("pca_phase_difference.svg"),
            scatter_svg(pca.scores.view(), PointColour::Continuous(&angles), "phase differences, coloured by rotation angle"),
        )?;
        write_file(&out.join("basis_re.svg"), heatmap_svg(model.basis.w_re().view(), "real basis weights", 196))?;
    }
    Ok(true)
}

fn cmd_check_grad(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let gc = GradCheckConfig {
        n_input: cfg.get("n_input")?,
        n_basis: cfg.get("n_basis")?,
        batch: cfg.get("batch")?,
        instances: cfg.get("instances")?,
        power: LossPower::try_from(cfg.get::<u8>("p_norm")?)?,
        step: cfg.get("step")?,
        rel_floor: cfg.get("rel_floor")?,
        tolerance: cfg.get("tolerance")?,
        residual_margin: cfg.get("residual_margin")?,
        seed: cfg.get("seed")?,
        flip_sign: cfg.get("flip_sign")?,
    };
    let report = run_grad_check(&gc)?;
    println!("max relative error w_re: {:.3e}", report.max_rel_err_w_re);
    println!("max relative error w_im: {:.3e}", report.max_rel_err_w_im);
    println!(
        "{} instances checked, {} skipped; tolerance {:.0e}: {}",
        report.instances_checked,
        report.instances_skipped,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    write_file(&out.join("report.json"), to_json(&report))?;
    Ok(report.passed)
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let mut opts = SynthOptions::new(cfg.get("frames")?, cfg.get("bins")?, cfg.get("events")?);
    opts.bins_per_octave = cfg.get("bins_per_octave")?;
    opts.partials = cfg.get("partials")?;
    opts.margin_bins = cfg.get("margin_bins")?;
    opts.min_duration = cfg.get("min_duration")?;
    opts.max_duration = cfg.get("max_duration")?;
    opts.noise_floor = cfg.get("noise_floor")?;
    opts.frame_hop_seconds = cfg.get_opt("hop_seconds")?.unwrap_or(DEFAULT_HOP_SECONDS);
    let plant_len: usize = cfg.get("plant_len")?;
    if plant_len > 0 {
        opts.plant = Some(PlantedRepeat {
            src_start: cfg.get("plant_src")?,
            dst_start: cfg.get("plant_dst")?,
            len: plant_len,
            shift: cfg.get("plant_shift")?,
        });
    }
    let (piece, onsets) = synth_cqt_like_events(cfg.get("seed")?, &opts)?;
    piece.save_ftm(&out.join("piece.ftm"))?;
    write_file(&out.join("piece.pgm"), matrix_to_pgm(piece.values.t()))?;
    let hop = piece.frame_hop_seconds;
    let gt = GroundTruthMap::new(onsets.iter().map(|&t| (t as f64 * hop, t as f64 * hop)).collect())?;
    write_file(&out.join("gt.csv"), gt.to_csv())?;
    if let Some(p) = &opts.plant {
        write_file(&out.join("planted.csv"), format!("src_start,dst_start,length,shift\n{},{},{},{}\n", p.src_start, p.dst_start, p.len, p.shift))?;
    }
    println!("wrote {} frames x {} bins with {} onsets", piece.frames(), piece.bins(), onsets.len());
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_subcommand_parses_its_help() {
        command().debug_assert();
        for sub in subcommands() {
            let keys = all_keys(&sub);
            let mut names: Vec<_> = keys.iter().map(|k| k.0).collect();
            names.sort_unstable();
            names.dedup();
            assert_eq!(names.len(), keys.len(), "duplicate key in {}", sub.name);
        }
    }

    #[test]
    fn planted_csv_maps_to_ngram_ranges() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("planted.csv");
        fs::write(&p, "src_start,dst_start,length,shift\n20,200,80,3\n").unwrap();
        let s = read_planted(&p, 16, 1).unwrap();
        assert_eq!(s[0].occurrence_a, (20, 85));
        assert_eq!(s[0].occurrence_b, (200, 265));
    }
}
