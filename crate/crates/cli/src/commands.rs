use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use tplab::dataset::{read_pieces, split_dataset, write_pieces, DatasetSplit, ExtractionStats, PiecesHeader};
use tplab::eval::{compare, evaluate, HorizonReport, Predictor, TruthOracle, REFERENCE_RESULTS};
use tplab::ingest::{parse_trajectory_file, read_snapshot, write_snapshot, TrackSet};
use tplab::model::{read_params, write_params, Variant};
use tplab::plot::render_scenario;
use tplab::scene::{extract_pieces, select_ego_vehicles, ScenePiece};
use tplab::train::{scene_tensors, TrainConfig, Trainer};
use tplab::Model;

use crate::config::{file_checksum, RunConfig};
use crate::error::{exit, CliError};
use crate::lock::DirLock;

pub static INTERRUPTED: AtomicBool = AtomicBool::new(false);

/// How long to wait for another command's lock; `TPLAB_LOCK_WAIT_MS`
/// overrides the 10 s default.
fn lock_wait() -> Duration {
    let ms = std::env::var("TPLAB_LOCK_WAIT_MS").ok().and_then(|v| v.parse().ok()).unwrap_or(10_000);
    Duration::from_millis(ms)
}

pub const TRACKS_FILE: &str = "tracks.bin";
pub const PIECES_FILE: &str = "pieces.jsonl";
pub const STATS_FILE: &str = "stats.txt";
pub const FINAL_PARAMS: &str = "final.params";
pub const TRAIN_LOG: &str = "train.log.jsonl";
/// Checkpoint argument that stands for a model predicting the ground truth.
pub const ORACLE: &str = "oracle";

/// Options shared by every subcommand after config and flags are merged.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub force: bool,
    pub limit: Option<usize>,
    pub allow_mixed: bool,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::data(format!("{}: {e}", path.display()))
}

fn refuse_existing(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::usage(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn provenance_lines(p: &BTreeMap<String, String>) -> String {
    p.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

/// Writes through a temporary file so readers never see half a file.
fn write_atomic(path: &Path, contents: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let f = File::create(&tmp).map_err(io(&tmp))?;
    let mut w = BufWriter::new(f);
    contents(&mut w)?;
    w.flush().map_err(io(&tmp))?;
    drop(w);
    fs::rename(&tmp, path).map_err(io(path))
}

pub fn ingest(cfg: &RunConfig, common: &Common) -> Result<u8, CliError> {
    if cfg.paths.raw.is_empty() {
        return Err(CliError::usage("no raw trajectory files given (pass paths or set paths.raw)"));
    }
    let _lock = DirLock::acquire(&cfg.paths.cache, lock_wait())?;
    let out = cfg.paths.cache.join(TRACKS_FILE);
    refuse_existing(&out, common.force)?;
    let overrides = cfg.column_overrides();
    let mut merged: Option<TrackSet> = None;
    for path in &cfg.paths.raw {
        let (set, report) = parse_trajectory_file(path, &overrides)?;
        println!("{}:", path.display());
        print!("{report}");
        merged = Some(match merged {
            None => set,
            Some(m) => m.merge(set).map_err(|e| CliError::from(e).context(path.display()))?,
        });
    }
    let set = merged.expect("at least one file");
    let provenance = BTreeMap::from([
        ("config_hash".to_string(), cfg.extract_hash()),
        ("source_sha256".to_string(), file_checksum(&cfg.paths.raw)?),
        ("seed".to_string(), cfg.extract.seed.to_string()),
        ("tplab_version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ]);
    write_atomic(&out, |w| write_snapshot(&set, &provenance, w).map_err(CliError::from))?;
    println!("{} tracks over {} frames written to {}", set.len(), set.frames().len(), out.display());
    Ok(exit::OK)
}

fn load_tracks(cfg: &RunConfig) -> Result<(TrackSet, BTreeMap<String, String>), CliError> {
    let path = cfg.paths.cache.join(TRACKS_FILE);
    let f = File::open(&path).map_err(|e| CliError::data(format!("{}: {e} (run `tplab ingest` first)", path.display())))?;
    read_snapshot(BufReader::new(f)).map_err(|e| CliError::from(e).context(path.display()))
}

pub fn extract(cfg: &RunConfig, common: &Common) -> Result<u8, CliError> {
    DirLock::wait_unlocked(&cfg.paths.cache, lock_wait())?;
    let (set, tracks_prov) = load_tracks(cfg)?;
    let _lock = DirLock::acquire(&cfg.paths.cache, lock_wait())?;
    let out = cfg.paths.cache.join(PIECES_FILE);
    refuse_existing(&out, common.force)?;
    let egos = select_ego_vehicles(&set, &cfg.extract.selection);
    let (mut pieces, tally) = extract_pieces(&set, &egos);
    if let Some(n) = common.limit {
        pieces.truncate(n);
    }
    let mut provenance = BTreeMap::from([
        ("config_hash".to_string(), cfg.extract_hash()),
        ("seed".to_string(), cfg.extract.seed.to_string()),
    ]);
    if let Some(src) = tracks_prov.get("source_sha256") {
        provenance.insert("source_sha256".into(), src.clone());
    }
    let stats_path = cfg.paths.cache.join(STATS_FILE);
    if pieces.is_empty() {
        let stats = ExtractionStats::new(&egos, tally, None);
        write_atomic(&stats_path, |w| {
            write!(w, "{}{stats}", provenance_lines(&provenance)).map_err(io(&stats_path))
        })?;
        print!("{stats}");
        eprintln!("warning: no pieces extracted; {} not written", out.display());
        return Ok(exit::WARNING);
    }
    let split = split_dataset(pieces, cfg.extract.seed)?;
    let source = provenance.get("source_sha256").cloned().unwrap_or_default();
    write_atomic(&out, |w| write_pieces(&split, &source, &cfg.extract_hash(), w).map(|_| ()).map_err(CliError::from))?;
    let stats = ExtractionStats::new(&egos, tally, Some(&split));
    write_atomic(&stats_path, |w| write!(w, "{}{stats}", provenance_lines(&provenance)).map_err(io(&stats_path)))?;
    print!("{stats}");
    println!("pieces written to {}", out.display());
    Ok(exit::OK)
}

struct PiecesInput {
    header: PiecesHeader,
    split: DatasetSplit,
    sha256: String,
}

fn load_pieces(cfg: &RunConfig) -> Result<PiecesInput, CliError> {
    DirLock::wait_unlocked(&cfg.paths.cache, lock_wait())?;
    let path = cfg.paths.cache.join(PIECES_FILE);
    let f = File::open(&path).map_err(|e| CliError::data(format!("{}: {e} (run `tplab extract` first)", path.display())))?;
    let (header, split) = read_pieces(BufReader::new(f)).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(PiecesInput { header, split, sha256: file_checksum(&[path])? })
}

fn variant_dir(cfg: &RunConfig, v: Variant) -> PathBuf {
    cfg.paths.checkpoints.join(v.tag())
}

fn epoch_file(epoch: u32) -> String {
    format!("epoch-{epoch:02}.ckpt")
}

fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut found: Vec<(u32, PathBuf)> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n = name.strip_prefix("epoch-")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((n, e.path()))
        })
        .collect();
    found.sort();
    found.pop().map(|(_, p)| p)
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn check_provenance(label: &str, found: Option<&String>, expected: &str, allow_mixed: bool) -> Result<(), CliError> {
    match found {
        Some(f) if f == expected => Ok(()),
        _ if allow_mixed => {
            eprintln!("warning: {label} provenance differs ({} vs {expected}); continuing because of --allow-mixed", found.map_or("none", String::as_str));
            Ok(())
        }
        _ => Err(CliError::data(format!(
            "{label} was produced from different inputs ({} vs {expected}); pass --allow-mixed to use it anyway",
            found.map_or("none", String::as_str)
        ))),
    }
}

pub fn train(cfg: &RunConfig, common: &Common, resume: bool) -> Result<u8, CliError> {
    let input = load_pieces(cfg)?;
    let mut pieces = input.split.train.clone();
    if let Some(n) = common.limit {
        pieces.truncate(n);
    }
    let scenes = scene_tensors(&pieces)?;
    println!("training on {} pieces", scenes.len());
    let mut code = exit::OK;
    for &variant in &cfg.train.variants {
        let tc: TrainConfig = cfg.train.for_variant(variant);
        let dir = variant_dir(cfg, variant);
        let _lock = DirLock::acquire(&dir, lock_wait())?;
        let provenance = BTreeMap::from([
            ("config_hash".to_string(), cfg.train_hash()),
            ("extract_config_hash".to_string(), input.header.config_hash.clone()),
            ("pieces_sha256".to_string(), input.sha256.clone()),
            ("split_seed".to_string(), input.header.seed.to_string()),
            ("train_seed".to_string(), tc.seed.to_string()),
            ("train_pieces".to_string(), scenes.len().to_string()),
            ("variant".to_string(), variant.tag().to_string()),
        ]);
        let mut trainer = match latest_checkpoint(&dir) {
            Some(path) if resume => {
                let f = File::open(&path).map_err(io(&path))?;
                let ckpt = Trainer::read_checkpoint(BufReader::new(f)).map_err(|e| CliError::from(e).context(path.display()))?;
                for key in ["pieces_sha256", "train_pieces"] {
                    check_provenance(&format!("{} ({key})", path.display()), ckpt.provenance.get(key), &provenance[key], common.allow_mixed)?;
                }
                println!("{variant}: resuming after epoch {} from {}", ckpt.epochs_done, path.display());
                Trainer::resume(ckpt, tc.clone())?
            }
            Some(path) if !common.force => {
                return Err(CliError::usage(format!(
                    "{} already holds checkpoints ({}); pass --resume to continue or --force to start over",
                    dir.display(),
                    path.display()
                )));
            }
            _ => {
                if let Ok(entries) = fs::read_dir(&dir) {
                    for e in entries.flatten() {
                        let name = e.file_name();
                        let name = name.to_string_lossy();
                        if name.ends_with(".ckpt") || name == FINAL_PARAMS || name == TRAIN_LOG {
                            fs::remove_file(e.path()).map_err(io(&e.path()))?;
                        }
                    }
                }
                Trainer::new(tc.clone())?
            }
        };
        trainer.provenance = provenance.clone();
        let log_path = dir.join(TRAIN_LOG);
        let mut logged = trainer.log.steps.len();
        let mut stopped = false;
        trainer.run(&scenes, |t| {
            let ep = t.log.epochs.last().expect("epoch finished");
            println!("{variant}: epoch {:>3}/{} mean loss {:.6} ({:.1} s)", ep.epoch + 1, t.config.epochs, ep.mean_loss, ep.seconds);
            let path = dir.join(epoch_file(t.epochs_done));
            write_atomic(&path, |w| t.write_checkpoint(w).map_err(CliError::from)).map_err(|e| tplab::train::TrainError::Checkpoint(e.msg))?;
            let mut log = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log_path)
                .map_err(|e| tplab::train::TrainError::Checkpoint(format!("{}: {e}", log_path.display())))?;
            let now = unix_seconds();
            for s in &t.log.steps[logged..] {
                let line = serde_json::json!({ "step": s.step, "epoch": s.epoch, "loss": s.loss, "timestamp": now });
                writeln!(log, "{line}").map_err(|e| tplab::train::TrainError::Checkpoint(e.to_string()))?;
            }
            logged = t.log.steps.len();
            if INTERRUPTED.load(Ordering::SeqCst) {
                stopped = true;
                return Ok(false);
            }
            Ok(true)
        })?;
        if stopped {
            eprintln!("{variant}: interrupted after epoch {}; rerun with --resume to continue", trainer.epochs_done);
            return Ok(exit::INTERRUPTED);
        }
        let final_path = dir.join(FINAL_PARAMS);
        write_atomic(&final_path, |w| write_params(&trainer.model, &provenance, w).map_err(CliError::from))?;
        if let (Some(first), Some(last)) = (trainer.log.epochs.first(), trainer.log.epochs.last()) {
            println!("{variant}: loss {:.6} -> {:.6}; parameters in {}", first.mean_loss, last.mean_loss, final_path.display());
        }
        if trainer.epochs_done == 0 {
            code = exit::WARNING;
        }
    }
    Ok(code)
}

/// A loaded model or the truth oracle, with the provenance it carries.
struct Entry {
    predictor: Box<dyn Predictor>,
    provenance: Option<BTreeMap<String, String>>,
    source: String,
}

fn load_predictor(arg: &str, cfg: &RunConfig) -> Result<Entry, CliError> {
    if arg == ORACLE {
        return Ok(Entry { predictor: Box::new(TruthOracle), provenance: None, source: ORACLE.into() });
    }
    let mut path = PathBuf::from(arg);
    if !path.exists() {
        if let Ok(v) = arg.parse::<Variant>() {
            path = variant_dir(cfg, v);
        }
    }
    if path.is_dir() {
        path = path.join(FINAL_PARAMS);
    }
    let f = File::open(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut r = BufReader::new(f);
    let is_ckpt = path.extension().is_some_and(|e| e == "ckpt");
    let (model, provenance): (Model, _) = if is_ckpt {
        let t = Trainer::read_checkpoint(&mut r).map_err(|e| CliError::from(e).context(path.display()))?;
        (t.model, t.provenance)
    } else {
        let (m, h) = read_params::<f64>(&mut r).map_err(|e| CliError::from(e).context(path.display()))?;
        (m, h.provenance)
    };
    Ok(Entry { predictor: Box::new(model), provenance: Some(provenance), source: path.display().to_string() })
}

fn load_predictors(args: &[String], cfg: &RunConfig, input: &PiecesInput, allow_mixed: bool) -> Result<Vec<Entry>, CliError> {
    let entries: Vec<Entry> = args.iter().map(|a| load_predictor(a, cfg)).collect::<Result<_, _>>()?;
    let mut train_hash: Option<&String> = None;
    for e in &entries {
        let Some(p) = &e.provenance else { continue };
        check_provenance(&format!("{} (pieces)", e.source), p.get("pieces_sha256"), &input.sha256, allow_mixed)?;
        let h = p.get("config_hash");
        match (train_hash, h) {
            (None, Some(h)) => train_hash = Some(h),
            (Some(a), _) => check_provenance(&format!("{} (training config)", e.source), h, a, allow_mixed)?,
            (None, None) => check_provenance(&format!("{} (training config)", e.source), None, "a config hash", allow_mixed)?,
        }
    }
    Ok(entries)
}

fn eval_provenance(input: &PiecesInput, entries: &[Entry]) -> BTreeMap<String, String> {
    let mut p = BTreeMap::from([
        ("extract_config_hash".to_string(), input.header.config_hash.clone()),
        ("pieces_sha256".to_string(), input.sha256.clone()),
        ("split_seed".to_string(), input.header.seed.to_string()),
    ]);
    if let Some(h) = entries.iter().find_map(|e| e.provenance.as_ref()?.get("config_hash")) {
        p.insert("config_hash".into(), h.clone());
    }
    if let Some(s) = entries.iter().find_map(|e| e.provenance.as_ref()?.get("train_seed")) {
        p.insert("train_seed".into(), s.clone());
    }
    p
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn eval(cfg: &RunConfig, common: &Common, checkpoints: &[String], cited: bool) -> Result<u8, CliError> {
    if checkpoints.is_empty() {
        return Err(CliError::usage("no checkpoints given"));
    }
    let input = load_pieces(cfg)?;
    let entries = load_predictors(checkpoints, cfg, &input, common.allow_mixed)?;
    let mut test = input.split.test.clone();
    if let Some(n) = common.limit {
        test.truncate(n);
    }
    let mut reports: Vec<HorizonReport> = Vec::new();
    for e in &entries {
        let mut r = evaluate(e.predictor.as_ref(), &test)?;
        if reports.iter().any(|o| o.name == r.name) {
            r.name = format!("{} [{}]", r.name, reports.len() + 1);
        }
        reports.push(r);
    }
    let provenance = eval_provenance(&input, &entries);
    let head = provenance_lines(&provenance);
    let _lock = DirLock::acquire(&cfg.paths.reports, lock_wait())?;
    for r in &reports {
        let path = cfg.paths.reports.join(format!("{}.steps.csv", file_stem(&r.name)));
        write_atomic(&path, |w| write!(w, "{head}{}", r.to_csv()).map_err(io(&path)))?;
    }
    let (text, csv) = if reports.len() >= 2 {
        let table = compare(&reports, cited)?;
        (table.to_text(), table.to_csv())
    } else {
        let r = &reports[0];
        let h = r.horizons();
        let text = format!(
            "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9}\n{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\nRMSE in meters over {} test pieces.\n",
            "Method", "1 s", "2 s", "3 s", "4 s", "5 s", r.name, h[0], h[1], h[2], h[3], h[4], r.n
        );
        let csv = format!("method,rmse_1s,rmse_2s,rmse_3s,rmse_4s,rmse_5s\n{},{},{},{},{},{}\n", r.name, h[0], h[1], h[2], h[3], h[4]);
        (text, csv)
    };
    print!("{text}");
    println!("published results for reference:");
    for (name, v) in REFERENCE_RESULTS {
        println!("  {name:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", v[0], v[1], v[2], v[3], v[4]);
    }
    let txt_path = cfg.paths.reports.join("eval.txt");
    write_atomic(&txt_path, |w| write!(w, "{head}{text}").map_err(io(&txt_path)))?;
    let csv_path = cfg.paths.reports.join("eval.csv");
    write_atomic(&csv_path, |w| write!(w, "{head}{csv}").map_err(io(&csv_path)))?;
    let json_path = cfg.paths.reports.join("eval.json");
    let json = serde_json::json!({ "provenance": provenance, "test_pieces": test.len(), "reports": reports });
    write_atomic(&json_path, |w| serde_json::to_writer_pretty(&mut *w, &json).map_err(|e| CliError::internal(e.to_string())))?;
    println!("reports written to {}", cfg.paths.reports.display());
    Ok(exit::OK)
}

/// Which test pieces to plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    /// Current frame before the lane change.
    BeforeLc,
    /// Within 1.5 s either side of the lane change.
    DuringLc,
    /// Current frame at or after the lane change.
    AfterLc,
    Index(usize),
}

/// Half-width of the `during-lc` window, in frames.
pub const DURING_WINDOW: i64 = 15;

impl Selector {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "before-lc" => Ok(Self::BeforeLc),
            "during-lc" => Ok(Self::DuringLc),
            "after-lc" => Ok(Self::AfterLc),
            _ => s
                .strip_prefix("index:")
                .and_then(|n| n.parse().ok())
                .map(Self::Index)
                .ok_or_else(|| CliError::usage(format!("unknown selector `{s}` (before-lc, during-lc, after-lc or index:N)"))),
        }
    }

    fn name(self) -> String {
        match self {
            Self::BeforeLc => "before-lc".into(),
            Self::DuringLc => "during-lc".into(),
            Self::AfterLc => "after-lc".into(),
            Self::Index(i) => format!("index-{i}"),
        }
    }

    /// Indices into `pieces`, in order.
    pub fn select(self, pieces: &[ScenePiece]) -> Vec<usize> {
        let keep = |p: &ScenePiece| match self {
            Self::BeforeLc => p.t_frame < p.change_frame,
            Self::DuringLc => p.offset().abs() <= DURING_WINDOW,
            Self::AfterLc => p.t_frame >= p.change_frame,
            Self::Index(_) => false,
        };
        match self {
            Self::Index(i) if i < pieces.len() => vec![i],
            Self::Index(_) => Vec::new(),
            _ => (0..pieces.len()).filter(|&i| keep(&pieces[i])).collect(),
        }
    }
}

pub fn plot(cfg: &RunConfig, common: &Common, checkpoints: &[String], selectors: &[String]) -> Result<u8, CliError> {
    let selectors: Vec<Selector> = if selectors.is_empty() { cfg.plot.selectors.clone() } else { selectors.to_vec() }
        .iter()
        .map(|s| Selector::parse(s))
        .collect::<Result<_, _>>()?;
    let input = load_pieces(cfg)?;
    let entries = load_predictors(checkpoints, cfg, &input, common.allow_mixed)?;
    let test = &input.split.test;
    let max = common.limit.unwrap_or(cfg.plot.max);
    let head = eval_provenance(&input, &entries);
    let comment: String = head.iter().map(|(k, v)| format!("{k}={v} ")).collect();
    let dir = cfg.paths.reports.join("plots");
    let mut written = 0usize;
    let mut lock: Option<DirLock> = None;
    for sel in selectors {
        let picked = sel.select(test);
        if picked.is_empty() {
            eprintln!("warning: selector {} matched no test pieces", sel.name());
        }
        for &i in picked.iter().take(max) {
            if lock.is_none() {
                lock = Some(DirLock::acquire(&dir, lock_wait())?);
            }
            let piece = &test[i];
            let preds = entries
                .iter()
                .map(|e| Ok((e.predictor.name(), e.predictor.predict_piece(piece)?)))
                .collect::<Result<Vec<_>, CliError>>()?;
            let svg = render_scenario(piece, &preds);
            let (first, rest) = svg.split_once('\n').expect("svg has an opening line");
            let path = dir.join(format!("{}-{i:05}-ego{}-t{}.svg", sel.name(), piece.ego_id, piece.t_frame));
            write_atomic(&path, |w| write!(w, "{first}\n<!-- {} -->\n{rest}", comment.trim_end()).map_err(io(&path)))?;
            println!("{}", path.display());
            written += 1;
        }
    }
    if written == 0 {
        eprintln!("warning: nothing plotted");
        return Ok(exit::WARNING);
    }
    Ok(exit::OK)
}
