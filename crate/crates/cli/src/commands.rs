use std::fs;
use std::path::{Path, PathBuf};

use afgen::corpus::{build_corpus, derive_seed, load_png, save_png, Corpus, CorpusSpec, SplitName};
use afgen::evaluation::{
    accuracy, baseline_rows, block_alignment_probe, render_markdown, transfer_matrix, AttackEntry, MetricsReport,
};
use afgen::models::{read_checkpoint, save_checkpoint};
use afgen::training::{train_attack as fit_generator, train_detector, EpochRecord, Stage, TrainConfig};
use afgen::{selfcheck as checks, DetectorKind, DetectorNet, GeneratorNet, Label};
use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::{now, RunManifest, Staged};
use crate::{Attack, Common, Eval, GenData, Report, Selfcheck, TrainAttack, TrainDetectors, TrainKeys};

pub const GENERATOR_FILE: &str = "generator.ckpt";
pub const ATTACK_CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.md";
/// Source label of the evaluation fakes in report rows.
pub const EVAL_SOURCE: &str = "upsampled";
pub const DEFAULT_PROBE_DRAWS: usize = 10;

fn default_seed() -> u64 {
    CorpusSpec::default().master_seed
}

fn require_out(common: &Common) -> Result<PathBuf> {
    common.out.clone().context("--out is required")
}

fn manifest(command: &str, common: &Common, config: impl Serialize, started: String) -> Result<RunManifest> {
    Ok(RunManifest {
        command: command.into(),
        config_path: common.config.clone(),
        config: serde_json::to_value(config)?,
        build_id: env!("AFGEN_BUILD_ID").into(),
        started,
        finished: String::new(),
        outputs: Vec::new(),
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn progress(tag: String) -> impl FnMut(&EpochRecord) {
    move |r| {
        let acc = r.train_accuracy.map(|a| format!(" train_acc {a:.4}")).unwrap_or_default();
        eprintln!(
            "[{tag}] epoch {} loss {:.5} (perceptual {:.5}, classification {:.5}) lr {:.2e}{acc} {:.0}s",
            r.epoch, r.loss_total, r.loss_perceptual, r.loss_classification, r.lr, r.elapsed_s
        );
    }
}

fn detector_path(dir: &Path, kind: DetectorKind) -> PathBuf {
    dir.join(format!("{kind}.ckpt"))
}

fn load_detector(dir: &Path, kind: DetectorKind) -> Result<DetectorNet<f32>> {
    let path = detector_path(dir, kind);
    let net = read_checkpoint(&path)?.into_detector::<f32>().with_context(|| format!("loading {}", path.display()))?;
    ensure!(net.kind() == kind, "{} holds a {} detector", path.display(), net.kind());
    Ok(net)
}

fn load_generator(path: &Path) -> Result<GeneratorNet<f32>> {
    let file = if path.is_dir() { path.join(GENERATOR_FILE) } else { path.to_path_buf() };
    read_checkpoint(&file)?.into_generator::<f32>().with_context(|| format!("loading {}", file.display()))
}

fn apply_keys(cfg: &mut TrainConfig, keys: &TrainKeys, seed: Option<u64>) {
    if let Some(v) = keys.lr {
        cfg.lr = v;
    }
    if let Some(v) = keys.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = keys.lr_half_every {
        cfg.lr_half_every = v;
    }
    if let Some(v) = keys.batch {
        cfg.batch = v;
    }
    if let Some(v) = &keys.corpus {
        cfg.corpus_dir = Some(v.clone());
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
}

pub fn gen_data(a: GenData) -> Result<()> {
    let started = now();
    let mut spec: CorpusSpec = match &a.common.config {
        Some(p) => read_json(p)?,
        None => CorpusSpec::default(),
    };
    let overrides = [
        (a.image_size, &mut spec.image_size),
        (a.d_real, &mut spec.d_real),
        (a.d_fake, &mut spec.d_fake),
        (a.a_fake, &mut spec.a_fake),
        (a.eval_real, &mut spec.eval_real),
        (a.eval_fake, &mut spec.eval_fake),
        (a.probe_fake, &mut spec.probe_fake),
        (a.probe_size, &mut spec.probe_size),
    ];
    for (flag, slot) in overrides {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(s) = a.common.seed {
        spec.master_seed = s;
    }
    spec.validate()?;
    let mut out = Staged::new(&require_out(&a.common)?, a.common.force)?;
    let corpus = build_corpus(&spec)?;
    corpus.write(out.root())?;
    out.path("corpus.json");
    for name in SplitName::ALL {
        out.path(format!("{}.csv", name.as_str()));
        out.path(name.as_str());
        eprintln!("{}: {} images", name.as_str(), corpus.split(name).len());
    }
    let m = manifest("gen-data", &a.common, &spec, started)?;
    let dir = out.commit(m)?;
    println!("{}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct DetectorSummary {
    kind: DetectorKind,
    train_accuracy: f64,
    eval_accuracy: f64,
}

pub fn train_detectors(a: TrainDetectors) -> Result<()> {
    let started = now();
    let mut base = match &a.common.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::detector(DetectorKind::PlainNet, default_seed()),
    };
    ensure!(base.stage == Stage::Detector, "train-detectors needs a detector-stage config");
    apply_keys(&mut base, &a.keys, a.common.seed);
    let corpus_dir = base.corpus_dir.clone().context("--corpus is required")?;
    let kinds = if a.kinds.is_empty() { DetectorKind::ALL.to_vec() } else { a.kinds.clone() };
    let configs: Vec<TrainConfig> =
        kinds.iter().map(|k| TrainConfig { arch: k.to_string(), ..base.clone() }).collect();
    for c in &configs {
        c.validate()?;
    }
    let mut out = Staged::new(&require_out(&a.common)?, a.common.force)?;
    let corpus = Corpus::load(&corpus_dir)?;
    let mut summary = csv_writer();
    for cfg in &configs {
        let kind = cfg.detector_kind()?;
        let run = train_detector::<f32>(cfg, &corpus.d_set, progress(kind.to_string()))?;
        save_checkpoint(&run.model, &out.path(format!("{kind}.ckpt")))?;
        run.log.write_csv(&out.path(format!("{kind}_log.csv")))?;
        fs::write(out.path(format!("{kind}.json")), cfg.to_json()? + "\n")?;
        let eval_accuracy = if corpus.eval_set.is_empty() {
            f64::NAN
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("eval-accuracy:{kind}")));
            accuracy(&run.model, &corpus.eval_set, &mut rng)?
        };
        let train_accuracy = run.log.records.last().and_then(|r| r.train_accuracy).unwrap_or(f64::NAN);
        eprintln!("[{kind}] eval accuracy {eval_accuracy:.4}");
        summary.serialize(DetectorSummary { kind, train_accuracy, eval_accuracy })?;
    }
    fs::write(out.path("detectors.csv"), summary.into_inner()?)?;
    let m = manifest("train-detectors", &a.common, &configs, started)?;
    println!("{}", out.commit(m)?.display());
    Ok(())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

pub fn train_attack(a: TrainAttack) -> Result<()> {
    let started = now();
    let mut cfg = match &a.common.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig { victim: None, ..TrainConfig::attack(DetectorKind::PlainNet, default_seed()) },
    };
    ensure!(cfg.stage == Stage::Attack, "train-attack needs an attack-stage config");
    apply_keys(&mut cfg, &a.keys, a.common.seed);
    if a.victim.is_some() {
        cfg.victim = a.victim;
    }
    if !a.ensemble.is_empty() {
        cfg.ensemble = a.ensemble.clone();
    }
    if !a.beta.is_empty() {
        cfg.beta = a.beta.clone();
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = &a.arch {
        cfg.arch = v.clone();
    }
    cfg.validate()?;
    let corpus_dir = cfg.corpus_dir.clone().context("--corpus is required")?;
    let mut out = Staged::new(&require_out(&a.common)?, a.common.force)?;
    let corpus = Corpus::load(&corpus_dir)?;
    let targets = cfg
        .targets()?
        .into_iter()
        .map(|k| load_detector(&a.detectors, k))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DetectorNet<f32>> = targets.iter().collect();
    let tag = cfg.targets()?.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("+");
    let run = fit_generator::<f32>(&cfg, &refs, &corpus.a_set, progress(format!("attack {tag}")))?;
    save_checkpoint(&run.model, &out.path(GENERATOR_FILE))?;
    run.log.write_csv(&out.path("train_log.csv"))?;
    fs::write(out.path(ATTACK_CONFIG_FILE), cfg.to_json()? + "\n")?;
    let m = manifest("train-attack", &a.common, &cfg, started)?;
    println!("{}", out.commit(m)?.display());
    Ok(())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn attack(a: Attack) -> Result<()> {
    let started = now();
    let gen = load_generator(&a.generator)?;
    let inputs = png_files(&a.input)?;
    if inputs.is_empty() {
        bail!("no PNG images found in {}", a.input.display());
    }
    let mut out = Staged::new(&require_out(&a.common)?, a.common.force)?;
    for path in &inputs {
        let img = load_png::<f32>(path)?;
        let shape = img.shape().to_vec();
        let batch = img.reshape([1, shape[0], shape[1], shape[2]])?;
        let attacked = gen.apply(&batch)?.reshape(shape)?;
        let name = path.file_name().context("image has no file name")?;
        save_png(&attacked, &out.path(name))?;
    }
    eprintln!("attacked {} images", inputs.len());
    let config = serde_json::json!({ "generator": a.generator, "input": a.input });
    let m = manifest("attack", &a.common, config, started)?;
    println!("{}", out.commit(m)?.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    seed: u64,
    probe_draws: usize,
}

struct AttackRun {
    id: String,
    generator: GeneratorNet<f32>,
    targets: Vec<DetectorKind>,
}

fn attack_runs(dir: &Path) -> Result<Vec<AttackRun>> {
    let load = |d: &Path| -> Result<AttackRun> {
        let cfg: TrainConfig = read_json(&d.join(ATTACK_CONFIG_FILE))?;
        let id = d
            .canonicalize()?
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "attack".into());
        Ok(AttackRun { id, generator: load_generator(d)?, targets: cfg.targets()? })
    };
    if dir.join(GENERATOR_FILE).is_file() {
        return Ok(vec![load(dir)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(GENERATOR_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no attack runs found in {}", dir.display());
    }
    dirs.iter().map(|d| load(d)).collect()
}

pub fn eval(a: Eval) -> Result<()> {
    let started = now();
    let mut cfg = match &a.common.config {
        Some(p) => read_json(p)?,
        None => EvalConfig { seed: default_seed(), probe_draws: DEFAULT_PROBE_DRAWS },
    };
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.probe_draws {
        cfg.probe_draws = d;
    }
    let runs = attack_runs(&a.attacks)?;
    let victims: Vec<DetectorNet<f32>> = DetectorKind::ALL
        .into_iter()
        .filter(|&k| detector_path(&a.victims, k).is_file())
        .map(|k| load_detector(&a.victims, k))
        .collect::<Result<_>>()?;
    if victims.is_empty() {
        bail!("no detector checkpoints found in {}", a.victims.display());
    }
    let mut out = Staged::new(&require_out(&a.common)?, a.common.force)?;
    let corpus = Corpus::load(&a.corpus)?;
    let fakes = corpus.eval_set.filter_label(Label::Fake);
    ensure!(!fakes.is_empty(), "evaluation set in {} holds no fakes", a.corpus.display());
    let victim_refs: Vec<&DetectorNet<f32>> = victims.iter().collect();
    let entries: Vec<AttackEntry<'_, f32>> = runs
        .iter()
        .map(|r| AttackEntry { id: r.id.clone(), generator: &r.generator, trained_against: r.targets.clone() })
        .collect();
    let mut report = MetricsReport { rows: baseline_rows(&victim_refs, &fakes, EVAL_SOURCE, cfg.seed)? };
    report.extend(transfer_matrix(&entries, &victim_refs, &fakes, EVAL_SOURCE, cfg.seed)?);
    if !corpus.probe_set.is_empty() && cfg.probe_draws > 0 {
        for run in runs.iter().filter(|r| r.targets.len() == 1) {
            let Some(victim) = victims.iter().find(|v| v.kind() == run.targets[0]) else { continue };
            let seed = derive_seed(cfg.seed, &format!("probe:{}", run.id));
            let probe = block_alignment_probe(victim, &run.generator, &corpus.probe_set, cfg.probe_draws, seed)?;
            eprintln!(
                "[{}] probe mean {:.4} spread {:.4} aligned {:.4}",
                run.id, probe.mean_asr, probe.spread, probe.aligned_asr
            );
            report.rows.extend(probe.rows(victim.kind(), &run.id));
        }
    }
    report.validate()?;
    report.write_csv(&out.path(REPORT_FILE))?;
    fs::write(out.path(SUMMARY_FILE), render_markdown(&report))?;
    let m = manifest("eval", &a.common, &cfg, started)?;
    println!("{}", out.commit(m)?.display());
    Ok(())
}

fn report_files(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            report_files(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == REPORT_FILE) {
            found.push(p);
        }
    }
    Ok(())
}

pub fn report(a: Report) -> Result<()> {
    let started = now();
    let mut files = Vec::new();
    report_files(&a.input, &mut files)?;
    if files.is_empty() {
        bail!("no reports found in {}", a.input.display());
    }
    let mut merged = MetricsReport::default();
    for f in &files {
        merged.extend(MetricsReport::read_csv(f)?);
    }
    let markdown = render_markdown(&merged);
    print!("{markdown}");
    if a.common.out.is_some() {
        let mut out = Staged::new(&require_out(&a.common)?, a.common.force)?;
        fs::write(out.path(SUMMARY_FILE), &markdown)?;
        merged.write_csv(&out.path(REPORT_FILE))?;
        let m = manifest("report", &a.common, serde_json::json!({ "inputs": files }), started)?;
        out.commit(m)?;
    }
    Ok(())
}

pub fn selfcheck(a: Selfcheck) -> Result<()> {
    let started = now();
    let results = checks::run();
    for c in &results {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(dir) = &a.common.out {
        let mut out = Staged::new(dir, a.common.force)?;
        let rows: Vec<_> =
            results.iter().map(|c| serde_json::json!({ "name": c.name, "passed": c.passed, "detail": c.detail })).collect();
        fs::write(out.path("selfcheck.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
        let m = manifest("selfcheck", &a.common, serde_json::Value::Null, started)?;
        out.commit(m)?;
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    ensure!(failed == 0, "{failed} selfcheck(s) failed");
    Ok(())
}
