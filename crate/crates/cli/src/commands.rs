//! One function per subcommand. Each reads its inputs from files under the
//! output directory, writes its artifacts there, and records them in
//! `manifests/<command>.json` together with the resolved configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fairssl::cka::{conditioned_grid, Condition};
use fairssl::dataio::{generate_synthetic, resolve_data_path, stratified_split, UNKNOWN};
use fairssl::fairmetrics::{
    compare_models, fairness_report, parity_csv, roc_curve, segment_table, segment_table_csv, FairnessReport,
    PredictionTable, ProtectedAttribute,
};
use fairssl::models::Checkpoint;
use fairssl::plot;
use fairssl::trainer::{activation_dump, loss_csv, predict, EpochLog, RunConfig, Trainer};
use fairssl::{ActivationDump, Dataset, SimilarityGrid};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{finetune_name, ExperimentConfig};
use crate::error::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PRETRAIN_RUN: &str = "pretrain";
pub const SUPERVISED_RUN: &str = "supervised";

/// Per-command flags from the command line.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub mask: Option<String>,
    pub attribute: Option<String>,
    pub segment: Option<String>,
    pub checkpoint: Option<PathBuf>,
}

/// Resolved configuration plus the output root, with the artifact layout:
///
/// ```text
/// <out>/data/                      dataset (unless data.dir is set)
/// <out>/runs/<model>/              checkpoint.bin, loss.csv, manifest.json
/// <out>/eval/predictions/<m>.csv   per-window scores on the evaluation split
/// <out>/eval/reports/<m>.{json,csv}
/// <out>/eval/activations/<m>.bin
/// <out>/cka/<a>__<b>/<condition>.{json,csv,svg}
/// <out>/report/                    tables, ROC, parity and CKA figures
/// <out>/manifests/<command>.json
/// ```
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    written: Vec<PathBuf>,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, out: PathBuf) -> Self {
        Context {
            cfg,
            out,
            written: Vec::new(),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.cfg
            .data
            .dir
            .as_deref()
            .map_or_else(|| self.out.join("data"), resolve_data_path)
    }

    pub fn run_dir(&self, model: &str) -> PathBuf {
        self.out.join("runs").join(model)
    }

    pub fn predictions_path(&self, model: &str) -> PathBuf {
        self.out.join("eval").join("predictions").join(format!("{model}.csv"))
    }

    pub fn report_path(&self, model: &str) -> PathBuf {
        self.out.join("eval").join("reports").join(format!("{model}.json"))
    }

    pub fn activations_path(&self, model: &str) -> PathBuf {
        self.out.join("eval").join("activations").join(format!("{model}.bin"))
    }

    pub fn cka_dir(&self, a: &str, b: &str) -> PathBuf {
        self.out.join("cka").join(format!("{a}__{b}"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }

    fn write(&mut self, path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, bytes)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(path, text)
    }

    /// Writes `manifests/<command>.json`: the resolved config and the
    /// SHA-256 of every artifact the command wrote.
    fn finish(&mut self, command: &str) -> CliResult<()> {
        let mut artifacts = BTreeMap::new();
        for p in std::mem::take(&mut self.written) {
            let rel = p.strip_prefix(&self.out).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            artifacts.insert(rel, hex::encode(Sha256::digest(fs::read(&p)?)));
        }
        let manifest = json!({
            "command": command,
            "config": self.cfg,
            "artifacts": artifacts,
        });
        let path = self.out.join("manifests").join(format!("{command}.json"));
        fs::create_dir_all(path.parent().expect("manifest dir"))?;
        fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    fn load_dataset(&self) -> CliResult<Dataset> {
        let dir = self.data_dir();
        if !dir.join("manifest.json").exists() {
            return Err(CliError::Data(format!(
                "no dataset at {} (run `synth` first or set data.dir)",
                dir.display()
            )));
        }
        Ok(Dataset::load(&dir)?)
    }

    fn protected_attributes(&self, data: &Dataset) -> CliResult<Vec<ProtectedAttribute>> {
        let schema = data.attributes();
        if self.cfg.fairness.attributes.is_empty() {
            return schema
                .iter()
                .map(|s| ProtectedAttribute::from_schema(s, None).map_err(CliError::from))
                .collect();
        }
        self.cfg
            .fairness
            .attributes
            .iter()
            .map(|choice| {
                let s = schema.iter().find(|s| s.name == choice.name).ok_or_else(|| {
                    CliError::Config(format!("fairness.attributes: dataset has no attribute {:?}", choice.name))
                })?;
                Ok(ProtectedAttribute::from_schema(s, choice.privileged.as_deref())?)
            })
            .collect()
    }

    /// Run directories holding a checkpoint, sorted by name.
    fn trained_models(&self) -> CliResult<Vec<String>> {
        let root = self.out.join("runs");
        let mut names = Vec::new();
        if root.is_dir() {
            for entry in fs::read_dir(&root)? {
                let entry = entry?;
                if entry.path().join(CHECKPOINT_FILE).is_file() {
                    names.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    fn save_run(&mut self, name: &str, trainer: &Trainer<'_>) -> CliResult<()> {
        let dir = self.run_dir(name);
        self.write(&dir.join(CHECKPOINT_FILE), trainer.checkpoint().to_bytes()?)?;
        self.write(&dir.join(LOSS_FILE), loss_csv(trainer.log()))?;
        let manifest = json!({ "model": name, "run": trainer.manifest() });
        self.write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        log::info!(
            "{name}: {} epochs, final loss {:.6}",
            trainer.epochs_completed(),
            trainer.log().last().map_or(f64::NAN, |e| e.loss)
        );
        Ok(())
    }
}

fn read_loss_log(path: &Path) -> CliResult<Vec<EpochLog>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).map_err(fairssl::Error::from)?;
    let mut log = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(fairssl::Error::from)?;
        let num = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::Data(format!("malformed loss log {}", path.display())))
        };
        log.push(EpochLog { epoch: num(0)? as usize, loss: num(1)?, lr: num(2)? });
    }
    Ok(log)
}

/// Starts `cfg` from scratch, or resumes it from `resume` when given.
fn train<'d>(
    ctx: &mut Context,
    name: &str,
    cfg: RunConfig,
    data: &'d Dataset,
    resume: Option<&Path>,
    fresh: impl FnOnce(RunConfig, &'d Dataset, &[usize]) -> fairssl::Result<Trainer<'d>>,
) -> CliResult<()> {
    let indices = data.indices(fairssl::Split::Train)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let log = read_loss_log(&path.with_file_name(LOSS_FILE))?;
            Trainer::resume(cfg, data, &indices, ckpt, log)?
        }
        None => fresh(cfg, data, &indices)?,
    };
    trainer.run()?;
    ctx.save_run(name, &trainer)
}

pub fn cmd_synth(ctx: &mut Context, _flags: &Flags) -> CliResult<()> {
    let mut spec = ctx.cfg.data.synthetic.clone();
    spec.seed = ctx.cfg.seed;
    let mut data = generate_synthetic(&spec)?;
    let split = stratified_split(&data, ctx.cfg.data.split, ctx.cfg.seed)?;
    for w in &split.warnings {
        log::warn!("{w}");
    }
    let counts: BTreeMap<&str, usize> = fairssl::Split::ALL
        .iter()
        .map(|s| (s.name(), split.assignment.iter().filter(|a| *a == s).count()))
        .collect();
    data.set_split(split.assignment.clone())?;
    let dir = ctx.data_dir();
    data.save(&dir)?;
    for f in ["manifest.json", "windows.f32", "labels.csv", "attributes.csv"] {
        ctx.written.push(dir.join(f));
    }
    let summary = json!({
        "windows": data.len(),
        "split_counts": counts,
        "stratified_by": split.stratified_by,
        "warnings": split.warnings,
    });
    ctx.write_json(&dir.join("split.json"), &summary)?;
    ctx.finish("synth")
}

pub fn cmd_pretrain(ctx: &mut Context, flags: &Flags) -> CliResult<()> {
    let data = ctx.load_dataset()?;
    let cfg = ctx.cfg.pretrain_run();
    train(ctx, PRETRAIN_RUN, cfg, &data, flags.checkpoint.as_deref(), Trainer::pretrain)?;
    ctx.finish("pretrain")
}

pub fn cmd_finetune(ctx: &mut Context, flags: &Flags) -> CliResult<()> {
    let masks = ctx.cfg.masks(flags.mask.as_deref())?;
    let data = ctx.load_dataset()?;
    let source = flags
        .checkpoint
        .clone()
        .unwrap_or_else(|| ctx.run_dir(PRETRAIN_RUN).join(CHECKPOINT_FILE));
    if !source.exists() {
        return Err(CliError::Data(format!(
            "no pretrained checkpoint at {} (run `pretrain` first or pass --checkpoint)",
            source.display()
        )));
    }
    let pretrained = Checkpoint::load(&source)?;
    for mask in masks {
        let name = finetune_name(mask);
        log::info!("fine-tuning {name} ({})", mask.label());
        let cfg = ctx.cfg.finetune_run(mask);
        train(ctx, &name, cfg, &data, None, |cfg, data, idx| {
            Trainer::finetune(cfg, data, idx, &pretrained)
        })?;
    }
    ctx.finish("finetune")
}

pub fn cmd_supervised(ctx: &mut Context, flags: &Flags) -> CliResult<()> {
    let data = ctx.load_dataset()?;
    let cfg = ctx.cfg.supervised_run();
    train(ctx, SUPERVISED_RUN, cfg, &data, flags.checkpoint.as_deref(), Trainer::supervised)?;
    ctx.finish("supervised")
}

/// Scores every trained classifier (or just `--checkpoint`) on the
/// evaluation split and dumps every model's activations for CKA.
pub fn cmd_evaluate(ctx: &mut Context, flags: &Flags) -> CliResult<()> {
    let data = ctx.load_dataset()?;
    let indices = data.indices(ctx.cfg.fairness.split)?;
    if indices.is_empty() {
        return Err(CliError::Data(format!("evaluation split {} is empty", ctx.cfg.fairness.split.name())));
    }
    let attrs = ctx.protected_attributes(&data)?;
    let models: Vec<(String, PathBuf)> = match &flags.checkpoint {
        Some(path) => {
            let name = path
                .parent()
                .and_then(Path::file_name)
                .map_or_else(|| "model".to_string(), |n| n.to_string_lossy().into_owned());
            vec![(name, path.clone())]
        }
        None => ctx
            .trained_models()?
            .into_iter()
            .map(|m| {
                let p = ctx.run_dir(&m).join(CHECKPOINT_FILE);
                (m, p)
            })
            .collect(),
    };
    if models.is_empty() {
        return Err(CliError::Data("no trained models to evaluate".into()));
    }
    let report_cfg = ctx.cfg.report_config();
    for (name, path) in models {
        let ckpt = Checkpoint::load(&path)?;
        let dump = activation_dump(&name, &ckpt.params, &data, &indices)?;
        ctx.write(&ctx.activations_path(&name), dump.to_bytes()?)?;
        if ckpt.params.output_dim() != 2 {
            log::info!("{name}: no classification head, activations only");
            continue;
        }
        let table = predict(&name, &ckpt.params, &data, &indices)?;
        ctx.write(&ctx.predictions_path(&name), table.to_csv()?)?;
        let report = fairness_report(&table, &attrs, &report_cfg)?;
        let json_path = ctx.report_path(&name);
        ctx.write_json(&json_path, &report)?;
        ctx.write(&json_path.with_extension("csv"), report.to_csv()?)?;
        log::info!("{name}: AUC {:.4}", report.general.point);
    }
    ctx.finish("evaluate")
}

fn file_label(condition: &Condition) -> String {
    condition.label().replace('=', "_")
}

/// Layer-by-layer CKA grids between `cka.model_a` and `cka.model_b`: over
/// all windows, per segment of the attribute, and over a balanced subset.
/// `--segment` restricts to one segment (or `random`).
pub fn cmd_cka(ctx: &mut Context, flags: &Flags) -> CliResult<()> {
    let (a_name, b_name) = (ctx.cfg.cka.model_a.clone(), ctx.cfg.cka.model_b.clone());
    let load = |name: &str| -> CliResult<ActivationDump> {
        let p = ctx.activations_path(name);
        if !p.exists() {
            return Err(CliError::Data(format!("no activation dump for {name} at {} (run `evaluate`)", p.display())));
        }
        Ok(ActivationDump::load(&p)?)
    };
    let (a, b) = (load(&a_name)?, load(&b_name)?);
    let attribute = flags.attribute.clone().unwrap_or_else(|| ctx.cfg.cka.attribute.clone());
    let values = a.attribute(&attribute)?;
    let conditions = match flags.segment.as_deref() {
        Some("random") => vec![Condition::Random { attribute: attribute.clone() }],
        Some(seg) => vec![Condition::Segment { attribute: attribute.clone(), segment: seg.to_string() }],
        None => {
            let mut segments: Vec<&String> = values.iter().filter(|v| *v != UNKNOWN).collect();
            segments.sort();
            segments.dedup();
            let mut c = vec![Condition::All];
            c.extend(segments.into_iter().map(|s| Condition::Segment {
                attribute: attribute.clone(),
                segment: s.clone(),
            }));
            c.push(Condition::Random { attribute: attribute.clone() });
            c
        }
    };
    let dir = ctx.cka_dir(&a_name, &b_name);
    for cond in conditions {
        let grid = conditioned_grid(&a, &b, &cond, ctx.cfg.cka.min_n, ctx.cfg.seed)?;
        let stem = dir.join(file_label(&cond));
        ctx.write_json(&stem.with_extension("json"), &grid)?;
        ctx.write(&stem.with_extension("csv"), grid.to_csv())?;
        ctx.write(&stem.with_extension("svg"), grid.to_svg())?;
    }
    ctx.finish("cka")
}

/// The attributes a report was computed over, rebuilt from its segments.
fn report_attributes(report: &FairnessReport) -> CliResult<Vec<ProtectedAttribute>> {
    let mut order: Vec<String> = Vec::new();
    let mut segs: BTreeMap<String, (Vec<String>, Option<String>)> = BTreeMap::new();
    for s in &report.segments {
        if s.segment == UNKNOWN {
            continue;
        }
        if !segs.contains_key(&s.attribute) {
            order.push(s.attribute.clone());
        }
        let entry = segs.entry(s.attribute.clone()).or_default();
        entry.0.push(s.segment.clone());
        if s.privileged {
            entry.1 = Some(s.segment.clone());
        }
    }
    order
        .into_iter()
        .map(|name| {
            let (segments, privileged) = segs.remove(&name).expect("collected");
            let privileged =
                privileged.ok_or_else(|| CliError::Data(format!("report has no privileged segment for {name}")))?;
            Ok(ProtectedAttribute::new(name, segments, privileged)?)
        })
        .collect()
}

fn csv_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "inf".into()
    }
}

/// Merges evaluation artifacts into report tables and figures. Reads only
/// files written by `evaluate` and `cka`.
pub fn cmd_report(ctx: &mut Context, _flags: &Flags) -> CliResult<()> {
    let dir = ctx.out.join("eval").join("reports");
    let mut names: Vec<String> = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "json") {
                names.push(p.file_stem().expect("file").to_string_lossy().into_owned());
            }
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(CliError::Data("no evaluation reports found (run `evaluate`)".into()));
    }
    let mut reports = Vec::new();
    let mut tables = Vec::new();
    for n in &names {
        let report: FairnessReport = serde_json::from_slice(&fs::read(ctx.report_path(n))?)?;
        reports.push(report);
        tables.push(PredictionTable::load(&ctx.predictions_path(n)).map(|mut t| {
            t.model = n.clone();
            t
        })?);
    }
    let out = ctx.report_dir();
    let baseline = ctx.cfg.fairness.baseline.clone();
    let base = names.iter().position(|n| *n == baseline);

    // per-model segment audits and the pairwise tables against the baseline
    for r in &reports {
        ctx.write(&out.join(format!("segments_{}.csv", r.model)), r.to_csv()?)?;
    }
    if let Some(bi) = base {
        let attrs = report_attributes(&reports[bi])?;
        let mut cmp = csv::Writer::from_writer(Vec::new());
        cmp.write_record(["model_a", "model_b", "deviation_a", "deviation_b", "difference", "p_value", "replicates"])
            .map_err(fairssl::Error::from)?;
        for (i, r) in reports.iter().enumerate() {
            if i == bi {
                continue;
            }
            let rows = segment_table(&reports[bi], r)?;
            ctx.write(&out.join(format!("table1_{baseline}_vs_{}.csv", r.model)), segment_table_csv(&rows)?)?;
            match compare_models(&tables[bi], &tables[i], &attrs, ctx.cfg.fairness.threshold, &ctx.cfg.report_config().bootstrap) {
                Ok(c) => cmp
                    .write_record([
                        baseline.clone(),
                        r.model.clone(),
                        csv_float(c.deviation_a),
                        csv_float(c.deviation_b),
                        csv_float(c.difference),
                        csv_float(c.p_value),
                        c.replicates.to_string(),
                    ])
                    .map_err(fairssl::Error::from)?,
                Err(e) => {
                    log::warn!("comparison {baseline} vs {}: {e}", r.model);
                    cmp.write_record([baseline.as_str(), &r.model, "n/a", "n/a", "n/a", "n/a", "0"])
                        .map_err(fairssl::Error::from)?;
                }
            }
        }
        let bytes = cmp.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        ctx.write(&out.join("comparison.csv"), bytes)?;
    } else {
        log::warn!("baseline model {baseline:?} not evaluated; skipping segment tables and comparisons");
    }

    // ROC data and curves
    let mut roc = String::from("model,threshold,fpr,tpr\n");
    let mut series = Vec::new();
    for t in &tables {
        let points = roc_curve(&t.scores, &t.labels)?;
        for p in &points {
            roc.push_str(&format!("{},{},{:.6},{:.6}\n", t.model, csv_float(p.threshold), p.fpr, p.tpr));
        }
        series.push((t.model.clone(), points.iter().map(|p| (p.fpr, p.tpr)).collect()));
    }
    ctx.write(&out.join("roc.csv"), roc)?;
    ctx.write(
        &out.join("roc.svg"),
        plot::line_chart("ROC on the evaluation split", &series, "false positive rate", "true positive rate", true),
    )?;

    // parity deviation per model
    ctx.write(&out.join("parity.csv"), parity_csv(&reports)?)?;
    let values: Vec<f64> = reports.iter().map(|r| r.parity.as_ref().map_or(f64::NAN, |p| p.mean)).collect();
    let reference = base.map(|b| values[b]).filter(|v| v.is_finite());
    ctx.write(
        &out.join("parity.svg"),
        plot::bar_chart("Deviation from error-rate parity", &names, &values, reference, "mean |ERR - 1|"),
    )?;

    // CKA grids, re-rendered from their JSON
    let cka_root = ctx.out.join("cka");
    if cka_root.is_dir() {
        let mut grids = Vec::new();
        for pair in fs::read_dir(&cka_root)? {
            let pair = pair?.path();
            if !pair.is_dir() {
                continue;
            }
            for f in fs::read_dir(&pair)? {
                let f = f?.path();
                if f.extension().is_some_and(|e| e == "json") {
                    grids.push(f);
                }
            }
        }
        grids.sort();
        for g in grids {
            let grid: SimilarityGrid = serde_json::from_slice(&fs::read(&g)?)?;
            let stem = format!("cka_{}__{}__{}", grid.model_a, grid.model_b, file_label(&grid.condition));
            ctx.write(&out.join(format!("{stem}.csv")), grid.to_csv())?;
            ctx.write(&out.join(format!("{stem}.svg")), grid.to_svg())?;
        }
    }
    ctx.finish("report")
}
