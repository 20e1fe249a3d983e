//! Pipeline commands behind the command-line front end.
//!
//! Each subcommand is an ordinary function over paths and a resolved
//! configuration, so the binary stays a thin argument parser and the same
//! entry points drive the integration tests. Configuration resolves as
//! command-line flag over config file over built-in default. All outputs are
//! written atomically (temp file + rename) and are byte-identical for
//! identical inputs and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ar::{self, BicCurve};
use crate::detect::{
    fit_baseline, load_models, prepare_baseline, score, BaselineModel, DamageReport, DetectConfig,
    OrderSpec, ScoreRow,
};
use crate::error::{Error, Result};
use crate::signals::{
    load_passages, AlignMethod, ChannelMeta, Condition, FileFormat, PassageRecord, SpeedBinRule,
};
use crate::simulate::{
    crh380_train, default_girder, generate_experiment, quarter_section_girder, ExperimentPlan,
    GirderSpec, Lane, Manifest,
};

/// Write bytes to `path` through a temp file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// On-disk configuration file (TOML or JSON), all fields optional.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
pub struct ConfigFile {
    pub alpha: Option<f64>,
    pub pca_threshold: Option<f64>,
    /// "auto" or a fixed order.
    pub order: Option<OrderValue>,
    pub order_min: Option<usize>,
    pub order_max: Option<usize>,
    pub split_fraction: Option<f64>,
    pub seed: Option<u64>,
    /// 0 means exact speed matching.
    pub speed_bin_width: Option<f64>,
    /// "truncate" or "linear_resample".
    pub align: Option<String>,
    pub allow_speed_mismatch: Option<bool>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum OrderValue {
    Fixed(usize),
    Named(String),
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }
}

/// Command-line overrides, highest precedence.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub pca_threshold: Option<f64>,
    pub order: Option<String>,
    pub order_min: Option<usize>,
    pub order_max: Option<usize>,
    pub split_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub speed_bin_width: Option<f64>,
    pub align: Option<String>,
    pub allow_speed_mismatch: bool,
}

/// Resolve the effective configuration: flags over file over defaults.
pub fn resolve_config(file: Option<&ConfigFile>, flags: &Overrides) -> Result<DetectConfig> {
    let mut cfg = DetectConfig::default();
    let empty = ConfigFile::default();
    let file = file.unwrap_or(&empty);

    if let Some(v) = file.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = file.pca_threshold {
        cfg.pca_threshold = v;
    }
    if let Some(v) = file.split_fraction {
        cfg.split_fraction = v;
    }
    if let Some(v) = file.seed {
        cfg.seed = v;
    }

    let mut order_kind: Option<String> = file.order.as_ref().map(|o| match o {
        OrderValue::Fixed(m) => m.to_string(),
        OrderValue::Named(s) => s.clone(),
    });
    let (mut order_min, mut order_max) = match cfg.order {
        OrderSpec::Auto { min, max } => (min, max),
        OrderSpec::Fixed(_) => (1, 150),
    };
    if let Some(v) = file.order_min {
        order_min = v;
    }
    if let Some(v) = file.order_max {
        order_max = v;
    }
    if let Some(v) = file.speed_bin_width {
        cfg.bin_rule = bin_rule_from_width(v);
    }
    if let Some(v) = &file.align {
        cfg.align = parse_align(v)?;
    }
    if let Some(v) = file.allow_speed_mismatch {
        cfg.allow_speed_mismatch = v;
    }

    // flags win
    if let Some(v) = flags.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = flags.pca_threshold {
        cfg.pca_threshold = v;
    }
    if let Some(v) = flags.split_fraction {
        cfg.split_fraction = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.order_min {
        order_min = v;
    }
    if let Some(v) = flags.order_max {
        order_max = v;
    }
    if let Some(v) = &flags.order {
        order_kind = Some(v.clone());
    }
    if let Some(v) = flags.speed_bin_width {
        cfg.bin_rule = bin_rule_from_width(v);
    }
    if let Some(v) = &flags.align {
        cfg.align = parse_align(v)?;
    }
    if flags.allow_speed_mismatch {
        cfg.allow_speed_mismatch = true;
    }

    cfg.order = match order_kind.as_deref() {
        None | Some("auto") => OrderSpec::Auto {
            min: order_min,
            max: order_max,
        },
        Some(s) => {
            let m: usize = s
                .parse()
                .map_err(|_| Error::Config(format!("order must be \"auto\" or a positive integer, got {s:?}")))?;
            if m == 0 {
                return Err(Error::Config("order must be positive".to_string()));
            }
            OrderSpec::Fixed(m)
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn bin_rule_from_width(width: f64) -> SpeedBinRule {
    if width > 0.0 {
        SpeedBinRule::Width(width)
    } else {
        SpeedBinRule::Exact
    }
}

fn parse_align(s: &str) -> Result<AlignMethod> {
    match s {
        "truncate" => Ok(AlignMethod::Truncate),
        "linear_resample" => Ok(AlignMethod::LinearResample),
        other => Err(Error::Config(format!(
            "align must be \"truncate\" or \"linear_resample\", got {other:?}"
        ))),
    }
}

fn detect_format(path: &Path) -> FileFormat {
    if path.extension().is_some_and(|e| e == "json") {
        FileFormat::Json
    } else {
        FileFormat::Csv
    }
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<PassageRecord>> {
    if paths.is_empty() {
        return Err(Error::invalid("no input data files given".to_string()));
    }
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_passages(p, detect_format(p))?);
    }
    Ok(out)
}

fn group_by_channel_bin(
    records: Vec<PassageRecord>,
    rule: &SpeedBinRule,
) -> BTreeMap<(String, String), Vec<PassageRecord>> {
    let mut groups: BTreeMap<(String, String), Vec<PassageRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.channel_id.clone(), rule.bin_label(r.speed_kmh));
        groups.entry(key).or_default().push(r);
    }
    groups
}

/// Which sensor set the simulator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GirderKind {
    /// Four sensors on each of the three key sections.
    Full,
    /// Only the quarter-span sensors.
    Quarter,
}

pub struct SimulateArgs {
    pub plan: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub dry_run: bool,
    pub girder: GirderKind,
    pub lane: Lane,
}

pub struct SimulateSummary {
    pub baseline_conditions: usize,
    pub damaged_conditions: usize,
    pub passages: usize,
    pub out_dir: PathBuf,
    pub dry_run: bool,
}

impl std::fmt::Display for SimulateSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.dry_run {
            write!(
                f,
                "dry run: {} baseline / {} damaged conditions, {} passages total",
                self.baseline_conditions, self.damaged_conditions, self.passages
            )
        } else {
            write!(
                f,
                "{} baseline / {} damaged conditions written ({} passages) to {}",
                self.baseline_conditions,
                self.damaged_conditions,
                self.passages,
                self.out_dir.display()
            )
        }
    }
}

pub fn load_plan(path: Option<&Path>) -> Result<ExperimentPlan> {
    let Some(path) = path else {
        return Ok(ExperimentPlan::default());
    };
    let text = std::fs::read_to_string(path)?;
    let plan: ExperimentPlan = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    };
    Ok(plan)
}

pub fn girder_for(kind: GirderKind) -> GirderSpec {
    match kind {
        GirderKind::Full => default_girder(),
        GirderKind::Quarter => quarter_section_girder(),
    }
}

/// Generate (or enumerate, under `--dry-run`) a dataset.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateSummary> {
    let mut plan = load_plan(args.plan.as_deref())?;
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    plan.validate()?;
    let girder = girder_for(args.girder);
    let conditions = plan.conditions();
    let baseline = conditions.iter().filter(|c| c.kind == Condition::Baseline).count();
    let damaged = conditions.len() - baseline;
    let passages = conditions.len() * plan.passages_per_condition;

    if args.dry_run {
        return Ok(SimulateSummary {
            baseline_conditions: baseline,
            damaged_conditions: damaged,
            passages,
            out_dir: args.out_dir.clone(),
            dry_run: true,
        });
    }
    let train = crh380_train(plan.speeds_kmh[0], args.lane);
    generate_experiment(&plan, &train, &girder, &args.out_dir)?;
    Ok(SimulateSummary {
        baseline_conditions: baseline,
        damaged_conditions: damaged,
        passages,
        out_dir: args.out_dir.clone(),
        dry_run: false,
    })
}

/// One fitted model, summarized for the console.
#[derive(Debug, Clone, Serialize)]
pub struct BaselineSummary {
    pub channel_id: String,
    pub speed_bin: String,
    pub passages: usize,
    pub retained_p: usize,
    pub order: usize,
    pub mu: f64,
    pub sigma: f64,
    pub cb: f64,
    pub degenerate: bool,
}

impl std::fmt::Display for BaselineSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "channel {} bin {}: k={} p={} m={} mu={:.4} sigma={:.4} cb={:.4}{}",
            self.channel_id,
            self.speed_bin,
            self.passages,
            self.retained_p,
            self.order,
            self.mu,
            self.sigma,
            self.cb,
            if self.degenerate { " (degenerate sigma)" } else { "" }
        )
    }
}

pub struct BaselineArgs {
    pub data: Vec<PathBuf>,
    pub model_dir: PathBuf,
    pub manifest: Option<PathBuf>,
    /// Write the averaged BIC curve here when the order is selected
    /// automatically.
    pub bic_csv: Option<PathBuf>,
}

/// Fit and persist one model per (channel, speed bin).
pub fn cmd_baseline(args: &BaselineArgs, config: &DetectConfig) -> Result<Vec<BaselineSummary>> {
    config.validate()?;
    let records = load_all(&args.data)?;
    let baseline: Vec<PassageRecord> = records
        .into_iter()
        .filter(|r| r.condition == Condition::Baseline)
        .collect();
    if baseline.is_empty() {
        return Err(Error::invalid("dataset contains no baseline passages".to_string()));
    }
    let groups = group_by_channel_bin(baseline, &config.bin_rule);

    // channel metadata for attribution, when a manifest is available
    let manifest_path = args.manifest.clone().or_else(|| {
        args.data
            .first()
            .and_then(|p| p.parent())
            .map(|d| d.join("manifest.json"))
            .filter(|p| p.exists())
    });
    let channel_metas: Vec<ChannelMeta> = match &manifest_path {
        Some(p) => Manifest::load(p)?.channels,
        None => Vec::new(),
    };

    // paper-style order selection: one averaged curve across all channels
    // and bins, then a shared optimum
    let mut effective = config.clone();
    if let OrderSpec::Auto { min, max } = config.order {
        let grid = OrderSpec::grid(min, max);
        let mut all_rows: Vec<Vec<f64>> = Vec::new();
        for recs in groups.values() {
            let prep = prepare_baseline(recs, config)?;
            all_rows.extend(prep.fit_residuals);
        }
        let slices: Vec<&[f64]> = all_rows.iter().map(|r| r.as_slice()).collect();
        let curve = ar::select_order(&slices, &grid)?;
        if let Some(path) = &args.bic_csv {
            let mut buf = Vec::new();
            curve.write_csv(&mut buf)?;
            write_atomic(path, &buf)?;
        }
        effective.order = OrderSpec::Fixed(curve.optimum);
    }

    let mut summaries = Vec::new();
    for ((channel, bin), recs) in &groups {
        let mut model = fit_baseline(recs, &effective).map_err(|e| {
            Error::invalid(format!("channel {channel} bin {bin}: {e}"))
        })?;
        model.channel_meta = channel_metas.iter().find(|m| &m.channel_id == channel).cloned();
        model.save(&args.model_dir)?;
        summaries.push(BaselineSummary {
            channel_id: model.channel_id.clone(),
            speed_bin: model.speed_bin.clone(),
            passages: recs.len(),
            retained_p: model.pca.retained_p,
            order: model.ar.order,
            mu: model.threshold.mu,
            sigma: model.threshold.sigma,
            cb: model.threshold.cb,
            degenerate: model.threshold.degenerate,
        });
    }
    Ok(summaries)
}

pub struct DetectArgs {
    pub data: Vec<PathBuf>,
    pub model_dir: PathBuf,
    pub report_dir: PathBuf,
}

pub struct DetectOutcome {
    pub report_json: PathBuf,
    pub report_csv: PathBuf,
    pub any_outlier: bool,
    pub rows: usize,
}

/// Score a test set against the model store and write the report files.
///
/// The caller maps `any_outlier` to the exit-code contract: 0 healthy,
/// 2 damage flagged.
pub fn cmd_detect(args: &DetectArgs, config: &DetectConfig) -> Result<DetectOutcome> {
    config.validate()?;
    let models = load_models(&args.model_dir)?;
    if models.is_empty() {
        return Err(Error::invalid(format!(
            "no models in {}",
            args.model_dir.display()
        )));
    }
    let mut by_key: BTreeMap<(String, String), &BaselineModel> = BTreeMap::new();
    for m in &models {
        by_key.insert((m.channel_id.clone(), m.speed_bin.clone()), m);
    }

    let records = load_all(&args.data)?;
    let groups = group_by_channel_bin(records, &config.bin_rule);

    let mut rows: Vec<ScoreRow> = Vec::new();
    for ((channel, bin), recs) in &groups {
        let model = match by_key.get(&(channel.clone(), bin.clone())) {
            Some(m) => *m,
            None if config.allow_speed_mismatch => {
                // fall back to any model of this channel
                match models.iter().find(|m| &m.channel_id == channel) {
                    Some(m) => m,
                    None => {
                        return Err(Error::MissingModel {
                            channel: channel.clone(),
                            speed_bin: bin.clone(),
                        })
                    }
                }
            }
            None => {
                return Err(Error::MissingModel {
                    channel: channel.clone(),
                    speed_bin: bin.clone(),
                })
            }
        };
        rows.extend(score(recs, model, config)?);
    }
    rows.sort_by(|a, b| (&a.passage_id, &a.channel_id).cmp(&(&b.passage_id, &b.channel_id)));

    let metas: Vec<ChannelMeta> = models.iter().filter_map(|m| m.channel_meta.clone()).collect();
    let report = DamageReport::from_rows(rows, &metas);

    std::fs::create_dir_all(&args.report_dir)?;
    let report_json = args.report_dir.join("report.json");
    let report_csv = args.report_dir.join("report.csv");
    write_atomic(&report_json, &serde_json::to_vec_pretty(&report)?)?;
    let mut csv_buf = Vec::new();
    report.write_csv(&mut csv_buf)?;
    write_atomic(&report_csv, &csv_buf)?;

    Ok(DetectOutcome {
        report_json,
        report_csv,
        any_outlier: report.any_outlier(),
        rows: report.rows.len(),
    })
}

pub struct ReportArgs {
    pub reports: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

pub struct ReportSummary {
    pub detection_matrix_csv: PathBuf,
    pub df_vs_delta_csv: PathBuf,
    pub components_detected: usize,
    pub rows: usize,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Merge detect reports into summary tables and plot-ready CSVs.
pub fn cmd_report(args: &ReportArgs) -> Result<ReportSummary> {
    if args.reports.is_empty() {
        return Err(Error::invalid("no report files given".to_string()));
    }
    let mut reports = Vec::new();
    for p in &args.reports {
        let data = std::fs::read(p)?;
        let r: DamageReport = serde_json::from_slice(&data)
            .map_err(|e| Error::parse(p.display().to_string(), None, format!("{e}")))?;
        reports.push(r);
    }

    // detection matrix: a component is detected when any report's channel
    // flagged it
    let mut matrix: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for r in &reports {
        for v in &r.attribution {
            let key = (v.section.label().to_string(), v.component.id().to_string());
            let entry = matrix.entry(key).or_default();
            for ch in &v.flagged_channels {
                if !entry.contains(ch) {
                    entry.push(ch.clone());
                }
            }
        }
    }
    let mut matrix_csv = String::from("section,component,detected,flagged_channels\n");
    let mut detected_count = 0usize;
    for ((section, component), channels) in &matrix {
        let detected = !channels.is_empty();
        detected_count += detected as usize;
        let _ = writeln!(
            matrix_csv,
            "{section},{component},{detected},{}",
            channels.join(";")
        );
    }

    // DF vs stiffness reduction, per channel: medians over damaged rows
    let mut df_groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut cb_by_channel: BTreeMap<String, f64> = BTreeMap::new();
    let mut total_rows = 0usize;
    for r in &reports {
        total_rows += r.rows.len();
        for row in &r.rows {
            cb_by_channel.entry(row.channel_id.clone()).or_insert(row.cb);
            if let Some(d) = &row.damage {
                df_groups
                    .entry((row.channel_id.clone(), crate::signals::format_num(d.delta)))
                    .or_default()
                    .push(row.df);
            }
        }
    }
    let mut df_csv = String::from("channel_id,delta,median_df,cb\n");
    for ((channel, delta), dfs) in &mut df_groups {
        let med = median(dfs);
        let cb = cb_by_channel.get(channel).copied().unwrap_or(f64::NAN);
        let _ = writeln!(df_csv, "{channel},{delta},{med},{cb}");
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let matrix_path = args.out_dir.join("detection_matrix.csv");
    let df_path = args.out_dir.join("df_vs_delta.csv");
    write_atomic(&matrix_path, matrix_csv.as_bytes())?;
    write_atomic(&df_path, df_csv.as_bytes())?;

    Ok(ReportSummary {
        detection_matrix_csv: matrix_path,
        df_vs_delta_csv: df_path,
        components_detected: detected_count,
        rows: total_rows,
    })
}

pub struct BicArgs {
    pub data: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Averaged BIC curve over the PC-removed baseline signals of a dataset.
pub fn cmd_bic(args: &BicArgs, config: &DetectConfig) -> Result<BicCurve> {
    config.validate()?;
    let records = load_all(&args.data)?;
    let baseline: Vec<PassageRecord> = records
        .into_iter()
        .filter(|r| r.condition == Condition::Baseline)
        .collect();
    if baseline.is_empty() {
        return Err(Error::invalid("dataset contains no baseline passages".to_string()));
    }
    let (min, max) = match config.order {
        OrderSpec::Auto { min, max } => (min, max),
        OrderSpec::Fixed(m) => (1, m),
    };
    let grid = OrderSpec::grid(min, max);
    let groups = group_by_channel_bin(baseline, &config.bin_rule);
    let mut all_rows: Vec<Vec<f64>> = Vec::new();
    for recs in groups.values() {
        let prep = prepare_baseline(recs, config)?;
        all_rows.extend(prep.fit_residuals);
    }
    let slices: Vec<&[f64]> = all_rows.iter().map(|r| r.as_slice()).collect();
    let curve = ar::select_order(&slices, &grid)?;
    if let Some(path) = &args.out {
        let mut buf = Vec::new();
        curve.write_csv(&mut buf)?;
        write_atomic(path, &buf)?;
    }
    Ok(curve)
}
