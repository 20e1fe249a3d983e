//! Passage data model, file ingestion, and alignment.
//!
//! A [`PassageRecord`] is the strain time history of one train passage seen by
//! one channel. Records for one channel and speed bin are aligned into a
//! [`PassageMatrix`] (passages as rows) which is what the decomposition and
//! feature stages consume. Loading and alignment are pure; all types are
//! immutable after construction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of a record's peak absolute value that marks the alignment trigger.
pub const TRIGGER_FRACTION: f64 = 0.05;

/// Cross-section where a sensor or a damaged component lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Section {
    #[serde(rename = "L/4")]
    Quarter,
    #[serde(rename = "L/2")]
    Mid,
    #[serde(rename = "3L/4")]
    ThreeQuarter,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::Quarter, Section::Mid, Section::ThreeQuarter];

    pub fn label(self) -> &'static str {
        match self {
            Section::Quarter => "L/4",
            Section::Mid => "L/2",
            Section::ThreeQuarter => "3L/4",
        }
    }

    pub fn parse(s: &str) -> Option<Section> {
        match s {
            "L/4" => Some(Section::Quarter),
            "L/2" => Some(Section::Mid),
            "3L/4" => Some(Section::ThreeQuarter),
            _ => None,
        }
    }

    /// Longitudinal coordinate of the section for a given span.
    pub fn coord(self, span: f64) -> f64 {
        match self {
            Section::Quarter => span / 4.0,
            Section::Mid => span / 2.0,
            Section::ThreeQuarter => 3.0 * span / 4.0,
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One of the six plate components a box-girder cross-section is divided into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    BottomPlate,
    LeftWeb,
    RightWeb,
    TopPlate,
    LeftTrackPlate,
    RightTrackPlate,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::BottomPlate,
        Component::LeftWeb,
        Component::RightWeb,
        Component::TopPlate,
        Component::LeftTrackPlate,
        Component::RightTrackPlate,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Component::BottomPlate => "bottom_plate",
            Component::LeftWeb => "left_web",
            Component::RightWeb => "right_web",
            Component::TopPlate => "top_plate",
            Component::LeftTrackPlate => "left_track_plate",
            Component::RightTrackPlate => "right_track_plate",
        }
    }

    pub fn parse(s: &str) -> Option<Component> {
        Component::ALL.into_iter().find(|c| c.id() == s)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Stiffness-reduction damage applied to one component of one section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamageSpec {
    pub section: Section,
    pub component: Component,
    /// Stiffness reduction factor, `0 <= delta < 1`.
    pub delta: f64,
}

impl DamageSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) || !self.delta.is_finite() {
            return Err(Error::invalid(format!(
                "damage delta must lie in [0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Whether a passage was recorded on the healthy or the damaged structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Baseline,
    Damaged,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Damaged => "damaged",
        }
    }
}

/// Static description of one strain channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelMeta {
    pub channel_id: String,
    pub section: Section,
    /// Human label of the measuring point, e.g. "P3b".
    pub position_label: String,
    /// Meters along the span.
    pub longitudinal_coord: f64,
    /// Components this channel can observe.
    pub component_affinity: Vec<Component>,
}

impl ChannelMeta {
    pub fn validate(&self, span: f64) -> Result<()> {
        if !(0.0..=span).contains(&self.longitudinal_coord) {
            return Err(Error::invalid(format!(
                "channel {}: longitudinal_coord {} outside [0, {span}]",
                self.channel_id, self.longitudinal_coord
            )));
        }
        Ok(())
    }
}

/// One train passage for one strain channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassageRecord {
    pub passage_id: String,
    pub channel_id: String,
    /// Strain samples in microstrain.
    pub samples: Vec<f64>,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    pub speed_kmh: f64,
    pub weight_class: String,
    pub irregularity: String,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damage: Option<DamageSpec>,
}

fn default_sample_rate() -> f64 {
    1000.0
}

impl PassageRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "passage {} channel {}: non-finite sample at index {bad}",
                self.passage_id, self.channel_id
            )));
        }
        if self.condition == Condition::Baseline && self.damage.is_some() {
            return Err(Error::invalid(format!(
                "passage {}: baseline condition must not carry a damage spec",
                self.passage_id
            )));
        }
        if let Some(d) = &self.damage {
            d.validate()?;
        }
        if !(self.speed_kmh.is_finite() && self.speed_kmh > 0.0) {
            return Err(Error::invalid(format!(
                "passage {}: speed must be positive, got {}",
                self.passage_id, self.speed_kmh
            )));
        }
        Ok(())
    }
}

/// How train speeds are grouped into baseline bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpeedBinRule {
    /// Every distinct speed value is its own bin.
    Exact,
    /// Speeds are snapped to the nearest multiple of the given width (km/h).
    Width(f64),
}

impl Default for SpeedBinRule {
    fn default() -> Self {
        SpeedBinRule::Exact
    }
}

impl SpeedBinRule {
    pub fn bin_label(&self, speed_kmh: f64) -> String {
        let v = match self {
            SpeedBinRule::Exact => speed_kmh,
            SpeedBinRule::Width(w) => (speed_kmh / w).round() * w,
        };
        format_num(v)
    }
}

/// Shortest text form of a float that still reparses exactly.
pub(crate) fn format_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Alignment strategy used by [`align_to_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMethod {
    /// Take `target_n` samples starting at the trigger index.
    Truncate,
    /// Linearly interpolate the whole record onto `target_n` points.
    LinearResample,
}

/// Aligned passages for one channel and speed bin, passages as rows.
#[derive(Debug, Clone)]
pub struct PassageMatrix {
    pub channel_id: String,
    pub speed_bin: String,
    pub passage_ids: Vec<String>,
    /// `k x n`: one row per passage.
    pub data: DMatrix<f64>,
}

impl PassageMatrix {
    pub fn k(&self) -> usize {
        self.data.nrows()
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }
}

/// Index of the first sample whose absolute value exceeds 5% of the record's
/// peak absolute value. `None` for an all-zero record.
pub fn trigger_index(samples: &[f64]) -> Option<usize> {
    let peak = samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return None;
    }
    let threshold = TRIGGER_FRACTION * peak;
    samples.iter().position(|v| v.abs() > threshold)
}

/// Longest aligned length shared by all records: the minimum post-trigger
/// length, rounded down to a multiple of 10.
pub fn common_target_n(records: &[PassageRecord]) -> Result<usize> {
    let mut min_len = usize::MAX;
    for r in records {
        let t = trigger_index(&r.samples).ok_or_else(|| {
            Error::invalid(format!(
                "passage {} channel {}: all-zero record has no trigger",
                r.passage_id, r.channel_id
            ))
        })?;
        min_len = min_len.min(r.samples.len() - t);
    }
    if min_len == usize::MAX {
        return Err(Error::invalid("no records given".to_string()));
    }
    let n = (min_len / 10) * 10;
    if n == 0 {
        return Err(Error::invalid(format!(
            "aligned length {min_len} too short (less than 10 samples after trigger)"
        )));
    }
    Ok(n)
}

/// Align a single record to `target_n` samples.
pub fn align_record(record: &PassageRecord, target_n: usize, method: AlignMethod) -> Result<Vec<f64>> {
    if target_n == 0 {
        return Err(Error::invalid("target_n must be positive".to_string()));
    }
    match method {
        AlignMethod::Truncate => {
            let t = trigger_index(&record.samples).ok_or_else(|| {
                Error::invalid(format!(
                    "passage {}: all-zero record has no trigger",
                    record.passage_id
                ))
            })?;
            if record.samples.len() - t < target_n {
                return Err(Error::invalid(format!(
                    "passage {}: only {} samples after trigger, need {target_n}",
                    record.passage_id,
                    record.samples.len() - t
                )));
            }
            Ok(record.samples[t..t + target_n].to_vec())
        }
        AlignMethod::LinearResample => {
            let s = &record.samples;
            if s.is_empty() {
                return Err(Error::invalid(format!(
                    "passage {}: empty record",
                    record.passage_id
                )));
            }
            if target_n == 1 {
                return Ok(vec![s[0]]);
            }
            let n = s.len();
            let step = (n - 1) as f64 / (target_n - 1) as f64;
            let out = (0..target_n)
                .map(|i| {
                    let p = i as f64 * step;
                    let j = (p.floor() as usize).min(n - 1);
                    let frac = p - j as f64;
                    if j + 1 < n {
                        s[j] * (1.0 - frac) + s[j + 1] * frac
                    } else {
                        s[j]
                    }
                })
                .collect();
            Ok(out)
        }
    }
}

/// Align records sharing one channel and speed bin into a `k x target_n` matrix.
pub fn align_to_matrix(
    records: &[PassageRecord],
    target_n: usize,
    method: AlignMethod,
    bin_rule: &SpeedBinRule,
) -> Result<PassageMatrix> {
    if records.is_empty() {
        return Err(Error::invalid("no records to align".to_string()));
    }
    let channel_id = records[0].channel_id.clone();
    let speed_bin = bin_rule.bin_label(records[0].speed_kmh);
    for r in records {
        if r.channel_id != channel_id {
            return Err(Error::invalid(format!(
                "mixed channels in alignment: {} vs {}",
                channel_id, r.channel_id
            )));
        }
        let bin = bin_rule.bin_label(r.speed_kmh);
        if bin != speed_bin {
            return Err(Error::invalid(format!(
                "mixed speed bins in alignment: {speed_bin} vs {bin} (passage {})",
                r.passage_id
            )));
        }
    }
    let mut data = DMatrix::zeros(records.len(), target_n);
    let mut passage_ids = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let row = align_record(r, target_n, method)?;
        data.row_mut(i).copy_from_slice(&row);
        passage_ids.push(r.passage_id.clone());
    }
    Ok(PassageMatrix {
        channel_id,
        speed_bin,
        passage_ids,
        data,
    })
}

/// On-disk format of a passage dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Json,
}

/// Optional validation and defaults applied while loading.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// When set, any channel id outside this list is a parse error.
    pub known_channels: Option<Vec<String>>,
    /// Sample rate assigned to CSV records (the CSV schema carries none).
    pub sample_rate: Option<f64>,
}

const CSV_HEADER: [&str; 11] = [
    "passage_id",
    "channel_id",
    "speed_kmh",
    "weight_class",
    "irregularity",
    "condition",
    "damage_component",
    "damage_section",
    "damage_delta",
    "sample_index",
    "value",
];

/// Load passage records from a CSV or JSON dataset file.
pub fn load_passages(path: &Path, format: FileFormat) -> Result<Vec<PassageRecord>> {
    load_passages_with(path, format, &LoadOptions::default())
}

pub fn load_passages_with(
    path: &Path,
    format: FileFormat,
    opts: &LoadOptions,
) -> Result<Vec<PassageRecord>> {
    let records = match format {
        FileFormat::Csv => load_csv(path, opts)?,
        FileFormat::Json => load_json(path, opts)?,
    };
    if records.is_empty() {
        return Err(Error::parse(path.display().to_string(), None, "no passages"));
    }
    if let Some(known) = &opts.known_channels {
        for r in &records {
            if !known.contains(&r.channel_id) {
                return Err(Error::parse(
                    path.display().to_string(),
                    None,
                    format!("unknown channel id {:?}", r.channel_id),
                ));
            }
        }
    }
    // Channels of one passage must agree on the sample count.
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        let e = counts.entry(r.passage_id.as_str()).or_insert(r.samples.len());
        if *e != r.samples.len() {
            return Err(Error::parse(
                path.display().to_string(),
                None,
                format!(
                    "inconsistent sample counts within passage {:?}: {} vs {}",
                    r.passage_id,
                    e,
                    r.samples.len()
                ),
            ));
        }
    }
    Ok(records)
}

fn load_csv(path: &Path, opts: &LoadOptions) -> Result<Vec<PassageRecord>> {
    let pathstr = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));

    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(&pathstr, Some(1), format!("malformed header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::parse(
            &pathstr,
            Some(1),
            format!(
                "malformed header: expected {:?}, got {:?}",
                CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let sample_rate = opts.sample_rate.unwrap_or(1000.0);
    let mut out: Vec<PassageRecord> = Vec::new();
    let mut current: Option<PassageRecord> = None;
    let mut row = csv::StringRecord::new();
    loop {
        let more = rdr
            .read_record(&mut row)
            .map_err(|e| Error::parse(&pathstr, None, format!("{e}")))?;
        if !more {
            break;
        }
        let line = row.position().map(|p| p.line());
        let field = |i: usize| -> Result<&str> {
            row.get(i)
                .ok_or_else(|| Error::parse(&pathstr, line, format!("missing column {}", CSV_HEADER[i])))
        };
        let parse_f64 = |i: usize| -> Result<f64> {
            let s = field(i)?;
            s.parse::<f64>()
                .map_err(|_| Error::parse(&pathstr, line, format!("bad number {s:?} in {}", CSV_HEADER[i])))
        };

        let passage_id = field(0)?.to_string();
        let channel_id = field(1)?.to_string();
        let value = parse_f64(10)?;
        if !value.is_finite() {
            return Err(Error::parse(
                &pathstr,
                line,
                format!("non-finite sample value for passage {passage_id:?} channel {channel_id:?}"),
            ));
        }
        let sample_index: usize = field(9)?
            .parse()
            .map_err(|_| Error::parse(&pathstr, line, "bad sample_index"))?;

        let starts_new = match &current {
            Some(c) => c.passage_id != passage_id || c.channel_id != channel_id,
            None => true,
        };
        if starts_new {
            if let Some(c) = current.take() {
                out.push(c);
            }
            if sample_index != 0 {
                return Err(Error::parse(
                    &pathstr,
                    line,
                    format!("samples for passage {passage_id:?} channel {channel_id:?} must start at sample_index 0"),
                ));
            }
            let condition = match field(5)? {
                "baseline" => Condition::Baseline,
                "damaged" => Condition::Damaged,
                other => {
                    return Err(Error::parse(&pathstr, line, format!("unknown condition {other:?}")))
                }
            };
            let damage = {
                let comp = field(6)?;
                let sect = field(7)?;
                let delta = field(8)?;
                if comp.is_empty() && sect.is_empty() && delta.is_empty() {
                    None
                } else {
                    let component = Component::parse(comp).ok_or_else(|| {
                        Error::parse(&pathstr, line, format!("unknown damage component {comp:?}"))
                    })?;
                    let section = Section::parse(sect).ok_or_else(|| {
                        Error::parse(&pathstr, line, format!("unknown damage section {sect:?}"))
                    })?;
                    let delta = delta.parse::<f64>().map_err(|_| {
                        Error::parse(&pathstr, line, format!("bad damage delta {delta:?}"))
                    })?;
                    Some(DamageSpec {
                        section,
                        component,
                        delta,
                    })
                }
            };
            let rec = PassageRecord {
                passage_id,
                channel_id,
                samples: vec![value],
                sample_rate,
                speed_kmh: parse_f64(2)?,
                weight_class: field(3)?.to_string(),
                irregularity: field(4)?.to_string(),
                condition,
                damage,
            };
            if rec.condition == Condition::Baseline && rec.damage.is_some() {
                return Err(Error::parse(
                    &pathstr,
                    line,
                    format!("passage {:?} is baseline but carries damage fields", rec.passage_id),
                ));
            }
            current = Some(rec);
        } else {
            let c = current.as_mut().expect("current record exists");
            if sample_index != c.samples.len() {
                return Err(Error::parse(
                    &pathstr,
                    line,
                    format!(
                        "sample_index {} out of order for passage {:?} (expected {})",
                        sample_index,
                        c.passage_id,
                        c.samples.len()
                    ),
                ));
            }
            c.samples.push(value);
        }
    }
    if let Some(c) = current.take() {
        out.push(c);
    }
    Ok(out)
}

fn load_json(path: &Path, opts: &LoadOptions) -> Result<Vec<PassageRecord>> {
    let pathstr = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let records: Vec<PassageRecord> = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::parse(&pathstr, None, format!("{e}")))?;
    let mut out = Vec::with_capacity(records.len());
    for mut r in records {
        if let Some(sr) = opts.sample_rate {
            r.sample_rate = sr;
        }
        r.validate()
            .map_err(|e| Error::parse(&pathstr, None, format!("{e}")))?;
        out.push(r);
    }
    Ok(out)
}

/// Streaming writer for the dataset CSV schema.
pub struct CsvDatasetWriter<W: Write> {
    wtr: csv::Writer<BufWriter<W>>,
}

impl<W: Write> CsvDatasetWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut wtr = csv::Writer::from_writer(BufWriter::new(w));
        wtr.write_record(CSV_HEADER)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(CsvDatasetWriter { wtr })
    }

    /// Append one record, one row per sample. Floats use shortest-roundtrip
    /// formatting, so a reload reproduces samples bit for bit.
    pub fn write_record(&mut self, r: &PassageRecord) -> Result<()> {
        let (dc, ds, dd) = match &r.damage {
            Some(d) => (
                d.component.id().to_string(),
                d.section.label().to_string(),
                format_num(d.delta),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        let speed = format_num(r.speed_kmh);
        for (i, v) in r.samples.iter().enumerate() {
            self.wtr
                .write_record([
                    r.passage_id.as_str(),
                    r.channel_id.as_str(),
                    speed.as_str(),
                    r.weight_class.as_str(),
                    r.irregularity.as_str(),
                    r.condition.as_str(),
                    dc.as_str(),
                    ds.as_str(),
                    dd.as_str(),
                    i.to_string().as_str(),
                    format!("{v}").as_str(),
                ])
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.wtr
            .flush()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }
}

/// Write a full record batch in the dataset CSV schema.
pub fn write_csv<W: Write>(records: &[PassageRecord], w: W) -> Result<()> {
    let mut wtr = CsvDatasetWriter::new(w)?;
    for r in records {
        wtr.write_record(r)?;
    }
    wtr.finish()
}

pub fn write_csv_file(records: &[PassageRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(records, file)
}

pub fn write_json_file(records: &[PassageRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(BufWriter::new(file), records)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, samples: Vec<f64>) -> PassageRecord {
        PassageRecord {
            passage_id: id.to_string(),
            channel_id: "P3b".to_string(),
            samples,
            sample_rate: 1000.0,
            speed_kmh: 360.0,
            weight_class: "w100".to_string(),
            irregularity: "uic-good".to_string(),
            condition: Condition::Baseline,
            damage: None,
        }
    }

    #[test]
    fn csv_echo_two_passages() {
        let recs = vec![rec("p1", vec![1.0, 2.0, 3.0, 4.0]), rec("p2", vec![5.0, 6.0, 7.0, 8.0])];
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, &buf).unwrap();
        let loaded = load_passages(&path, FileFormat::Csv).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].samples, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(loaded[1].passage_id, "p2");
        assert_eq!(loaded[1].samples.len(), 4);
    }

    #[test]
    fn empty_file_is_no_passages() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, format!("{}\n", CSV_HEADER.join(","))).unwrap();
        let err = load_passages(&path, FileFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("no passages"), "{err}");
    }

    #[test]
    fn nan_sample_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        let body = format!(
            "{}\np1,P3b,360,w100,uic-good,baseline,,,,0,1.0\np1,P3b,360,w100,uic-good,baseline,,,,1,NaN\n",
            CSV_HEADER.join(",")
        );
        std::fs::write(&path, body).unwrap();
        let err = load_passages(&path, FileFormat::Csv).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3"), "error should name line 3: {msg}");
        assert!(msg.contains("non-finite"), "{msg}");
    }

    #[test]
    fn malformed_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        let err = load_passages(&path, FileFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("malformed header"), "{err}");
    }

    #[test]
    fn unknown_channel_rejected_when_known_list_given() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let recs = vec![rec("p1", vec![1.0, 2.0])];
        write_csv_file(&recs, &path).unwrap();
        let opts = LoadOptions {
            known_channels: Some(vec!["P12b".to_string()]),
            sample_rate: None,
        };
        let err = load_passages_with(&path, FileFormat::Csv, &opts).unwrap_err();
        assert!(err.to_string().contains("unknown channel"), "{err}");
    }

    #[test]
    fn inconsistent_counts_within_passage_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut a = rec("p1", vec![1.0, 2.0, 3.0]);
        a.channel_id = "P3b".into();
        let mut b = rec("p1", vec![1.0, 2.0]);
        b.channel_id = "P12b".into();
        write_csv_file(&[a, b], &path).unwrap();
        let err = load_passages(&path, FileFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("inconsistent sample counts"), "{err}");
    }

    #[test]
    fn trigger_on_definition_example() {
        // peak 10, threshold 0.5: index 2 is the first sample above it
        let s = [0.0, 0.0, 10.0, 8.0, 6.0, 4.0, 2.0, 0.0];
        assert_eq!(trigger_index(&s), Some(2));
        let r = rec("p", s.to_vec());
        let aligned = align_record(&r, 4, AlignMethod::Truncate).unwrap();
        assert_eq!(aligned, vec![10.0, 8.0, 6.0, 4.0]);
    }

    #[test]
    fn truncate_identity_for_matching_records() {
        let a = rec("p1", vec![5.0, 4.0, 3.0, 2.0, 1.0, 1.0]);
        let b = rec("p2", vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        let m = align_to_matrix(&[a.clone(), b.clone()], 6, AlignMethod::Truncate, &SpeedBinRule::Exact)
            .unwrap();
        assert_eq!(m.k(), 2);
        assert_eq!(m.n(), 6);
        assert_eq!(m.data.row(0).iter().copied().collect::<Vec<_>>(), a.samples);
        assert_eq!(m.data.row(1).iter().copied().collect::<Vec<_>>(), b.samples);
    }

    #[test]
    fn resample_ramp_endpoints_and_midpoint() {
        let r = rec("p", vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let out = align_record(&r, 3, AlignMethod::LinearResample).unwrap();
        assert_eq!(out, vec![0.0, 2.0, 4.0]);
    }

    #[test]
    fn mixed_channels_and_bins_refused() {
        let a = rec("p1", vec![5.0, 4.0, 3.0]);
        let mut b = rec("p2", vec![5.0, 4.0, 3.0]);
        b.channel_id = "P12b".into();
        let err =
            align_to_matrix(&[a.clone(), b], 3, AlignMethod::Truncate, &SpeedBinRule::Exact).unwrap_err();
        assert!(err.to_string().contains("mixed channels"), "{err}");

        let mut c = rec("p3", vec![5.0, 4.0, 3.0]);
        c.speed_kmh = 330.0;
        let err =
            align_to_matrix(&[a, c], 3, AlignMethod::Truncate, &SpeedBinRule::Exact).unwrap_err();
        assert!(err.to_string().contains("mixed speed bins"), "{err}");
    }

    #[test]
    fn record_shorter_than_target_refused() {
        let a = rec("p1", vec![5.0, 4.0, 3.0]);
        let err = align_record(&a, 4, AlignMethod::Truncate).unwrap_err();
        assert!(err.to_string().contains("need 4"), "{err}");
    }

    #[test]
    fn speed_bin_rules() {
        assert_eq!(SpeedBinRule::Exact.bin_label(360.0), "360");
        assert_eq!(SpeedBinRule::Width(10.0).bin_label(357.2), "360");
        assert_eq!(SpeedBinRule::Width(10.0).bin_label(332.0), "330");
    }

    #[test]
    fn common_target_rounds_down_to_ten() {
        let a = rec("p1", vec![5.0; 57]);
        let b = rec("p2", vec![5.0; 64]);
        assert_eq!(common_target_n(&[a, b]).unwrap(), 50);
    }

    #[test]
    fn baseline_with_damage_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let body = format!(
            "{}\np1,P3b,360,w100,uic-good,baseline,bottom_plate,L/4,0.1,0,1.0\n",
            CSV_HEADER.join(",")
        );
        std::fs::write(&path, body).unwrap();
        let err = load_passages(&path, FileFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("baseline"), "{err}");
    }

    #[test]
    fn json_roundtrip_with_damage() {
        let mut r = rec("p1", vec![9.0, 8.0, 7.0]);
        r.condition = Condition::Damaged;
        r.damage = Some(DamageSpec {
            section: Section::Quarter,
            component: Component::BottomPlate,
            delta: 0.1,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        write_json_file(&[r.clone()], &path).unwrap();
        let loaded = load_passages(&path, FileFormat::Json).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].damage.unwrap().section, Section::Quarter);
        assert_eq!(loaded[0].samples, r.samples);
    }

    proptest! {
        // Reload reproduces samples exactly: shortest-roundtrip formatting.
        #[test]
        fn csv_roundtrip_bit_exact(samples in proptest::collection::vec(-1e6_f64..1e6, 1..40)) {
            let r = rec("p1", samples.clone());
            let mut buf = Vec::new();
            write_csv(&[r], &mut buf).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.csv");
            std::fs::write(&path, &buf).unwrap();
            let loaded = load_passages(&path, FileFormat::Csv).unwrap();
            prop_assert_eq!(&loaded[0].samples, &samples);
        }

        // Truncation is idempotent for a fixed target length.
        #[test]
        fn truncate_idempotent(raw in proptest::collection::vec(-100.0_f64..100.0, 12..60)) {
            let r = rec("p1", raw);
            if trigger_index(&r.samples).is_none() {
                return Ok(());
            }
            let t = trigger_index(&r.samples).unwrap();
            let target = (r.samples.len() - t).min(10);
            let once = align_record(&r, target, AlignMethod::Truncate).unwrap();
            let r2 = rec("p1", once.clone());
            let twice = align_record(&r2, target, AlignMethod::Truncate).unwrap();
            prop_assert_eq!(once, twice);
        }

        // The trigger only depends on the shape of the record, not its scale.
        #[test]
        fn trigger_scale_invariant(
            raw in proptest::collection::vec(-100.0_f64..100.0, 4..60),
            c in prop_oneof![0.001_f64..1000.0, Just(1e-6), Just(1e6)],
        ) {
            let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
            prop_assert_eq!(trigger_index(&raw), trigger_index(&scaled));
        }
    }
}
