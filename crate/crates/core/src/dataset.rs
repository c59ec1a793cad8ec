//! Raw telemetry parsing and per-timestamp flattening.
//!
//! Input tables carry one row per process per system snapshot. Identifier and
//! execution-metadata columns are removed, the `status` text is mapped to a
//! binary indicator, missing or non-numeric cells become 0, and the surviving
//! rows are flattened into one fixed-width vector per timestamp: the
//! concatenated feature blocks of every observed process, zero-padded to the
//! maximum process count.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use thiserror::Error;

/// Binary snapshot class. `Infected` is the positive class throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Benign,
    Infected,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Benign => 0,
            Label::Infected => 1,
        }
    }

    pub fn from_index(index: usize) -> Label {
        if index == 0 {
            Label::Benign
        } else {
            Label::Infected
        }
    }

    pub fn from_bool(infected: bool) -> Label {
        if infected {
            Label::Infected
        } else {
            Label::Benign
        }
    }

    pub fn is_infected(self) -> bool {
        self == Label::Infected
    }
}

/// The 32 behavioral metrics of the full telemetry schema, in canonical
/// order. `status` is the binary running/sleeping indicator and stays last.
pub const TELEMETRY_FEATURES: [&str; 32] = [
    "cpu_percent",
    "cpu_num",
    "cpu_sys",
    "cpu_user",
    "cpu_children_sys",
    "cpu_children_user",
    "num_threads",
    "mem_shared",
    "mem_data",
    "mem_vms",
    "mem_rss",
    "mem_dirty",
    "mem_swap",
    "mem_lib",
    "mem_uss",
    "mem_text",
    "io_write_bytes",
    "io_read_bytes",
    "io_write_chars",
    "io_read_chars",
    "io_write_count",
    "io_read_count",
    "kb_sent",
    "kb_received",
    "ionice_ioclass",
    "ionice_value",
    "nice",
    "ctx_switches_voluntary",
    "ctx_switches_involuntary",
    "gid_effective",
    "num_fds",
    "status",
];

/// Maximum processes observed per snapshot in the reference corpus.
pub const TELEMETRY_M_MAX: usize = 227;

/// Identifier and execution-metadata columns removed at parse time.
pub const IDENTIFIER_COLUMNS: [&str; 7] = [
    "sample_no",
    "exp_no",
    "vm_id",
    "pid",
    "ppid",
    "sample_time",
    "process_creation_time",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("required column {0:?} is missing from the table header")]
    MissingColumn(String),
    #[error("table has a header but no data rows")]
    EmptyTable,
    #[error("snapshot {timestamp_id} has {count} processes, above the schema maximum {m_max}")]
    TooManyProcesses {
        timestamp_id: u64,
        count: usize,
        m_max: usize,
    },
    #[error("hash {hash:?} maps to conflicting years")]
    ConflictingYear { hash: String },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Column layout of a raw telemetry table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSchema {
    /// Per-process feature columns, in output order.
    pub feature_names: Vec<String>,
    /// Maximum processes per snapshot; flattened width is `m_max * n()`.
    pub m_max: usize,
    /// Column holding the snapshot ordinal.
    pub timestamp_column: String,
    /// Column holding the per-row malicious marker.
    pub label_column: String,
    /// Identifier columns expected (and ignored) in raw tables.
    pub dropped_columns: Vec<String>,
}

impl DatasetSchema {
    /// Full 32-feature, 227-process layout of the reference corpus.
    pub fn telemetry() -> Self {
        Self::telemetry_with_m_max(TELEMETRY_M_MAX)
    }

    pub fn telemetry_with_m_max(m_max: usize) -> Self {
        Self {
            feature_names: TELEMETRY_FEATURES.iter().map(|s| s.to_string()).collect(),
            m_max,
            timestamp_column: "timestamp_id".to_string(),
            label_column: "label".to_string(),
            dropped_columns: IDENTIFIER_COLUMNS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Generic layout with features `f0..f{n-1}`, used by desk-scale streams.
    pub fn synthetic(m_max: usize, n: usize) -> Self {
        Self {
            feature_names: (0..n).map(|i| format!("f{i}")).collect(),
            m_max,
            timestamp_column: "timestamp_id".to_string(),
            label_column: "label".to_string(),
            dropped_columns: IDENTIFIER_COLUMNS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Feature count per process.
    pub fn n(&self) -> usize {
        self.feature_names.len()
    }

    /// Width of a flattened snapshot vector.
    pub fn flat_width(&self) -> usize {
        self.m_max * self.n()
    }
}

/// One process at one snapshot: the schema's features in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessRecord {
    pub timestamp_id: u64,
    pub features: Vec<f64>,
    pub is_malicious_row: bool,
}

/// One flattened system state: every process block concatenated and
/// zero-padded to `m_max` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSample {
    pub timestamp_id: u64,
    pub vector: Vec<f64>,
    pub label: Label,
    /// Release-year rank (1-based); `None` until enriched.
    pub year: Option<u32>,
    /// Whether the label may be used for training under the current plan.
    pub trainable: bool,
}

/// Malware sample hash to release-year rank.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetadataMap {
    entries: BTreeMap<String, u32>,
}

impl MetadataMap {
    pub fn get(&self, hash: &str) -> Option<u32> {
        self.entries.get(hash).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, hash: String, year: u32) -> Result<(), DatasetError> {
        match self.entries.get(&hash) {
            Some(&existing) if existing != year => Err(DatasetError::ConflictingYear { hash }),
            _ => {
                self.entries.insert(hash, year);
                Ok(())
            }
        }
    }
}

/// How samples whose hash is absent from the metadata are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YearFallback {
    /// Remove the sample; the drop count is reported.
    Drop,
    /// Keep the sample with `year = None`.
    KeepUnknown,
}

fn sniff_delimiter(first_line: &str) -> u8 {
    if first_line.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

fn parse_numeric_cell(cell: &str) -> f64 {
    let v: f64 = match cell.trim().parse() {
        Ok(v) => v,
        Err(_) => return 0.0,
    };
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

fn parse_status_cell(cell: &str) -> f64 {
    let trimmed = cell.trim();
    if trimmed.eq_ignore_ascii_case("running") {
        return 1.0;
    }
    if trimmed.eq_ignore_ascii_case("sleeping") {
        return 0.0;
    }
    if parse_numeric_cell(trimmed) != 0.0 {
        1.0
    } else {
        0.0
    }
}

fn parse_label_cell(cell: &str, line: usize) -> Result<bool, DatasetError> {
    let trimmed = cell.trim();
    if trimmed.eq_ignore_ascii_case("benign") {
        return Ok(false);
    }
    if trimmed.eq_ignore_ascii_case("malicious") || trimmed.eq_ignore_ascii_case("infected") {
        return Ok(true);
    }
    trimmed
        .parse::<f64>()
        .map(|v| v != 0.0)
        .map_err(|_| DatasetError::MalformedRow {
            line,
            reason: format!("unrecognized label value {trimmed:?}"),
        })
}

/// Parse a raw per-process table into records carrying exactly the schema's
/// features, in schema order.
///
/// The delimiter is sniffed from the header (comma unless a tab appears).
/// `status` maps running/sleeping to 1/0; every other feature cell is parsed
/// as a number, with absent, non-numeric, or non-finite cells becoming 0.
/// Columns outside the schema (identifiers included) are dropped.
pub fn parse_process_records<R: Read>(
    input: R,
    schema: &DatasetSchema,
) -> Result<Vec<ProcessRecord>, DatasetError> {
    let mut reader = BufReader::new(input);
    let mut header_line = String::new();
    reader.read_line(&mut header_line)?;
    if header_line.trim().is_empty() {
        return Err(DatasetError::EmptyTable);
    }
    let delimiter = sniff_delimiter(&header_line);

    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(header_line.as_bytes().chain(reader));

    let mut rows = csv_reader.records();
    let header = rows.next().ok_or(DatasetError::EmptyTable)??;
    let column_index = |name: &str| -> Result<usize, DatasetError> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };

    let timestamp_idx = column_index(&schema.timestamp_column)?;
    let label_idx = column_index(&schema.label_column)?;
    let feature_idx: Vec<usize> = schema
        .feature_names
        .iter()
        .map(|name| column_index(name))
        .collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    for (row_no, row) in rows.enumerate() {
        let row = row?;
        let line = row_no + 2;
        if row.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let cell = |idx: usize| row.get(idx).unwrap_or("");
        let timestamp_id =
            cell(timestamp_idx)
                .trim()
                .parse::<u64>()
                .map_err(|_| DatasetError::MalformedRow {
                    line,
                    reason: format!(
                        "timestamp column {:?} is not an ordinal: {:?}",
                        schema.timestamp_column,
                        cell(timestamp_idx)
                    ),
                })?;
        let is_malicious_row = parse_label_cell(cell(label_idx), line)?;
        let features = schema
            .feature_names
            .iter()
            .zip(&feature_idx)
            .map(|(name, &idx)| {
                if name == "status" {
                    parse_status_cell(cell(idx))
                } else {
                    parse_numeric_cell(cell(idx))
                }
            })
            .collect();
        records.push(ProcessRecord {
            timestamp_id,
            features,
            is_malicious_row,
        });
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyTable);
    }
    Ok(records)
}

/// Group records by timestamp and concatenate their feature blocks in source
/// order, zero-padding to `m_max` blocks. A snapshot is labeled infected iff
/// any of its rows is marked malicious. Output is ordered by timestamp.
pub fn flatten_snapshots(
    records: &[ProcessRecord],
    schema: &DatasetSchema,
) -> Result<Vec<SnapshotSample>, DatasetError> {
    let n = schema.n();
    let width = schema.flat_width();
    let mut groups: BTreeMap<u64, (Vec<f64>, usize, bool)> = BTreeMap::new();
    for record in records {
        let (vector, count, infected) = groups
            .entry(record.timestamp_id)
            .or_insert_with(|| (vec![0.0; width], 0, false));
        if *count == schema.m_max {
            return Err(DatasetError::TooManyProcesses {
                timestamp_id: record.timestamp_id,
                count: *count + 1,
                m_max: schema.m_max,
            });
        }
        debug_assert_eq!(record.features.len(), n);
        vector[*count * n..(*count + 1) * n].copy_from_slice(&record.features);
        *count += 1;
        *infected |= record.is_malicious_row;
    }
    Ok(groups
        .into_iter()
        .map(|(timestamp_id, (vector, _, infected))| SnapshotSample {
            timestamp_id,
            vector,
            label: Label::from_bool(infected),
            year: None,
            trainable: true,
        })
        .collect())
}

/// Load a two-column `hash,year` table. Duplicate hashes with the same year
/// deduplicate; conflicting years are an error.
pub fn load_metadata<R: Read>(input: R) -> Result<MetadataMap, DatasetError> {
    let mut map = MetadataMap::default();
    for (idx, line) in BufReader::new(input).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let delimiter = if trimmed.contains('\t') { '\t' } else { ',' };
        let mut parts = trimmed.splitn(2, delimiter);
        let hash = parts.next().unwrap_or("").trim();
        let year_text = parts.next().unwrap_or("").trim();
        if hash.is_empty() || year_text.is_empty() {
            return Err(DatasetError::MalformedRow {
                line: line_no,
                reason: "expected two columns: hash,year".to_string(),
            });
        }
        let year: u32 = year_text.parse().map_err(|_| DatasetError::MalformedRow {
            line: line_no,
            reason: format!("year {year_text:?} is not a positive integer"),
        })?;
        if year == 0 {
            return Err(DatasetError::MalformedRow {
                line: line_no,
                reason: "year rank must be positive".to_string(),
            });
        }
        map.insert(hash.to_string(), year)?;
    }
    Ok(map)
}

/// Result of [`enrich_with_year`]: the surviving samples plus how many were
/// dropped under [`YearFallback::Drop`].
#[derive(Debug)]
pub struct EnrichedSamples {
    pub samples: Vec<SnapshotSample>,
    pub dropped: usize,
}

/// Attach release-year ranks. Each timestamp resolves through the run map to
/// the malware sample hash of the experiment run it belongs to (benign
/// snapshots share their run's hash, so temporal splits keep runs whole) and
/// then through the metadata to a year. Unresolvable samples follow
/// `fallback`.
pub fn enrich_with_year(
    samples: Vec<SnapshotSample>,
    hash_by_timestamp: &BTreeMap<u64, String>,
    metadata: &MetadataMap,
    fallback: YearFallback,
) -> EnrichedSamples {
    let mut out = Vec::with_capacity(samples.len());
    let mut dropped = 0usize;
    for mut sample in samples {
        let year = hash_by_timestamp
            .get(&sample.timestamp_id)
            .and_then(|hash| metadata.get(hash));
        match (year, fallback) {
            (Some(year), _) => {
                sample.year = Some(year);
                out.push(sample);
            }
            (None, YearFallback::KeepUnknown) => {
                sample.year = None;
                out.push(sample);
            }
            (None, YearFallback::Drop) => dropped += 1,
        }
    }
    EnrichedSamples {
        samples: out,
        dropped,
    }
}

/// Load a two-column `timestamp_id,hash` run map.
pub fn load_run_map<R: Read>(input: R) -> Result<BTreeMap<u64, String>, DatasetError> {
    let mut map = BTreeMap::new();
    for (idx, line) in BufReader::new(input).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let delimiter = if trimmed.contains('\t') { '\t' } else { ',' };
        let mut parts = trimmed.splitn(2, delimiter);
        let ts_text = parts.next().unwrap_or("").trim();
        let hash = parts.next().unwrap_or("").trim();
        let timestamp: u64 = ts_text.parse().map_err(|_| DatasetError::MalformedRow {
            line: line_no,
            reason: format!("timestamp {ts_text:?} is not an ordinal"),
        })?;
        if hash.is_empty() {
            return Err(DatasetError::MalformedRow {
                line: line_no,
                reason: "expected two columns: timestamp_id,hash".to_string(),
            });
        }
        map.insert(timestamp, hash.to_string());
    }
    Ok(map)
}

/// Header + rows of the flattened format:
/// `timestamp_id,year,label,f0000..f{width-1}`. Unknown years serialize as 0.
pub fn write_flattened<W: Write>(samples: &[SnapshotSample], out: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    let width = samples.first().map_or(0, |s| s.vector.len());
    write!(out, "timestamp_id,year,label")?;
    for i in 0..width {
        write!(out, ",f{i:04}")?;
    }
    writeln!(out)?;
    for sample in samples {
        write!(
            out,
            "{},{},{}",
            sample.timestamp_id,
            sample.year.unwrap_or(0),
            sample.label.index()
        )?;
        for v in &sample.vector {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Read the flattened format back; inverse of [`write_flattened`].
pub fn read_flattened<R: Read>(input: R) -> Result<Vec<SnapshotSample>, DatasetError> {
    let mut reader = BufReader::new(input);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    if header.trim().is_empty() {
        return Err(DatasetError::EmptyTable);
    }
    let columns: Vec<&str> = header.trim_end().split(',').collect();
    if columns.len() < 3
        || columns[0] != "timestamp_id"
        || columns[1] != "year"
        || columns[2] != "label"
    {
        return Err(DatasetError::MalformedRow {
            line: 1,
            reason: "expected header timestamp_id,year,label,f0000...".to_string(),
        });
    }
    let width = columns.len() - 3;
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let malformed = |reason: String| DatasetError::MalformedRow {
            line: line_no,
            reason,
        };
        let timestamp_id: u64 = fields
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| malformed("bad timestamp_id".to_string()))?;
        let year: u32 = fields
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| malformed("bad year".to_string()))?;
        let label: u8 = fields
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| malformed("bad label".to_string()))?;
        let mut vector = Vec::with_capacity(width);
        for field in fields {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(format!("bad feature value {field:?}")))?;
            vector.push(v);
        }
        if vector.len() != width {
            return Err(malformed(format!(
                "expected {width} features, found {}",
                vector.len()
            )));
        }
        samples.push(SnapshotSample {
            timestamp_id,
            vector,
            label: Label::from_bool(label != 0),
            year: if year == 0 { None } else { Some(year) },
            trainable: true,
        });
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyTable);
    }
    Ok(samples)
}
