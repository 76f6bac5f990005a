//! Raw log loading and normalization into canonical event streams.
//!
//! Two on-disk forms are understood: the whitespace-delimited alert-label
//! layout shared by the public supercomputer log distributions, and the
//! canonical JSON-lines format every other stage reads and writes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label value marking a normal event.
pub const NORMAL_LABEL: &str = "-";

/// Level recorded for syslog-style lines that carry no severity field.
pub const MISSING_LEVEL: &str = "-";

const SEVERITIES: &[&str] = &[
    "INFO", "WARNING", "WARN", "ERROR", "FATAL", "FAILURE", "SEVERE", "NOTICE", "DEBUG", "CRIT",
    "CRITICAL", "ALERT", "EMERG", "ERR",
];

const MONTHS: &[&str] = &[
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed log line: {0}")]
    MalformedLine(String),
    #[error("{path} line {line}: {reason}")]
    Schema { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One parsed raw record before normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLogRecord {
    pub label: String,
    pub timestamp: i64,
    pub node: String,
    pub component: String,
    pub level: String,
    pub message: String,
}

/// One line of the canonical JSON-lines event format. Field order here is
/// the serialized key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalRecord {
    pub seq: u64,
    pub ts: i64,
    pub label: String,
    pub component: String,
    pub level: String,
    pub message: String,
}

/// A normalized, labeled event with its composed text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEvent {
    pub seq: u64,
    pub timestamp: i64,
    pub is_anomaly: bool,
    pub label: String,
    pub component: String,
    pub level: String,
    pub message: String,
    /// `component + " " + level + " " + message`.
    pub text: String,
}

impl LogEvent {
    pub fn new(seq: u64, timestamp: i64, label: &str, component: &str, level: &str, message: &str) -> Self {
        LogEvent {
            seq,
            timestamp,
            is_anomaly: label != NORMAL_LABEL,
            label: label.to_string(),
            component: component.to_string(),
            level: level.to_string(),
            message: message.to_string(),
            text: compose_text(component, level, message),
        }
    }

    pub fn to_record(&self) -> CanonicalRecord {
        CanonicalRecord {
            seq: self.seq,
            ts: self.timestamp,
            label: self.label.clone(),
            component: self.component.clone(),
            level: self.level.clone(),
            message: self.message.clone(),
        }
    }
}

impl From<CanonicalRecord> for LogEvent {
    fn from(r: CanonicalRecord) -> Self {
        LogEvent::new(r.seq, r.ts, &r.label, &r.component, &r.level, &r.message)
    }
}

pub fn compose_text(component: &str, level: &str, message: &str) -> String {
    let mut s = String::with_capacity(component.len() + level.len() + message.len() + 2);
    s.push_str(component);
    s.push(' ');
    s.push_str(level);
    s.push(' ');
    s.push_str(message);
    s
}

/// A run of consecutive events from one system.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogSplit {
    pub system_id: String,
    pub start_seq: u64,
    pub events: Vec<LogEvent>,
}

impl LogSplit {
    pub fn new(system_id: impl Into<String>, events: Vec<LogEvent>) -> Self {
        let start_seq = events.first().map_or(0, |e| e.seq);
        LogSplit {
            system_id: system_id.into(),
            start_seq,
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.events.iter().map(|e| e.is_anomaly).collect()
    }

    pub fn anomaly_count(&self) -> usize {
        self.events.iter().filter(|e| e.is_anomaly).count()
    }

    /// Sub-range `[start, start + len)` by position, preserving `seq`.
    pub fn slice(&self, start: usize, len: usize) -> LogSplit {
        LogSplit::new(self.system_id.clone(), self.events[start..start + len].to_vec())
    }

    /// True when `seq` is contiguous and timestamps never decrease.
    pub fn is_consecutive(&self) -> bool {
        self.events.windows(2).all(|w| w[1].seq == w[0].seq + 1 && w[1].timestamp >= w[0].timestamp)
    }
}

/// Parses one line of the alert-label supercomputer layout.
///
/// The fixed prefix is `label epoch date node fine-timestamp location`; the
/// fine timestamp is either one token (BGL) or a syslog `Mon DD hh:mm:ss`
/// triple (Thunderbird, Spirit, Liberty). The tail is read heuristically:
/// an optional `RAS` type token, the component, an optional severity, then
/// the message.
pub fn parse_supercomputer_line(line: &str) -> Result<RawLogRecord, IngestError> {
    let malformed = || IngestError::MalformedLine(truncate_for_error(line));
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 7 {
        return Err(malformed());
    }
    let label = tokens[0];
    let timestamp: i64 = tokens[1].parse().map_err(|_| malformed())?;
    if timestamp < 0 {
        return Err(malformed());
    }
    let node = tokens[3];

    let tail_start = if MONTHS.contains(&tokens[4]) { 8 } else { 6 };
    if tokens.len() <= tail_start {
        return Err(malformed());
    }
    let mut tail = &tokens[tail_start..];
    if tail.len() > 1 && tail[0] == "RAS" {
        tail = &tail[1..];
    }

    let component = tail[0].trim_end_matches(':');
    let component = match component.find('[') {
        Some(i) if i > 0 => &component[..i],
        _ => component,
    };
    if component.is_empty() {
        return Err(malformed());
    }
    let (level, rest) = match tail.get(1) {
        Some(l) if SEVERITIES.contains(&l.trim_end_matches(':')) => (l.trim_end_matches(':'), &tail[2..]),
        _ => (MISSING_LEVEL, &tail[1..]),
    };

    Ok(RawLogRecord {
        label: label.to_string(),
        timestamp,
        node: node.to_string(),
        component: component.to_string(),
        level: level.to_string(),
        message: rest.join(" "),
    })
}

fn truncate_for_error(line: &str) -> String {
    const MAX: usize = 80;
    match line.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &line[..i]),
        None => line.to_string(),
    }
}

/// Outcome of reading a raw supercomputer log.
#[derive(Debug, Default)]
pub struct RawParse {
    pub records: Vec<RawLogRecord>,
    pub skipped: usize,
}

/// Reads a raw log file, skipping (and counting) malformed lines.
pub fn parse_supercomputer_file(path: &Path) -> Result<RawParse, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = RawParse::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        match parse_supercomputer_line(&line) {
            Ok(r) => out.records.push(r),
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Drops records with an empty component, level or message, stably sorts
/// the rest by timestamp and assigns `seq` from zero.
pub fn normalize_corpus(records: &[RawLogRecord]) -> Vec<LogEvent> {
    let mut kept: Vec<&RawLogRecord> = records
        .iter()
        .filter(|r| !r.component.trim().is_empty() && !r.level.trim().is_empty() && !r.message.trim().is_empty())
        .collect();
    kept.sort_by_key(|r| r.timestamp);
    kept.into_iter()
        .enumerate()
        .map(|(i, r)| LogEvent::new(i as u64, r.timestamp, &r.label, &r.component, &r.level, &r.message))
        .collect()
}

/// Loads a canonical JSON-lines corpus. Events keep file order and get
/// `seq` reassigned as `0..n`.
pub fn load_canonical(path: &Path) -> Result<LogSplit, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        let mut record: CanonicalRecord = serde_json::from_str(&line).map_err(|e| IngestError::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        record.seq = events.len() as u64;
        events.push(LogEvent::from(record));
    }
    let system_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(LogSplit {
        system_id,
        start_seq: 0,
        events,
    })
}

pub fn write_canonical_to<W: Write>(events: &[LogEvent], mut w: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, &e.to_record())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_canonical(path: &Path, events: &[LogEvent]) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    write_canonical_to(events, BufWriter::new(file)).map_err(|e| IngestError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BGL_LINE: &str = "- 1117838570 2005.06.03 R02-M1-N0-C:J12-U11 2005-06-03-15.42.50.675872 \
                            R02-M1-N0-C:J12-U11 RAS KERNEL INFO instruction cache parity error corrected";

    fn raw(ts: i64, message: &str) -> RawLogRecord {
        RawLogRecord {
            label: "-".into(),
            timestamp: ts,
            node: "n".into(),
            component: "KERNEL".into(),
            level: "INFO".into(),
            message: message.into(),
        }
    }

    #[test]
    fn parses_bgl_line() {
        let r = parse_supercomputer_line(BGL_LINE).unwrap();
        assert_eq!(r.label, "-");
        assert_eq!(r.timestamp, 1117838570);
        assert_eq!(r.component, "KERNEL");
        assert_eq!(r.level, "INFO");
        assert_eq!(r.message, "instruction cache parity error corrected");
    }

    #[test]
    fn parses_bgl_line_without_type_token() {
        let line = "- 1117838570 2005.06.03 R02 2005-06-03-15.42.50.675872 R02 KERNEL INFO instruction cache parity error corrected";
        let r = parse_supercomputer_line(line).unwrap();
        assert_eq!((r.component.as_str(), r.level.as_str()), ("KERNEL", "INFO"));
        assert_eq!(r.message, "instruction cache parity error corrected");
    }

    #[test]
    fn parses_thunderbird_line() {
        let line = "- 1131566461 2005.11.09 dn228 Nov 9 12:01:01 dn228/dn228 crond(pam_unix)[2915]: session closed for user root";
        let r = parse_supercomputer_line(line).unwrap();
        assert_eq!(r.node, "dn228");
        assert_eq!(r.component, "crond(pam_unix)");
        assert_eq!(r.level, MISSING_LEVEL);
        assert_eq!(r.message, "session closed for user root");
    }

    #[test]
    fn alert_label_marks_anomaly() {
        let line = BGL_LINE.replacen('-', "KERNDTLB", 1);
        let r = parse_supercomputer_line(&line).unwrap();
        assert_eq!(r.label, "KERNDTLB");
        let events = normalize_corpus(&[r]);
        assert!(events[0].is_anomaly);
    }

    #[test]
    fn empty_and_short_lines_are_malformed() {
        assert!(matches!(parse_supercomputer_line(""), Err(IngestError::MalformedLine(_))));
        assert!(matches!(
            parse_supercomputer_line("- 12 2005.06.03 node"),
            Err(IngestError::MalformedLine(_))
        ));
        assert!(matches!(
            parse_supercomputer_line("- notanumber a b c d KERNEL INFO x"),
            Err(IngestError::MalformedLine(_))
        ));
    }

    #[test]
    fn normalize_sorts_and_drops_nulls() {
        let recs = vec![raw(20, "b"), raw(10, "a"), raw(15, "   "), raw(10, "c")];
        let out = normalize_corpus(&recs);
        let msgs: Vec<_> = out.iter().map(|e| e.message.as_str()).collect();
        assert_eq!(msgs, ["a", "c", "b"]);
        assert_eq!(out.iter().map(|e| e.seq).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(out[0].text, "KERNEL INFO a");
    }

    #[test]
    fn load_canonical_cases() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.jsonl");
        let mut f = File::create(&good).unwrap();
        for i in 0..3 {
            writeln!(
                f,
                r#"{{"seq":{},"ts":{},"label":"-","component":"APP","level":"INFO","message":"m{}"}}"#,
                i + 7,
                i,
                i
            )
            .unwrap();
        }
        drop(f);
        let split = load_canonical(&good).unwrap();
        assert_eq!(split.events.iter().map(|e| e.seq).collect::<Vec<_>>(), [0, 1, 2]);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(
            &bad,
            "{\"seq\":0,\"ts\":0,\"label\":\"-\",\"component\":\"A\",\"level\":\"I\",\"message\":\"x\"}\n\
             {\"seq\":1,\"ts\":0,\"label\":\"-\",\"component\":\"A\",\"level\":\"I\"}\n",
        )
        .unwrap();
        match load_canonical(&bad) {
            Err(IngestError::Schema { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("message"), "{reason}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }

        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(load_canonical(&empty).unwrap().is_empty());
        assert!(matches!(
            load_canonical(&dir.path().join("missing.jsonl")),
            Err(IngestError::Io { .. })
        ));
    }
}
