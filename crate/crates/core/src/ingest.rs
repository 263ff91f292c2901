//! Order records and their flat-file formats.
//!
//! Two input layouts are accepted:
//!
//! ```text
//! csv:   timestamp,side,price,volume          (header required)
//! jsonl: {"ts": ..., "side": ..., "price": ..., "volume": ...}
//! ```
//!
//! Rows that fail validation never abort the parse. They are collected in a
//! [`Reject`] list carrying the 1-based line number and a short reason.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Read, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unreadable input: {0}")]
    Io(#[from] io::Error),
    #[error("input is not valid UTF-8 (line {line})")]
    Utf8 { line: usize },
    #[error("csv header missing or wrong: expected `timestamp,side,price,volume`, found `{found}`")]
    Header { found: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Order direction. Buy orders carry sign +1, sells -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn sign(self) -> i8 {
        match self {
            Side::Buy => 1,
            Side::Sell => -1,
        }
    }

    /// Sign as a float, for use in signed price responses.
    pub fn epsilon(self) -> f64 {
        f64::from(self.sign())
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.sign())
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "buy" | "b" | "+1" | "1" => Ok(Side::Buy),
            "sell" | "s" | "-1" => Ok(Side::Sell),
            other => Err(format!("invalid side `{other}`")),
        }
    }
}

/// One declared intention to buy or sell USD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRecord {
    pub id: u64,
    pub side: Side,
    /// CUP per USD.
    pub price: f64,
    /// USD.
    pub volume: f64,
    pub timestamp: Timestamp,
}

impl OrderRecord {
    pub fn new(id: u64, side: Side, price: f64, volume: f64, timestamp: Timestamp) -> Self {
        Self {
            id,
            side,
            price,
            volume,
            timestamp,
        }
    }

    pub fn day(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(format!("unknown input format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedOrders {
    pub orders: Vec<OrderRecord>,
    pub rejects: Vec<Reject>,
}

/// Orders of a single UTC calendar day, sorted by `(timestamp, id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayPartition {
    pub day: NaiveDate,
    pub orders: Vec<OrderRecord>,
}

impl DayPartition {
    pub fn submitted_volume(&self) -> f64 {
        self.orders.iter().map(|o| o.volume).sum()
    }
}

pub fn parse_orders<R: Read>(source: R, format: Format) -> Result<ParsedOrders, IngestError> {
    match format {
        Format::Csv => parse_csv(source),
        Format::Jsonl => parse_jsonl(source),
    }
}

fn parse_csv<R: Read>(source: R) -> Result<ParsedOrders, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut out = ParsedOrders::default();
    let mut header_seen = false;
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                if let csv::ErrorKind::Utf8 { pos, .. } = e.kind() {
                    let line = pos.as_ref().map(|p| p.line() as usize).unwrap_or(0);
                    return Err(IngestError::Utf8 { line });
                }
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(e.into());
                }
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                out.rejects.push(Reject {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        }
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if !header_seen {
            let found: Vec<String> = record.iter().map(|f| f.to_ascii_lowercase()).collect();
            if found != ["timestamp", "side", "price", "volume"] {
                return Err(IngestError::Header {
                    found: record.iter().collect::<Vec<_>>().join(","),
                });
            }
            header_seen = true;
            continue;
        }
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != 4 {
            out.rejects.push(Reject {
                line,
                reason: format!("expected 4 fields, found {}", record.len()),
            });
            continue;
        }
        let raw = RawRow {
            ts: RawField::Text(&record[0]),
            side: RawField::Text(&record[1]),
            price: RawField::Text(&record[2]),
            volume: RawField::Text(&record[3]),
        };
        match raw.validate(out.orders.len() as u64) {
            Ok(order) => out.orders.push(order),
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }
    if !header_seen {
        return Err(IngestError::Header {
            found: String::new(),
        });
    }
    Ok(out)
}

fn parse_jsonl<R: Read>(source: R) -> Result<ParsedOrders, IngestError> {
    let mut reader = io::BufReader::new(source);
    let mut out = ParsedOrders::default();
    let mut buf = Vec::new();
    let mut line = 0usize;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line += 1;
        let text = std::str::from_utf8(&buf).map_err(|_| IngestError::Utf8 { line })?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => {
                out.rejects.push(Reject {
                    line,
                    reason: format!("invalid json: {e}"),
                });
                continue;
            }
        };
        let Some(obj) = value.as_object() else {
            out.rejects.push(Reject {
                line,
                reason: "expected a json object".into(),
            });
            continue;
        };
        let field = |key: &'static str| -> Result<RawField<'_>, String> {
            match obj.get(key) {
                None | Some(Value::Null) => Err(format!("missing field `{key}`")),
                Some(Value::String(s)) => Ok(RawField::Text(s)),
                Some(Value::Number(n)) => n
                    .as_f64()
                    .map(RawField::Number)
                    .ok_or_else(|| format!("field `{key}` is not a finite number")),
                Some(_) => Err(format!("field `{key}` has unsupported type")),
            }
        };
        let row = (|| {
            Ok::<_, String>(RawRow {
                ts: field("ts")?,
                side: field("side")?,
                price: field("price")?,
                volume: field("volume")?,
            })
        })();
        match row.and_then(|r| r.validate(out.orders.len() as u64)) {
            Ok(order) => out.orders.push(order),
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy)]
enum RawField<'a> {
    Text(&'a str),
    Number(f64),
}

struct RawRow<'a> {
    ts: RawField<'a>,
    side: RawField<'a>,
    price: RawField<'a>,
    volume: RawField<'a>,
}

impl RawRow<'_> {
    fn validate(&self, id: u64) -> Result<OrderRecord, String> {
        let timestamp = match self.ts {
            RawField::Text(s) => parse_timestamp(s)?,
            RawField::Number(secs) => epoch_seconds(secs)?,
        };
        let side = match self.side {
            RawField::Text(s) => s.parse::<Side>()?,
            RawField::Number(1.0) => Side::Buy,
            RawField::Number(-1.0) => Side::Sell,
            RawField::Number(n) => return Err(format!("invalid side `{n}`")),
        };
        let price = number(self.price, "price")?;
        let volume = number(self.volume, "volume")?;
        if price <= 0.0 {
            return Err("nonpositive price".into());
        }
        if volume <= 0.0 {
            return Err("nonpositive volume".into());
        }
        Ok(OrderRecord::new(id, side, price, volume, timestamp))
    }
}

fn number(field: RawField<'_>, name: &str) -> Result<f64, String> {
    let v = match field {
        RawField::Number(v) => v,
        RawField::Text(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("invalid {name} `{s}`"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {name}"))
    }
}

fn epoch_seconds(secs: f64) -> Result<Timestamp, String> {
    if !secs.is_finite() || secs.fract() != 0.0 {
        return Err(format!("invalid epoch timestamp `{secs}`"));
    }
    Utc.timestamp_opt(secs as i64, 0)
        .single()
        .ok_or_else(|| format!("timestamp out of range `{secs}`"))
}

/// Parses RFC 3339 instants, naive date-times (taken as UTC), bare dates and
/// integer epoch seconds. Sub-second parts are truncated.
pub fn parse_timestamp(raw: &str) -> Result<Timestamp, String> {
    let s = raw.trim();
    let parsed = if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        dt.with_timezone(&Utc)
    } else if let Some(naive) = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
    {
        naive.and_utc()
    } else if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        date.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
    } else if let Ok(secs) = s.parse::<i64>() {
        return epoch_seconds(secs as f64);
    } else {
        return Err(format!("invalid timestamp `{s}`"));
    };
    Ok(Utc
        .timestamp_opt(parsed.timestamp(), 0)
        .single()
        .expect("whole seconds of a valid instant"))
}

pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Writes orders in the canonical csv layout (`+1`/`-1` sides, RFC 3339 UTC).
pub fn write_orders_csv<W: Write>(orders: &[OrderRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "side", "price", "volume"])?;
    for o in orders {
        w.write_record([
            format_timestamp(&o.timestamp),
            o.side.to_string(),
            o.price.to_string(),
            o.volume.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rejects_csv<W: Write>(rejects: &[Reject], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["line", "reason"])?;
    for r in rejects {
        w.write_record([r.line.to_string(), r.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Groups orders by UTC calendar date. Partitions come back in date order and
/// each is sorted by `(timestamp, id)`.
pub fn partition_by_day(orders: &[OrderRecord]) -> Vec<DayPartition> {
    let mut days: BTreeMap<NaiveDate, Vec<OrderRecord>> = BTreeMap::new();
    for o in orders {
        days.entry(o.day()).or_default().push(o.clone());
    }
    days.into_iter()
        .map(|(day, mut orders)| {
            orders.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.id.cmp(&b.id)));
            DayPartition { day, orders }
        })
        .collect()
}
