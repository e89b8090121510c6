//! Daily OHLCV history: CSV parsing/serialization and an optional HTTP fetch
//! client that caches every response on disk.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Market indices used in the reference experiments, as (name, Yahoo symbol).
pub const REFERENCE_TICKERS: [(&str, &str); 11] = [
    ("BVSP", "^BVSP"),
    ("NYA", "^NYA"),
    ("DJI", "^DJI"),
    ("IXIC", "^IXIC"),
    ("RUT", "^RUT"),
    ("FCHI", "^FCHI"),
    ("FTSE", "^FTSE"),
    ("000001.SS", "000001.SS"),
    ("HSI", "^HSI"),
    ("N225", "^N225"),
    ("BSESN", "^BSESN"),
];

pub const CSV_HEADER: &str = "date,open,high,low,close,volume";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl OhlcvBar {
    /// Checks `low <= min(open, close) <= max(open, close) <= high`, positive
    /// prices and non-negative volume.
    pub fn is_consistent(&self) -> bool {
        let prices = [self.open, self.high, self.low, self.close];
        prices.iter().all(|p| p.is_finite() && *p > 0.0)
            && self.volume.is_finite()
            && self.volume >= 0.0
            && self.low <= self.open.min(self.close)
            && self.open.max(self.close) <= self.high
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickerHistory {
    pub ticker: String,
    pub bars: Vec<OhlcvBar>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedHistory {
    pub history: TickerHistory,
    /// Rows dropped for missing/non-finite fields, invariant violations or
    /// duplicate dates.
    pub skipped: usize,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty()
        || f.eq_ignore_ascii_case("null")
        || f.eq_ignore_ascii_case("nan")
        || f.eq_ignore_ascii_case("na")
        || f == "-"
}

/// Parses `date,open,high,low,close,volume` CSV. Column names are matched
/// case-insensitively and extra columns (e.g. `Adj Close`) are ignored.
pub fn parse_ohlcv_csv<R: Read>(ticker: &str, reader: R) -> Result<ParsedHistory> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Format { line: 1, msg: e.to_string() })?
        .clone();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Format { line: 1, msg: format!("missing column `{name}`") })
    };
    let cols = [
        find("date")?,
        find("open")?,
        find("high")?,
        find("low")?,
        find("close")?,
        find("volume")?,
    ];

    let mut bars = Vec::new();
    let mut skipped = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Format {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let date_field = record.get(cols[0]).unwrap_or("");
        if is_missing(date_field) {
            skipped += 1;
            continue;
        }
        let date = NaiveDate::parse_from_str(date_field, "%Y-%m-%d").map_err(|e| Error::Format {
            line,
            msg: format!("bad date `{date_field}`: {e}"),
        })?;

        let mut values = [0.0; 5];
        let mut missing = false;
        for (v, &c) in values.iter_mut().zip(&cols[1..]) {
            let field = record.get(c).unwrap_or("");
            if is_missing(field) {
                missing = true;
                break;
            }
            *v = field.parse::<f64>().map_err(|e| Error::Format {
                line,
                msg: format!("bad number `{field}`: {e}"),
            })?;
            if !v.is_finite() {
                missing = true;
                break;
            }
        }
        if missing {
            skipped += 1;
            continue;
        }
        let bar = OhlcvBar {
            date,
            open: values[0],
            high: values[1],
            low: values[2],
            close: values[3],
            volume: values[4],
        };
        if !bar.is_consistent() {
            skipped += 1;
            continue;
        }
        bars.push(bar);
    }

    // stable sort keeps the first occurrence of a duplicated date
    bars.sort_by_key(|b| b.date);
    let before = bars.len();
    bars.dedup_by_key(|b| b.date);
    skipped += before - bars.len();

    Ok(ParsedHistory {
        history: TickerHistory { ticker: ticker.to_string(), bars },
        skipped,
    })
}

pub fn read_ohlcv_file(ticker: &str, path: &Path) -> Result<ParsedHistory> {
    let file = fs::File::open(path)?;
    parse_ohlcv_csv(ticker, std::io::BufReader::new(file))
}

/// Canonical CSV text: LF line endings, shortest round-trip float formatting.
pub fn serialize_ohlcv_csv(history: &TickerHistory) -> String {
    let mut out = String::with_capacity(64 * (history.bars.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for b in &history.bars {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.date, b.open, b.high, b.low, b.close, b.volume
        ));
    }
    out
}

/// Writes `bytes` to `path` via a sibling temp file and rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// File-system safe form of a ticker symbol (`^FTSE` -> `_FTSE`).
pub fn sanitize_ticker(ticker: &str) -> String {
    ticker
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub ticker: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub rows: usize,
    pub file: String,
    pub retrieved_at: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    /// Keyed by cache file name.
    pub entries: BTreeMap<String, CacheEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl CacheManifest {
    pub fn load(data_dir: &Path) -> Result<Self> {
        let path = data_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, data_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&data_dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn tickers(&self) -> Vec<String> {
        let mut t: Vec<String> = self.entries.values().map(|e| e.ticker.clone()).collect();
        t.sort();
        t.dedup();
        t
    }
}

static MANIFEST_LOCK: Mutex<()> = Mutex::new(());

/// Locates the CSV for `ticker` in `data_dir`: `<ticker>.csv` if present,
/// otherwise the cached fetch with the latest end date.
pub fn resolve_history_file(data_dir: &Path, ticker: &str) -> Result<PathBuf> {
    let direct = data_dir.join(format!("{}.csv", sanitize_ticker(ticker)));
    if direct.exists() {
        return Ok(direct);
    }
    let manifest = CacheManifest::load(data_dir)?;
    manifest
        .entries
        .values()
        .filter(|e| e.ticker == ticker)
        .max_by_key(|e| (e.to, std::cmp::Reverse(e.from)))
        .map(|e| data_dir.join(&e.file))
        .filter(|p| p.exists())
        .ok_or_else(|| Error::NoData(format!("no CSV for ticker {ticker} in {}", data_dir.display())))
}

/// Request shape of the daily-history endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointStyle {
    /// `GET <endpoint>?ticker=..&from=YYYY-MM-DD&to=YYYY-MM-DD`
    Query,
    /// `GET <endpoint>/<symbol>?period1=<unix>&period2=<unix>&interval=1d&events=history`
    /// with index names mapped to Yahoo symbols (`FTSE` -> `^FTSE`).
    Yahoo,
}

pub const DEFAULT_YAHOO_ENDPOINT: &str = "https://query1.finance.yahoo.com/v7/finance/download";

/// Yahoo symbol for a reference index name; other names pass through.
pub fn yahoo_symbol(ticker: &str) -> &str {
    REFERENCE_TICKERS.iter().find(|(name, _)| *name == ticker).map(|(_, sym)| *sym).unwrap_or(ticker)
}

/// HTTP client for a daily-history CSV endpoint.
#[derive(Debug, Clone)]
pub struct FetchClient {
    pub endpoint: String,
    pub style: EndpointStyle,
    pub data_dir: PathBuf,
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub timeout: Duration,
    /// Serve from cache only; never touch the network.
    pub offline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchSource {
    Cache,
    Network,
}

impl FetchClient {
    pub fn new(endpoint: impl Into<String>, data_dir: impl Into<PathBuf>) -> Self {
        FetchClient {
            endpoint: endpoint.into(),
            style: EndpointStyle::Query,
            data_dir: data_dir.into(),
            max_retries: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
            timeout: Duration::from_secs(30),
            offline: false,
        }
    }

    pub fn cache_file_name(ticker: &str, from: NaiveDate, to: NaiveDate) -> String {
        format!("{}_{}_{}.csv", sanitize_ticker(ticker), from, to)
    }

    pub fn fetch_history(
        &self,
        ticker: &str,
        from: NaiveDate,
        to: NaiveDate,
    ) -> Result<(TickerHistory, FetchSource)> {
        if to < from {
            return Err(Error::InvalidInput(format!("empty date range {from}..{to}")));
        }
        let name = Self::cache_file_name(ticker, from, to);
        let path = self.data_dir.join(&name);
        if path.exists() {
            let parsed = read_ohlcv_file(ticker, &path)?;
            return Ok((parsed.history, FetchSource::Cache));
        }
        if self.offline {
            return Err(Error::Transport(format!("offline mode and {name} is not cached")));
        }

        let body = self.get_with_retry(ticker, from, to)?;
        let mut parsed = parse_ohlcv_csv(ticker, body.as_bytes())?;
        parsed.history.bars.retain(|b| b.date >= from && b.date <= to);
        if parsed.history.bars.is_empty() {
            return Err(Error::NoData(format!("{ticker} has no trading days in {from}..{to}")));
        }

        write_atomic(&path, serialize_ohlcv_csv(&parsed.history).as_bytes())?;
        {
            let _guard = MANIFEST_LOCK.lock().unwrap_or_else(|e| e.into_inner());
            let mut manifest = CacheManifest::load(&self.data_dir)?;
            manifest.entries.insert(
                name.clone(),
                CacheEntry {
                    ticker: ticker.to_string(),
                    from,
                    to,
                    rows: parsed.history.bars.len(),
                    file: name,
                    retrieved_at: chrono::Utc::now().to_rfc3339(),
                },
            );
            manifest.save(&self.data_dir)?;
        }
        Ok((parsed.history, FetchSource::Network))
    }

    fn get_with_retry(&self, ticker: &str, from: NaiveDate, to: NaiveDate) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut delay = self.base_delay;
        let mut last_err = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay = (delay * 2).min(self.max_delay);
            }
            let result = match self.style {
                EndpointStyle::Query => agent
                    .get(&self.endpoint)
                    .query("ticker", ticker)
                    .query("from", from.to_string())
                    .query("to", to.to_string())
                    .call(),
                EndpointStyle::Yahoo => {
                    let unix = |d: NaiveDate| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
                    agent
                        .get(format!("{}/{}", self.endpoint.trim_end_matches('/'), yahoo_symbol(ticker)))
                        .query("period1", unix(from).to_string())
                        .query("period2", (unix(to) + 86_400).to_string())
                        .query("interval", "1d")
                        .query("events", "history")
                        .call()
                }
            };
            match result {
                Ok(mut resp) => match resp.body_mut().read_to_string() {
                    Ok(body) if body.trim().is_empty() => {
                        return Err(Error::NoData(format!("empty payload for {ticker}")));
                    }
                    Ok(body) => return Ok(body),
                    Err(e) => last_err = e.to_string(),
                },
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Transport(format!(
            "{ticker}: giving up after {} attempts: {last_err}",
            self.max_retries + 1
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_ROWS: &str = "date,open,high,low,close,volume\n\
        2020-01-02,100,110,95,105,1000\n\
        2020-01-03,105,112,101,111,1500\n";

    #[test]
    fn parses_two_rows() {
        let p = parse_ohlcv_csv("X", TWO_ROWS.as_bytes()).unwrap();
        assert_eq!(p.history.bars.len(), 2);
        assert_eq!(p.skipped, 0);
        assert_eq!(p.history.bars[1].close, 111.0);
    }

    #[test]
    fn sorts_out_of_order_rows() {
        let text = "date,open,high,low,close,volume\r\n\
            2020-01-03,105,112,101,111,1500\r\n\
            2020-01-02,100,110,95,105,1000\r\n";
        let p = parse_ohlcv_csv("X", text.as_bytes()).unwrap();
        let dates: Vec<_> = p.history.bars.iter().map(|b| b.date.to_string()).collect();
        assert_eq!(dates, ["2020-01-02", "2020-01-03"]);
    }

    #[test]
    fn rejects_high_below_low() {
        let text = format!("{TWO_ROWS}2020-01-06,100,90,95,92,10\n");
        let p = parse_ohlcv_csv("X", text.as_bytes()).unwrap();
        assert_eq!(p.history.bars.len(), 2);
        assert_eq!(p.skipped, 1);
    }

    #[test]
    fn skips_null_rows_and_duplicates() {
        let text = format!(
            "{TWO_ROWS}2020-01-06,null,null,null,null,null\n2020-01-03,1,1,1,1,1\n2020-01-07,1,2,1,inf,5\n"
        );
        let p = parse_ohlcv_csv("X", text.as_bytes()).unwrap();
        assert_eq!(p.history.bars.len(), 2);
        assert_eq!(p.skipped, 3);
        assert_eq!(p.history.bars[1].open, 105.0);
    }

    #[test]
    fn yahoo_header_with_extra_column() {
        let text = "Date,Open,High,Low,Close,Adj Close,Volume\n2020-01-02,100,110,95,105,104,1000\n";
        let p = parse_ohlcv_csv("X", text.as_bytes()).unwrap();
        assert_eq!(p.history.bars[0].volume, 1000.0);
    }

    #[test]
    fn missing_header_is_format_error() {
        let text = "2020-01-02,100,110,95,105,1000\n";
        assert!(matches!(parse_ohlcv_csv("X", text.as_bytes()), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn bad_date_reports_line() {
        let text = format!("{TWO_ROWS}02/01/2020,1,1,1,1,1\n");
        match parse_ohlcv_csv("X", text.as_bytes()) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serialize_round_trips() {
        let p = parse_ohlcv_csv("X", TWO_ROWS.as_bytes()).unwrap();
        let text = serialize_ohlcv_csv(&p.history);
        assert_eq!(text, TWO_ROWS);
    }

    #[test]
    fn sanitizes_symbols() {
        assert_eq!(sanitize_ticker("^FTSE"), "_FTSE");
        assert_eq!(sanitize_ticker("000001.SS"), "000001.SS");
    }
}
