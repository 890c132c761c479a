//! Core domain types: transaction-log ingestion, the binary activity
//! matrix, chronological splitting, and supervised-window extraction.
//!
//! A transaction log is a UTF-8 comma-separated file with header
//! `customer_id,shop_id,date` (ISO-8601 dates). Ingestion maps dates to
//! 0-based day indices anchored at the earliest date in the file and
//! collapses duplicate (customer, shop, day) triples to a single binary
//! interaction.

use std::collections::BTreeSet;
use std::ops::Range;

use crate::encoder::PatternSequence;
use crate::error::{Error, Result};

/// One deduplicated customer/shop/day interaction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PurchaseEvent {
    pub customer_id: String,
    pub shop_id: String,
    /// Day index, 0-based from the dataset epoch.
    pub day: u32,
}

/// Binary customer x day x shop interaction tensor.
///
/// The per-day slice over shops for one customer is the daily
/// shop-purchase vector consumed by the pattern encoder.
#[derive(Debug, Clone)]
pub struct ActivityMatrix {
    customers: Vec<String>,
    shops: Vec<String>,
    days: u32,
    /// Row-major (customer, day, shop), entries 0 or 1.
    data: Vec<u8>,
}

impl ActivityMatrix {
    pub fn customers(&self) -> &[String] {
        &self.customers
    }

    pub fn shops(&self) -> &[String] {
        &self.shops
    }

    pub fn days(&self) -> u32 {
        self.days
    }

    pub fn customer_index(&self, customer_id: &str) -> Result<usize> {
        self.customers
            .iter()
            .position(|c| c == customer_id)
            .ok_or_else(|| Error::Lookup(format!("unknown customer `{customer_id}`")))
    }

    pub fn entry(&self, customer: usize, day: u32, shop: usize) -> u8 {
        self.data[self.offset(customer, day) + shop]
    }

    /// Daily shop-purchase vector for one customer (slice of length k).
    pub fn day_vector(&self, customer: usize, day: u32) -> &[u8] {
        let off = self.offset(customer, day);
        &self.data[off..off + self.shops.len()]
    }

    /// True when the customer purchased at any shop on `day`.
    pub fn any_purchase(&self, customer: usize, day: u32) -> bool {
        self.day_vector(customer, day).iter().any(|&b| b != 0)
    }

    fn offset(&self, customer: usize, day: u32) -> usize {
        (customer * self.days as usize + day as usize) * self.shops.len()
    }
}

/// Static per-customer feature vectors: personal attributes, company
/// attributes, and their aggregation (concatenation).
#[derive(Debug, Clone)]
pub struct CustomerFeatures {
    pub personal: Vec<f64>,
    pub company: Vec<f64>,
    pub aggregated: Vec<f64>,
}

impl CustomerFeatures {
    pub fn new(personal: Vec<f64>, company: Vec<f64>) -> Result<Self> {
        let aggregated = aggregate_features(&personal, &company)?;
        Ok(CustomerFeatures {
            personal,
            company,
            aggregated,
        })
    }
}

/// Contiguous, ordered train/validation/test day ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Range<u32>,
    pub validation: Range<u32>,
    pub test: Range<u32>,
}

/// One supervised example: an L-day input window and the binary label
/// "any purchase on the day after the window".
#[derive(Debug, Clone)]
pub struct SupervisedWindow {
    /// Row-major L x feature_dim input block.
    pub inputs: Vec<f64>,
    pub feature_dim: usize,
    pub label: u8,
    /// Index into the activity matrix customer list.
    pub customer: usize,
    /// Last day covered by the input window; the label day is `end_day + 1`.
    pub end_day: u32,
}

impl SupervisedWindow {
    pub fn window_len(&self) -> usize {
        self.inputs.len() / self.feature_dim
    }

    /// Feature row for one day of the window.
    pub fn day_row(&self, step: usize) -> &[f64] {
        &self.inputs[step * self.feature_dim..(step + 1) * self.feature_dim]
    }
}

/// Parse a transaction log into deduplicated, deterministically ordered
/// events. Dates are mapped to day indices from the minimum date present.
///
/// Line numbers in errors are 1-based and count the header line.
pub fn ingest_transactions(text: &str) -> Result<Vec<PurchaseEvent>> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((no, l)) => break (no + 1, l),
            None => return Err(Error::EmptyDataset("transaction file is empty".into())),
        }
    };
    let cols: Vec<&str> = header.1.split(',').map(str::trim).collect();
    if cols != ["customer_id", "shop_id", "date"] {
        return Err(Error::Parse {
            line: header.0,
            message: format!(
                "expected header `customer_id,shop_id,date`, found `{}`",
                header.1.trim()
            ),
        });
    }

    let mut raw: Vec<(String, String, i64)> = Vec::new();
    for (no, line) in lines {
        let line_no = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty customer or shop id".into(),
            });
        }
        let day_number = parse_iso_date(fields[2]).map_err(|message| Error::Parse {
            line: line_no,
            message,
        })?;
        raw.push((fields[0].to_string(), fields[1].to_string(), day_number));
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset("no transaction rows".into()));
    }

    let epoch = raw.iter().map(|r| r.2).min().expect("nonempty");
    let dedup: BTreeSet<PurchaseEvent> = raw
        .into_iter()
        .map(|(customer_id, shop_id, day_number)| PurchaseEvent {
            customer_id,
            shop_id,
            day: (day_number - epoch) as u32,
        })
        .collect();
    // BTreeSet order is (customer, shop, day); the contract is (customer, day, shop).
    let mut events: Vec<PurchaseEvent> = dedup.into_iter().collect();
    events.sort_by(|a, b| {
        (&a.customer_id, a.day, &a.shop_id).cmp(&(&b.customer_id, b.day, &b.shop_id))
    });
    Ok(events)
}

/// Distinct sorted customers, distinct sorted shops, and the day count
/// (max day + 1) present in an event collection.
pub fn catalog(events: &[PurchaseEvent]) -> (Vec<String>, Vec<String>, u32) {
    let mut customers: Vec<String> = events.iter().map(|e| e.customer_id.clone()).collect();
    customers.sort();
    customers.dedup();
    let mut shops: Vec<String> = events.iter().map(|e| e.shop_id.clone()).collect();
    shops.sort();
    shops.dedup();
    let days = events.iter().map(|e| e.day + 1).max().unwrap_or(0);
    (customers, shops, days)
}

/// Parse `YYYY-MM-DD` into an absolute day number (days since 1970-01-01,
/// negative before). Rejects out-of-range months and days.
fn parse_iso_date(s: &str) -> std::result::Result<i64, String> {
    let parts: Vec<&str> = s.split('-').collect();
    if parts.len() != 3 || parts[0].len() != 4 || parts[1].len() != 2 || parts[2].len() != 2 {
        return Err(format!("invalid date `{s}`, expected YYYY-MM-DD"));
    }
    let year: i64 = parts[0]
        .parse()
        .map_err(|_| format!("invalid year in `{s}`"))?;
    let month: u32 = parts[1]
        .parse()
        .map_err(|_| format!("invalid month in `{s}`"))?;
    let day: u32 = parts[2]
        .parse()
        .map_err(|_| format!("invalid day in `{s}`"))?;
    if !(1..=12).contains(&month) {
        return Err(format!("month out of range in `{s}`"));
    }
    if day < 1 || day > days_in_month(year, month) {
        return Err(format!("day out of range in `{s}`"));
    }
    Ok(days_from_civil(year, month, day))
}

fn days_in_month(year: i64, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap(year) => 29,
        2 => 28,
        _ => 0,
    }
}

fn is_leap(year: i64) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

/// Days since 1970-01-01 for a civil date (proleptic Gregorian).
fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = (y - era * 400) as i64;
    let mp = ((month + 9) % 12) as i64;
    let doy = (153 * mp + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

/// Inverse of `days_from_civil`.
fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719468;
    let era = if z >= 0 { z } else { z - 146096 } / 146097;
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

/// Render events back into the transaction file format, anchoring day 0 at
/// `epoch_date` (ISO-8601).
pub fn transactions_to_csv(events: &[PurchaseEvent], epoch_date: &str) -> Result<String> {
    let epoch = parse_iso_date(epoch_date).map_err(|message| Error::Parse { line: 0, message })?;
    let mut out = String::from("customer_id,shop_id,date\n");
    for e in events {
        let (y, m, d) = civil_from_days(epoch + e.day as i64);
        out.push_str(&format!("{},{},{y:04}-{m:02}-{d:02}\n", e.customer_id, e.shop_id));
    }
    Ok(out)
}

/// Build the binary interaction tensor from events.
///
/// Every event must reference a listed customer and shop and a day below
/// `days`; duplicates collapse to the same 1 entry.
pub fn build_activity_matrix(
    events: &[PurchaseEvent],
    customers: &[String],
    shops: &[String],
    days: u32,
) -> Result<ActivityMatrix> {
    let customer_index: std::collections::HashMap<&str, usize> = customers
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let shop_index: std::collections::HashMap<&str, usize> = shops
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let mut matrix = ActivityMatrix {
        customers: customers.to_vec(),
        shops: shops.to_vec(),
        days,
        data: vec![0u8; customers.len() * days as usize * shops.len()],
    };
    for event in events {
        let u = *customer_index
            .get(event.customer_id.as_str())
            .ok_or_else(|| {
                Error::Integrity(format!("event references unknown customer `{}`", event.customer_id))
            })?;
        let s = *shop_index.get(event.shop_id.as_str()).ok_or_else(|| {
            Error::Integrity(format!("event references unknown shop `{}`", event.shop_id))
        })?;
        if event.day >= days {
            return Err(Error::Integrity(format!(
                "event day {} outside declared range [0, {days})",
                event.day
            )));
        }
        let off = matrix.offset(u, event.day);
        matrix.data[off + s] = 1;
    }
    Ok(matrix)
}

/// Concatenate personal and company attribute vectors into the aggregated
/// customer feature vector. Every component must be finite.
pub fn aggregate_features(personal: &[f64], company: &[f64]) -> Result<Vec<f64>> {
    for (name, v) in [("personal", personal), ("company", company)] {
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite component {bad} in {name} feature vector"
            )));
        }
    }
    let mut h = Vec::with_capacity(personal.len() + company.len());
    h.extend_from_slice(personal);
    h.extend_from_slice(company);
    Ok(h)
}

/// Partition `[0, days)` into contiguous train/validation/test ranges.
///
/// Validation and test get the floor of their share; leftover days go to
/// the training range.
pub fn chronological_split(days: u32, ratios: (u32, u32, u32)) -> Result<DatasetSplit> {
    if days < 10 {
        return Err(Error::TooShort { got: days, min: 10 });
    }
    let (r_train, r_val, r_test) = ratios;
    let total = r_train + r_val + r_test;
    if r_train == 0 || r_val == 0 || r_test == 0 {
        return Err(Error::Config("split ratios must all be positive".into()));
    }
    let val = days as u64 * r_val as u64 / total as u64;
    let test = days as u64 * r_test as u64 / total as u64;
    let train = days as u64 - val - test;
    if val == 0 || test == 0 || train == 0 {
        return Err(Error::TooShort { got: days, min: 10 });
    }
    let (train, val) = (train as u32, val as u32);
    Ok(DatasetSplit {
        train: 0..train,
        validation: train..train + val,
        test: train + val..days,
    })
}

/// Extract supervised windows for every customer over one split range.
///
/// Window inputs and the label day both stay inside `split_range`:
/// `end_day` slides with stride 1 over `[start + L - 1, end - 2]` and the
/// label comes from `end_day + 1`. Each day row is the customer's pattern
/// code (scaled by `code_scale`) followed by the aggregated feature vector.
pub fn make_windows(
    sequences: &[PatternSequence],
    features: &[CustomerFeatures],
    matrix: &ActivityMatrix,
    split_range: Range<u32>,
    window_len: usize,
    code_scale: f64,
) -> Result<Vec<SupervisedWindow>> {
    if window_len == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    let span = (split_range.end - split_range.start) as usize;
    if span <= window_len {
        return Err(Error::EmptyWindows(format!(
            "window length {window_len} does not fit a {span}-day split"
        )));
    }
    if sequences.len() != matrix.customers().len() || features.len() != matrix.customers().len() {
        return Err(Error::Dimension(format!(
            "{} sequences / {} feature vectors for {} customers",
            sequences.len(),
            features.len(),
            matrix.customers().len()
        )));
    }

    let mut windows = Vec::new();
    for (u, (seq, feat)) in sequences.iter().zip(features).enumerate() {
        if seq.codes.len() != matrix.days() as usize {
            return Err(Error::Dimension(format!(
                "pattern sequence of length {} for a {}-day matrix",
                seq.codes.len(),
                matrix.days()
            )));
        }
        let feature_dim = 1 + feat.aggregated.len();
        let first_end = split_range.start + window_len as u32 - 1;
        let last_end = split_range.end - 2;
        for end_day in first_end..=last_end {
            let start_day = end_day + 1 - window_len as u32;
            let mut inputs = Vec::with_capacity(window_len * feature_dim);
            for day in start_day..=end_day {
                inputs.push(seq.codes[day as usize] as f64 * code_scale);
                inputs.extend_from_slice(&feat.aggregated);
            }
            let label = u8::from(matrix.any_purchase(u, end_day + 1));
            windows.push(SupervisedWindow {
                inputs,
                feature_dim,
                label,
                customer: u,
                end_day,
            });
        }
    }
    Ok(windows)
}
