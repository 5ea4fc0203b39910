//! CSV ingestion and export for prices and covariates.
//!
//! Price files have header `date,open,close`; feature files have header
//! `date,<name_1>,...,<name_N>`. Rows in the two files must carry the same
//! dates in the same order. Row numbers in errors are 1-based file lines,
//! so the first data row is line 2.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::series::{FeatureMatrix, Frequency, PricePoint, PriceSeries, Timestamp};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn csv_err(what: &str, e: csv::Error) -> Error {
    let line = e
        .position()
        .map(|p| format!(" at line {}", p.line()))
        .unwrap_or_default();
    Error::Data(format!("{what}: malformed CSV{line}: {e}"))
}

struct Table {
    header: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_table<R: Read>(what: &str, reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| csv_err(what, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(what, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok(Table { header, rows })
}

fn parse_cell(what: &str, line: u64, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| {
        Error::Data(format!(
            "{what}: row {line}, column `{column}`: `{cell}` is not a number"
        ))
    })?;
    if !v.is_finite() {
        return Err(Error::Data(format!(
            "{what}: row {line}, column `{column}`: non-finite value `{cell}`"
        )));
    }
    Ok(v)
}

fn parse_dates(what: &str, table: &Table) -> Result<Vec<Timestamp>> {
    let mut out: Vec<Timestamp> = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let cell = rec.get(0).unwrap_or("");
        let ts: Timestamp = cell.parse().map_err(|_| {
            Error::Data(format!(
                "{what}: row {line}, column `date`: invalid date `{cell}`"
            ))
        })?;
        if let Some(prev) = out.last() {
            if *prev == ts {
                return Err(Error::Data(format!("{what}: row {line}: duplicate date {ts}")));
            }
            if *prev > ts {
                return Err(Error::Data(format!(
                    "{what}: row {line}: date {ts} is earlier than the previous row"
                )));
            }
        }
        out.push(ts);
    }
    Ok(out)
}

fn check_frequency(what: &str, dates: &[Timestamp], frequency: Frequency) -> Result<()> {
    let want_hour = frequency == Frequency::Hourly;
    if let Some(ts) = dates.iter().find(|t| t.hour().is_some() != want_hour) {
        return Err(Error::Data(format!(
            "{what}: timestamp {ts} does not match {frequency:?} frequency"
        )));
    }
    Ok(())
}

pub fn read_prices<R: Read>(reader: R, frequency: Frequency) -> Result<PriceSeries> {
    let what = "price file";
    let table = read_table(what, reader)?;
    for col in ["date", "open", "close"] {
        if !table.header.iter().any(|h| h == col) {
            return Err(Error::Data(format!("{what}: missing column `{col}`")));
        }
    }
    if table.header[0] != "date" {
        return Err(Error::Data(format!("{what}: first column must be `date`")));
    }
    let idx = |name: &str| table.header.iter().position(|h| h == name).unwrap_or(0);
    let (oi, ci) = (idx("open"), idx("close"));
    let dates = parse_dates(what, &table)?;
    check_frequency(what, &dates, frequency)?;
    let mut points = Vec::with_capacity(dates.len());
    for ((line, rec), ts) in table.rows.iter().zip(dates) {
        let open = parse_cell(what, *line, "open", rec.get(oi).unwrap_or(""))?;
        let close = parse_cell(what, *line, "close", rec.get(ci).unwrap_or(""))?;
        if !(open > 0.0 && close > 0.0) {
            return Err(Error::NonPositivePrice {
                timestamp: ts.to_string(),
                open,
                close,
            });
        }
        points.push(PricePoint {
            timestamp: ts,
            open,
            close,
        });
    }
    PriceSeries::new(points, frequency)
}

pub fn read_features<R: Read>(reader: R, frequency: Frequency) -> Result<FeatureMatrix> {
    let what = "feature file";
    let table = read_table(what, reader)?;
    if table.header.first().map(String::as_str) != Some("date") {
        return Err(Error::Data(format!("{what}: missing column `date`")));
    }
    let names: Vec<String> = table.header[1..].to_vec();
    if names.is_empty() {
        return Err(Error::Data(format!("{what}: no feature columns")));
    }
    let dates = parse_dates(what, &table)?;
    check_frequency(what, &dates, frequency)?;
    let mut data = Matrix::zeros(names.len(), dates.len());
    for (t, (line, rec)) in table.rows.iter().enumerate() {
        for (i, name) in names.iter().enumerate() {
            let cell = rec.get(i + 1).unwrap_or("");
            data.set(i, t, parse_cell(what, *line, name, cell)?);
        }
    }
    FeatureMatrix::new(names, data, dates)
}

/// Checks that both series carry the same timestamps, naming the first
/// date present in one file but not the other.
pub fn align(prices: &PriceSeries, features: &FeatureMatrix) -> Result<()> {
    let p = prices.timestamps();
    let f = features.timestamps();
    if p == f {
        return Ok(());
    }
    let missing_in_features = p.iter().find(|t| f.binary_search(t).is_err());
    let missing_in_prices = f.iter().find(|t| p.binary_search(t).is_err());
    let msg = match (missing_in_features, missing_in_prices) {
        (Some(t), _) => format!("date {t} is in the price file but missing from the feature file"),
        (None, Some(t)) => format!("date {t} is in the feature file but missing from the price file"),
        (None, None) => "price and feature dates differ".to_string(),
    };
    Err(Error::Data(msg))
}

pub fn load_dataset(
    price_path: &Path,
    feature_path: &Path,
    frequency: Frequency,
) -> Result<(PriceSeries, FeatureMatrix)> {
    let prices = read_prices(open(price_path)?, frequency).map_err(|e| annotate(e, price_path))?;
    let features = read_features(open(feature_path)?, frequency).map_err(|e| annotate(e, feature_path))?;
    align(&prices, &features)?;
    Ok((prices, features))
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn write_prices<W: Write>(prices: &PriceSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(format!("price export failed: {e}"));
    w.write_record(["date", "open", "close"]).map_err(err)?;
    for p in prices.points() {
        w.write_record([p.timestamp.to_string(), p.open.to_string(), p.close.to_string()])
            .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("price export failed: {e}")))
}

pub fn write_features<W: Write>(features: &FeatureMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(format!("feature export failed: {e}"));
    let mut header = vec!["date".to_string()];
    header.extend(features.names().iter().cloned());
    w.write_record(&header).map_err(err)?;
    for (t, ts) in features.timestamps().iter().enumerate() {
        let mut row = vec![ts.to_string()];
        row.extend((0..features.n_features()).map(|i| features.get(i, t).to_string()));
        w.write_record(&row).map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("feature export failed: {e}")))
}

/// Writes both CSVs to the given paths.
pub fn save_dataset(
    prices: &PriceSeries,
    features: &FeatureMatrix,
    price_path: &Path,
    feature_path: &Path,
) -> Result<()> {
    write_prices(prices, create(price_path)?)?;
    write_features(features, create(feature_path)?)
}
