//! ETT-style CSV ingestion, chronological splits, z-score scaling and
//! sliding-window sampling.

use std::cmp::Ordering;
use std::path::Path;
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Floor applied to per-channel standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// A multivariate series as read from disk. `values` is row-major
/// `rows × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub timestamps: Vec<String>,
    pub channel_names: Vec<String>,
    pub values: Vec<f64>,
}

impl RawDataset {
    pub fn new(timestamps: Vec<String>, channel_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if channel_names.is_empty() {
            return Err(Error::config("dataset has no channels"));
        }
        if values.len() != timestamps.len() * channel_names.len() {
            return Err(Error::shape(format!(
                "{} values for {} rows × {} channels",
                values.len(),
                timestamps.len(),
                channel_names.len()
            )));
        }
        check_increasing(&timestamps).map_err(|(row, message)| Error::config(format!("row {row}: {message}")))?;
        Ok(RawDataset {
            timestamps,
            channel_names,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.channels();
        &self.values[r * c..(r + 1) * c]
    }
}

/// Reads a CSV with a header row, a timestamp in the first column and one
/// numeric column per channel.
pub fn load_csv(path: &Path) -> Result<RawDataset> {
    let ingest = |message: String| Error::Ingest {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest(e.to_string()))?;
    let header = reader.headers().map_err(|e| ingest(e.to_string()))?.clone();
    if header.len() < 2 {
        return Err(ingest(format!(
            "need a timestamp column and at least one channel, header has {} columns",
            header.len()
        )));
    }
    let channel_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let channels = channel_names.len();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // 1-based file line, counting the header
        let line = i + 2;
        let record = record.map_err(|e| ingest(format!("row {line}: {e}")))?;
        if record.len() != channels + 1 {
            return Err(ingest(format!(
                "row {line}: expected {} columns, found {}",
                channels + 1,
                record.len()
            )));
        }
        let stamp = &record[0];
        if stamp.is_empty() {
            return Err(ingest(format!("row {line}, column 1: empty timestamp")));
        }
        timestamps.push(stamp.to_string());
        for (j, cell) in record.iter().enumerate().skip(1) {
            let v: f64 = cell.parse().map_err(|_| {
                ingest(format!(
                    "row {line}, column {}: cannot parse {cell:?} as a number",
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(ingest(format!("row {line}, column {}: non-finite value", j + 1)));
            }
            values.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(ingest("no data rows".into()));
    }
    check_increasing(&timestamps).map_err(|(row, message)| ingest(format!("row {}: {message}", row + 2)))?;
    Ok(RawDataset {
        timestamps,
        channel_names,
        values,
    })
}

#[derive(PartialEq, PartialOrd)]
enum StampKey<'a> {
    Time(NaiveDateTime),
    Number(f64),
    Text(&'a str),
}

fn parse_time(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%Y/%m/%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// Dates if every stamp parses as one, else numbers, else plain strings.
fn check_increasing(stamps: &[String]) -> std::result::Result<(), (usize, String)> {
    let times: Option<Vec<_>> = stamps.iter().map(|s| parse_time(s).map(StampKey::Time)).collect();
    let keys = times
        .or_else(|| stamps.iter().map(|s| s.parse().ok().map(StampKey::Number)).collect())
        .unwrap_or_else(|| stamps.iter().map(|s| StampKey::Text(s)).collect());
    for (i, pair) in keys.windows(2).enumerate() {
        if pair[0].partial_cmp(&pair[1]) != Some(Ordering::Less) {
            return Err((
                i + 1,
                format!("timestamp {:?} does not follow {:?}", stamps[i + 1], stamps[i]),
            ));
        }
    }
    Ok(())
}

/// Chronological split protocol.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SplitSpec {
    /// 12 / 4 / 4 months of hourly data.
    #[default]
    EttHourly,
    /// 12 / 4 / 4 months of 15-minute data.
    EttMinute,
    /// Fractions of the available rows; test gets `⌊test·n⌋`, train
    /// `⌊train·n⌋` and validation the remainder.
    Ratio { train: f64, test: f64 },
}

impl SplitSpec {
    pub fn ratio_default() -> Self {
        SplitSpec::Ratio { train: 0.7, test: 0.2 }
    }

    /// End rows (exclusive) of the train, validation and test segments.
    pub fn borders(&self, rows: usize) -> Result<[usize; 3]> {
        let month = |per_day: usize| 30 * per_day;
        let b = match *self {
            SplitSpec::EttHourly => {
                let m = month(24);
                [12 * m, 16 * m, 20 * m]
            }
            SplitSpec::EttMinute => {
                let m = month(24 * 4);
                [12 * m, 16 * m, 20 * m]
            }
            SplitSpec::Ratio { train, test } => {
                if !(train > 0.0 && test > 0.0 && train + test < 1.0) {
                    return Err(Error::config(format!(
                        "split ratios train={train}, test={test} leave no validation rows"
                    )));
                }
                let n_train = (rows as f64 * train).floor() as usize;
                let n_test = (rows as f64 * test).floor() as usize;
                let n_val = rows - n_train - n_test;
                [n_train, n_train + n_val, rows]
            }
        };
        if b[2] > rows {
            return Err(Error::config(format!(
                "{self:?} needs {} rows, dataset has {rows}",
                b[2]
            )));
        }
        if b[0] == 0 || b[1] <= b[0] || b[2] <= b[1] {
            return Err(Error::config(format!("{rows} rows are too few to split with {self:?}")));
        }
        Ok(b)
    }
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fit on rows `[0, rows)` of a row-major `values` block.
    pub fn fit(values: &[f64], channels: usize, rows: usize) -> Result<Self> {
        if rows == 0 || channels == 0 || values.len() < rows * channels {
            return Err(Error::config(format!(
                "cannot fit a scaler on {rows} rows × {channels} channels"
            )));
        }
        let n = rows as f64;
        let mut mean = vec![0.0; channels];
        for row in values[..rows * channels].chunks_exact(channels) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; channels];
        for row in values[..rows * channels].chunks_exact(channels) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Scaler { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, values: &[f64]) -> Vec<f64> {
        let c = self.channels();
        values
            .iter()
            .enumerate()
            .map(|(i, x)| (x - self.mean[i % c]) / self.std[i % c])
            .collect()
    }

    pub fn inverse_transform(&self, values: &[f64]) -> Vec<f64> {
        let c = self.channels();
        values
            .iter()
            .enumerate()
            .map(|(i, x)| x * self.std[i % c] + self.mean[i % c])
            .collect()
    }
}

/// A contiguous, read-only range of rows of a scaled dataset.
#[derive(Debug, Clone)]
pub struct DatasetView {
    data: Arc<Vec<f64>>,
    channels: usize,
    start: usize,
    end: usize,
}

impl DatasetView {
    pub fn new(data: Arc<Vec<f64>>, channels: usize, start: usize, end: usize) -> Result<Self> {
        if channels == 0 || start > end || end * channels > data.len() {
            return Err(Error::config(format!(
                "view [{start}, {end}) out of range for {} rows",
                data.len() / channels.max(1)
            )));
        }
        Ok(DatasetView {
            data,
            channels,
            start,
            end,
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// First row of the view in the full dataset.
    pub fn offset(&self) -> usize {
        self.start
    }

    pub fn value(&self, row: usize, channel: usize) -> f64 {
        self.data[(self.start + row) * self.channels + channel]
    }

    /// Rows of the view that have a full lookback of `lookback` rows,
    /// counting the row right after it.
    pub fn lookback_positions(&self, lookback: usize) -> usize {
        (self.len() + 1).saturating_sub(lookback)
    }

    /// Start offsets of every `(lookback, horizon)` window at `stride`.
    pub fn window_starts(&self, lookback: usize, horizon: usize, stride: usize) -> Vec<usize> {
        let span = lookback + horizon;
        if stride == 0 || self.len() < span {
            return Vec::new();
        }
        (0..=self.len() - span).step_by(stride).collect()
    }

    pub fn windows(&self, lookback: usize, horizon: usize, stride: usize) -> Windows<'_> {
        Windows {
            view: self,
            lookback,
            horizon,
            starts: self.window_starts(lookback, horizon, stride).into_iter(),
        }
    }

    /// Channel-major `C × len` block of rows `[from, from + len)`.
    pub fn slice_channels(&self, from: usize, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.channels * len);
        for c in 0..self.channels {
            out.extend((from..from + len).map(|r| self.value(r, c)));
        }
        out
    }

    /// `(B, C, L)` inputs and `(B, C, T)` targets for windows at `starts`.
    pub fn batch(&self, starts: &[usize], lookback: usize, horizon: usize) -> Result<(Tensor, Tensor)> {
        let c = self.channels;
        let mut xs = Vec::with_capacity(starts.len() * c * lookback);
        let mut ys = Vec::with_capacity(starts.len() * c * horizon);
        for &s in starts {
            if s + lookback + horizon > self.len() {
                return Err(Error::shape(format!(
                    "window at {s} overruns a view of {} rows",
                    self.len()
                )));
            }
            xs.extend(self.slice_channels(s, lookback));
            ys.extend(self.slice_channels(s + lookback, horizon));
        }
        let b = starts.len();
        Ok((
            Tensor::new(vec![b, c, lookback], xs)?,
            Tensor::new(vec![b, c, horizon], ys)?,
        ))
    }
}

/// One sample: `x` is `C × L`, `y` is `C × T`, both channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub struct Windows<'a> {
    view: &'a DatasetView,
    lookback: usize,
    horizon: usize,
    starts: std::vec::IntoIter<usize>,
}

impl Iterator for Windows<'_> {
    type Item = Window;

    fn next(&mut self) -> Option<Window> {
        let s = self.starts.next()?;
        Some(Window {
            start: s,
            x: self.view.slice_channels(s, self.lookback),
            y: self.view.slice_channels(s + self.lookback, self.horizon),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.starts.size_hint()
    }
}

impl ExactSizeIterator for Windows<'_> {}

/// Scaled train / validation / test views plus the scaler that produced them.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: DatasetView,
    pub val: DatasetView,
    pub test: DatasetView,
    pub scaler: Scaler,
    pub borders: [usize; 3],
}

/// Splits chronologically, fits the scaler on the train rows only and
/// prepends `lookback` rows of history to the validation and test views.
pub fn split(ds: &RawDataset, spec: SplitSpec, lookback: usize) -> Result<Splits> {
    let borders = spec.borders(ds.rows())?;
    if lookback == 0 || lookback > borders[0] {
        return Err(Error::config(format!(
            "lookback {lookback} does not fit a train split of {} rows",
            borders[0]
        )));
    }
    let c = ds.channels();
    let scaler = Scaler::fit(&ds.values, c, borders[0])?;
    let data = Arc::new(scaler.transform(&ds.values));
    Ok(Splits {
        train: DatasetView::new(data.clone(), c, 0, borders[0])?,
        val: DatasetView::new(data.clone(), c, borders[0] - lookback, borders[1])?,
        test: DatasetView::new(data, c, borders[1] - lookback, borders[2])?,
        scaler,
        borders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ett_borders() {
        assert_eq!(SplitSpec::EttHourly.borders(17420).unwrap(), [8640, 11520, 14400]);
        assert_eq!(SplitSpec::EttMinute.borders(69680).unwrap(), [34560, 46080, 57600]);
        assert!(matches!(SplitSpec::EttHourly.borders(14000), Err(Error::Config(_))));
    }

    #[test]
    fn ratio_borders() {
        assert_eq!(SplitSpec::ratio_default().borders(100).unwrap(), [70, 80, 100]);
    }

    #[test]
    fn timestamp_ordering() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert!(check_increasing(&s(&["2016-07-01 00:00:00", "2016-07-01 01:00:00"])).is_ok());
        assert!(check_increasing(&s(&["2", "10"])).is_ok());
        assert_eq!(check_increasing(&s(&["1", "3", "3"])).unwrap_err().0, 2);
        assert!(check_increasing(&s(&["2016-07-01 02:00:00", "2016-07-01 01:00:00"])).is_err());
    }
}
