mod common;

use std::io::Write;
use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use psloss::data::{load_csv, split, DatasetView, RawDataset, Scaler, SplitSpec};
use psloss::Error;
use rand::Rng;

fn write_csv(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

fn hourly(rows: usize, channels: usize, seed: u64) -> RawDataset {
    let start = chrono::NaiveDate::from_ymd_opt(2016, 7, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let stamps = (0..rows)
        .map(|i| {
            (start + chrono::Duration::hours(i as i64))
                .format("%Y-%m-%d %H:%M:%S")
                .to_string()
        })
        .collect();
    let names = (0..channels).map(|c| format!("ch{c}")).collect();
    let mut r = rng(seed);
    let values = (0..rows * channels).map(|_| r.gen_range(-5.0..5.0)).collect();
    RawDataset::new(stamps, names, values).unwrap()
}

fn view_of(values: Vec<f64>, channels: usize) -> DatasetView {
    let rows = values.len() / channels;
    DatasetView::new(Arc::new(values), channels, 0, rows).unwrap()
}

#[test]
fn loads_a_toy_csv() {
    let f = write_csv(
        "date,HUFL,OT\n2016-07-01 00:00:00,5.8,30.5\n2016-07-01 01:00:00,5.6,27.8\n2016-07-01 02:00:00,5.1,27.7\n",
    );
    let ds = load_csv(f.path()).unwrap();
    assert_eq!(ds.rows(), 3);
    assert_eq!(ds.channels(), 2);
    assert_eq!(ds.channel_names, vec!["HUFL", "OT"]);
    assert_eq!(ds.row(1), &[5.6, 27.8]);
}

#[test]
fn blank_cell_reports_its_coordinates() {
    let f = write_csv("date,a,b\n1,0.5,1.0\n2,,2.0\n");
    match load_csv(f.path()) {
        Err(Error::Ingest { message, .. }) => {
            assert!(message.contains("row 3") && message.contains("column 2"), "{message}");
        }
        other => panic!("expected an ingest error, got {other:?}"),
    }
}

#[test]
fn unordered_timestamps_are_rejected() {
    let f = write_csv("date,a\n2016-07-01 02:00:00,1\n2016-07-01 01:00:00,2\n");
    assert!(matches!(load_csv(f.path()), Err(Error::Ingest { .. })));
    let f = write_csv("date,a\n5,1\n5,2\n");
    assert!(matches!(load_csv(f.path()), Err(Error::Ingest { .. })));
}

#[test]
fn missing_file_is_an_ingest_error() {
    assert!(matches!(
        load_csv(std::path::Path::new("/nonexistent/ETTh1.csv")),
        Err(Error::Ingest { .. })
    ));
}

#[test]
fn ett_hourly_split_sizes() {
    let ds = hourly(17420, 7, 1);
    let s = split(&ds, SplitSpec::EttHourly, 96).unwrap();
    assert_eq!(s.borders, [8640, 11520, 14400]);
    assert_eq!(
        (
            s.train.lookback_positions(96),
            s.val.lookback_positions(96),
            s.test.lookback_positions(96)
        ),
        (8545, 2881, 2881)
    );
    assert_eq!(s.val.offset(), 8640 - 96);
    assert_eq!(s.test.offset(), 11520 - 96);
    // every test target has a full history
    let starts = s.test.window_starts(96, 96, 1);
    assert_eq!(starts.len(), 2880 - 96 + 1);
}

#[test]
fn ratio_split_boundaries() {
    let ds = hourly(100, 2, 2);
    let s = split(&ds, SplitSpec::ratio_default(), 10).unwrap();
    assert_eq!(s.borders, [70, 80, 100]);
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 20, 30));
    assert!(matches!(
        split(&ds, SplitSpec::ratio_default(), 71),
        Err(Error::Config(_))
    ));
    assert!(matches!(split(&ds, SplitSpec::EttHourly, 10), Err(Error::Config(_))));
}

#[test]
fn scaler_ignores_rows_after_train() {
    let ds = hourly(200, 3, 3);
    let base = split(&ds, SplitSpec::ratio_default(), 12).unwrap();
    let mut mutated = ds.clone();
    let c = ds.channels();
    for v in &mut mutated.values[base.borders[0] * c..] {
        *v = *v * 100.0 + 7.0;
    }
    let after = split(&mutated, SplitSpec::ratio_default(), 12).unwrap();
    assert_eq!(base.scaler, after.scaler);
}

#[test]
fn scaled_train_split_is_standardized() {
    let ds = hourly(300, 2, 4);
    let s = split(&ds, SplitSpec::ratio_default(), 12).unwrap();
    for c in 0..2 {
        let vals: Vec<f64> = (0..s.train.len()).map(|r| s.train.value(r, c)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn constant_channel_uses_std_floor() {
    let s = Scaler::fit(&[3.0, 1.0, 3.0, 2.0, 3.0, 3.0], 2, 3).unwrap();
    assert_eq!(s.std[0], 1e-8);
    assert_eq!(s.transform(&[3.0, 2.0])[0], 0.0);
}

#[test]
fn window_counts() {
    let v = view_of((0..10).map(f64::from).collect(), 1);
    assert_eq!(v.windows(4, 3, 1).count(), 4);
    assert_eq!(v.windows(7, 3, 1).count(), 1);
    assert_eq!(v.windows(8, 3, 1).count(), 0);
    assert_eq!(v.windows(2, 2, 3).count(), 3);
}

#[test]
fn windows_match_direct_slicing() {
    let mut r = rng(5);
    let (rows, c, l, t) = (40, 3, 7, 5);
    let raw: Vec<f64> = (0..rows * c).map(|_| r.gen_range(-1.0..1.0)).collect();
    let v = view_of(raw.clone(), c);
    for w in v.windows(l, t, 2) {
        for ch in 0..c {
            for i in 0..l {
                assert_eq!(w.x[ch * l + i], raw[(w.start + i) * c + ch]);
            }
            for i in 0..t {
                assert_eq!(w.y[ch * t + i], raw[(w.start + l + i) * c + ch]);
            }
        }
    }
    let starts = [0, 5, 28];
    let (x, y) = v.batch(&starts, l, t).unwrap();
    assert_eq!(x.shape(), &[3, c, l]);
    assert_eq!(y.shape(), &[3, c, t]);
    let all: Vec<_> = v.windows(l, t, 1).collect();
    for (b, &s) in starts.iter().enumerate() {
        assert_eq!(&x.values()[b * c * l..(b + 1) * c * l], all[s].x.as_slice());
        assert_eq!(&y.values()[b * c * t..(b + 1) * c * t], all[s].y.as_slice());
    }
    assert!(matches!(v.batch(&[29], l, t), Err(Error::Shape(_))));
}

proptest! {
    #[test]
    fn scaler_round_trip(values in prop::collection::vec(-1e3f64..1e3, 12..60)) {
        let rows = values.len() / 3;
        let values = &values[..rows * 3];
        let s = Scaler::fit(values, 3, rows).unwrap();
        let back = s.inverse_transform(&s.transform(values));
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn consecutive_windows_overlap(len in 8usize..60, l in 1usize..6, t in 1usize..6) {
        let v = view_of((0..len).map(|i| i as f64).collect(), 1);
        let ws: Vec<_> = v.windows(l, t, 1).collect();
        prop_assert_eq!(ws.len(), (len + 1).saturating_sub(l + t));
        for pair in ws.windows(2) {
            let a: Vec<f64> = pair[0].x.iter().chain(&pair[0].y).copied().collect();
            let b: Vec<f64> = pair[1].x.iter().chain(&pair[1].y).copied().collect();
            prop_assert_eq!(&a[1..], &b[..l + t - 1]);
        }
    }
}
