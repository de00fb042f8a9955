//! Price ingestion, log returns, date alignment and chronological splits.

use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default scale applied to raw log returns (percent returns).
pub const DEFAULT_SCALE: f64 = 100.0;

/// Which CSV columns hold the date and the price, and how dates are written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSpec {
    pub date_column: String,
    pub price_column: String,
    /// `chrono` format string.
    pub date_format: String,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            date_column: "date".into(),
            price_column: "price".into(),
            date_format: "%Y-%m-%d".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub name: String,
    pub dates: Vec<NaiveDate>,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(name: impl Into<String>, dates: Vec<NaiveDate>, prices: Vec<f64>) -> Result<Self> {
        if dates.len() != prices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} dates for {} prices",
                dates.len(),
                prices.len()
            )));
        }
        if dates.len() < 2 {
            return Err(Error::SeriesTooShort {
                needed: 2,
                got: dates.len(),
            });
        }
        for (d, p) in dates.iter().zip(&prices) {
            if !(*p > 0.0) || !p.is_finite() {
                return Err(Error::NonPositivePrice(d.to_string()));
            }
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams(format!("dates not strictly increasing at {}", w[1])));
        }
        Ok(Self {
            name: name.into(),
            dates,
            prices,
        })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Reads one asset's prices from a headed CSV file. Line numbers in errors
/// count the header as line 1.
pub fn load_prices(path: &Path, spec: &ColumnSpec) -> Result<PriceSeries> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing column '{name}'"),
        })
    };
    let (di, pi) = (col(&spec.date_column)?, col(&spec.price_column)?);

    let mut dates = Vec::new();
    let mut prices = Vec::new();
    let mut last: Option<NaiveDate> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::Parse { line, msg };
        let raw_date = rec.get(di).ok_or_else(|| bad("missing date field".into()))?;
        let date = NaiveDate::parse_from_str(raw_date, &spec.date_format)
            .map_err(|e| bad(format!("date '{raw_date}': {e}")))?;
        let raw_price = rec.get(pi).ok_or_else(|| bad("missing price field".into()))?;
        let price: f64 = raw_price
            .parse()
            .map_err(|_| bad(format!("price '{raw_price}' is not a number")))?;
        if !price.is_finite() {
            return Err(bad(format!("price '{raw_price}' is not finite")));
        }
        if price <= 0.0 {
            return Err(Error::NonPositivePrice(date.to_string()));
        }
        if let Some(prev) = last {
            if date <= prev {
                return Err(bad(format!("date {date} does not follow {prev}")));
            }
        }
        last = Some(date);
        dates.push(date);
        prices.push(price);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PriceSeries::new(name, dates, prices)
}

/// Aligned, scaled log returns: `returns[t][i] = scale · ln(p_t / p_{t−1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub names: Vec<String>,
    /// Date of the closing price that ends each return interval.
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<Vec<f64>>,
    pub scale: f64,
}

impl ReturnSeries {
    /// Builds a series directly from a return matrix (rows are time steps).
    pub fn from_rows(names: Vec<String>, dates: Vec<NaiveDate>, returns: Vec<Vec<f64>>, scale: f64) -> Result<Self> {
        let n = names.len();
        if dates.len() != returns.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} dates for {} rows",
                dates.len(),
                returns.len()
            )));
        }
        if let Some((t, _)) = returns.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::DimensionMismatch(format!("row {t} does not have {n} columns")));
        }
        if returns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite return".into()));
        }
        Ok(Self {
            names,
            dates,
            returns,
            scale,
        })
    }

    /// Univariate series with synthetic consecutive dates, starting 2000-01-03.
    pub fn univariate(name: &str, returns: &[f64]) -> Self {
        let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
        Self {
            names: vec![name.to_string()],
            dates: (0..returns.len()).map(|i| start + chrono::Days::new(i as u64)).collect(),
            returns: returns.iter().map(|r| vec![*r]).collect(),
            scale: DEFAULT_SCALE,
        }
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.names.len()
    }

    /// Column `i` as a vector.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.returns.iter().map(|r| r[i]).collect()
    }

    pub fn slice(&self, range: Range<usize>) -> Self {
        Self {
            names: self.names.clone(),
            dates: self.dates[range.clone()].to_vec(),
            returns: self.returns[range].to_vec(),
            scale: self.scale,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let t = self.len().max(1) as f64;
        let mut m = vec![0.0; self.n_assets()];
        for r in &self.returns {
            for (mi, x) in m.iter_mut().zip(r) {
                *mi += x / t;
            }
        }
        m
    }

    /// Subtracts a fixed per-asset mean (typically the training mean).
    pub fn demeaned(&self, mean: &[f64]) -> Self {
        let mut out = self.clone();
        for r in &mut out.returns {
            for (x, m) in r.iter_mut().zip(mean) {
                *x -= m;
            }
        }
        out
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.dates.extend_from_slice(&other.dates);
        out.returns.extend_from_slice(&other.returns);
        out
    }
}

/// Inner-joins the series on date and computes scaled log returns on the
/// common grid.
pub fn to_returns(series: &[PriceSeries], scale: f64) -> Result<ReturnSeries> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParams(format!("scale must be positive, got {scale}")));
    }
    let first = series.first().ok_or(Error::NoOverlap)?;
    let mut common: Vec<NaiveDate> = first.dates.clone();
    for s in &series[1..] {
        let mut j = 0;
        common.retain(|d| {
            while j < s.dates.len() && s.dates[j] < *d {
                j += 1;
            }
            j < s.dates.len() && s.dates[j] == *d
        });
    }
    if common.len() < 2 {
        return Err(Error::NoOverlap);
    }
    // prices on the common grid, per asset
    let aligned: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            let mut j = 0;
            common
                .iter()
                .map(|d| {
                    while s.dates[j] < *d {
                        j += 1;
                    }
                    s.prices[j]
                })
                .collect()
        })
        .collect();
    let returns = (1..common.len())
        .map(|t| aligned.iter().map(|p| scale * (p[t] / p[t - 1]).ln()).collect())
        .collect();
    Ok(ReturnSeries {
        names: series.iter().map(|s| s.name.clone()).collect(),
        dates: common[1..].to_vec(),
        returns,
        scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64) -> Result<Self> {
        let s = Self {
            train_frac,
            val_frac,
            test_frac,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::InvalidParams("split fractions must lie in (0, 1)".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams("split fractions must sum to 1".into()));
        }
        Ok(())
    }

    /// Index ranges for a series of length `t`: `floor(train·T)`,
    /// `floor(val·T)`, remainder.
    pub fn ranges(&self, t: usize) -> Result<SplitRanges> {
        self.validate()?;
        if t < MIN_SPLIT_LEN {
            return Err(Error::SeriesTooShort {
                needed: MIN_SPLIT_LEN,
                got: t,
            });
        }
        let floor = |f: f64| (f * t as f64 + 1e-9).floor() as usize;
        let n_train = floor(self.train_frac);
        let n_val = floor(self.val_frac);
        Ok(SplitRanges {
            train: 0..n_train,
            val: n_train..n_train + n_val,
            test: n_train + n_val..t,
        })
    }
}

pub const MIN_SPLIT_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn lengths(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub ranges: SplitRanges,
    pub train: ReturnSeries,
    pub val: ReturnSeries,
    pub test: ReturnSeries,
}

/// Contiguous chronological split.
pub fn split(rs: &ReturnSeries, spec: &SplitSpec) -> Result<Splits> {
    let ranges = spec.ranges(rs.len())?;
    Ok(Splits {
        train: rs.slice(ranges.train.clone()),
        val: rs.slice(ranges.val.clone()),
        test: rs.slice(ranges.test.clone()),
        ranges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn day(i: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(i)
    }

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_minimal_file() {
        let f = write_csv("date,price\n2020-01-01,100.0\n2020-01-02,101.0\n");
        let s = load_prices(f.path(), &ColumnSpec::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.prices, vec![100.0, 101.0]);
    }

    #[test]
    fn rejects_negative_price() {
        let f = write_csv("date,price\n2020-01-01,100.0\n2020-01-02,-1.0\n");
        assert_eq!(
            load_prices(f.path(), &ColumnSpec::default()),
            Err(Error::NonPositivePrice("2020-01-02".into()))
        );
    }

    #[test]
    fn reports_line_of_bad_price() {
        let f = write_csv("date,price\n2020-01-01,100.0\n2020-01-02,abc\n2020-01-03,1\n");
        match load_prices(f.path(), &ColumnSpec::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_prices(Path::new("/nonexistent/x.csv"), &ColumnSpec::default()),
            Err(Error::FileNotFound(_))
        ));
    }

    #[test]
    fn custom_columns_and_format() {
        let f = write_csv("Day,Close,Volume\n01/02/2020,5,1\n02/02/2020,6,1\n03/02/2020,7,1\n");
        let spec = ColumnSpec {
            date_column: "Day".into(),
            price_column: "Close".into(),
            date_format: "%d/%m/%Y".into(),
        };
        let s = load_prices(f.path(), &spec).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.dates[1], NaiveDate::from_ymd_opt(2020, 2, 2).unwrap());
    }

    #[test]
    fn flat_and_exponential_prices() {
        let flat = PriceSeries::new("a", vec![day(0), day(1)], vec![100.0, 100.0]).unwrap();
        assert_eq!(to_returns(&[flat], 100.0).unwrap().returns, vec![vec![0.0]]);
        let up = PriceSeries::new("a", vec![day(0), day(1)], vec![100.0, 100.0 * 0.01f64.exp()]).unwrap();
        let r = to_returns(&[up], 100.0).unwrap();
        assert!((r.returns[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_dates_do_not_overlap() {
        let a = PriceSeries::new("a", vec![day(0), day(1)], vec![1.0, 2.0]).unwrap();
        let b = PriceSeries::new("b", vec![day(5), day(6)], vec![1.0, 2.0]).unwrap();
        assert_eq!(to_returns(&[a, b], 1.0), Err(Error::NoOverlap));
    }

    #[test]
    fn inner_join_on_dates() {
        let a = PriceSeries::new("a", vec![day(0), day(1), day(2), day(3)], vec![1.0, 2.0, 4.0, 8.0]).unwrap();
        let b = PriceSeries::new("b", vec![day(0), day(2), day(3)], vec![1.0, 3.0, 9.0]).unwrap();
        let r = to_returns(&[a, b], 1.0).unwrap();
        assert_eq!(r.dates, vec![day(2), day(3)]);
        assert!((r.returns[0][0] - 4f64.ln()).abs() < 1e-15);
        assert!((r.returns[0][1] - 3f64.ln()).abs() < 1e-15);
        assert!((r.returns[1][1] - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn split_lengths() {
        let spec = SplitSpec::default();
        assert_eq!(spec.ranges(100).unwrap().lengths(), (80, 10, 10));
        assert_eq!(spec.ranges(103).unwrap().lengths(), (82, 10, 11));
        assert!(matches!(spec.ranges(5), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn split_spec_validation() {
        assert!(SplitSpec::new(0.5, 0.5, 0.0).is_err());
        assert!(SplitSpec::new(0.7, 0.2, 0.2).is_err());
        assert!(SplitSpec::new(0.6, 0.2, 0.2).is_ok());
    }

    proptest! {
        #[test]
        fn prices_round_trip(steps in prop::collection::vec(-0.05f64..0.05, 2..200), p0 in 1.0f64..1000.0) {
            let mut prices = vec![p0];
            for s in &steps {
                prices.push(prices.last().unwrap() * s.exp());
            }
            let dates = (0..prices.len() as u64).map(day).collect();
            let series = PriceSeries::new("x", dates, prices.clone()).unwrap();
            let rs = to_returns(&[series], 100.0).unwrap();
            let mut cum = 0.0;
            for (t, r) in rs.returns.iter().enumerate() {
                cum += r[0] / 100.0;
                let back = p0 * cum.exp();
                prop_assert!(((back - prices[t + 1]) / prices[t + 1]).abs() < 1e-12);
            }
        }

        #[test]
        fn splits_partition(t in 10usize..2000, train in 0.5f64..0.9) {
            let rest = 1.0 - train;
            let spec = SplitSpec::new(train, rest / 2.0, rest / 2.0).unwrap();
            let rs = ReturnSeries::univariate("x", &(0..t).map(|i| i as f64).collect::<Vec<_>>());
            let s = split(&rs, &spec).unwrap();
            prop_assert_eq!(s.ranges.train.start, 0);
            prop_assert_eq!(s.ranges.train.end, s.ranges.val.start);
            prop_assert_eq!(s.ranges.val.end, s.ranges.test.start);
            prop_assert_eq!(s.ranges.test.end, t);
            let joined = s.train.concat(&s.val).concat(&s.test);
            prop_assert_eq!(joined, rs);
        }
    }
}
