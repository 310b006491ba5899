//! Multi-source design matrices with block-wise missingness.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{MbiError, Result};

/// A design matrix whose columns are partitioned into sources, together with
/// the observation mask and a fully observed response.
///
/// Missing cells hold `NaN` in `values`; `mask` is the source of truth.
#[derive(Debug, Clone)]
pub struct DataSet {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    response: DVector<f64>,
    source_spans: Vec<Range<usize>>,
    names: Vec<String>,
}

impl DataSet {
    /// Builds a data set and checks the block structure. Spans are 0-based
    /// half-open column ranges.
    pub fn new(
        values: DMatrix<f64>,
        mask: DMatrix<bool>,
        response: DVector<f64>,
        source_spans: Vec<Range<usize>>,
    ) -> Result<Self> {
        let (n, p) = values.shape();
        if mask.shape() != (n, p) {
            return Err(MbiError::DimensionMismatch(format!(
                "mask is {:?}, values are {:?}",
                mask.shape(),
                (n, p)
            )));
        }
        if response.len() != n {
            return Err(MbiError::DimensionMismatch(format!(
                "response has {} entries for {} rows",
                response.len(),
                n
            )));
        }
        validate_spans(&source_spans, p)?;
        for (i, y) in response.iter().enumerate() {
            if !y.is_finite() {
                return Err(MbiError::MissingResponse { row: i });
            }
        }
        for i in 0..n {
            for (s, span) in source_spans.iter().enumerate() {
                let first = mask[(i, span.start)];
                if span.clone().any(|j| mask[(i, j)] != first) {
                    return Err(MbiError::NonBlockRow {
                        row: i,
                        source_index: s,
                    });
                }
            }
            for j in 0..p {
                if mask[(i, j)] && !values[(i, j)].is_finite() {
                    return Err(MbiError::Parse(format!(
                        "row {i}, column {j}: observed value is not finite"
                    )));
                }
            }
        }
        let mut values = values;
        for j in 0..p {
            for i in 0..n {
                if !mask[(i, j)] {
                    values[(i, j)] = f64::NAN;
                }
            }
        }
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Ok(Self {
            values,
            mask,
            response,
            source_spans,
            names,
        })
    }

    /// A fully observed data set with a single source.
    pub fn complete(values: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        let (n, p) = values.shape();
        Self::new(values, DMatrix::from_element(n, p, true), response, vec![0..p])
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_cols() {
            return Err(MbiError::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                self.n_cols()
            )));
        }
        self.names = names;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_sources(&self) -> usize {
        self.source_spans.len()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn source_spans(&self) -> &[Range<usize>] {
        &self.source_spans
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.mask[(row, col)]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }

    /// Which sources are observed in `row`.
    pub fn source_signature(&self, row: usize) -> Vec<bool> {
        self.source_spans
            .iter()
            .map(|span| self.mask[(row, span.start)])
            .collect()
    }

    /// Keeps only the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let values = self.values.select_rows(rows);
        let mask = self.mask.select_rows(rows);
        let response = self.response.select_rows(rows);
        let mut out = Self::new(values, mask, response, self.source_spans.clone())?;
        out.names = self.names.clone();
        Ok(out)
    }

    /// Replaces the response vector (same length).
    pub fn with_response(&self, response: DVector<f64>) -> Result<Self> {
        let mut out = Self::new(
            self.values.clone(),
            self.mask.clone(),
            response,
            self.source_spans.clone(),
        )?;
        out.names = self.names.clone();
        Ok(out)
    }

    /// Replaces the observation mask (same shape, same spans).
    pub fn with_mask(&self, mask: DMatrix<bool>) -> Result<Self> {
        let mut values = self.values.clone();
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if mask[(i, j)] && !values[(i, j)].is_finite() {
                    return Err(MbiError::InvalidArgument(format!(
                        "cell ({i}, {j}) marked observed but has no value"
                    )));
                }
                if !mask[(i, j)] {
                    values[(i, j)] = f64::NAN;
                }
            }
        }
        let mut out = Self::new(values, mask, self.response.clone(), self.source_spans.clone())?;
        out.names = self.names.clone();
        Ok(out)
    }
}

fn validate_spans(spans: &[Range<usize>], p: usize) -> Result<()> {
    if spans.is_empty() {
        return Err(MbiError::InvalidSpans("no sources given".into()));
    }
    let mut next = 0;
    for span in spans {
        if span.start != next {
            return Err(MbiError::InvalidSpans(format!(
                "expected a source starting at column {}, found {}",
                next + 1,
                span.start + 1
            )));
        }
        if span.end <= span.start {
            return Err(MbiError::InvalidSpans(format!(
                "empty source starting at column {}",
                span.start + 1
            )));
        }
        next = span.end;
    }
    if next != p {
        return Err(MbiError::InvalidSpans(format!(
            "sources cover {next} columns, data have {p}"
        )));
    }
    Ok(())
}

/// Parses a span string such as `"1-12,13-24,25-40"` (1-based, inclusive)
/// into 0-based half-open ranges. A single number denotes a one-column source.
pub fn parse_source_spans(text: &str, p: usize) -> Result<Vec<Range<usize>>> {
    let mut spans = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (part, part),
        };
        let lo: usize = lo
            .parse()
            .map_err(|_| MbiError::InvalidSpans(format!("cannot parse '{part}'")))?;
        let hi: usize = hi
            .parse()
            .map_err(|_| MbiError::InvalidSpans(format!("cannot parse '{part}'")))?;
        if lo == 0 || hi < lo {
            return Err(MbiError::InvalidSpans(format!("bad range '{part}'")));
        }
        spans.push(lo - 1..hi);
    }
    validate_spans(&spans, p)?;
    Ok(spans)
}

/// Contiguous spans from a list of source sizes.
pub fn spans_from_sizes(sizes: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let span = start..start + s;
            start += s;
            span
        })
        .collect()
}

/// Column scaling computed from observed cells, optionally with column and
/// response centering. Fits run on the standardized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub col_mean: Vec<f64>,
    pub col_scale: Vec<f64>,
    pub y_mean: f64,
}

impl Standardization {
    /// Centers and scales every column and centers the response.
    pub fn fit(data: &DataSet) -> Self {
        Self::fit_with(data, true)
    }

    /// Scales columns by their observed standard deviation; centering is
    /// applied only when `center` is set. The model has no intercept, and
    /// column means taken over different observed subsets bias the moments
    /// when missingness depends on the data.
    pub fn fit_with(data: &DataSet, center: bool) -> Self {
        let (n, p) = (data.n_rows(), data.n_cols());
        let mut col_mean = vec![0.0; p];
        let mut col_scale = vec![1.0; p];
        for j in 0..p {
            let obs: Vec<f64> = (0..n)
                .filter(|&i| data.is_observed(i, j))
                .map(|i| data.value(i, j))
                .collect();
            if obs.is_empty() {
                continue;
            }
            let m = obs.iter().sum::<f64>() / obs.len() as f64;
            let v = obs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / obs.len() as f64;
            if center {
                col_mean[j] = m;
            }
            col_scale[j] = if v > 1e-24 { v.sqrt() } else { 1.0 };
        }
        let y_mean = if center { data.response().mean() } else { 0.0 };
        Self {
            col_mean,
            col_scale,
            y_mean,
        }
    }

    /// The identity transformation.
    pub fn identity(p: usize) -> Self {
        Self {
            col_mean: vec![0.0; p],
            col_scale: vec![1.0; p],
            y_mean: 0.0,
        }
    }

    pub fn apply(&self, data: &DataSet) -> Result<DataSet> {
        let mut values = data.values().clone();
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if data.is_observed(i, j) {
                    values[(i, j)] = (values[(i, j)] - self.col_mean[j]) / self.col_scale[j];
                }
            }
        }
        let y = data.response().map(|v| v - self.y_mean);
        let out = DataSet::new(values, data.mask().clone(), y, data.source_spans().to_vec())?;
        out.with_names(data.names().to_vec())
    }

    /// Maps standardized coefficients back to the original scale, returning
    /// `(intercept, coefficients)`.
    pub fn to_original(&self, beta_std: &DVector<f64>) -> (f64, DVector<f64>) {
        let beta = DVector::from_iterator(
            beta_std.len(),
            beta_std
                .iter()
                .zip(&self.col_scale)
                .map(|(b, s)| b / s),
        );
        let intercept = self.y_mean
            - beta
                .iter()
                .zip(&self.col_mean)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        (intercept, beta)
    }
}
