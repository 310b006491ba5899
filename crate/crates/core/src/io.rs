//! CSV ingest and output.
//!
//! Input files have a header row; missing cells are spelled `NA`. Every
//! column other than the response is a covariate, in file order.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{parse_source_spans, DataSet};
use crate::error::{MbiError, Result};
use crate::imputation::ImputedView;

pub const MISSING: &str = "NA";

/// Reads a data set. `sources` is a span string such as `"1-12,13-24"` over
/// the covariate columns; `None` means one source.
///
/// Row numbers in errors are 1-based data rows (the header is not counted).
pub fn read_csv<R: Read>(reader: R, response: &str, sources: Option<&str>) -> Result<DataSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let y_col = header
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| MbiError::Parse(format!("response column '{response}' not found in header")))?;
    let names: Vec<String> = header.iter().enumerate().filter(|&(c, _)| c != y_col).map(|(_, h)| h.clone()).collect();
    if names.is_empty() {
        return Err(MbiError::Parse("no covariate columns".into()));
    }
    let p = names.len();
    let mut cells = Vec::new();
    let mut observed = Vec::new();
    let mut y = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != header.len() {
            return Err(MbiError::Parse(format!(
                "row {row}: {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        for (c, field) in record.iter().enumerate() {
            let value = if field == MISSING {
                None
            } else {
                Some(field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    MbiError::Parse(format!("row {row}, column '{}': cannot parse '{field}'", header[c]))
                })?)
            };
            if c == y_col {
                match value {
                    Some(v) => y.push(v),
                    None => {
                        return Err(MbiError::Parse(format!("row {row}: response '{response}' is missing")));
                    }
                }
            } else {
                cells.push(value.unwrap_or(f64::NAN));
                observed.push(value.is_some());
            }
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(MbiError::Parse("no data rows".into()));
    }
    let spans = match sources {
        Some(text) => parse_source_spans(text, p)?,
        None => vec![0..p],
    };
    let values = DMatrix::from_row_slice(n, p, &cells);
    let mask = DMatrix::from_row_slice(n, p, &observed);
    DataSet::new(values, mask, DVector::from_vec(y), spans)?.with_names(names)
}

pub fn read_csv_path(path: &Path, response: &str, sources: Option<&str>) -> Result<DataSet> {
    let file = std::fs::File::open(path).map_err(|e| MbiError::Io(format!("{}: {e}", path.display())))?;
    read_csv(std::io::BufReader::new(file), response, sources)
}

/// One row of a coefficient table.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub name: String,
    pub coefficient: f64,
    pub selected: bool,
}

/// Writes `name,coefficient,selected` with 17 significant digits, so values
/// read back are bit-identical.
pub fn write_coefficients<W: Write>(rows: &[CoefficientRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "coefficient", "selected"])?;
    for r in rows {
        w.write_record([r.name.clone(), format!("{:.16e}", r.coefficient), r.selected.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coefficients<R: Read>(reader: R) -> Result<Vec<CoefficientRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |c: usize| record.get(c).ok_or_else(|| MbiError::Parse(format!("row {}: too few fields", i + 1)));
        rows.push(CoefficientRow {
            name: field(0)?.to_string(),
            coefficient: field(1)?
                .parse()
                .map_err(|_| MbiError::Parse(format!("row {}: bad coefficient", i + 1)))?,
            selected: field(2)?
                .parse()
                .map_err(|_| MbiError::Parse(format!("row {}: bad selected flag", i + 1)))?,
        });
    }
    Ok(rows)
}

/// Writes an imputed view with a leading 1-based `row` column.
pub fn write_view<W: Write>(view: &ImputedView, names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (a, &row) in view.rows.iter().enumerate() {
        let mut rec = vec![(row + 1).to_string()];
        rec.extend(view.values.row(a).iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a square matrix without a header.
pub fn write_matrix<W: Write>(m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "y,a,b,c\n1.5,1,2,NA\n-2,0.5,NA,NA\n3,2,1,4\n";

    #[test]
    fn reads_na_cells_and_names() {
        let d = read_csv(TINY.as_bytes(), "y", Some("1,2,3")).unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.names(), ["a", "b", "c"]);
        assert!(!d.is_observed(0, 2));
        assert!(!d.is_observed(1, 1));
        assert_eq!(d.value(2, 2), 4.0);
        assert_eq!(d.response()[1], -2.0);
    }

    #[test]
    fn lowercase_na_is_a_parse_error() {
        let err = read_csv("y,a\n1,na\n".as_bytes(), "y", None).unwrap_err();
        assert!(matches!(err, MbiError::Parse(ref m) if m.contains("row 1")), "{err}");
    }

    #[test]
    fn missing_response_names_the_row() {
        let err = read_csv("y,a\n1,2\nNA,3\n".as_bytes(), "y", None).unwrap_err();
        assert!(matches!(err, MbiError::Parse(ref m) if m.contains("row 2")), "{err}");
    }

    #[test]
    fn partial_source_is_a_block_violation() {
        let err = read_csv("y,a,b\n1,2,NA\n".as_bytes(), "y", None).unwrap_err();
        assert!(matches!(err, MbiError::NonBlockRow { row: 0, .. }), "{err}");
    }

    #[test]
    fn coefficients_round_trip_exactly() {
        let rows: Vec<CoefficientRow> = [0.1, -1.0 / 3.0, 1e-300, 6.02e23, 0.0]
            .iter()
            .enumerate()
            .map(|(j, &c)| CoefficientRow {
                name: format!("x{j}"),
                coefficient: c,
                selected: c != 0.0,
            })
            .collect();
        let mut buf = Vec::new();
        write_coefficients(&rows, &mut buf).unwrap();
        let back = read_coefficients(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(a.coefficient.to_bits(), b.coefficient.to_bits());
        }
    }
}
