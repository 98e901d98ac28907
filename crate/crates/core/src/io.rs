//! Dataset CSV format: a header row of variable names, optional rows
//! tagged `#lower` / `#upper` carrying the detection limits, then one row
//! per observation with unobserved cells written as `NA`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{encode_censoring, CensorSide, CensoredDataset, CensoringBounds, OBSERVED};

/// Row-major serde representation for `ndarray::Array2<f64>`.
pub mod serde_array2 {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let repr = Repr {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        };
        repr.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let repr = Repr::deserialize(d)?;
        Array2::from_shape_vec((repr.rows, repr.cols), repr.data)
            .map_err(serde::de::Error::custom)
    }
}

pub const NA_TOKEN: &str = "NA";

fn parse_bound(tok: &str, col: usize) -> Result<f64> {
    match tok.trim() {
        "-inf" | "-Inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        "inf" | "Inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        t => t.parse::<f64>().map_err(|_| {
            Error::InvalidData(format!("unparseable bound '{t}' in column {col}"))
        }),
    }
}

/// A parsed dataset plus its column names.
#[derive(Debug)]
pub struct NamedDataset {
    pub dataset: CensoredDataset,
    pub names: Vec<String>,
}

/// Read a dataset from CSV. Bounds from `#lower`/`#upper` rows in the file
/// are used unless `override_bounds` supplies them; `na_side` resolves
/// `NA` cells per column.
pub fn read_dataset_csv<R: Read>(
    reader: R,
    override_bounds: Option<CensoringBounds>,
    na_side: &[Option<CensorSide>],
) -> Result<NamedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(None)
        .from_reader(reader);
    let names: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let p = names.len();
    if p == 0 {
        return Err(Error::InvalidData("empty header".into()));
    }
    let mut lower: Option<Vec<f64>> = None;
    let mut upper: Option<Vec<f64>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.is_empty() {
            continue;
        }
        let first = rec.get(0).unwrap_or("").trim();
        if first == "#lower" || first == "#upper" {
            if rec.len() != p + 1 {
                return Err(Error::InvalidData(format!(
                    "bounds row '{first}' has {} values, expected {p}",
                    rec.len() - 1
                )));
            }
            let vals: Result<Vec<f64>> = (1..=p).map(|j| parse_bound(&rec[j], j - 1)).collect();
            if first == "#lower" {
                lower = Some(vals?);
            } else {
                upper = Some(vals?);
            }
            continue;
        }
        if rec.len() != p {
            return Err(Error::InvalidData(format!(
                "data row {} has {} cells, expected {p}",
                rows.len() + 1,
                rec.len()
            )));
        }
        let mut row = Vec::with_capacity(p);
        for j in 0..p {
            let tok = rec[j].trim();
            if tok == NA_TOKEN {
                row.push(f64::NAN);
            } else {
                row.push(tok.parse::<f64>().map_err(|_| {
                    Error::InvalidData(format!(
                        "unparseable value '{tok}' at row {}, column {j}",
                        rows.len() + 1
                    ))
                })?);
            }
        }
        rows.push(row);
    }
    let bounds = match override_bounds {
        Some(b) => b,
        None => match (lower, upper) {
            (Some(l), Some(u)) => CensoringBounds::new(l, u)?,
            (Some(l), None) => CensoringBounds::new(l, vec![f64::INFINITY; p])?,
            (None, Some(u)) => CensoringBounds::new(vec![f64::NEG_INFINITY; p], u)?,
            (None, None) => CensoringBounds::unbounded(p),
        },
    };
    let n = rows.len();
    let mut raw = Array2::<f64>::zeros((n, p));
    for (i, row) in rows.iter().enumerate() {
        for j in 0..p {
            raw[[i, j]] = row[j];
        }
    }
    // an all-NA column can never be fit; report it by name up front
    for j in 0..p {
        if n > 0 && (0..n).all(|i| raw[[i, j]].is_nan()) {
            return Err(Error::ColumnFailure(
                j,
                format!("column '{}' contains only NA values", names[j]),
            ));
        }
    }
    let side: Vec<Option<CensorSide>> = if na_side.len() == p {
        na_side.to_vec()
    } else if na_side.is_empty() {
        // derive the side from which bound is finite, when unambiguous
        (0..p)
            .map(|j| {
                match (bounds.lower[j].is_finite(), bounds.upper[j].is_finite()) {
                    (true, false) => Some(CensorSide::Left),
                    (false, true) => Some(CensorSide::Right),
                    _ => None,
                }
            })
            .collect()
    } else {
        return Err(Error::DimensionMismatch(format!(
            "na_side has length {}, expected {p}",
            na_side.len()
        )));
    };
    let dataset = encode_censoring(raw.view(), &bounds, &side)?;
    Ok(NamedDataset { dataset, names })
}

pub fn read_dataset_file(
    path: &Path,
    override_bounds: Option<CensoringBounds>,
    na_side: &[Option<CensorSide>],
) -> Result<NamedDataset> {
    let f = std::fs::File::open(path)?;
    read_dataset_csv(f, override_bounds, na_side)
}

fn fmt_bound(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Write a dataset with its bounds rows; censored cells become `NA`.
pub fn write_dataset_csv<W: Write>(
    w: W,
    dataset: &CensoredDataset,
    names: &[String],
) -> Result<()> {
    let p = dataset.p();
    if names.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "{} names for {p} columns",
            names.len()
        )));
    }
    let mut wtr = csv::WriterBuilder::new().flexible(true).from_writer(w);
    wtr.write_record(names)?;
    let mut lrow = vec!["#lower".to_string()];
    lrow.extend(dataset.bounds().lower.iter().map(|&v| fmt_bound(v)));
    wtr.write_record(&lrow)?;
    let mut urow = vec!["#upper".to_string()];
    urow.extend(dataset.bounds().upper.iter().map(|&v| fmt_bound(v)));
    wtr.write_record(&urow)?;
    for i in 0..dataset.n() {
        let row: Vec<String> = (0..p)
            .map(|h| {
                if dataset.status(i, h) == OBSERVED {
                    format!("{}", dataset.value(i, h))
                } else {
                    NA_TOKEN.to_string()
                }
            })
            .collect();
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset_file(path: &Path, dataset: &CensoredDataset, names: &[String]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_dataset_csv(f, dataset, names)
}
