//! File formats: model JSON, trajectory and measurement CSV, filter matrix
//! CSV and estimate reports.
//!
//! Floating point values in CSV output carry 17 significant digits so that
//! they parse back to the identical `f64`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::batch::EstimateReport;
use crate::error::{Error, Result};
use crate::model::{LinearModel, MeasurementSeries, Trajectory};

/// Format with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// `{"A": [[…], …], "C": […], "n": n}` with `A` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    pub n: usize,
}

impl From<&LinearModel> for ModelDocument {
    fn from(model: &LinearModel) -> Self {
        Self {
            a: model
                .a()
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            c: model.c().iter().copied().collect(),
            n: model.n(),
        }
    }
}

impl TryFrom<ModelDocument> for LinearModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        if doc.a.len() != doc.n {
            return Err(Error::DimensionMismatch {
                context: "model JSON rows of A",
                expected: doc.n,
                found: doc.a.len(),
            });
        }
        if let Some(row) = doc.a.iter().find(|r| r.len() != doc.n) {
            return Err(Error::DimensionMismatch {
                context: "model JSON columns of A",
                expected: doc.n,
                found: row.len(),
            });
        }
        if doc.c.len() != doc.n {
            return Err(Error::DimensionMismatch {
                context: "model JSON length of C",
                expected: doc.n,
                found: doc.c.len(),
            });
        }
        let a = DMatrix::from_fn(doc.n, doc.n, |i, j| doc.a[i][j]);
        LinearModel::new(a, RowDVector::from_row_slice(&doc.c))
    }
}

pub fn read_model_json(reader: impl Read) -> Result<LinearModel> {
    let doc: ModelDocument = serde_json::from_reader(reader)?;
    doc.try_into()
}

pub fn write_model_json(model: &LinearModel, writer: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(writer, &ModelDocument::from(model))?;
    Ok(())
}

/// Header `t,x_1,…,x_n`, one row per time step, `t` starting at 1.
pub fn write_trajectory_csv(traj: &Trajectory, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=traj.n()).map(|i| format!("x_{i}")))
        .collect();
    w.write_record(&header)?;
    for (t, x) in traj.states().enumerate() {
        let row: Vec<String> = std::iter::once((t + 1).to_string())
            .chain(x.iter().map(|v| fmt_f64(*v)))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(reader: impl Read) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let n = headers.len().saturating_sub(1);
    if n == 0 || &headers[0] != "t" {
        return Err(Error::Parse(
            "trajectory CSV header must be t,x_1,…,x_n".into(),
        ));
    }
    let mut values = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        check_time_column(&record, row)?;
        for field in record.iter().skip(1) {
            values.push(parse_field(field, row)?);
        }
    }
    if values.is_empty() {
        return Err(Error::Parse("trajectory CSV has no rows".into()));
    }
    Trajectory::from_stacked(n, DVector::from_vec(values))
}

/// Header `t,y`.
pub fn write_measurements_csv(y: &MeasurementSeries, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "y"])?;
    for (t, v) in y.values().iter().enumerate() {
        w.write_record([(t + 1).to_string(), fmt_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_measurements_csv(reader: impl Read) -> Result<MeasurementSeries> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "t" {
        return Err(Error::Parse("measurement CSV header must be t,y".into()));
    }
    let mut values = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        check_time_column(&record, row)?;
        values.push(parse_field(&record[1], row)?);
    }
    if values.is_empty() {
        return Err(Error::Parse("measurement CSV has no rows".into()));
    }
    MeasurementSeries::from_slice(&values)
}

fn check_time_column(record: &csv::StringRecord, row: usize) -> Result<()> {
    let t: usize = record[0]
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {}: bad time index {:?}", row + 1, &record[0])))?;
    if t != row + 1 {
        return Err(Error::Parse(format!(
            "row {}: expected time index {}, found {t}",
            row + 1,
            row + 1
        )));
    }
    Ok(())
}

fn parse_field(field: &str, row: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {}: bad number {field:?}", row + 1)))
}

/// One row per stacked state index (`t`, component `i`), one column per
/// measurement `y_1 … y_N`.
pub fn write_filter_matrix_csv(h: &DMatrix<f64>, n: usize, writer: impl Write) -> Result<()> {
    if n == 0 || h.nrows() != n * h.ncols() {
        return Err(Error::DimensionMismatch {
            context: "filter matrix rows",
            expected: n * h.ncols(),
            found: h.nrows(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = ["t".to_string(), "i".to_string()]
        .into_iter()
        .chain((1..=h.ncols()).map(|j| format!("y_{j}")))
        .collect();
    w.write_record(&header)?;
    for r in 0..h.nrows() {
        let row: Vec<String> = [(r / n + 1).to_string(), (r % n + 1).to_string()]
            .into_iter()
            .chain(h.row(r).iter().map(|v| fmt_f64(*v)))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub model: f64,
    pub output: f64,
}

/// JSON form of an [`EstimateReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDocument {
    pub xhat: Vec<Vec<f64>>,
    pub loss: f64,
    pub rho: f64,
    pub residual_norms: ResidualNorms,
}

impl From<&EstimateReport> for EstimateDocument {
    fn from(r: &EstimateReport) -> Self {
        Self {
            xhat: r
                .xhat
                .states()
                .map(|x| x.iter().copied().collect())
                .collect(),
            loss: r.loss,
            rho: r.rho,
            residual_norms: ResidualNorms {
                model: r.model_residual_norm(),
                output: r.output_residual_norm(),
            },
        }
    }
}
