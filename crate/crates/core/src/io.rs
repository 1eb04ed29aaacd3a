//! File formats: headerless CSV matrices and fields, space configs, and JSON
//! with sorted keys and fixed float formatting.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::error::{arg, Error, Result};
use crate::field::{Density, ScalarField, VectorField};
use crate::space::{build_grid_capped, MetricMeasureSpace, DEFAULT_POINT_CAP};

/// Significant digits of every float written by this module.
pub const SIG_DIGITS: usize = 12;

/// Scientific notation with [`SIG_DIGITS`] significant digits and a signed
/// two-digit exponent, e.g. `-1.25000000000e-03`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
}

/// Reads a headerless numeric CSV. All rows must have the same length.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut data = Vec::new();
    let mut ncols = None;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if ncols.is_some_and(|c| c != rec.len()) {
            return Err(Error::Data(format!("{}: row {} has {} columns, expected {}", path.display(), r + 1, rec.len(), ncols.unwrap())));
        }
        ncols = Some(rec.len());
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Data(format!("{}: row {}, column {}: '{field}' is not a number", path.display(), r + 1, c + 1)))?;
            data.push(v);
        }
    }
    let ncols = ncols.unwrap_or(0);
    let nrows = data.len().checked_div(ncols).unwrap_or(0);
    Ok(Array2::from_shape_vec((nrows, ncols), data).expect("rectangular by construction"))
}

/// Reads a single column or a single row as a vector.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() == 1 || m.nrows() == 1 {
        Ok(m.iter().copied().collect())
    } else {
        Err(Error::Data(format!("{}: expected one row or one column, found {}x{}", path.display(), m.nrows(), m.ncols())))
    }
}

/// Writes CSV rows with fixed float formatting.
pub fn write_rows<'a>(path: &Path, header: Option<&[&str]>, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for row in rows {
        w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
    write_rows(path, None, rows.iter().map(|r| r.as_slice()))
}

pub fn write_scalar_field(path: &Path, f: &ScalarField) -> Result<()> {
    write_rows(path, None, f.values().chunks(1))
}

/// Grid fields: one row per point, one column per component. Graph fields:
/// one row per edge, `i, j, b(i → j)`.
pub fn write_vector_field(path: &Path, space: &MetricMeasureSpace, b: &VectorField) -> Result<()> {
    b.check(space)?;
    match b {
        VectorField::Grid(a) => write_matrix(path, a),
        VectorField::Graph(v) => {
            let edges = space.graph().expect("checked against the space").edges();
            let rows: Vec<[f64; 3]> = edges.iter().zip(v).map(|(e, &x)| [e.i as f64, e.j as f64, x]).collect();
            write_rows(path, None, rows.iter().map(|r| r.as_slice()))
        }
    }
}

pub fn write_density(path: &Path, mu: &Density) -> Result<()> {
    write_rows(path, None, mu.rho().chunks(1))
}

/// Reads density values and normalizes them to unit mass.
pub fn read_density(space: &MetricMeasureSpace, path: &Path) -> Result<Density> {
    Density::normalized(space, read_vector(path)?)
}

pub fn read_scalar_field(space: &MetricMeasureSpace, path: &Path) -> Result<ScalarField> {
    let v = read_vector(path)?;
    if v.len() != space.len() {
        return Err(Error::Data(format!("{}: {} values for a space of {} points", path.display(), v.len(), space.len())));
    }
    Ok(ScalarField::new(v))
}

/// Pretty JSON formatter that prints floats via [`fmt_f64`].
struct FixedFloat<'a>(PrettyFormatter<'a>);

impl Formatter for FixedFloat<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Deterministic JSON text: keys sorted, floats at [`SIG_DIGITS`] digits,
/// non-finite floats as `null`, trailing newline.
pub fn to_json(value: &impl Serialize) -> Result<String> {
    let tree: Value = serde_json::to_value(value).map_err(|e| Error::Data(e.to_string()))?;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloat(PrettyFormatter::with_indent(b"  ")));
    tree.serialize(&mut ser).map_err(|e| Error::Data(e.to_string()))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Grid,
    Graph,
}

/// Space description as stored in config files. Relative paths resolve
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub backend: BackendKind,
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub spacing: Option<f64>,
    #[serde(default)]
    pub dist_matrix_path: Option<PathBuf>,
    /// Graph backend only; unit weights when absent.
    #[serde(default)]
    pub weights_path: Option<PathBuf>,
    #[serde(default)]
    pub point_cap: Option<usize>,
}

impl SpaceConfig {
    pub fn grid(bounds: &[(f64, f64)], spacing: f64) -> Self {
        Self {
            backend: BackendKind::Grid,
            dimension: Some(bounds.len()),
            bounds: Some(bounds.iter().map(|&(a, b)| [a, b]).collect()),
            spacing: Some(spacing),
            dist_matrix_path: None,
            weights_path: None,
            point_cap: None,
        }
    }

    pub fn build(&self, base_dir: &Path) -> Result<MetricMeasureSpace> {
        match self.backend {
            BackendKind::Grid => {
                let bounds = self.bounds.as_ref().ok_or_else(|| Error::Argument("grid config needs 'bounds'".into()))?;
                let h = self.spacing.ok_or_else(|| Error::Argument("grid config needs 'spacing'".into()))?;
                if let Some(d) = self.dimension {
                    if d != bounds.len() {
                        return arg(format!("'dimension' is {d} but 'bounds' has {} axes", bounds.len()));
                    }
                }
                let b: Vec<(f64, f64)> = bounds.iter().map(|&[lo, hi]| (lo, hi)).collect();
                build_grid_capped(&b, h, self.point_cap.unwrap_or(DEFAULT_POINT_CAP))
            }
            BackendKind::Graph => {
                let rel = self.dist_matrix_path.as_ref().ok_or_else(|| Error::Argument("graph config needs 'dist_matrix_path'".into()))?;
                let dist = read_matrix(&base_dir.join(rel))?;
                let cap = self.point_cap.unwrap_or(DEFAULT_POINT_CAP);
                if dist.nrows() > cap {
                    return Err(Error::Size { n: dist.nrows(), cap });
                }
                let weights = match &self.weights_path {
                    Some(p) => read_vector(&base_dir.join(p))?,
                    None => vec![1.0; dist.nrows()],
                };
                MetricMeasureSpace::from_graph(dist, weights, None)
            }
        }
    }
}
