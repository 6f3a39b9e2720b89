use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::systems::VectorField;
use crate::error::{Error, Result};

/// Paired state / derivative samples, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    states: Array2<f64>,
    derivatives: Array2<f64>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        states: Array2<f64>,
        derivatives: Array2<f64>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if states.dim() != derivatives.dim() {
            return Err(Error::shape(
                "dataset",
                format!("{:?}", states.dim()),
                format!("{:?}", derivatives.dim()),
            ));
        }
        if let Some((idx, _)) = states
            .indexed_iter()
            .chain(derivatives.indexed_iter())
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::Dataset {
                line: idx.0 + 2,
                message: "non-finite entry".into(),
            });
        }
        Ok(Self {
            states,
            derivatives,
            provenance: provenance.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.states.ncols()
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub fn derivatives(&self) -> &Array2<f64> {
        &self.derivatives
    }

    pub fn state(&self, i: usize) -> ArrayView1<'_, f64> {
        self.states.row(i)
    }

    pub fn derivative(&self, i: usize) -> ArrayView1<'_, f64> {
        self.derivatives.row(i)
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (
            self.states.select(Axis(0), indices),
            self.derivatives.select(Axis(0), indices),
        )
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.n();
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=n)
            .map(|i| format!("x{i}"))
            .chain((1..=n).map(|i| format!("xdot{i}")))
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for (x, d) in self.states.rows().into_iter().zip(self.derivatives.rows()) {
            let row: Vec<String> = x.iter().chain(d.iter()).map(|v| format_float(*v)).collect();
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(Error::Dataset {
                line: 1,
                message: "empty file".into(),
            });
        }
        let width = header.len();
        if width % 2 != 0 {
            return Err(Error::Dataset {
                line: 1,
                message: format!("header has odd width {width}"),
            });
        }
        let n = width / 2;
        for (i, name) in header.iter().enumerate() {
            let expected = if i < n {
                format!("x{}", i + 1)
            } else {
                format!("xdot{}", i - n + 1)
            };
            if name.trim() != expected {
                return Err(Error::Dataset {
                    line: 1,
                    message: format!("column {} is `{name}`, expected `{expected}`", i + 1),
                });
            }
        }
        let mut flat = Vec::new();
        let mut rows = 0;
        for record in r.records() {
            let record = record.map_err(csv_err)?;
            let line = record
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(rows + 2);
            if record.len() != width {
                return Err(Error::Dataset {
                    line,
                    message: format!("row has {} fields, header has {width}", record.len()),
                });
            }
            for field in record.iter() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Dataset {
                    line,
                    message: format!("cannot parse `{field}` as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Dataset {
                        line,
                        message: "non-finite entry".into(),
                    });
                }
                flat.push(v);
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Dataset {
                line: 2,
                message: "no samples".into(),
            });
        }
        let all = Array2::from_shape_vec((rows, width), flat).expect("row widths checked");
        let states = all.slice(ndarray::s![.., ..n]).to_owned();
        let derivatives = all.slice(ndarray::s![.., n..]).to_owned();
        Self::new(states, derivatives, "csv")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let mut ds = Self::read_csv(std::io::BufReader::new(file))?;
        ds.provenance = format!("loaded from {}", path.display());
        Ok(ds)
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::Dataset {
            line,
            message: format!("row has {len} fields, header has {expected_len}"),
        },
        other => Error::Dataset {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Scientific notation with 17 significant digits (exact round trip).
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Evenly spaced points on `[lo, hi]`, endpoints included exactly.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (count - 1) as f64
            }
        })
        .collect()
}

/// Cartesian grid with `per_axis` points per dimension, first axis slowest.
pub fn grid_points(per_axis: usize, bounds: &[(f64, f64)]) -> Result<Array2<f64>> {
    if per_axis < 2 {
        return Err(Error::Config(format!(
            "per-axis count must be at least 2, got {per_axis}"
        )));
    }
    if bounds.is_empty() {
        return Err(Error::Config("grid needs at least one axis".into()));
    }
    for &(lo, hi) in bounds {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "grid bounds [{lo}, {hi}] are inverted or degenerate"
            )));
        }
    }
    let n = bounds.len();
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| linspace(lo, hi, per_axis))
        .collect();
    let total = per_axis.pow(n as u32);
    Ok(Array2::from_shape_fn((total, n), |(row, dim)| {
        let stride = per_axis.pow((n - 1 - dim) as u32);
        axes[dim][(row / stride) % per_axis]
    }))
}

/// Grid samples labeled with `field`.
pub fn grid_dataset(
    per_axis: usize,
    bounds: &[(f64, f64)],
    field: &dyn VectorField,
) -> Result<Dataset> {
    if field.dim() != bounds.len() {
        return Err(Error::shape("grid dimension", field.dim(), bounds.len()));
    }
    let states = grid_points(per_axis, bounds)?;
    let mut derivatives = Array2::zeros(states.dim());
    for (x, mut d) in states.rows().into_iter().zip(derivatives.rows_mut()) {
        let v: Array1<f64> = field.eval(x)?;
        d.assign(&v);
    }
    let provenance = format!("grid {per_axis}^{} on {bounds:?}", bounds.len());
    Dataset::new(states, derivatives, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdata::VectorFieldSpec;
    use ndarray::array;

    #[test]
    fn three_by_three_grid() {
        let vdp = VectorFieldSpec::VanDerPol { mu: 0.3 };
        let ds = grid_dataset(3, &[(-3.0, 3.0), (-3.0, 3.0)], &vdp).unwrap();
        assert_eq!(ds.len(), 9);
        let expect = [-3.0, 0.0, 3.0];
        for (i, x) in ds.states().rows().into_iter().enumerate() {
            assert_eq!(x[0], expect[i / 3]);
            assert_eq!(x[1], expect[i % 3]);
        }
    }

    #[test]
    fn reference_scale_grid_count() {
        let vdp = VectorFieldSpec::VanDerPol { mu: 0.3 };
        let ds = grid_dataset(100, &[(-3.0, 3.0), (-3.0, 3.0)], &vdp).unwrap();
        assert_eq!(ds.len(), 10_000);
        assert!(ds
            .states()
            .rows()
            .into_iter()
            .all(|r| r[0] != 0.0 || r[1] != 0.0));
    }

    #[test]
    fn labels_match_field() {
        let vdp = VectorFieldSpec::VanDerPol { mu: 0.3 };
        let ds = grid_dataset(3, &[(-1.0, 1.0), (-1.0, 1.0)], &vdp).unwrap();
        // (1, 0) is row 7
        assert_eq!(ds.state(7), array![1.0, 0.0]);
        assert_eq!(ds.derivative(7), array![0.0, -1.0]);
    }

    #[test]
    fn grid_errors() {
        let vdp = VectorFieldSpec::VanDerPol { mu: 0.3 };
        assert!(grid_dataset(1, &[(-3.0, 3.0), (-3.0, 3.0)], &vdp).is_err());
        assert!(grid_dataset(3, &[(3.0, -3.0), (-3.0, 3.0)], &vdp).is_err());
        assert!(grid_dataset(3, &[(-3.0, 3.0)], &vdp).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let vdp = VectorFieldSpec::VanDerPol { mu: 0.3 };
        let ds = grid_dataset(7, &[(-3.0, 3.0), (-2.0, 2.5)], &vdp).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,xdot1,xdot2\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.states(), ds.states());
        assert_eq!(back.derivatives(), ds.derivatives());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let bad = "x1,x2,xdot1,xdot2\n1,2,3,4\n1,2,3\n";
        match Dataset::read_csv(bad.as_bytes()) {
            Err(Error::Dataset { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad = "x1,x2,xdot1,xdot2\n1,2,zz,4\n";
        match Dataset::read_csv(bad.as_bytes()) {
            Err(Error::Dataset { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Dataset::read_csv("".as_bytes()),
            Err(Error::Dataset { .. })
        ));
        assert!(matches!(
            Dataset::read_csv("x1,xdot1\n".as_bytes()),
            Err(Error::Dataset { .. })
        ));
        assert!(matches!(
            Dataset::read_csv("x1,x2,x3\n1,2,3\n".as_bytes()),
            Err(Error::Dataset { line: 1, .. })
        ));
    }
}
