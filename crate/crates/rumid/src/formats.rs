//! File formats: model JSON, field CSV, scattered and price CSVs, density CSV,
//! level-function and utility CSVs.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use rumid_core::characteristics::OmegaFunction;
use rumid_core::density::{DensityGrid, VGrid};
use rumid_core::field::{Axis, GridSpec, ProbabilityField};
use rumid_core::model::{ChoiceModelSpec, Interval, NoiseSpec, UtilityPrimitive};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    At { path: String, line: u64, msg: String },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("{path}:{line}:{column}: {msg}")]
    Json {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error(transparent)]
    Core(#[from] rumid_core::Error),
}

pub type FormatResult<T> = Result<T, FormatError>;

fn open(path: &Path) -> FormatResult<File> {
    File::open(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> FormatResult<File> {
    File::create(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn invalid(path: &str, msg: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.to_string(),
        msg: msg.into(),
    }
}

fn csv_err(path: &str, e: csv::Error) -> FormatError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    FormatError::At {
        path: path.to_string(),
        line,
        msg: e.to_string(),
    }
}

/// Shortest representation that reads back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> FormatResult<T> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|source| FormatError::Io {
            path: path.display().to_string(),
            source,
        })?;
    serde_json::from_str(&s).map_err(|e| FormatError::Json {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> FormatResult<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    create(path)?
        .write_all(s.as_bytes())
        .map_err(|source| FormatError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Model document: `{"alternatives", "utilities", "noise", "domain"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub alternatives: usize,
    pub utilities: Vec<UtilityPrimitive>,
    pub noise: NoiseSpec,
    pub domain: Vec<[f64; 2]>,
}

impl ModelFile {
    pub fn to_spec(&self) -> rumid_core::Result<ChoiceModelSpec> {
        if self.utilities.len() != self.alternatives {
            return Err(rumid_core::Error::InvalidModel(format!(
                "\"alternatives\" is {} but \"utilities\" lists {}",
                self.alternatives,
                self.utilities.len()
            )));
        }
        let domain = self.domain.iter().map(|d| Interval::new(d[0], d[1])).collect();
        ChoiceModelSpec::new(self.utilities.clone(), self.noise.clone(), domain)
    }
}

pub fn read_model(path: &Path) -> FormatResult<(ModelFile, ChoiceModelSpec)> {
    let file: ModelFile = read_json(path)?;
    let spec = file.to_spec().map_err(|e| invalid(&path.display().to_string(), e.to_string()))?;
    Ok((file, spec))
}

fn field_header(k: usize) -> Vec<String> {
    (0..k)
        .map(|j| format!("a_{j}"))
        .chain((0..k).map(|j| format!("q_{j}")))
        .collect()
}

pub fn write_field(path: &Path, field: &ProbabilityField) -> FormatResult<()> {
    write_field_to(create(path)?, field).map_err(|e| csv_err(&path.display().to_string(), e))
}

pub fn write_field_to<W: Write>(w: W, field: &ProbabilityField) -> Result<(), csv::Error> {
    let k = field.n_alternatives();
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(field_header(k))?;
    let mut rec = Vec::with_capacity(2 * k);
    for node in 0..field.node_count() {
        rec.clear();
        rec.extend(field.grid().node_coords(node).into_iter().map(fmt_f64));
        rec.extend(field.node_probs(node).iter().map(|&q| fmt_f64(q)));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Rows of `a_0..a_J, q_0..q_J` with their line numbers.
pub struct Rows {
    pub k: usize,
    pub rows: Vec<(u64, Vec<f64>)>,
}

fn read_rows<R: Read>(r: R, path: &str, expect: impl Fn(usize) -> Vec<String>) -> FormatResult<Rows> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 4 || header.len() % 2 != 0 {
        return Err(FormatError::At {
            path: path.to_string(),
            line: 1,
            msg: format!("expected header a_0..a_J,q_0..q_J, got {}", header.join(",")),
        });
    }
    let k = header.len() / 2;
    let want = expect(k);
    if header != want {
        return Err(FormatError::At {
            path: path.to_string(),
            line: 1,
            msg: format!("expected header {}, got {}", want.join(","), header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| FormatError::At {
                    path: path.to_string(),
                    line,
                    msg: format!("column {}: '{s}' is not a finite number", header[c]),
                })
            })
            .collect::<FormatResult<Vec<f64>>>()?;
        rows.push((line, vals));
    }
    if rows.is_empty() {
        return Err(invalid(path, "no data rows"));
    }
    Ok(Rows { k, rows })
}

fn infer_axis(values: &[f64], name: &str, path: &str) -> FormatResult<Axis> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let span = v[v.len() - 1] - v[0];
    let eps = 1e-9 * span.max(1e-300);
    let mut distinct = vec![v[0]];
    for &x in &v[1..] {
        if x - distinct[distinct.len() - 1] > eps {
            distinct.push(x);
        }
    }
    let n = distinct.len();
    let (lo, hi) = (distinct[0], distinct[n - 1]);
    let ax = Axis::new(lo, hi, n).map_err(|e| invalid(path, format!("axis {name}: {e}")))?;
    for (i, &x) in distinct.iter().enumerate() {
        if (x - ax.node(i)).abs() > 1e-6 * ax.step() {
            return Err(invalid(
                path,
                format!("axis {name} is not uniformly spaced near {x} (expected {})", ax.node(i)),
            ));
        }
    }
    Ok(ax)
}

pub fn read_field(path: &Path) -> FormatResult<ProbabilityField> {
    let p = path.display().to_string();
    parse_field(open(path)?, &p)
}

/// Reads a field CSV and checks that the rows form a complete lattice.
pub fn parse_field<R: Read>(r: R, path: &str) -> FormatResult<ProbabilityField> {
    let Rows { k, rows } = read_rows(r, path, field_header)?;
    let axes = (0..k)
        .map(|c| {
            let col: Vec<f64> = rows.iter().map(|(_, v)| v[c]).collect();
            infer_axis(&col, &format!("a_{c}"), path)
        })
        .collect::<FormatResult<Vec<_>>>()?;
    let grid = GridSpec::new(axes)?;
    let mut values = vec![f64::NAN; grid.node_count() * k];
    let mut seen = vec![0u64; grid.node_count()];
    for (line, v) in &rows {
        let idx: Vec<usize> = (0..k)
            .map(|c| {
                let ax = grid.axis(c);
                ((v[c] - ax.lo) / ax.step()).round() as usize
            })
            .collect();
        let node = grid.ravel(&idx);
        if seen[node] != 0 {
            return Err(FormatError::At {
                path: path.to_string(),
                line: *line,
                msg: format!("node {:?} already given on line {}", &v[..k], seen[node]),
            });
        }
        seen[node] = *line;
        values[node * k..(node + 1) * k].copy_from_slice(&v[k..]);
    }
    if let Some(missing) = seen.iter().position(|&s| s == 0) {
        return Err(invalid(
            path,
            format!(
                "lattice incomplete: {} rows for {} nodes; first missing node {:?}",
                rows.len(),
                grid.node_count(),
                grid.node_coords(missing)
            ),
        ));
    }
    ProbabilityField::from_values(grid, values, format!("csv:{path}")).map_err(|e| invalid(path, e.to_string()))
}

/// Scattered `a_0..a_J, q_0..q_J` rows (no lattice requirement).
pub fn read_scattered(path: &Path) -> FormatResult<Rows> {
    let p = path.display().to_string();
    read_rows(open(path)?, &p, field_header)
}

pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<f64>]) -> FormatResult<()> {
    let p = path.display().to_string();
    let mut wr = csv::Writer::from_writer(create(path)?);
    wr.write_record(header).map_err(|e| csv_err(&p, e))?;
    for r in rows {
        wr.write_record(r.iter().map(|&x| fmt_f64(x)))
            .map_err(|e| csv_err(&p, e))?;
    }
    wr.flush().map_err(|source| FormatError::Io { path: p, source })
}

pub fn scattered_header(k: usize) -> Vec<String> {
    field_header(k)
}

/// Price-notation rows: `p_1..p_J, y, q_0..q_J`.
pub struct PriceRows {
    pub k: usize,
    pub rows: Vec<(u64, Vec<f64>)>,
}

pub fn price_header(k: usize) -> Vec<String> {
    (1..k)
        .map(|j| format!("p_{j}"))
        .chain(std::iter::once("y".to_string()))
        .chain((0..k).map(|j| format!("q_{j}")))
        .collect()
}

/// Reads a price CSV. A `p_0` column is accepted only if it is identically zero.
pub fn read_prices(path: &Path) -> FormatResult<PriceRows> {
    let p = path.display().to_string();
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header: Vec<String> = rd.headers().map_err(|e| csv_err(&p, e))?.iter().map(str::to_string).collect();
    let has_p0 = header.first().map(|h| h == "p_0").unwrap_or(false);
    let rest = if has_p0 { &header[1..] } else { &header[..] };
    let nq = rest.iter().filter(|h| h.starts_with("q_")).count();
    if nq < 2 || rest != price_header(nq).as_slice() {
        return Err(FormatError::At {
            path: p,
            line: 1,
            msg: format!(
                "expected header p_1..p_J,y,q_0..q_J (optionally led by p_0), got {}",
                header.join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(&p, e))?;
        let line = rec.position().map(|x| x.line()).unwrap_or(0);
        let mut vals = Vec::with_capacity(rec.len());
        for (c, s) in rec.iter().enumerate() {
            let x = s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| FormatError::At {
                path: p.clone(),
                line,
                msg: format!("column {}: '{s}' is not a finite number", header[c]),
            })?;
            vals.push(x);
        }
        if has_p0 {
            if vals[0] != 0.0 {
                return Err(FormatError::At {
                    path: p,
                    line,
                    msg: format!("p_0 = {} but the outside option has zero price", vals[0]),
                });
            }
            vals.remove(0);
        }
        rows.push((line, vals));
    }
    Ok(PriceRows { k: nq, rows })
}

/// `a_0 = y`, `a_j = y - p_j`.
pub fn prices_to_offers(k: usize, row: &[f64]) -> Vec<f64> {
    let y = row[k - 1];
    let mut out = Vec::with_capacity(2 * k);
    out.push(y);
    out.extend(row[..k - 1].iter().map(|p| y - p));
    out.extend_from_slice(&row[k..]);
    out
}

/// `y = a_0`, `p_j = a_0 - a_j`.
pub fn offers_to_prices(k: usize, row: &[f64]) -> Vec<f64> {
    let y = row[0];
    let mut out = Vec::with_capacity(2 * k);
    out.extend(row[1..k].iter().map(|a| y - a));
    out.push(y);
    out.extend_from_slice(&row[k..]);
    out
}

fn density_header(dims: usize) -> Vec<String> {
    (1..=dims)
        .map(|j| format!("v_{j}"))
        .chain(["f", "F", "in_support"].iter().map(|s| s.to_string()))
        .collect()
}

pub fn write_density(path: &Path, d: &DensityGrid) -> FormatResult<()> {
    let p = path.display().to_string();
    let mut wr = csv::Writer::from_writer(create(path)?);
    wr.write_record(density_header(d.dims())).map_err(|e| csv_err(&p, e))?;
    for node in 0..d.v_grid.node_count() {
        let mut rec: Vec<String> = d.v_grid.node(node).into_iter().map(fmt_f64).collect();
        rec.push(fmt_f64(d.f[node]));
        rec.push(fmt_f64(d.cdf[node]));
        rec.push(if d.support[node] { "1" } else { "0" }.to_string());
        wr.write_record(&rec).map_err(|e| csv_err(&p, e))?;
    }
    wr.flush().map_err(|source| FormatError::Io { path: p, source })
}

/// Reads a density CSV written by [`write_density`] (rows in lattice order).
pub fn read_density(path: &Path) -> FormatResult<DensityGrid> {
    let p = path.display().to_string();
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header: Vec<String> = rd.headers().map_err(|e| csv_err(&p, e))?.iter().map(str::to_string).collect();
    if header.len() < 4 || header != density_header(header.len() - 3) {
        return Err(FormatError::At {
            path: p,
            line: 1,
            msg: format!("expected header v_1..v_J,f,F,in_support, got {}", header.join(",")),
        });
    }
    let dims = header.len() - 3;
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let (mut f, mut cdf, mut support) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(&p, e))?;
        let line = rec.position().map(|x| x.line()).unwrap_or(0);
        let num = |c: usize| -> FormatResult<f64> {
            rec[c].parse::<f64>().map_err(|_| FormatError::At {
                path: p.clone(),
                line,
                msg: format!("column {}: '{}' is not a number", header[c], &rec[c]),
            })
        };
        coords.push((0..dims).map(num).collect::<FormatResult<_>>()?);
        f.push(num(dims)?);
        cdf.push(num(dims + 1)?);
        support.push(match &rec[dims + 2] {
            "1" | "true" => true,
            "0" | "false" => false,
            s => {
                return Err(FormatError::At {
                    path: p.clone(),
                    line,
                    msg: format!("in_support must be 0 or 1, got '{s}'"),
                })
            }
        });
    }
    let axes: Vec<Vec<f64>> = (0..dims)
        .map(|k| {
            let set: BTreeSet<u64> = coords.iter().map(|c| c[k].to_bits()).collect();
            let mut ax: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
            ax.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ax
        })
        .collect();
    let grid = VGrid::new(axes).map_err(|e| invalid(&p, e.to_string()))?;
    if grid.node_count() != coords.len() {
        return Err(invalid(
            &p,
            format!("{} rows do not form a complete {}-node lattice", coords.len(), grid.node_count()),
        ));
    }
    for (node, c) in coords.iter().enumerate() {
        if grid.node(node) != *c {
            return Err(invalid(&p, format!("row {} is out of lattice order", node + 2)));
        }
    }
    DensityGrid::from_parts(grid, f, cdf, Some(support)).map_err(|e| invalid(&p, e.to_string()))
}

/// `omega_j` on an `n x n` lattice over its domain: `a_j, a_0, omega`.
pub fn write_omega(path: &Path, om: &OmegaFunction, label: usize, n: usize) -> FormatResult<()> {
    let d = om.domain();
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        let aj = d.aj.lo + d.aj.width() * i as f64 / (n - 1) as f64;
        for m in 0..n {
            let a0 = d.a0.lo + d.a0.width() * m as f64 / (n - 1) as f64;
            rows.push(vec![aj, a0, om.eval(aj, a0).unwrap_or(f64::NAN)]);
        }
    }
    write_rows(path, &[format!("a_{label}"), "a_0".into(), "omega".into()], &rows)
}

/// `w_j` on `n` values of `a_j` times the `v` nodes: `a_j, v, w`.
pub fn write_utility(path: &Path, om: &OmegaFunction, label: usize, n: usize, v: &[f64]) -> FormatResult<()> {
    let d = om.domain();
    let mut rows = Vec::with_capacity(n * v.len());
    for i in 0..n {
        let aj = d.aj.lo + d.aj.width() * i as f64 / (n - 1) as f64;
        let prof = om.profile(aj).ok();
        for &vv in v {
            let w = prof.as_ref().and_then(|p| p.utility(vv).ok()).unwrap_or(f64::NAN);
            rows.push(vec![aj, vv, w]);
        }
    }
    write_rows(path, &[format!("a_{label}"), "v".into(), "w".into()], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rumid_core::model::TabulationMethod;

    fn m_log_file() -> ModelFile {
        serde_json::from_str(
            r#"{"alternatives": 3,
                "utilities": [{"kind":"log","params":[1.0]},{"kind":"log","params":[2.0]},{"kind":"log","params":[0.5]}],
                "noise": {"kind":"gumbel_iid"},
                "domain": [[0.5,4.0],[0.5,4.0],[0.5,4.0]]}"#,
        )
        .unwrap()
    }

    #[test]
    fn field_csv_round_trip() {
        let spec = m_log_file().to_spec().unwrap();
        let field = spec
            .tabulate(&GridSpec::uniform(&[(1.0, 4.0, 6); 3]).unwrap(), TabulationMethod::ClosedForm)
            .unwrap();
        let mut buf = Vec::new();
        write_field_to(&mut buf, &field).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("a_0,a_1,a_2,q_0,q_1,q_2\n"));
        let back = parse_field(&buf[..], "mem").unwrap();
        assert_eq!(back.values(), field.values());
        assert_eq!(back.grid(), field.grid());
    }

    #[test]
    fn incomplete_lattice_is_rejected() {
        let spec = m_log_file().to_spec().unwrap();
        let field = spec
            .tabulate(&GridSpec::uniform(&[(1.0, 4.0, 6); 3]).unwrap(), TabulationMethod::ClosedForm)
            .unwrap();
        let mut buf = Vec::new();
        write_field_to(&mut buf, &field).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(10);
        let e = parse_field(lines.join("\n").as_bytes(), "mem").unwrap_err();
        assert!(e.to_string().contains("incomplete"), "{e}");

        let bad = "a_0,a_1,q_0,q_1\n0,0,0.5,0.5\n0,1,x,0.5\n";
        let e = parse_field(bad.as_bytes(), "mem").unwrap_err();
        assert!(e.to_string().contains("mem:3"), "{e}");
    }

    #[test]
    fn model_length_mismatch() {
        let mut m = m_log_file();
        m.alternatives = 4;
        assert!(m.to_spec().is_err());
    }

    #[test]
    fn price_offer_conversion() {
        let a = prices_to_offers(3, &[1.0, 2.0, 3.0, 0.2, 0.3, 0.5]);
        assert_eq!(a, vec![3.0, 2.0, 1.0, 0.2, 0.3, 0.5]);
        assert_eq!(offers_to_prices(3, &a), vec![1.0, 2.0, 3.0, 0.2, 0.3, 0.5]);
    }
}
