//! Versioned model files and design CSVs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::design::Design;
use crate::emulator::{DesignSet, SvdGpModel};
use crate::error::{Error, Result};

pub const MODEL_HEADER: &str = "svdgp-v1";

/// Seventeen significant digits; parses back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_model<W: Write>(model: &SvdGpModel, mut w: W) -> Result<()> {
    writeln!(w, "{MODEL_HEADER}")?;
    serde_json::to_writer(&mut w, model)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_model<R: Read>(r: R) -> Result<SvdGpModel> {
    let mut r = BufReader::new(r);
    let mut header = String::new();
    r.read_line(&mut header)?;
    if header.trim_end() != MODEL_HEADER {
        return Err(Error::Format(format!("expected model header '{MODEL_HEADER}', found '{}'", header.trim_end())));
    }
    Ok(serde_json::from_reader(r)?)
}

pub fn save_model(model: &SvdGpModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SvdGpModel> {
    read_model(File::open(path)?)
}

/// One row per run: `x_1..x_q` then one `t_<time>` column per series entry.
pub fn write_design_set<W: Write>(data: &DesignSet, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let q = data.x.dim();
    let header: Vec<String> = (1..=q)
        .map(|j| format!("x_{j}"))
        .chain(data.times.iter().map(|t| format!("t_{}", fmt_num(*t))))
        .collect();
    out.write_record(&header)?;
    for (j, x) in data.x.points().enumerate() {
        let row: Vec<String> = x.iter().chain(data.y.column(j).iter()).map(|v| fmt_num(*v)).collect();
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_design_set<R: Read>(r: R) -> Result<DesignSet> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let q = headers.iter().take_while(|h| h.starts_with("x_")).count();
    let times = headers
        .iter()
        .skip(q)
        .map(|h| {
            h.strip_prefix("t_")
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("bad column header '{h}'")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if q == 0 || times.is_empty() {
        return Err(Error::Format("design file needs x_ and t_ columns".into()));
    }
    let mut xs = Vec::new();
    let mut cols = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("bad number '{s}': {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        xs.extend_from_slice(&vals[..q]);
        cols.push(vals[q..].to_vec());
    }
    let x = Design::from_flat(q, xs)?;
    let y = DMatrix::from_fn(times.len(), cols.len(), |t, j| cols[j][t]);
    DesignSet::new(x, y, times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::maximin_lhd;
    use crate::gp::PriorConfig;

    fn data() -> DesignSet {
        let x = maximin_lhd(8, 2, 4, 2);
        let times: Vec<f64> = (0..15).map(|t| 0.1 * t as f64 + 1.0 / 3.0).collect();
        let cols: Vec<Vec<f64>> = x.points().map(|p| times.iter().map(|t| (p[0] * t).sin() + p[1] / (1.0 + t)).collect()).collect();
        DesignSet::from_columns(x, &cols, times).unwrap()
    }

    #[test]
    fn number_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn design_set_round_trip() {
        let d = data();
        let mut buf = Vec::new();
        write_design_set(&d, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("x_1,x_2,t_"));
        assert_eq!(read_design_set(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn model_round_trip_predicts_identically() {
        let m = SvdGpModel::fit(&data(), 0.95, PriorConfig::default(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        for x in [[0.2, 0.9], [0.55, 0.05]] {
            assert_eq!(m.predict(&x), back.predict(&x));
        }
        assert!(matches!(read_model(&b"other\n{}"[..]), Err(Error::Format(_))));
    }
}
