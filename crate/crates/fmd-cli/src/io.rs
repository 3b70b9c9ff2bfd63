use anyhow::{bail, Context, Result};
use fmd_core::model::{AnyModel, MlrBatch, ModelFile, VecBatch};
use std::io::Write;
use std::path::Path;

/// Writes to the file when given, otherwise to stdout.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn read_model(path: &Path) -> Result<AnyModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    let file: ModelFile = serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
    Ok(AnyModel::from_file(&file)?)
}

pub fn write_model(model: &AnyModel, path: Option<&Path>) -> Result<()> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, &model.to_file())?;
    writeln!(out)?;
    Ok(())
}

fn header(d: usize, with_y: bool) -> Vec<String> {
    let mut h: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
    if with_y {
        h.push("y".into());
    }
    h
}

pub fn write_mlr_samples(b: &MlrBatch, path: Option<&Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink(path)?);
    w.write_record(header(b.d, true))?;
    for j in 0..b.len() {
        w.write_record(b.row(j).iter().chain([&b.y[j]]).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vec_samples(b: &VecBatch, path: Option<&Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink(path)?);
    w.write_record(header(b.d, false))?;
    for j in 0..b.len() {
        w.write_record(b.row(j).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub enum Samples {
    Mlr(MlrBatch),
    Vectors(VecBatch),
}

/// Reads a sample CSV; a trailing `y` column marks MLR data.
pub fn read_samples(path: &Path) -> Result<Samples> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading samples {}", path.display()))?;
    let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let with_y = names.last().is_some_and(|n| n == "y");
    let d = names.len() - usize::from(with_y);
    if d == 0 || names[..d] != header(d, false)[..] {
        bail!("{}: expected columns x_1..x_d[,y], got {names:?}", path.display());
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}: bad number on data row {}", path.display(), line + 1))?;
        x.extend_from_slice(&vals[..d]);
        if with_y {
            y.push(vals[d]);
        }
    }
    Ok(if with_y { Samples::Mlr(MlrBatch { d, x, y }) } else { Samples::Vectors(VecBatch { d, x }) })
}

/// One column of a CSV, chosen by header name or zero-based index.
pub fn read_column(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let idx = match column {
        None => 0,
        Some(c) => match names.iter().position(|n| n == c) {
            Some(i) => i,
            None => c.parse::<usize>().ok().filter(|&i| i < names.len()).with_context(|| format!("no column {c:?}"))?,
        },
    };
    if idx >= names.len() {
        bail!("{} has no columns", path.display());
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let v = rec.get(idx).with_context(|| format!("short data row {}", line + 1))?;
        out.push(v.trim().parse::<f64>().with_context(|| format!("bad number on data row {}", line + 1))?);
    }
    Ok(out)
}
