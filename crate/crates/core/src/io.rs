//! Draw files, reports and dataset export.
//!
//! A draw file is JSON lines: a [`DrawsHeader`] followed by one
//! [`DrawRecord`] per retained draw. The header carries the training
//! marginals, so trees can be rebuilt without the training rows.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DataMatrix, EmpiricalMarginals, MarginalsRecord, StandardizationParams};
use crate::error::{Error, Result};
use crate::posterior::{ComponentSummary, Draw, DrawRecord, PosteriorDraws};

pub const DRAWS_FORMAT: &str = "anova-bart-draws/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawsHeader {
    pub format: String,
    pub seed: u64,
    pub stream: u64,
    pub response: String,
    /// Columns one-hot encoded on request in addition to non-numeric ones.
    pub categorical: Vec<String>,
    pub column_names: Vec<String>,
    pub standardization: StandardizationParams,
    pub marginals: MarginalsRecord,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_line<T: Serialize>(w: &mut BufWriter<File>, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn write_draws(path: &Path, header: &DrawsHeader, draws: &[Draw]) -> Result<()> {
    let mut w = create(path)?;
    write_line(&mut w, path, header)?;
    for d in draws {
        write_line(&mut w, path, &d.to_record())?;
    }
    finish(w, path)
}

pub fn read_draws(path: &Path) -> Result<(DrawsHeader, Vec<DrawRecord>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::data(format!("{}: empty draw file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: DrawsHeader = serde_json::from_str(&first)?;
    if header.format != DRAWS_FORMAT {
        return Err(Error::data(format!("{}: unsupported format '{}'", path.display(), header.format)));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok((header, records))
}

/// Merges draw files from chains of one fit into a single posterior.
pub fn load_posterior(paths: &[impl AsRef<Path>]) -> Result<(PosteriorDraws, DrawsHeader)> {
    let mut header: Option<DrawsHeader> = None;
    let mut marginals: Option<EmpiricalMarginals> = None;
    let mut draws = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let (h, recs) = read_draws(p)?;
        match &header {
            None => {
                marginals = Some(EmpiricalMarginals::from_record(h.marginals.clone())?);
                header = Some(h);
            }
            Some(first) => {
                if first.marginals != h.marginals || first.standardization != h.standardization {
                    return Err(Error::data(format!("{}: draws come from a different training set", p.display())));
                }
            }
        }
        let m = marginals.as_ref().expect("set with header");
        for r in &recs {
            draws.push(Draw::from_record(r, m)?);
        }
    }
    let header = header.ok_or_else(|| Error::data("no draw files given"))?;
    Ok((PosteriorDraws::new(draws, header.standardization.clone())?, header))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn close_csv(w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    let inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    finish(inner, path)
}

/// Covariates then the response, one header row.
pub fn write_dataset_csv(path: &Path, d: &DataMatrix, response: &str) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<&str> = d.column_names().iter().map(String::as_str).collect();
    header.push(response);
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec: Vec<String> = (0..d.p()).map(|j| d.value(i, j).to_string()).collect();
        rec.push(d.y()[i].to_string());
        w.write_record(&rec)?;
    }
    close_csv(w, path)
}

/// `row, prediction` plus `actual` when responses are known and one column
/// per requested extra series.
pub fn write_predictions_csv(
    path: &Path,
    pred: &[f64],
    actual: Option<&[f64]>,
    extra: &[(String, Vec<f64>)],
) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["row".to_string(), "prediction".to_string()];
    if actual.is_some() {
        header.push("actual".into());
    }
    header.extend(extra.iter().map(|(name, _)| name.clone()));
    w.write_record(&header)?;
    for (i, p) in pred.iter().enumerate() {
        let mut rec = vec![i.to_string(), p.to_string()];
        if let Some(a) = actual {
            rec.push(a[i].to_string());
        }
        rec.extend(extra.iter().map(|(_, v)| v[i].to_string()));
        w.write_record(&rec)?;
    }
    close_csv(w, path)
}

/// Variable names of a component joined with `:`.
pub fn component_names(c: &crate::tree::ComponentIndex, names: &[String]) -> String {
    c.vars()
        .iter()
        .map(|&j| names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1)))
        .collect::<Vec<_>>()
        .join(":")
}

pub fn write_scores_csv(path: &Path, scores: &[ComponentSummary], names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["component", "variables", "mean_norm", "score", "exceedance", "frequency"])?;
    for s in scores {
        w.write_record([
            s.component.label(),
            component_names(&s.component, names),
            s.mean_norm.to_string(),
            s.score.to_string(),
            s.exceedance.to_string(),
            s.frequency.to_string(),
        ])?;
    }
    close_csv(w, path)
}
