//! End-to-end runs: fitting chains to files with a manifest, replaying a
//! manifest, and cross-validated grid search.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{kfold_split, load_csv_with, standardize, CsvOptions, DataMatrix, StandardizationParams, TrainingSet};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::io::{self, DrawsHeader, DRAWS_FORMAT};
use crate::posterior::{predict_mean, rmse, PosteriorDraws};
use crate::prior::{calibrate_lambda, Hyperparams, LambdaSpec};
use crate::sampler::{run_chain_observed, ChainConfig, ChainEvent, ChainOutput, MoveKind, ProgressReport};

/// Standardized training data and hyperparameters with `λ` resolved.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: TrainingSet,
    pub standardization: StandardizationParams,
    pub hyper: Hyperparams,
    pub lambda: f64,
}

/// Standardizes the response and, for a quantile `λ`, calibrates it on the
/// standardized data.
pub fn prepare(data: &DataMatrix, h: &Hyperparams) -> Result<Prepared> {
    h.validate()?;
    let (std_data, standardization) = standardize(data)?;
    let lambda = match h.lambda {
        LambdaSpec::Fixed(l) => l,
        LambdaSpec::Quantile(q) => calibrate_lambda(q, h.v, &std_data)?,
    };
    let train = TrainingSet::new(std_data);
    if train.splittable().is_empty() {
        return Err(Error::data("no column has two distinct values"));
    }
    Ok(Prepared {
        train,
        standardization,
        hyper: Hyperparams {
            lambda: LambdaSpec::Fixed(lambda),
            ..h.clone()
        },
        lambda,
    })
}

pub type ProgressSink<'a> = &'a (dyn Fn(&ProgressReport) + Sync);

/// Runs `chains` chains on streams `0..chains` of `chain.seed`.
pub fn fit_chains(
    prep: &Prepared,
    chain: &ChainConfig,
    chains: usize,
    exec: Execution,
    progress: Option<ProgressSink<'_>>,
) -> Result<Vec<ChainOutput>> {
    exec::map_range(exec, chains, |c| {
        let cfg = ChainConfig {
            stream: c as u64,
            ..chain.clone()
        };
        run_chain_observed(&prep.train, &prep.hyper, &cfg, &mut |ev| {
            if let (ChainEvent::Progress(r), Some(sink)) = (ev, progress) {
                sink(r);
            }
            Ok(())
        })
    })
    .into_iter()
    .collect()
}

/// Posterior over the pooled draws of several chains.
pub fn pool(prep: &Prepared, outputs: &[ChainOutput]) -> Result<PosteriorDraws> {
    let draws = outputs.iter().flat_map(|o| o.draws.iter().cloned()).collect();
    PosteriorDraws::new(draws, prep.standardization.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRef {
    pub path: PathBuf,
    pub sha256: String,
    pub n: usize,
    pub p: usize,
    pub columns: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub z_flip: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub stream: u64,
    /// Relative to the manifest's directory.
    pub draws: PathBuf,
    pub sha256: String,
    pub retained: usize,
    pub skipped: usize,
    pub acceptance: AcceptanceRates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub created_unix: u64,
    pub data: DataRef,
    /// Resolved configuration as `key -> value`; parses back exactly.
    pub config: BTreeMap<String, String>,
    pub calibrated_lambda: f64,
    pub sigma2_posterior_mean: f64,
    pub chains: Vec<ChainRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn draws_file_name(stream: u64) -> String {
    format!("chain{stream}.draws.jsonl")
}

/// Loads `data_path`, fits every chain, writes one draw file per chain and
/// `manifest.json` into `out_dir`.
pub fn fit_run(
    data_path: &Path,
    cfg: &RunConfig,
    out_dir: &Path,
    exec: Execution,
    progress: Option<ProgressSink<'_>>,
) -> Result<RunManifest> {
    cfg.validate()?;
    let data = load_csv_with(
        data_path,
        &CsvOptions {
            response: cfg.response.clone(),
            categorical: cfg.categorical.clone(),
        },
    )?;
    let data_sha = io::sha256_file(data_path)?;
    let prep = prepare(&data, &cfg.hyper)?;
    let outputs = fit_chains(&prep, &cfg.chain, cfg.chains, exec, progress)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut chains = Vec::with_capacity(outputs.len());
    for (c, out) in outputs.iter().enumerate() {
        let header = DrawsHeader {
            format: DRAWS_FORMAT.into(),
            seed: cfg.chain.seed,
            stream: c as u64,
            response: cfg.response.clone(),
            categorical: cfg.categorical.clone(),
            column_names: data.column_names().to_vec(),
            standardization: prep.standardization.clone(),
            marginals: prep.train.marginals().to_record(),
        };
        let name = PathBuf::from(draws_file_name(c as u64));
        let path = out_dir.join(&name);
        io::write_draws(&path, &header, &out.draws)?;
        let s = &out.stats;
        chains.push(ChainRecord {
            stream: c as u64,
            draws: name,
            sha256: io::sha256_file(&path)?,
            retained: out.retained,
            skipped: out.skipped,
            acceptance: AcceptanceRates {
                grow: s.acceptance_rate(MoveKind::Grow),
                prune: s.acceptance_rate(MoveKind::Prune),
                change: s.acceptance_rate(MoveKind::Change),
                z_flip: s.z_acceptance_rate(),
            },
        });
    }
    let post = pool(&prep, &outputs)?;
    let manifest = RunManifest {
        tool: "anova-bart".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        data: DataRef {
            path: data_path.to_path_buf(),
            sha256: data_sha,
            n: data.n(),
            p: data.p(),
            columns: data.column_names().to_vec(),
        },
        config: cfg.to_map(),
        calibrated_lambda: prep.lambda,
        sigma2_posterior_mean: post.mean_sigma2_original(),
        chains,
    };
    io::write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Draw-file paths of a manifest, resolved against its directory.
pub fn manifest_draw_paths(manifest_path: &Path, m: &RunManifest) -> Vec<PathBuf> {
    let dir = manifest_path.parent().unwrap_or(Path::new(""));
    m.chains.iter().map(|c| dir.join(&c.draws)).collect()
}

#[derive(Clone, Debug)]
pub struct ReplayReport {
    pub original: RunManifest,
    pub replayed: RunManifest,
    /// Draw files whose hash differs from the original run.
    pub mismatched: Vec<PathBuf>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty() && self.original.chains.len() == self.replayed.chains.len()
    }
}

/// Re-runs the fit recorded in a manifest into `out_dir` and compares draw
/// file hashes. The training file must be unchanged.
pub fn replay(manifest_path: &Path, out_dir: &Path, exec: Execution, progress: Option<ProgressSink<'_>>) -> Result<ReplayReport> {
    let original: RunManifest = io::read_json(manifest_path)?;
    let cfg = RunConfig::from_map(&original.config)?;
    let sha = io::sha256_file(&original.data.path)?;
    if sha != original.data.sha256 {
        return Err(Error::data(format!(
            "{}: training data changed since the recorded run",
            original.data.path.display()
        )));
    }
    let replayed = fit_run(&original.data.path, &cfg, out_dir, exec, progress)?;
    let mismatched = original
        .chains
        .iter()
        .zip(&replayed.chains)
        .filter(|(a, b)| a.sha256 != b.sha256)
        .map(|(_, b)| out_dir.join(&b.draws))
        .collect();
    Ok(ReplayReport {
        original,
        replayed,
        mismatched,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub assignments: Vec<(String, String)>,
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: usize,
    pub points: Vec<CvPoint>,
    /// Index of the lowest mean RMSE; the earliest point wins ties.
    pub best: usize,
    pub best_config: BTreeMap<String, String>,
}

/// `k`-fold grid search. Every grid point sees the same folds; each fold fit
/// is a single chain of `base.chain`, scored by held-out RMSE on the
/// original response scale.
pub fn cross_validate(
    data: &DataMatrix,
    base: &RunConfig,
    grid: &[Vec<(String, String)>],
    k: usize,
    seed: u64,
    exec: Execution,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::Config(vec!["grid is empty".into()]));
    }
    let configs = grid
        .iter()
        .map(|point| {
            let mut c = base.clone();
            c.apply(point)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let folds = kfold_split(data.n(), k, seed)?;
    let tasks: Vec<(usize, usize)> = (0..configs.len()).flat_map(|g| (0..k).map(move |f| (g, f))).collect();
    let scores = exec::map_slice(exec, &tasks, |&(g, f)| -> Result<f64> {
        let cfg = &configs[g];
        let fold = &folds[f];
        let prep = prepare(&data.select_rows(&fold.train)?, &cfg.hyper)?;
        let chain = ChainConfig {
            progress_every: 0,
            ..cfg.chain.clone()
        };
        let post = pool(&prep, &fit_chains(&prep, &chain, 1, Execution::Sequential, None)?)?;
        let held = data.select_rows(&fold.validation)?;
        let pred = predict_mean(&post, &held.rows(), Execution::Sequential)?;
        rmse(&pred, held.y())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let points: Vec<CvPoint> = grid
        .iter()
        .enumerate()
        .map(|(g, a)| {
            let fold_rmse = scores[g * k..(g + 1) * k].to_vec();
            CvPoint {
                assignments: a.clone(),
                mean_rmse: fold_rmse.iter().sum::<f64>() / k as f64,
                fold_rmse,
            }
        })
        .collect();
    let best = (1..points.len()).fold(0, |b, i| if points[i].mean_rmse < points[b].mean_rmse { i } else { b });
    Ok(CvResult {
        folds: k,
        best_config: configs[best].to_map(),
        points,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticSpec};

    fn small_cfg() -> RunConfig {
        let mut c = RunConfig::default();
        c.apply(&[("n_iter", "60"), ("burn_in", "30"), ("t_max", "20"), ("progress_every", "0")])
            .unwrap();
        c
    }

    #[test]
    fn prepare_calibrates_lambda() {
        let s = generate(&SyntheticSpec { n: 80, p: 5, snr: 5.0, seed: 1 }).unwrap();
        let prep = prepare(&s.data, &Hyperparams::default()).unwrap();
        assert!(prep.lambda > 0.0);
        assert_eq!(prep.hyper.lambda, LambdaSpec::Fixed(prep.lambda));
        let y = prep.train.data().y();
        assert!(y.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn chains_differ_and_repeat() {
        let s = generate(&SyntheticSpec { n: 60, p: 5, snr: 5.0, seed: 2 }).unwrap();
        let cfg = small_cfg();
        let prep = prepare(&s.data, &cfg.hyper).unwrap();
        let a = fit_chains(&prep, &cfg.chain, 2, Execution::default(), None).unwrap();
        let b = fit_chains(&prep, &cfg.chain, 2, Execution::Sequential, None).unwrap();
        assert_ne!(a[0].draws, a[1].draws);
        assert_eq!(a[0].draws, b[0].draws);
        assert_eq!(a[1].draws, b[1].draws);
    }

    #[test]
    fn cv_ties_go_to_first_point() {
        let s = generate(&SyntheticSpec { n: 40, p: 5, snr: 5.0, seed: 3 }).unwrap();
        let cfg = small_cfg();
        let grid = vec![vec![("v".to_string(), "3".to_string())], vec![("v".to_string(), "3".to_string())]];
        let r = cross_validate(&s.data, &cfg, &grid, 4, 7, Execution::default()).unwrap();
        assert_eq!(r.points[0].mean_rmse, r.points[1].mean_rmse);
        assert_eq!(r.best, 0);
        let one = cross_validate(&s.data, &cfg, &grid[..1], 4, 7, Execution::default()).unwrap();
        assert_eq!(one.best, 0);
        assert!(cross_validate(&s.data, &cfg, &[], 4, 7, Execution::default()).is_err());
    }
}
