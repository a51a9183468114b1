use std::path::{Path, PathBuf};

use anova_bart::config::{parse_grid, split_pairs, RunConfig};
use anova_bart::dataset::{load_csv_with, load_query, standardize, CsvOptions, TrainingSet};
use anova_bart::io::{self, component_names, DrawsHeader};
use anova_bart::posterior::{
    component_norms, component_predict, mean_crps, normalized_metric, predict_mean, rmse, PosteriorDraws,
};
use anova_bart::sampler::ProgressReport;
use anova_bart::synthetic::{generate as gen_friedman, SyntheticSpec};
use anova_bart::workflow::{self, manifest_draw_paths, RunManifest, MANIFEST_FILE};
use anova_bart::{Error, Result};
use clap::Args;
use serde::Serialize;

use crate::{sidecar_path, Global};

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// Signal-to-noise ratio; `inf` for noise-free responses.
    #[arg(long, default_value_t = 5.0)]
    snr: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV; the sidecar goes next to it as `<stem>.truth.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct Sidecar {
    n: usize,
    p: usize,
    /// Absent for the noise-free case.
    snr: Option<f64>,
    seed: u64,
    sigma_eps: f64,
    f_true: Vec<f64>,
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let spec = SyntheticSpec { n: a.n, p: a.p, snr: a.snr, seed: a.seed };
    let s = gen_friedman(&spec)?;
    io::write_dataset_csv(&a.out, &s.data, "y")?;
    let side = sidecar_path(&a.out);
    io::write_json(
        &side,
        &Sidecar {
            n: a.n,
            p: a.p,
            snr: a.snr.is_finite().then_some(a.snr),
            seed: a.seed,
            sigma_eps: s.sigma_eps,
            f_true: s.f_true,
        },
    )?;
    println!("wrote {} ({} rows) and {}", a.out.display(), a.n, side.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set t_max=100`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    /// File settings, then `--set` overrides; every parse failure and every
    /// out-of-range value is reported together.
    fn resolve(&self) -> Result<RunConfig> {
        let mut pairs = Vec::new();
        let mut bad = Vec::new();
        if let Some(p) = &self.config {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let (ps, more) = split_pairs(&text);
            pairs.extend(ps);
            bad.extend(more.into_iter().map(|m| format!("{}: {m}", p.display())));
        }
        for s in &self.sets {
            match s.split_once('=') {
                Some((k, v)) => pairs.push((k.trim().to_string(), v.trim().to_string())),
                None => bad.push(format!("--set {s}: expected KEY=VALUE")),
            }
        }
        let mut cfg = RunConfig::default();
        if let Err(Error::Config(more)) = cfg.apply(&pairs) {
            bad.extend(more);
        }
        bad.extend(cfg.problems());
        if bad.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Training CSV with a header row.
    #[arg(long, required_unless_present = "replay")]
    data: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Number of chains (overrides the config).
    #[arg(long)]
    chains: Option<usize>,
    /// Base seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Re-run the fit recorded in this manifest and compare draw files.
    #[arg(long, conflicts_with_all = ["data", "config", "sets", "chains", "seed"])]
    replay: Option<PathBuf>,
    /// Output directory for draw files and the manifest.
    #[arg(long)]
    out: PathBuf,
}

fn print_progress(r: &ProgressReport) {
    eprintln!("{}", r.line());
}

fn progress_sink(g: &Global) -> Option<&'static (dyn Fn(&ProgressReport) + Sync)> {
    (!g.quiet).then_some(&print_progress as &(dyn Fn(&ProgressReport) + Sync))
}

fn summarize(m: &RunManifest, out: &Path) {
    for c in &m.chains {
        println!(
            "chain {}: {} draws retained, {} skipped; accept grow {:.3} prune {:.3} change {:.3} z {:.3}",
            c.stream, c.retained, c.skipped, c.acceptance.grow, c.acceptance.prune, c.acceptance.change, c.acceptance.z_flip
        );
    }
    println!("posterior mean sigma2 (original scale): {}", m.sigma2_posterior_mean);
    println!("manifest: {}", out.join(MANIFEST_FILE).display());
}

pub fn fit(a: &FitArgs, g: &Global) -> Result<()> {
    let exec = g.execution();
    if let Some(manifest) = &a.replay {
        let rep = workflow::replay(manifest, &a.out, exec, progress_sink(g))?;
        summarize(&rep.replayed, &a.out);
        if !rep.identical() {
            let files: Vec<String> = rep.mismatched.iter().map(|p| p.display().to_string()).collect();
            return Err(Error::Numeric(format!("replay differs from the recorded run: {}", files.join(", "))));
        }
        println!("replay identical: every draw file matches the recorded hash");
        return Ok(());
    }
    let mut cfg = a.cfg.resolve()?;
    if let Some(c) = a.chains {
        cfg.chains = c;
    }
    if let Some(s) = a.seed {
        cfg.chain.seed = s;
    }
    let data = a.data.as_ref().expect("clap enforces --data");
    let m = workflow::fit_run(data, &cfg, &a.out, exec, progress_sink(g))?;
    if let Some(w) = cfg.hyper.t_max_warning(m.data.n) {
        eprintln!("warning: {w}");
    }
    summarize(&m, &a.out);
    Ok(())
}

#[derive(Args, Debug)]
pub struct DrawsArgs {
    /// A run manifest, or one or more draw files of the same fit.
    #[arg(long, num_args = 1.., required = true)]
    draws: Vec<PathBuf>,
}

impl DrawsArgs {
    fn load(&self) -> Result<(PosteriorDraws, DrawsHeader)> {
        let paths = match self.draws.as_slice() {
            [one] if one.extension().is_some_and(|e| e == "json") => {
                let m: RunManifest = io::read_json(one)?;
                manifest_draw_paths(one, &m)
            }
            many => many.to_vec(),
        };
        io::load_posterior(&paths)
    }
}

fn query(path: &Path, h: &DrawsHeader) -> Result<anova_bart::dataset::QueryMatrix> {
    load_query(path, &h.column_names, Some(&h.response), &h.categorical)
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    draws: DrawsArgs,
    /// Query CSV; the response column is optional.
    #[arg(long)]
    data: PathBuf,
    /// Also write each component's posterior-mean contribution.
    #[arg(long)]
    components: bool,
    /// Output predictions CSV.
    #[arg(long)]
    out: PathBuf,
}

pub fn predict(a: &PredictArgs, g: &Global) -> Result<()> {
    let exec = g.execution();
    let (post, header) = a.draws.load()?;
    let q = query(&a.data, &header)?;
    let pred = predict_mean(&post, &q.rows, exec)?;
    let mut extra = Vec::new();
    if a.components {
        for c in post.components() {
            let name = format!("f[{}]", component_names(&c, &header.column_names));
            extra.push((name, component_predict(&post, &c, &q.rows, exec)?));
        }
    }
    io::write_predictions_csv(&a.out, &pred, q.y.as_deref(), &extra)?;
    println!("wrote {} predictions from {} draws to {}", pred.len(), post.len(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    draws: DrawsArgs,
    /// Labelled CSV to score against.
    #[arg(long)]
    data: PathBuf,
    /// Predictive samples per row for CRPS.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the summary JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Evaluation {
    rows: usize,
    draws: usize,
    rmse: f64,
    crps: f64,
    /// RMSE of predicting the training response mean everywhere.
    baseline_rmse: f64,
    normalized_rmse: f64,
    samples_per_row: usize,
    seed: u64,
}

pub fn evaluate(a: &EvaluateArgs, g: &Global) -> Result<()> {
    let exec = g.execution();
    let (post, header) = a.draws.load()?;
    let q = query(&a.data, &header)?;
    let y = q
        .y
        .as_ref()
        .ok_or_else(|| Error::data(format!("response not found: {}", header.response)))?;
    let pred = predict_mean(&post, &q.rows, exec)?;
    let r = rmse(&pred, y)?;
    let baseline = rmse(&vec![post.standardization.y_mean; y.len()], y)?;
    let summary = Evaluation {
        rows: y.len(),
        draws: post.len(),
        rmse: r,
        crps: mean_crps(&post, &q.rows, y, a.samples, a.seed, exec)?,
        baseline_rmse: baseline,
        normalized_rmse: normalized_metric(&[r], baseline)?[0],
        samples_per_row: a.samples,
        seed: a.seed,
    };
    println!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
    if let Some(out) = &a.out {
        io::write_json(out, &summary)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    draws: DrawsArgs,
    /// The training CSV the draws were fitted on.
    #[arg(long)]
    data: PathBuf,
    /// Norm threshold on the standardized scale; `inf` keeps nothing.
    #[arg(long, default_value_t = anova_bart::posterior::DEFAULT_TAU)]
    tau: f64,
    /// Minimum posterior exceedance probability, in (0, 1/2).
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    /// Per-component scores CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn select(a: &SelectArgs, g: &Global) -> Result<()> {
    if !(a.delta > 0.0 && a.delta < 0.5) {
        return Err(Error::Config(vec![format!("delta must be in (0, 1/2), got {}", a.delta)]));
    }
    if !(a.tau >= 0.0) {
        return Err(Error::Config(vec![format!("tau must be >= 0, got {}", a.tau)]));
    }
    let (post, header) = a.draws.load()?;
    let data = load_csv_with(
        &a.data,
        &CsvOptions {
            response: header.response.clone(),
            categorical: header.categorical.clone(),
        },
    )?;
    if data.column_names() != header.column_names.as_slice() {
        return Err(Error::data("dimension mismatch: columns differ from the fitted data"));
    }
    let (std_data, _) = standardize(&data)?;
    let train = TrainingSet::new(std_data);
    if train.marginals().to_record() != header.marginals {
        return Err(Error::data("training data does not match the data the draws were fitted on"));
    }
    let scores = component_norms(&post, &train, g.execution()).summaries(a.tau);
    println!("component\tvariables\tscore\texceedance\tkept");
    for s in &scores {
        println!(
            "{}\t{}\t{:.4}\t{:.3}\t{}",
            s.component.label(),
            component_names(&s.component, &header.column_names),
            s.score,
            s.exceedance,
            if s.exceedance >= a.delta { "yes" } else { "no" }
        );
    }
    let kept: Vec<String> = scores.iter().filter(|s| s.exceedance >= a.delta).map(|s| s.component.label()).collect();
    println!("kept ({}): {}", kept.len(), kept.join(" "));
    if let Some(out) = &a.out {
        io::write_scores_csv(out, &scores, &header.column_names)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct CvArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Grid file: one `key = v1, v2, ...` line per varied setting.
    #[arg(long)]
    grid: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Seed for the fold assignment.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the full result JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn cv(a: &CvArgs, g: &Global) -> Result<()> {
    let base = a.cfg.resolve()?;
    let text = std::fs::read_to_string(&a.grid).map_err(|e| Error::io(&a.grid, e))?;
    let grid = parse_grid(&text)?;
    let data = load_csv_with(
        &a.data,
        &CsvOptions {
            response: base.response.clone(),
            categorical: base.categorical.clone(),
        },
    )?;
    let res = workflow::cross_validate(&data, &base, &grid, a.k, a.seed, g.execution())?;
    println!("point\tmean_rmse\tsettings");
    for (i, p) in res.points.iter().enumerate() {
        let settings: Vec<String> = p.assignments.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let mark = if i == res.best { " *" } else { "" };
        println!("{i}\t{:.6}\t{}{mark}", p.mean_rmse, settings.join(" "));
    }
    println!("best: point {}", res.best);
    if let Some(out) = &a.out {
        io::write_json(out, &res)?;
    }
    Ok(())
}
