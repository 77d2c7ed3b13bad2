use std::path::Path;

use serde_json::{json, Value};

use nalign::connect::{barrier_report, profile_csv, sweep, BarrierReport};
use nalign::data::{gen_blobs, gen_polynomial, load_cifar10, load_image_set, normalize, ImageSet, Split};
use nalign::fed::run_federated;
use nalign::lmc::{run_lmc, Treatment};
use nalign::nn::{Dataset, LayeredNetwork};
use nalign::perm::{apply_permutation, simulated_annealing_match, weight_match};
use nalign::theory::bound_check;
use nalign::{checkpoint, Error, Real, Result};

use crate::config::{DataConfig, EvalSplit, ExperimentConfig, MatchMethod, Precision, RebasinSection};
use crate::output::Artifacts;

pub fn load_data<F: Real>(cfg: &DataConfig, cache: &Path) -> Result<(Dataset<F>, Dataset<F>)> {
    let images = |set: ImageSet, norm, limit: Option<usize>| -> Result<(Dataset<F>, Dataset<F>)> {
        let mut train = load_image_set::<F>(cache, set, Split::Train)?;
        if let Some(n) = limit {
            train = train.head(n);
        }
        let test = load_image_set::<F>(cache, set, Split::Test)?;
        normalize(&train, &test, norm)
    };
    match *cfg {
        DataConfig::Poly2 { n, noise_std, seed } | DataConfig::Poly3 { n, noise_std, seed } => {
            let d = gen_polynomial(cfg.poly_kind().expect("polynomial source"), n, noise_std, seed)?.cast();
            Ok((d.clone(), d))
        }
        DataConfig::Blobs { n_classes, n_per_class, test_per_class, dim, separation, seed } => {
            if test_per_class == 0 {
                return Err(Error::config("blobs need test_per_class >= 1"));
            }
            let per = n_per_class + test_per_class;
            let all = gen_blobs(n_classes, per, dim, separation, seed)?.cast::<F>();
            let (mut tr, mut te) = (Vec::new(), Vec::new());
            for c in 0..n_classes {
                tr.extend(c * per..c * per + n_per_class);
                te.extend(c * per + n_per_class..(c + 1) * per);
            }
            Ok((all.select(&tr), all.select(&te)))
        }
        DataConfig::Mnist { normalization, train_limit } => images(ImageSet::Mnist, normalization, train_limit),
        DataConfig::FashionMnist { normalization, train_limit } => {
            images(ImageSet::FashionMnist, normalization, train_limit)
        }
        DataConfig::Cifar10 { normalization, train_limit } => {
            let dir = cache.join("cifar-10-batches-bin");
            let mut train = load_cifar10::<F>(&dir, true)?;
            if let Some(n) = train_limit {
                train = train.head(n);
            }
            let test = load_cifar10::<F>(&dir, false)?;
            normalize(&train, &test, normalization)
        }
    }
}

/// Single precision for image data unless the config says otherwise.
pub fn use_f32(cfg: &ExperimentConfig) -> bool {
    let precision = cfg.train.map(|t| t.precision).unwrap_or_default();
    match precision {
        Precision::F32 => true,
        Precision::F64 => false,
        Precision::Auto => cfg.data.as_ref().is_some_and(DataConfig::is_image),
    }
}

fn eval_split<'a, F: Real>(cfg: &ExperimentConfig, split: EvalSplit, train: &'a Dataset<F>, test: &'a Dataset<F>) -> &'a Dataset<F> {
    match split {
        EvalSplit::Train => train,
        EvalSplit::Test => test,
        EvalSplit::Auto => {
            if cfg.data.as_ref().and_then(DataConfig::poly_kind).is_some() {
                train
            } else {
                test
            }
        }
    }
}

fn barrier_json(r: &BarrierReport) -> Value {
    serde_json::to_value(r).expect("report serializes")
}

pub fn lmc<F: Real>(cfg: &ExperimentConfig, cache: &Path, out: &mut Artifacts) -> Result<Value> {
    let spec = ExperimentConfig::section(&cfg.model, "model", "lmc")?;
    let data = ExperimentConfig::section(&cfg.data, "data", "lmc")?;
    let train_cfg = ExperimentConfig::section(&cfg.train, "train", "lmc")?.train_config();
    let lmc_cfg = ExperimentConfig::section(&cfg.lmc, "lmc", "lmc")?;
    let treatment = cfg.mask.map(|m| m.treatment()).unwrap_or(Treatment::Vanilla);
    let (train, test) = load_data::<F>(data, cache)?;
    let eval = eval_split(cfg, lmc_cfg.eval, &train, &test);
    let seeds = (lmc_cfg.shuffle_seeds[0], lmc_cfg.shuffle_seeds[1]);
    let run = run_lmc(spec, &train, eval, &train_cfg, treatment, seeds, lmc_cfg.grid_size)?;

    out.csv("profile.csv", &profile_csv(&run.profile))?;
    out.json(
        "barrier.json",
        &json!({
            "treatment": treatment,
            "shuffle_seeds": lmc_cfg.shuffle_seeds,
            "endpoint1": run.profile.endpoint1,
            "endpoint2": run.profile.endpoint2,
            "barrier": barrier_json(&run.report),
            "history_a": run.pair.history_a,
            "history_b": run.pair.history_b,
        }),
    )?;
    out.checkpoint("model_a.ckpt", &run.pair.a)?;
    out.checkpoint("model_b.ckpt", &run.pair.b)?;

    let mut summary = json!({
        "loss_barrier": run.report.loss_barrier,
        "acc_barrier": run.report.acc_barrier,
    });
    if let Some(rb) = &lmc_cfg.rebasin {
        summary["rebasin"] = rebasin_pair(&run.pair.a, &run.pair.b, eval, rb, lmc_cfg.grid_size, out)?;
    }
    Ok(summary)
}

fn rebasin_pair<F: Real>(
    a: &LayeredNetwork<F>,
    b: &LayeredNetwork<F>,
    eval: &Dataset<F>,
    rb: &RebasinSection,
    grid: usize,
    out: &mut Artifacts,
) -> Result<Value> {
    let spec = a.spec();
    let loss = eval.default_loss();
    let pre = barrier_report(&sweep(spec, a.params(), b.params(), eval, grid, loss)?)?;
    let mut report = json!({ "pre": barrier_json(&pre) });
    let mut summary = json!({ "pre_loss_barrier": pre.loss_barrier });
    if matches!(rb.method, MatchMethod::Wm | MatchMethod::Both) {
        let wm = weight_match(a, b, rb.max_sweeps, rb.seed)?;
        let aligned = apply_permutation(b, &wm.perm)?;
        let prof = sweep(spec, a.params(), aligned.params(), eval, grid, loss)?;
        let post = barrier_report(&prof)?;
        out.csv("profile_wm.csv", &profile_csv(&prof))?;
        out.json("permutation_wm.json", &wm.perm)?;
        out.checkpoint("model_b_wm.ckpt", &aligned)?;
        summary["wm_loss_barrier"] = json!(post.loss_barrier);
        summary["wm_sweeps"] = json!(wm.sweeps_used);
        report["wm"] = json!({
            "sweeps_used": wm.sweeps_used,
            "converged": wm.converged,
            "objective_trace": wm.objective_trace,
            "post": barrier_json(&post),
        });
    }
    if matches!(rb.method, MatchMethod::Sa | MatchMethod::Both) {
        let sa = simulated_annealing_match(a, b, eval, loss, rb.sa_iters, rb.sa_schedule, rb.seed)?;
        let aligned = apply_permutation(b, &sa.perm)?;
        let prof = sweep(spec, a.params(), aligned.params(), eval, grid, loss)?;
        let post = barrier_report(&prof)?;
        out.csv("profile_sa.csv", &profile_csv(&prof))?;
        out.json("permutation_sa.json", &sa.perm)?;
        summary["sa_loss_barrier"] = json!(post.loss_barrier);
        report["sa"] = json!({
            "iterations": rb.sa_iters,
            "accepted": sa.accepted,
            "schedule": rb.sa_schedule,
            "trace": sa.trace,
            "post": barrier_json(&post),
        });
    }
    out.json("rebasin.json", &report)?;
    Ok(summary)
}

pub fn rebasin<F: Real>(
    cfg: &ExperimentConfig,
    cache: &Path,
    models: (&Path, &Path),
    out: &mut Artifacts,
) -> Result<Value> {
    let data = ExperimentConfig::section(&cfg.data, "data", "rebasin")?;
    let lmc_cfg = ExperimentConfig::section(&cfg.lmc, "lmc", "rebasin")?;
    let rb = ExperimentConfig::section(&lmc_cfg.rebasin, "lmc.rebasin", "rebasin")?;
    let a = checkpoint::load::<F>(models.0)?;
    let b = checkpoint::load::<F>(models.1)?;
    if a.spec().layer_widths != b.spec().layer_widths || a.spec().output_head != b.spec().output_head {
        return Err(Error::config(format!(
            "checkpoint architectures differ: {:?} vs {:?}",
            a.spec().layer_widths,
            b.spec().layer_widths
        )));
    }
    let (train, test) = load_data::<F>(data, cache)?;
    let eval = eval_split(cfg, lmc_cfg.eval, &train, &test);
    rebasin_pair(&a, &b, eval, rb, lmc_cfg.grid_size, out)
}

pub fn fed<F: Real>(cfg: &ExperimentConfig, cache: &Path, out: &mut Artifacts) -> Result<Value> {
    let spec = ExperimentConfig::section(&cfg.model, "model", "fed")?;
    let data = ExperimentConfig::section(&cfg.data, "data", "fed")?;
    let fed_cfg = ExperimentConfig::section(&cfg.fed, "fed", "fed")?;
    let (train, test) = load_data::<F>(data, cache)?;
    let run = run_federated(spec, fed_cfg, &train, &test)?;
    out.csv("rounds.csv", &run.report.csv())?;
    out.json("fed_report.json", &run.report)?;
    out.checkpoint("global.ckpt", &LayeredNetwork::from_params(spec, run.final_params)?)?;
    Ok(json!({
        "method": fed_cfg.method,
        "dir": fed_cfg.dir,
        "final_accuracy": run.report.final_accuracy,
    }))
}

pub fn theory(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let t = ExperimentConfig::section(&cfg.theory, "theory", "theory")?;
    let report = bound_check(&t.params, t.trials, t.seed)?;
    out.json("theory_report.json", &report)?;
    Ok(json!({
        "violation_rate_z": report.violation_rate_z,
        "violation_rate_d1": report.violation_rate_d1,
        "violation_rate_d2": report.violation_rate_d2,
        "spearman": report.monotonicity.spearman,
    }))
}
