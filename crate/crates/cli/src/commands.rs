use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::info;
use qipnet::baselines::{compare_solvers, CompareConfig, IterativeConfig, QbmConfig};
use qipnet::datagen::{
    distribution_beta, distribution_even, distribution_flat, generate_dataset, generate_uniform_test_set, load_dataset,
    roughness_profile, save_dataset, BetaDistribution, DatasetHeader, MeasurementVector, DEFAULT_INTERVALS,
    DEFAULT_PROFILE_SAMPLES,
};
use qipnet::estimate::{
    evaluate, ground_state_samples, interval_boxplots, noise_matching_mean_abs, relative_errors, FidelityReport,
    InverseMap, Metric, Reference,
};
use qipnet::mlp::{
    load_model, save_model, Activation, AdamState, Checkpoint, Loss, Mlp, TrainConfig, TrainData, TrainReport,
};
use qipnet::opsets::{from_selector, OperatorSet};
use qipnet::qcore::{fidelity, ground_state, measure_exact, thermal_state, DensityMatrix, NoiseSpec};
use serde_json::json;

use crate::error::CliError;
use crate::settings::{check_writable, sibling, Resolver};
use crate::table::{read_measurements, write_ground_state_csv, MeasurementRow};
use crate::{BaselineArgs, EstimateArgs, EvalArgs, GenArgs, IngestArgs, ProfileArgs, TrainArgs};

/// Mixed into evaluation seeds so test points never share a random stream
/// with training data generated from the same seed number.
const EVAL_DOMAIN: u64 = 0x6576_616c_7465_7374;
const BOXPLOT_DOMAIN: u64 = 0x626f_7870_6c6f_7473;

fn opset(settings: &mut Resolver, flag: Option<String>) -> Result<(String, OperatorSet), CliError> {
    let selector = settings.required("opset", flag)?;
    let set = from_selector(&selector).map_err(|e| match e {
        qipnet::Error::Contract(msg) => CliError::Usage(msg),
        other => other.into(),
    })?;
    Ok((selector, set))
}

fn usage<T: std::str::FromStr<Err = qipnet::Error>>(raw: &str) -> Result<T, CliError> {
    raw.parse::<T>().map_err(|e| CliError::Usage(e.to_string()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn parse_list(raw: &str, what: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("{what}: {s:?} is not a finite number")))
        })
        .collect()
}

pub fn parse_noise(raw: &str) -> Result<Option<NoiseSpec>, CliError> {
    if raw == "none" {
        return Ok(None);
    }
    let (kind, values) = raw
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("noise {raw:?}: expected none or <kind>:<values>")))?;
    let values = parse_list(values, "noise")?;
    match kind {
        "additive" if values.len() == 1 => Ok(Some(NoiseSpec::Additive { sigma: values[0] })),
        "mult" => Ok(Some(NoiseSpec::Multiplicative { rel_sigma: values })),
        "mult-mean" => Ok(Some(noise_matching_mean_abs(&values))),
        _ => Err(CliError::Usage(format!("noise {raw:?}: unknown kind or wrong value count"))),
    }
}

fn distribution(kind: &str, f_set: &OperatorSet, intervals: usize, samples: usize, seed: u64) -> Result<BetaDistribution, CliError> {
    Ok(match kind {
        "even" => distribution_even(intervals)?,
        "beta" => distribution_beta(&roughness_profile(f_set, intervals, samples, seed)?)?,
        "flat" => distribution_flat(&roughness_profile(f_set, intervals, samples, seed)?)?,
        other => return Err(CliError::Usage(format!("unknown distribution {other:?}; use even, beta or flat"))),
    })
}

fn load_net(path: &Path, f_set: &OperatorSet) -> Result<Mlp, CliError> {
    let net = load_model(path)?;
    if net.input_size() != f_set.len() || net.output_size() != f_set.len() {
        return Err(CliError::Usage(format!(
            "model {} has sizes {:?} but the operator set has {} operators",
            path.display(),
            net.sizes(),
            f_set.len()
        )));
    }
    Ok(net)
}

pub fn profile(args: ProfileArgs, settings: &mut Resolver) -> Result<(), CliError> {
    let (selector, f_set) = opset(settings, args.opset)?;
    let intervals = settings.get("intervals", args.intervals, DEFAULT_INTERVALS)?;
    let samples = settings.get("samples", args.samples, DEFAULT_PROFILE_SAMPLES)?;
    let seed = settings.get("seed", args.seed, 0u64)?;
    let out = settings.required_path("out", args.out)?;
    check_writable(&out)?;

    let lambda = roughness_profile(&f_set, intervals, samples, seed)?;
    let even = distribution_even(intervals)?;
    let beta = distribution_beta(&lambda)?;
    let flat = distribution_flat(&lambda)?;
    write_json(
        &out,
        &json!({
            "opset": selector,
            "intervals": intervals,
            "samples": samples,
            "seed": seed,
            "lambda_bar": lambda,
            "p_even": even.weights(),
            "p_beta": beta.weights(),
            "p_flat": flat.weights(),
        }),
    )?;
    let csv_path = sibling(&out, "csv");
    let mut w = create(&csv_path)?;
    let io = |e| CliError::io(&csv_path, e);
    writeln!(w, "interval,lambda_bar,p_even,p_beta,p_flat").map_err(io)?;
    for i in 0..intervals {
        writeln!(w, "{i},{},{},{},{}", lambda[i], even.weights()[i], beta.weights()[i], flat.weights()[i]).map_err(io)?;
    }
    w.flush().map_err(io)?;
    settings.write_snapshot(&out)?;
    println!("profile: {intervals} intervals x {samples} samples -> {}", out.display());
    Ok(())
}

pub fn gen(args: GenArgs, settings: &mut Resolver) -> Result<(), CliError> {
    let (selector, f_set) = opset(settings, args.opset)?;
    let count = settings.required("count", args.count)?;
    let seed = settings.get("seed", args.seed, 0u64)?;
    let noise = parse_noise(&settings.get("noise", args.noise, "none".to_string())?)?;
    let ground = settings.get("ground-states", args.ground_states, false)?;
    let out = settings.required_path("out", args.out)?;
    check_writable(&out)?;
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }

    if ground {
        let samples = ground_state_samples(&f_set, count, noise.as_ref(), seed)?;
        let rows: Vec<(Vec<f64>, Vec<f64>)> =
            samples.into_iter().map(|s| (s.measured.values().to_vec(), s.direction)).collect();
        write_ground_state_csv(&out, &rows)?;
    } else {
        let kind = settings.get("dist", args.dist, "flat".to_string())?;
        let intervals = settings.get("intervals", args.intervals, DEFAULT_INTERVALS)?;
        let samples = settings.get("samples", args.samples, DEFAULT_PROFILE_SAMPLES)?;
        let profile_seed = settings.get("profile-seed", args.profile_seed, 1u64)?;
        let dist = distribution(&kind, &f_set, intervals, samples, profile_seed)?;
        let pairs = generate_dataset(&f_set, &dist, count, noise.as_ref(), seed)?;
        save_dataset(&out, &DatasetHeader::new(f_set.len(), f_set.dim(), selector), &pairs)?;
    }
    settings.write_snapshot(&out)?;
    println!("count={count} m={} dim={} seed={seed}", f_set.len(), f_set.dim());
    Ok(())
}

pub fn train(args: TrainArgs, settings: &mut Resolver, workers: usize) -> Result<(), CliError> {
    let data_path = settings.required_path("data", args.data)?;
    let out = settings.required_path("out", args.out)?;
    let hidden_raw = settings.get("hidden", args.hidden, "100,100".to_string())?;
    let activation: Activation = usage(&settings.get("activation", args.activation, "relu".to_string())?)?;
    let loss: Loss = usage(&settings.get("loss", args.loss, "mae".to_string())?)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        batch_size: settings.get("batch-size", args.batch_size, defaults.batch_size)?,
        epochs: settings.get("epochs", args.epochs, defaults.epochs)?,
        learning_rate: settings.get("lr", args.lr, defaults.learning_rate)?,
        final_lr_fraction: settings.get("final-lr-fraction", args.final_lr_fraction, defaults.final_lr_fraction)?,
        loss,
        shuffle_seed: settings.get("shuffle-seed", args.shuffle_seed, 0u64)?,
        holdout: settings.get("holdout", args.holdout, 0.0)?,
        workers,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let init_seed = settings.get("init-seed", args.init_seed, 0u64)?;
    let checkpoint = settings.path("checkpoint", args.checkpoint)?;
    let every = settings.get("checkpoint-every", args.checkpoint_every, 1usize)?.max(1);
    let resume = settings.path("resume", args.resume)?;
    check_writable(&out)?;
    if let Some(c) = &checkpoint {
        check_writable(c)?;
    }

    let (header, pairs) = load_dataset(&data_path)?;
    let data = TrainData::from_pairs(&pairs)?;
    let hidden: Vec<usize> = hidden_raw
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("hidden: {s:?} is not a width"))))
        .collect::<Result<_, _>>()?;
    let sizes: Vec<usize> = std::iter::once(header.m).chain(hidden).chain(std::iter::once(header.m)).collect();

    let (mut net, mut adam, mut report, start) = match &resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.net.sizes() != sizes.as_slice() || ck.net.activation() != activation {
                return Err(CliError::Usage(format!(
                    "checkpoint network {:?} does not match the requested {:?}",
                    ck.net.sizes(),
                    sizes
                )));
            }
            info!("resuming after epoch {}", ck.epochs_done);
            (ck.net, ck.adam, ck.report, ck.epochs_done)
        }
        None => {
            let net = Mlp::new(&sizes, activation, init_seed).map_err(|e| CliError::Usage(e.to_string()))?;
            let adam = AdamState::new(&net, cfg.learning_rate);
            (net, adam, TrainReport::default(), 0)
        }
    };
    if start > cfg.epochs {
        return Err(CliError::Usage(format!("checkpoint is at epoch {start}, beyond --epochs {}", cfg.epochs)));
    }

    let started = Instant::now();
    qipnet::mlp::train_epochs(&mut net, &data, &cfg, &mut adam, start..cfg.epochs, &mut report, |epoch, n, a, r| {
        info!("epoch {} loss {:.6}", epoch + 1, r.loss_history[epoch]);
        if let Some(path) = &checkpoint {
            if (epoch + 1) % every == 0 || epoch + 1 == cfg.epochs {
                Checkpoint {
                    net: n.clone(),
                    adam: a.clone(),
                    epochs_done: epoch + 1,
                    report: r.clone(),
                }
                .save(path)?;
            }
        }
        Ok(())
    })?;

    save_model(&net, &out)?;
    let loss_path = sibling(&out, "loss.csv");
    let mut w = create(&loss_path)?;
    let io = |e| CliError::io(&loss_path, e);
    if report.holdout_history.is_empty() {
        writeln!(w, "epoch,loss").map_err(io)?;
    } else {
        writeln!(w, "epoch,loss,holdout_loss").map_err(io)?;
    }
    for (e, l) in report.loss_history.iter().enumerate() {
        match report.holdout_history.get(e) {
            Some(h) => writeln!(w, "{},{l},{h}", e + 1),
            None => writeln!(w, "{},{l}", e + 1),
        }
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    settings.write_snapshot(&out)?;
    println!(
        "trained {:?} on {} pairs for {} epochs in {:.1} s, final loss {:.6}",
        sizes,
        data.len(),
        cfg.epochs,
        started.elapsed().as_secs_f64(),
        report.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn report_line(r: &FidelityReport) -> String {
    format!(
        "n={} mean={:.6} median={:.6} std={:.3e} outliers={}",
        r.len(),
        r.mean,
        r.median,
        r.std,
        r.outliers.len()
    )
}

pub fn eval(args: EvalArgs, settings: &mut Resolver) -> Result<(), CliError> {
    let model = settings.required_path("model", args.model)?;
    let (_, f_set) = opset(settings, args.opset)?;
    let out = settings.required_path("out", args.out)?;
    let data = settings.path("data", args.data)?;
    let seed = settings.get("seed", args.seed, 1u64)?;
    let train_seed = settings.opt("train-seed", args.train_seed)?;
    let intervals = settings.get("intervals", args.intervals, DEFAULT_INTERVALS)?;
    let per_interval = settings.get("per-interval", args.per_interval, 50usize)?;
    let group = settings.get("group", args.group, 5usize)?;
    check_writable(&out)?;
    if train_seed == Some(seed) {
        return Err(CliError::Usage(format!("test seed {seed} equals the training seed; choose another --seed")));
    }
    let net = load_net(&model, &f_set)?;

    let pairs = match data {
        Some(path) => {
            let (header, pairs) = load_dataset(&path)?;
            if header.m != f_set.len() || header.dim != f_set.dim() {
                return Err(CliError::Usage("test dataset does not match the operator set".into()));
            }
            pairs
        }
        None => {
            let count = settings.get("count", args.count, 1000usize)?;
            let beta_max = settings.get("beta-max", args.beta_max, 100usize)?;
            generate_uniform_test_set(&f_set, count, beta_max, seed ^ EVAL_DOMAIN)?
        }
    };
    let report = evaluate(&net, &f_set, &pairs)?;
    write_json(&out, &report)?;
    let fid_path = sibling(&out, "fidelities.csv");
    let mut w = create(&fid_path)?;
    report.write_csv(&mut w).map_err(|e| CliError::io(&fid_path, e))?;
    w.flush().map_err(|e| CliError::io(&fid_path, e))?;
    println!("uniform test: {}", report_line(&report));

    if intervals > 0 {
        let groups = interval_boxplots(&net, &f_set, intervals, per_interval, group, seed ^ BOXPLOT_DOMAIN)?;
        let path = sibling(&out, "intervals.csv");
        let mut w = create(&path)?;
        let io = |e| CliError::io(&path, e);
        writeln!(w, "beta_lo,beta_hi,count,mean,median,std,q1,q3,outliers").map_err(io)?;
        for g in &groups {
            let r = &g.report;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                g.beta_lo,
                g.beta_hi,
                r.len(),
                r.mean,
                r.median,
                r.std,
                r.q1,
                r.q3,
                r.outliers.len()
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)?;
        let points = sibling(&out, "interval_points.csv");
        let mut w = create(&points)?;
        let io = |e| CliError::io(&points, e);
        writeln!(w, "beta_lo,beta_hi,fidelity").map_err(io)?;
        for g in &groups {
            for f in &g.report.fidelities {
                writeln!(w, "{},{},{f}", g.beta_lo, g.beta_hi).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
        let worst = groups
            .iter()
            .min_by(|a, b| a.report.mean.total_cmp(&b.report.mean))
            .expect("at least one group");
        println!(
            "interval groups: {} (worst ({}, {}] mean={:.6})",
            groups.len(),
            worst.beta_lo,
            worst.beta_hi,
            worst.report.mean
        );
    }
    settings.write_snapshot(&out)?;
    Ok(())
}

pub fn estimate(args: EstimateArgs, settings: &mut Resolver) -> Result<(), CliError> {
    let model = settings.required_path("model", args.model)?;
    let (_, f_set) = opset(settings, args.opset)?;
    let metric: Metric = usage(&settings.get("metric", args.metric, "l2".to_string())?)?;
    let single = settings.opt("c", args.c)?;
    let csv = settings.path("csv", args.csv)?;
    let out = settings.path("out", args.out)?;
    if let Some(o) = &out {
        check_writable(o)?;
    }
    let net = load_net(&model, &f_set)?;

    match (single, csv) {
        (Some(raw), None) => {
            let c = MeasurementVector::new(parse_list(&raw, "c")?).map_err(|e| CliError::Usage(e.to_string()))?;
            if c.len() != f_set.len() {
                return Err(CliError::Usage(format!("{} values for {} operators", c.len(), f_set.len())));
            }
            let (theta, rho) = qipnet::estimate::estimate_state(&net, &f_set, &c)?;
            let reconstructed = measure_exact(&rho, &f_set)?;
            let residual = metric.distance(c.values(), &reconstructed);
            let doc = json!({
                "theta": theta.theta(),
                "rho": rho,
                "reconstructed": reconstructed,
                "metric": metric,
                "residual": residual,
            });
            match &out {
                Some(path) => {
                    write_json(path, &doc)?;
                    settings.write_snapshot(path)?;
                }
                None => println!("{}", serde_json::to_string_pretty(&doc).expect("serializable")),
            }
            Ok(())
        }
        (None, Some(path)) => {
            let rows = read_measurements(&path, f_set.len())?;
            let inputs: Vec<&[f64]> = rows.iter().map(|r| r.c.as_slice()).collect();
            let started = Instant::now();
            let thetas = net.infer_batch(&inputs)?;
            let seconds = started.elapsed().as_secs_f64();
            eprintln!("inferred {} vectors in {seconds:.4} s", rows.len());
            let mut lines = Vec::with_capacity(rows.len() + 1);
            let m = f_set.len();
            let header: Vec<String> = std::iter::once("line".to_string())
                .chain((1..=m).map(|i| format!("theta{i}")))
                .chain(std::iter::once("residual".to_string()))
                .collect();
            lines.push(header.join(","));
            for (row, theta) in rows.iter().zip(&thetas) {
                let rho = thermal_state(&f_set, theta)?;
                let residual = metric.distance(&row.c, &measure_exact(&rho, &f_set)?);
                let fields: Vec<String> = std::iter::once(row.line.to_string())
                    .chain(theta.iter().map(|t| t.to_string()))
                    .chain(std::iter::once(residual.to_string()))
                    .collect();
                lines.push(fields.join(","));
            }
            let text = lines.join("\n") + "\n";
            match &out {
                Some(o) => {
                    std::fs::write(o, text).map_err(|e| CliError::io(o, e))?;
                    settings.write_snapshot(o)?;
                }
                None => print!("{text}"),
            }
            Ok(())
        }
        _ => Err(CliError::Usage("give exactly one of --c or --csv".into())),
    }
}

pub fn baseline(args: BaselineArgs, settings: &mut Resolver) -> Result<(), CliError> {
    let (_, f_set) = opset(settings, args.opset)?;
    let count = settings.get("count", args.count, 20usize)?;
    let seed = settings.get("seed", args.seed, 0u64)?;
    let beta_max = settings.get("beta-max", args.beta_max, 10usize)?;
    let model = settings.path("model", args.model)?;
    let solvers = settings.get("solvers", args.solvers, "iterative,qbm".to_string())?;
    let out = settings.required_path("out", args.out)?;
    check_writable(&out)?;

    let mut cfg = CompareConfig::default();
    for name in solvers.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match name {
            "iterative" => {
                let d = IterativeConfig::default();
                cfg.iterative = Some(IterativeConfig {
                    error_bound: settings.get("error-bound", args.error_bound, d.error_bound)?,
                    max_sweeps: settings.get("max-sweeps", args.max_sweeps, d.max_sweeps)?,
                    damping: settings.get("damping", args.damping, d.damping)?,
                });
            }
            "qbm" => {
                let d = QbmConfig::default();
                cfg.qbm = Some(QbmConfig {
                    learning_rate: settings.get("qbm-lr", args.qbm_lr, d.learning_rate)?,
                    iterations: settings.get("qbm-iterations", args.qbm_iterations, d.iterations)?,
                    fd_step: settings.get("fd-step", args.fd_step, d.fd_step)?,
                });
            }
            other => return Err(CliError::Usage(format!("unknown solver {other:?}"))),
        }
    }
    if let Some(c) = &cfg.iterative {
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(c) = &cfg.qbm {
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let net = model.map(|p| load_net(&p, &f_set)).transpose()?;
    let pairs = generate_uniform_test_set(&f_set, count, beta_max, seed)?;
    let report = compare_solvers(&f_set, &pairs, net.as_ref(), &cfg)?;

    let mut doc = serde_json::to_value(&report).expect("serializable");
    if let (Some(it), Some(qbm)) = (report.solver("iterative"), report.solver("qbm")) {
        if it.failures == 0 && qbm.failures == 0 {
            if let (Some(fi), Some(fq)) = (&it.fidelity, &qbm.fidelity) {
                let below = fi.fidelities.iter().zip(&fq.fidelities).filter(|(a, b)| b < a).count();
                let fraction = below as f64 / fi.len() as f64;
                doc["qbm_below_iterative_fraction"] = json!(fraction);
                println!("qbm fidelity below iterative on {below} of {} points", fi.len());
            }
        }
    }
    write_json(&out, &doc)?;
    for s in &report.solvers {
        let fid = s.fidelity.as_ref().map_or_else(|| "no successful points".to_string(), report_line);
        println!(
            "{}: {} failures={} wall={:.3}s ({:.3e} s/point)",
            s.name, fid, s.failures, s.wall_clock_seconds, s.seconds_per_point
        );
    }
    settings.write_snapshot(&out)?;
    Ok(())
}

fn reference_states(
    rows: &[MeasurementRow],
    f_set: &OperatorSet,
    states: Option<&Path>,
) -> Result<Option<(Reference, Vec<DensityMatrix>)>, CliError> {
    let has_a = rows[0].direction.is_some();
    let has_theta = rows[0].theta.is_some();
    match (has_a, has_theta, states) {
        (false, false, None) => Ok(None),
        (true, false, None) => Ok(Some((
            Reference::GroundState,
            rows.iter()
                .map(|r| ground_state(f_set, r.direction.as_deref().expect("column group present")))
                .collect::<Result<_, _>>()?,
        ))),
        (false, true, None) => Ok(Some((
            Reference::Mee,
            rows.iter()
                .map(|r| thermal_state(f_set, r.theta.as_deref().expect("column group present")))
                .collect::<Result<_, _>>()?,
        ))),
        (false, false, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let list: Vec<DensityMatrix> = serde_json::from_str(&text).map_err(|e| CliError::Csv {
                path: path.to_path_buf(),
                row: e.line(),
                message: e.to_string(),
            })?;
            if list.len() != rows.len() || list.iter().any(|s| s.dim() != f_set.dim()) {
                return Err(CliError::Usage(format!(
                    "{} reference states of the wrong count or dimension for {} rows",
                    list.len(),
                    rows.len()
                )));
            }
            Ok(Some((Reference::Explicit, list)))
        }
        _ => Err(CliError::Usage("give at most one ground-truth source (a-columns, theta-columns or --states)".into())),
    }
}

pub fn ingest(args: IngestArgs, settings: &mut Resolver) -> Result<(), CliError> {
    let (_, f_set) = opset(settings, args.opset)?;
    let csv = settings.required_path("csv", args.csv)?;
    let model = settings.required_path("model", args.model)?;
    let states = settings.path("states", args.states)?;
    let metric: Metric = usage(&settings.get("metric", args.metric, "l2".to_string())?)?;
    let out = settings.required_path("out", args.out)?;
    check_writable(&out)?;
    let net = load_net(&model, &f_set)?;
    let rows = read_measurements(&csv, f_set.len())?;
    let truth = reference_states(&rows, &f_set, states.as_deref())?;

    let m = f_set.len();
    let mut per_row = Vec::with_capacity(rows.len());
    let mut fids = Vec::new();
    let mut abs_sums = vec![0.0; m];
    let mut defined = vec![0usize; m];
    for (k, row) in rows.iter().enumerate() {
        let c = MeasurementVector::new(row.c.clone())?;
        let (theta, rho) = qipnet::estimate::estimate_state(&net, &f_set, &c)?;
        let residual = metric.distance(&row.c, &measure_exact(&rho, &f_set)?);
        let mut entry = json!({"line": row.line, "theta": theta.theta(), "residual": residual});
        if let Some((_, refs)) = &truth {
            let f = fidelity(&rho, &refs[k])?;
            let errs = relative_errors(&refs[k], &f_set, &row.c)?;
            for (i, e) in errs.iter().enumerate() {
                if let Some(v) = e {
                    abs_sums[i] += v.abs();
                    defined[i] += 1;
                }
            }
            entry["fidelity"] = json!(f);
            entry["relative_errors"] = json!(errs);
            fids.push(f);
        }
        per_row.push(entry);
    }

    let mut doc = json!({ "metric": metric, "rows": per_row });
    if let Some((reference, _)) = &truth {
        let report = FidelityReport::from_fidelities(fids, *reference)?;
        println!("fidelity vs {:?}: {}", reference, report_line(&report));
        let table: Vec<_> = f_set
            .labels()
            .iter()
            .enumerate()
            .map(|(i, label)| {
                let mean = (defined[i] > 0).then(|| abs_sums[i] / defined[i] as f64);
                json!({"label": label, "mean_abs_relative_error": mean, "defined_rows": defined[i]})
            })
            .collect();
        println!("average relative errors:");
        for (i, label) in f_set.labels().iter().enumerate() {
            match defined[i] {
                0 => println!("  {label}: undefined"),
                n => println!("  {label}: {:.2}%", 100.0 * abs_sums[i] / n as f64),
            }
        }
        doc["fidelity"] = serde_json::to_value(&report).expect("serializable");
        doc["relative_error_table"] = json!(table);
    } else {
        println!("no ground truth given; reporting estimates and residuals only");
    }
    write_json(&out, &doc)?;
    settings.write_snapshot(&out)?;
    println!("{} rows -> {}", rows.len(), out.display());
    Ok(())
}
