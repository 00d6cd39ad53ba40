use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mmgcn::augment::{mix_pair, sample_mix_weight, smooth_labels, LabelSequence};
use mmgcn::data::{generate_synthetic, load_dataset, perturb_dataset, save_dataset, Dataset};
use mmgcn::metrics::{EvalOptions, EvalReport};
use mmgcn::model::{
    config_digest, encode_weights, estimate_flops, load_weights, threads_from_env, train_with, Mmgcn,
    HISTORY_CSV_HEADER, REFERENCE_GFLOPS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ablation::{run_cell, runs_csv, split_for_ablation, summarize, summary_csv, summary_table, AblationGrid};
use crate::cli::{Cli, Command};
use crate::config::{sha256_json, RunConfig};
use crate::error::CliError;
use crate::evaluation::{check_compatible, evaluate_model, predict_dataset, score};
use crate::output::Outputs;
use crate::report::{predictions_csv, timeline_svg};

pub fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Generate { config, out } => generate(&config, out, seed),
        Command::Train { config, data, out } => train(&config, data, out, seed),
        Command::Eval {
            weights,
            data,
            out,
            ignore_class,
            timeline_sequences,
            identity_predictor,
        } => eval(
            weights.as_deref(),
            &data,
            &out,
            ignore_class,
            timeline_sequences,
            identity_predictor,
            seed,
        ),
        Command::Augment { data, config, out, pair } => augment(&data, &config, &out, &pair, seed),
        Command::Perturb { data, rate, out } => perturb(&data, rate, &out, seed.unwrap_or(0)),
        Command::Robustness {
            weights,
            data,
            rates,
            out,
            ignore_class,
        } => robustness(&weights, &data, &rates, &out, ignore_class, seed.unwrap_or(0)),
        Command::Ablate { grid, data, out } => ablate(&grid, &data, &out, seed),
        Command::Flops { config, out } => flops(&config, out.as_deref(), seed),
        Command::Config { config } => {
            let cfg = RunConfig::resolve(&config)?;
            emit(&format!("{}\n", serde_json::to_string_pretty(&cfg)?))
        }
    }
}

/// Write to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing to stdout"),
        _ => Ok(()),
    }
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (or set `{name}` in the config)")).into())
}

fn dataset_files(ds: &Dataset) -> Vec<String> {
    let mut names = vec!["meta.json".to_string()];
    for i in 0..ds.len() {
        for stem in ["motion", "valid", "visual", "labels"] {
            let ext = match stem {
                "valid" => "bits",
                "labels" => "csv",
                _ => "f64",
            };
            names.push(format!("{stem}_{i}.{ext}"));
        }
    }
    names
}

fn save_recorded(ds: &Dataset, o: &mut Outputs) -> Result<()> {
    save_dataset(ds, o.dir())?;
    for name in dataset_files(ds) {
        o.record(&name)?;
    }
    Ok(())
}

fn load(data: &Path) -> Result<Dataset> {
    let ds = load_dataset(data)?;
    if ds.is_empty() {
        return Err(CliError::Data(format!("{} holds no sequences", data.display())).into());
    }
    Ok(ds)
}

fn check_ignore_class(ignore_class: Option<usize>, ds: &Dataset) -> Result<EvalOptions> {
    if let Some(c) = ignore_class {
        if c >= ds.meta.num_classes {
            return Err(CliError::Usage(format!(
                "--ignore-class {c} is not a class id (dataset has {})",
                ds.meta.num_classes
            ))
            .into());
        }
    }
    Ok(EvalOptions { ignore_class })
}

fn generate(config: &str, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let cfg = RunConfig::resolve(config)?;
    let out = required(out, &cfg.out, "out")?;
    let seed = seed.unwrap_or(cfg.data_seed);
    let ds = generate_synthetic(&cfg.generator, seed)?;
    let mut o = Outputs::create(&out)?;
    save_recorded(&ds, &mut o)?;
    o.finish("generate", seed, sha256_json(&cfg.generator))?;
    println!("wrote {} sequences to {}", ds.len(), out.display());
    Ok(())
}

fn train(config: &str, data: Option<PathBuf>, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::resolve(config)?;
    let data = required(data, &cfg.data, "data")?;
    let out = required(out, &cfg.out, "out")?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let ds = load(&data)?;
    cfg.model.adapt_to(&ds.meta);
    cfg.model.validate()?;
    let epochs = cfg.train.epochs;
    let outcome = train_with(&ds, &cfg.model, &cfg.train, threads_from_env(), |s, _, _| {
        if (s.epoch + 1) % 10 == 0 || s.epoch + 1 == epochs {
            eprintln!(
                "epoch {:>4}/{epochs}  lr {:.2e}  loss {:.5}  train acc {:.4}",
                s.epoch + 1,
                s.learning_rate,
                s.loss,
                s.train_accuracy
            );
        }
        ControlFlow::Continue(())
    })?;
    let mut history = format!("{HISTORY_CSV_HEADER}\n");
    for h in &outcome.history {
        writeln!(history, "{}", h.csv_row()).unwrap();
    }
    let mut o = Outputs::create(&out)?;
    o.input_dir("data", &data)?;
    o.write("weights.bin", &encode_weights(&cfg.model, &outcome.params))?;
    o.write("history.csv", history.as_bytes())?;
    o.write_json("config.json", &cfg)?;
    o.finish("train", cfg.train.seed, cfg.digest())?;
    println!("wrote weights and history to {}", out.display());
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!(
        "accuracy {:.4}  F1 macro {:.4}  micro {:.4}  F1@10 {:.4}  F1@25 {:.4}  F1@50 {:.4}",
        r.accuracy, r.f1_macro, r.f1_micro, r.f1_at_10, r.f1_at_25, r.f1_at_50
    );
}

fn eval(
    weights: Option<&Path>,
    data: &Path,
    out: &Path,
    ignore_class: Option<usize>,
    timeline_sequences: usize,
    identity: bool,
    seed: Option<u64>,
) -> Result<()> {
    let ds = load(data)?;
    let opts = check_ignore_class(ignore_class, &ds)?;
    let mut o = Outputs::create(out)?;
    o.input_dir("data", data)?;
    let (preds, digest) = if identity {
        let preds = ds.sequences.iter().map(|s| s.labels.clone()).collect::<Vec<_>>();
        (preds, sha256_json(&("identity-predictor", opts)))
    } else {
        let w = weights.ok_or_else(|| CliError::Usage("--weights is required".into()))?;
        let (mcfg, params) = load_weights(w)?;
        check_compatible(&mcfg, &ds.meta)?;
        o.input_file("weights", w)?;
        let model = Mmgcn::new(mcfg.clone())?;
        (predict_dataset(&model, &params, &ds)?, sha256_json(&(config_digest(&mcfg), opts)))
    };
    let report = score(&ds, &preds, &opts)?;
    let rows: Vec<(usize, &[usize], &[usize])> = ds
        .sequences
        .iter()
        .zip(&preds)
        .enumerate()
        .map(|(i, (s, p))| (i, s.labels.as_slice(), p.as_slice()))
        .collect();
    o.write_json("report.json", &report)?;
    o.write("report.csv", report.to_csv().as_bytes())?;
    o.write("predictions.csv", predictions_csv(&rows).as_bytes())?;
    let shown = &rows[..timeline_sequences.min(rows.len())];
    o.write("timeline.svg", timeline_svg(shown, &ds.meta.class_names).as_bytes())?;
    o.finish("eval", seed.unwrap_or(0), digest)?;
    print_report(&report.overall);
    Ok(())
}

fn augment(data: &Path, config: &str, out: &Path, pair: &[usize], seed: Option<u64>) -> Result<()> {
    let cfg = RunConfig::resolve(config)?;
    let ds = load(data)?;
    let &[a, b] = pair else {
        return Err(CliError::Usage(format!("--pair takes two indices, got {}", pair.len())).into());
    };
    if a == b || a >= ds.len() || b >= ds.len() {
        return Err(CliError::Usage(format!(
            "--pair needs two distinct indices below {}, got {a},{b}",
            ds.len()
        ))
        .into());
    }
    let seed = seed.unwrap_or(cfg.train.seed);
    let k = ds.meta.num_classes;
    let (sa, sb) = (&ds.sequences[a], &ds.sequences[b]);
    let oa = LabelSequence::one_hot(&sa.labels, k)?;
    let ob = LabelSequence::one_hot(&sb.labels, k)?;
    let ma = smooth_labels(&oa, &cfg.train.smoothing)?;
    let mb = smooth_labels(&ob, &cfg.train.smoothing)?;
    let weight = if cfg.train.mixing.enabled {
        sample_mix_weight(&mut ChaCha8Rng::seed_from_u64(seed), &cfg.train.mixing)?
    } else {
        1.0
    };
    let (_, mixed) = mix_pair(&sa.visual, &ma, &sb.visual, &mb, weight)?;

    let mut csv = String::from("stage,sequence,frame");
    for c in 0..k {
        write!(csv, ",p_{c}").unwrap();
    }
    csv.push_str(",argmax\n");
    let stages = [
        ("original", a.to_string(), &oa),
        ("original", b.to_string(), &ob),
        ("smoothed", a.to_string(), &ma),
        ("smoothed", b.to_string(), &mb),
        ("mixed", format!("{a}+{b}"), &mixed),
    ];
    for (stage, seq, labels) in stages {
        let arg = labels.argmax();
        for (f, row) in labels.probs().data().chunks(k).enumerate() {
            write!(csv, "{stage},{seq},{f}").unwrap();
            for p in row {
                write!(csv, ",{p}").unwrap();
            }
            writeln!(csv, ",{}", arg[f]).unwrap();
        }
    }

    #[derive(Serialize)]
    struct Summary<'a> {
        pair: [usize; 2],
        mix_weight: f64,
        smoothing: &'a mmgcn::augment::SmoothingConfig,
        mixing: &'a mmgcn::augment::MixConfig,
    }
    let mut o = Outputs::create(out)?;
    o.input_dir("data", data)?;
    o.write("labels.csv", csv.as_bytes())?;
    o.write_json(
        "augment.json",
        &Summary {
            pair: [a, b],
            mix_weight: weight,
            smoothing: &cfg.train.smoothing,
            mixing: &cfg.train.mixing,
        },
    )?;
    o.finish("augment", seed, sha256_json(&(&cfg.train.smoothing, &cfg.train.mixing)))?;
    println!("mix weight {weight:.4}; wrote {}", out.join("labels.csv").display());
    Ok(())
}

fn perturb(data: &Path, rate: f64, out: &Path, seed: u64) -> Result<()> {
    let ds = load(data)?;
    let noisy = perturb_dataset(&ds, rate, seed)?;
    if out.canonicalize().ok().is_some_and(|p| data.canonicalize().ok() == Some(p)) {
        return Err(CliError::Usage("--out must differ from --data".into()).into());
    }
    let mut o = Outputs::create(out)?;
    o.input_dir("data", data)?;
    save_recorded(&noisy, &mut o)?;
    o.finish("perturb", seed, sha256_json(&("node_dropout", rate)))?;
    println!("dropped nodes at rate {rate}; wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct RatePoint {
    rate: f64,
    report: EvalReport,
}

fn robustness(
    weights: &Path,
    data: &Path,
    rates: &[f64],
    out: &Path,
    ignore_class: Option<usize>,
    seed: u64,
) -> Result<()> {
    if rates.is_empty() {
        return Err(CliError::Usage("--rates needs at least one value".into()).into());
    }
    let ds = load(data)?;
    let opts = check_ignore_class(ignore_class, &ds)?;
    let (mcfg, params) = load_weights(weights)?;
    check_compatible(&mcfg, &ds.meta)?;
    let model = Mmgcn::new(mcfg.clone())?;
    let mut points = Vec::with_capacity(rates.len());
    let mut csv = String::from("rate,accuracy,f1_macro,f1_micro,f1_at_10,f1_at_25,f1_at_50\n");
    println!("{:>6}{:>10}{:>10}", "rate", "accuracy", "F1@50");
    for &rate in rates {
        let noisy = perturb_dataset(&ds, rate, seed)?;
        let r = evaluate_model(&model, &params, &noisy, &opts)?;
        println!("{rate:>6}{:>10.4}{:>10.4}", r.accuracy, r.f1_at_50);
        writeln!(
            csv,
            "{rate},{},{},{},{},{},{}",
            r.accuracy, r.f1_macro, r.f1_micro, r.f1_at_10, r.f1_at_25, r.f1_at_50
        )
        .unwrap();
        points.push(RatePoint { rate, report: r });
    }
    let mut o = Outputs::create(out)?;
    o.input_dir("data", data)?;
    o.input_file("weights", weights)?;
    o.write("robustness.csv", csv.as_bytes())?;
    o.write_json("robustness.json", &points)?;
    o.finish("robustness", seed, sha256_json(&(config_digest(&mcfg), rates, opts)))?;
    Ok(())
}

fn ablate(grid_spec: &str, data: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut grid = AblationGrid::resolve(grid_spec)?;
    if let Some(s) = seed {
        grid.axes.eval_seed = s;
    }
    let ds = load(data)?;
    let (train_ds, test_ds) = split_for_ablation(&ds, grid.axes.holdout, grid.axes.eval_dropout, grid.axes.eval_seed)?;
    let cells = grid.cells();
    let total = cells.len() * grid.axes.seeds.len();
    let threads = threads_from_env();
    let mut runs = Vec::with_capacity(total);
    for cell in cells {
        for &s in &grid.axes.seeds {
            let run = run_cell(&grid.base, cell, s, &train_ds, &test_ds, threads)
                .with_context(|| format!("ablation cell {cell:?}, seed {s}"))?;
            eprintln!(
                "[{}/{total}] {} mix={} refine={} {} seed {s}: F1@50 {:.4}",
                runs.len() + 1,
                cell.smoothing_code(),
                cell.mixing,
                cell.refinement,
                cell.fusion,
                run.report.f1_at_50
            );
            runs.push(run);
        }
    }
    let summary = summarize(&runs);
    let mut o = Outputs::create(out)?;
    o.input_dir("data", data)?;
    o.write("runs.csv", runs_csv(&runs).as_bytes())?;
    o.write("summary.csv", summary_csv(&summary).as_bytes())?;
    o.write_json("runs.json", &runs)?;
    o.finish("ablate", grid.axes.eval_seed, sha256_json(&(&grid.base, &grid.axes)))?;
    print!("{}", summary_table(&summary));
    Ok(())
}

/// Visual frames per 30 motion frames for each reported row.
pub const FLOPS_RATIOS: [usize; 3] = [1, 2, 30];

pub fn flops_table(cfg: &RunConfig) -> Result<String> {
    let t_m = cfg.generator.t_m;
    if !t_m.is_multiple_of(30) {
        return Err(CliError::Usage(format!("flops needs t_m divisible by 30, got {t_m}")).into());
    }
    let mut csv = String::from(
        "ratio,t_m,t_v,visual_encoder_macs,gcn_macs,refine_macs,classifier_macs,total_macs,gmacs,reference_gflops,relative_to_30_1\n",
    );
    let mut base_total = None;
    for r in FLOPS_RATIOS {
        let t_v = t_m / 30 * r;
        let c = estimate_flops(&cfg.model, t_m, t_v)?;
        let base = *base_total.get_or_insert(c.total);
        let reference = REFERENCE_GFLOPS
            .iter()
            .find(|(tv, _)| t_m == 120 && *tv == t_v)
            .map_or(String::new(), |(_, g)| g.to_string());
        writeln!(
            csv,
            "30:{r},{t_m},{t_v},{},{},{},{},{},{},{reference},{}",
            c.visual_encoder,
            c.gcn,
            c.refine,
            c.classifier,
            c.total,
            c.total as f64 / 1e9,
            c.total as f64 / base as f64
        )
        .unwrap();
    }
    Ok(csv)
}

fn flops(config: &str, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let cfg = RunConfig::resolve(config)?;
    let csv = flops_table(&cfg)?;
    let mut table = format!(
        "{:<7}{:>5}{:>16}{:>14}{:>12}{:>12}{:>16}{:>10}{:>10}{:>8}\n",
        "ratio", "t_v", "visual", "gcn", "refine", "classifier", "total MACs", "GMACs", "ref GF", "x"
    );
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let gmacs: f64 = f[8].parse().unwrap_or(f64::NAN);
        let rel: f64 = f[10].parse().unwrap_or(f64::NAN);
        writeln!(
            table,
            "{:<7}{:>5}{:>16}{:>14}{:>12}{:>12}{:>16}{:>10.3}{:>10}{:>8.2}",
            f[0], f[2], f[3], f[4], f[5], f[6], f[7], gmacs, f[9], rel
        )
        .unwrap();
    }
    table.push_str("reference GFLOPs are the published architecture's figures; this model is far smaller and does not match them\n");
    emit(&table)?;
    if let Some(out) = out {
        let mut o = Outputs::create(out)?;
        o.write("flops.csv", csv.as_bytes())?;
        o.finish("flops", seed.unwrap_or(0), cfg.digest())?;
    }
    Ok(())
}
