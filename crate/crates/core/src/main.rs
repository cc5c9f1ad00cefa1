//! `uhdn` command-line tool: train, predict, eval, gradcheck, ablate, config.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uhdn::dataio::{self, Layout, Sample};
use uhdn::error::{EXIT_NUMERICAL, EXIT_USAGE};
use uhdn::metrics::evaluate;
use uhdn::net::{probabilities, NetworkConfig};
use uhdn::training::{log_to_csv, Trainer};
use uhdn::{ablation, gradcheck, Error, Mask, ProbMap, Result, RunConfig};

#[derive(Parser)]
#[command(name = "uhdn", version, about = "Pavement crack segmentation with a dilated, deeply supervised U-net")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key (repeatable; applied after the file, later wins)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, layout: Option<Layout>) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(l) = layout {
            c.set("layout", layout_name(l))?;
        }
        if let Some(f) = &self.config {
            c.apply_file(f)?;
        }
        for o in &self.set {
            c.apply_override(o)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn layout_name(l: Layout) -> &'static str {
    match l {
        Layout::Cfd => "cfd",
        Layout::AigleRn => "aiglern",
        Layout::Generic => "generic",
    }
}

fn parse_layout(s: &str) -> std::result::Result<Layout, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a CSV loss log
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_layout)]
        layout: Option<Layout>,
        #[arg(long)]
        out: PathBuf,
        /// CSV log path (default: <out>.log.csv)
        #[arg(long)]
        log: Option<PathBuf>,
        /// Train on every sample instead of the training split
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write binary masks (PNG) and optional probability maps (PFM)
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image file or directory of images
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        save_prob: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score PFM probability maps against ground-truth masks
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        margin: Option<u32>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write the JSON report here
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare reverse-mode gradients with central finite differences
    Gradcheck {
        /// `all` or a comma-separated list of op names
        #[arg(long, default_value = "all")]
        ops: String,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and score one model per dilation-rate group
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_layout)]
        layout: Option<Layout>,
        #[arg(long, default_value = "1,2,3,4|1,2,4,8|2,4,8,16")]
        rates: String,
        #[arg(long)]
        epochs: Option<usize>,
        /// Also write the CSV here
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the effective configuration
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_samples(dataset: &Path, layout: Layout) -> Result<Vec<Sample>> {
    let samples = dataio::load_dataset(dataset, layout)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(samples)
}

fn cmd_train(dataset: &Path, layout: Option<Layout>, out: &Path, log: Option<&Path>, all: bool, cfg: &ConfigArgs) -> Result<()> {
    let mut run = cfg.load(layout)?;
    let samples = load_samples(dataset, run.layout)?;
    if !run.is_explicit("batch_size") {
        run.train.batch_size = run.layout.default_batch_size();
    }
    if run.layout == Layout::Generic && !run.is_explicit("in_channels") {
        run.net.in_channels = samples[0].image.c();
    }
    let split = dataio::split(&samples, run.layout, run.train.seed);
    let ids: BTreeSet<&String> = if all { samples.iter().map(|s| &s.id).collect() } else { split.train.iter().collect() };
    let data: Vec<_> = samples.iter().filter(|s| ids.contains(&s.id)).map(|s| s.training_pair()).collect();
    log::info!(
        "training {} on {} images ({} held out), {} epochs",
        run.net.variant_name(),
        data.len(),
        samples.len() - data.len(),
        run.train.max_epochs
    );
    let mut trainer = Trainer::<f32>::new(run.net.clone(), run.train.clone())?;
    for _ in 0..run.train.max_epochs {
        trainer.run_epoch(&data)?;
    }
    dataio::save_checkpoint(&trainer.params, &run.net, out)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("log.csv"));
    write(&log_path, &log_to_csv(&trainer.log))?;
    let split_text = format!("train: {}\ntest: {}\n", split.train.join(","), split.test.join(","));
    write(&out.with_extension("split.txt"), &split_text)?;
    match trainer.log.last() {
        Some(r) => println!("epoch {} mean_loss {:.6} learning_rate {}", r.epoch, r.mean_loss, r.learning_rate),
        None => println!("no epochs run; wrote initial parameters"),
    }
    Ok(())
}

fn image_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = fs::read_dir(input).map_err(|e| Error::Io {
        path: input.to_path_buf(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| ["png", "jpg", "jpeg", "pgm", "ppm", "pnm"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no images found in {}", input.display())));
    }
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_predict(checkpoint: &Path, input: &Path, out: &Path, threshold: Option<f64>, save_prob: bool, cfg: &ConfigArgs) -> Result<()> {
    let run = cfg.load(None)?;
    let (params, stored) = dataio::load_checkpoint(checkpoint)?;
    let net: NetworkConfig = if run.net_explicit() {
        params.check_against(&run.net)?;
        run.net.clone()
    } else {
        stored
    };
    let threshold = threshold.unwrap_or(run.threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let files = image_files(input)?;
    for path in &files {
        let image = dataio::load_image(path, net.in_channels)?;
        let (padded, pad) = dataio::pad_to_multiple(&image, uhdn::net::SPATIAL_MULTIPLE);
        let prob = probabilities(&params, &net, &padded)?.remove(0);
        let id = stem(path);
        dataio::save_mask_png(&prob.binarize(threshold), pad, &out.join(format!("{id}.png")))?;
        if save_prob {
            dataio::save_probmap(&prob, pad, &out.join(format!("{id}.pfm")))?;
        }
        log::info!("{id}: {}x{}", image.h(), image.w());
    }
    println!("wrote {} prediction(s) to {}", files.len(), out.display());
    Ok(())
}

fn files_by_stem(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut v: Vec<(String, PathBuf)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && keep(p))
        .map(|p| (stem(&p), p))
        .collect();
    v.sort();
    Ok(v)
}

fn cmd_eval(pred: &Path, gt: &Path, margin: Option<u32>, threshold: Option<f64>, json: Option<&Path>, cfg: &ConfigArgs) -> Result<()> {
    let run = cfg.load(None)?;
    let margin = margin.unwrap_or(run.margin);
    let threshold = threshold.unwrap_or(run.threshold);
    let preds = files_by_stem(pred, |p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")))?;
    let gts = files_by_stem(gt, |p| p.extension().is_some_and(|e| !e.eq_ignore_ascii_case("pfm")))?;
    let pred_ids: BTreeSet<&String> = preds.iter().map(|(s, _)| s).collect();
    let gt_ids: BTreeSet<&String> = gts.iter().map(|(s, _)| s).collect();
    let no_gt: Vec<&str> = pred_ids.difference(&gt_ids).map(|s| s.as_str()).collect();
    let no_pred: Vec<&str> = gt_ids.difference(&pred_ids).map(|s| s.as_str()).collect();
    if !no_gt.is_empty() || !no_pred.is_empty() {
        return Err(Error::Config(format!(
            "unaligned stems; without ground truth: [{}]; without prediction: [{}]",
            no_gt.join(", "),
            no_pred.join(", ")
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ids = Vec::new();
    let mut probs: Vec<ProbMap> = Vec::new();
    let mut masks: Vec<Mask> = Vec::new();
    for ((id, p), (_, g)) in preds.iter().zip(&gts) {
        ids.push(id.clone());
        probs.push(dataio::load_probmap(p)?);
        masks.push(dataio::load_mask(g)?);
    }
    let report = evaluate(&ids, &probs, &masks, margin, threshold)?;
    let text = report.to_json();
    println!("{text}");
    println!("{}", uhdn::metrics::MetricsReport::CSV_HEADER);
    println!("{}", report.csv_row());
    if let Some(path) = json {
        write(path, &text)?;
    }
    Ok(())
}

fn cmd_gradcheck(ops: &str, trials: usize, seed: u64) -> Result<bool> {
    let names: Vec<String> = ops.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    for n in &names {
        if n != "all" && !gradcheck::OP_NAMES.contains(&n.as_str()) {
            return Err(Error::Config(format!(
                "unknown op '{n}'; available: all, {}",
                gradcheck::OP_NAMES.join(", ")
            )));
        }
    }
    if trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    let reports = gradcheck::check_ops(&names, trials, seed)?;
    let mut ok = true;
    for r in &reports {
        println!(
            "{:<16} {} trials {:>3} elements {:>6} worst_rel_error {:.3e}",
            r.op,
            if r.passed() { "PASS" } else { "FAIL" },
            r.trials,
            r.elements_checked,
            r.worst_error
        );
        if !r.passed() {
            ok = false;
            eprintln!(
                "{}: operand {} element {}: analytic {:e} vs numeric {:e}",
                r.op, r.worst_operand, r.worst_index, r.analytic, r.numeric
            );
        }
    }
    if let Some(w) = reports.iter().max_by(|a, b| a.worst_error.total_cmp(&b.worst_error)) {
        println!(
            "worst: {} operand {} element {} rel_error {:.3e} (tolerance {:e})",
            w.op,
            w.worst_operand,
            w.worst_index,
            w.worst_error,
            gradcheck::TOLERANCE
        );
    }
    Ok(ok)
}

fn cmd_ablate(dataset: &Path, layout: Option<Layout>, rates: &str, epochs: Option<usize>, out: Option<&Path>, cfg: &ConfigArgs) -> Result<()> {
    let groups = ablation::parse_groups(rates)?;
    let mut run = cfg.load(layout)?;
    if let Some(e) = epochs {
        run.train.max_epochs = e;
    }
    let samples = load_samples(dataset, run.layout)?;
    if !run.is_explicit("batch_size") {
        run.train.batch_size = run.layout.default_batch_size();
    }
    if run.layout == Layout::Generic && !run.is_explicit("in_channels") {
        run.net.in_channels = samples[0].image.c();
    }
    let split = dataio::split(&samples, run.layout, run.train.seed);
    let rows = ablation::run(&samples, &split, &groups, &run)?;
    let csv = ablation::to_csv(&rows);
    print!("{csv}");
    if let Some(p) = out {
        write(p, &csv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match &cli.command {
        Command::Train {
            dataset,
            layout,
            out,
            log,
            all,
            cfg,
        } => cmd_train(dataset, *layout, out, log.as_deref(), *all, cfg),
        Command::Predict {
            checkpoint,
            input,
            out,
            threshold,
            save_prob,
            cfg,
        } => cmd_predict(checkpoint, input, out, *threshold, *save_prob, cfg),
        Command::Eval {
            pred,
            gt,
            margin,
            threshold,
            json,
            cfg,
        } => cmd_eval(pred, gt, *margin, *threshold, json.as_deref(), cfg),
        Command::Gradcheck { ops, trials, seed } => match cmd_gradcheck(ops, *trials, *seed) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_NUMERICAL as u8),
            Err(e) => Err(e),
        },
        Command::Ablate {
            dataset,
            layout,
            rates,
            epochs,
            out,
            cfg,
        } => cmd_ablate(dataset, *layout, rates, *epochs, out.as_deref(), cfg),
        Command::Config { cfg } => cfg.load(None).map(|c| print!("{}", c.echo())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
