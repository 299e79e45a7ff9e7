//! The `mtrl` command line: degrade, train, enhance, eval.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointConfig};
use crate::dataset::{load_training_set, TRAIN_RATIO};
use crate::degradation::{degrade, eval_preset, DegradationSpec, SplitManifest};
use crate::error::{Error, Result};
use crate::io::{list_images, load_image, save_image, stem};
use crate::metrics::{psnr, ssim, ScoreTable};
use crate::model::{Model, ModelConfig};
use crate::rng::Stream;
use crate::stats::{paired_tests, stars};
use crate::train::{loss_log_csv, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "mtrl",
    version,
    about = "Fundus image enhancement: degrade, train, enhance, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize degraded copies of every image in a directory.
    Degrade(DegradeArgs),
    /// Train on high-quality images with synthetic degradations.
    Train(TrainArgs),
    /// Enhance every image in a directory with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Score predictions against references (SSIM, PSNR).
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Eight fixed variants per image, written as `<name>__d0.png` .. `<name>__d7.png`.
    Eval8,
}

#[derive(Args, Debug)]
struct DegradeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Run seed; each image derives its own seed from this and its file name.
    /// A seed inside a --spec file is ignored.
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, conflicts_with = "spec")]
    preset: Option<Preset>,
    /// JSON degradation spec applied once per image (output keeps the file name).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Where to write the train/test split of the inputs (`path,split,seed`).
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory of high-quality images, or a manifest CSV (train rows are used).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model_config: PathBuf,
    #[arg(long)]
    train_config: PathBuf,
    /// Checkpoint path; the loss log goes to `<out>.loss.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also write the high-frequency head as `<name>_hf.png`.
    #[arg(long)]
    save_hf: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions; `<name>__<tag>.png` is matched to reference `<name>`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref", value_name = "REF")]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Earlier scores CSV to compare against with paired tests.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "t,wilcoxon")]
    tests: Vec<TestKind>,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum TestKind {
    T,
    Wilcoxon,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Worker count from `MTRL_THREADS` (default 1).
fn threads() -> Result<usize> {
    match std::env::var("MTRL_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("MTRL_THREADS must be a positive integer, got `{v}`"))),
    }
}

fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads()?)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Degrade(a) => cmd_degrade(a),
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn nonempty_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::Dataset(format!("{}: no images", dir.display())));
    }
    Ok(paths)
}

/// Seed of one image, independent of directory order.
fn image_seed(run_seed: u64, name: &str) -> u64 {
    Stream::new(run_seed).named(name).key()
}

fn cmd_degrade(a: DegradeArgs) -> Result<()> {
    let paths = nonempty_images(&a.input)?;
    let custom = a
        .spec
        .as_deref()
        .map(|p| DegradationSpec::from_json(&read_text(p)?))
        .transpose()?;
    create_dir(&a.output)?;
    let written = par_map(&paths, |p| {
        let name = stem(p)?;
        let img = load_image(p)?;
        let seed = image_seed(a.seed, &name);
        let jobs: Vec<(String, DegradationSpec)> = match &custom {
            Some(spec) => vec![(format!("{name}.png"), DegradationSpec::new(spec.ops.clone(), seed))],
            None => eval_preset(seed)
                .into_iter()
                .enumerate()
                .map(|(k, s)| (format!("{name}__d{k}.png"), s))
                .collect(),
        };
        for (file, spec) in &jobs {
            save_image(&degrade(&img, spec)?, &a.output.join(file))?;
        }
        Ok(jobs.len())
    })?;
    let manifest = SplitManifest::new(paths.clone(), TRAIN_RATIO, a.seed)?;
    write_text(&a.manifest, &manifest.to_csv())?;
    println!(
        "degraded {} images into {} files in {}",
        paths.len(),
        written.iter().sum::<usize>(),
        a.output.display()
    );
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn loss_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let model_cfg: ModelConfig = read_json(&a.model_config)?;
    model_cfg.validate()?;
    let train_cfg: TrainConfig = read_json(&a.train_config)?;
    train_cfg.validate()?;
    let images = load_training_set(&a.data, train_cfg.image_size)?;
    let model = Model::new(model_cfg.clone())?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let (params, ck) = load_checkpoint(p)?;
            if ck.model != model_cfg {
                return Err(Error::Config(format!(
                    "{}: checkpoint model config differs from {}",
                    p.display(),
                    a.model_config.display()
                )));
            }
            let mut t = Trainer::with_params(model, train_cfg.clone(), images, params)?;
            t.set_epoch(ck.epoch);
            t
        }
        None => {
            let params = model.init_params();
            Trainer::with_params(model, train_cfg.clone(), images, params)?
        }
    };
    let save = |t: &Trainer| {
        let cfg = CheckpointConfig {
            model: model_cfg.clone(),
            train: train_cfg.clone(),
            epoch: t.epoch(),
        };
        save_checkpoint(t.params(), &cfg, &a.out)
    };
    trainer.run(|t| {
        if let Some(r) = t.log().last() {
            println!(
                "epoch {}/{}  L_h {:.5}  L_r {:.5}  L_t {:.5}  lr {:.2e}",
                t.epoch(),
                train_cfg.epochs,
                r.l_h,
                r.l_r,
                r.l_t,
                r.lr
            );
        }
        if train_cfg.save_every > 0 && t.epoch() % train_cfg.save_every == 0 {
            save(t)?;
        }
        Ok(())
    })?;
    save(&trainer)?;
    write_text(&loss_log_path(&a.out), &loss_log_csv(trainer.log()))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_enhance(a: EnhanceArgs) -> Result<()> {
    let (params, ck) = load_checkpoint(&a.ckpt)?;
    let model = Model::new(ck.model)?;
    let paths = nonempty_images(&a.input)?;
    create_dir(&a.output)?;
    par_map(&paths, |p| {
        let name = stem(p)?;
        let (p_h, p_r) = model.forward(&load_image(p)?, &params)?;
        save_image(&p_r, &a.output.join(format!("{name}.png")))?;
        if a.save_hf {
            save_image(&p_h, &a.output.join(format!("{name}_hf.png")))?;
        }
        Ok(())
    })?;
    println!("enhanced {} images into {}", paths.len(), a.output.display());
    Ok(())
}

/// Reference name for a prediction: the part before `__`, if any.
fn reference_name(pred: &str) -> &str {
    pred.split("__").next().unwrap_or(pred)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let preds = nonempty_images(&a.pred)?;
    let refs = list_images(&a.reference)?;
    let method = a
        .pred
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "pred".into());
    let mut pairs = Vec::new();
    let mut missing = Vec::new();
    for p in &preds {
        let name = stem(p)?;
        let want = reference_name(&name).to_string();
        match refs.iter().find(|r| stem(r).ok().as_deref() == Some(want.as_str())) {
            Some(r) => pairs.push((name, p.clone(), r.clone())),
            None => missing.push(want),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no reference for {}",
            a.reference.display(),
            missing.join(", ")
        )));
    }
    let scores = par_map(&pairs, |(_, p, r)| {
        let (x, y) = (load_image(p)?, load_image(r)?);
        Ok((ssim(&x, &y)?, psnr(&x, &y)?))
    })?;
    let mut table = ScoreTable::default();
    for ((name, _, _), (s, q)) in pairs.iter().zip(scores) {
        table.push(name.clone(), method.clone(), s, q);
    }
    write_text(&a.out, &table.to_csv())?;
    println!(
        "{method}: n = {}  SSIM {}  PSNR {} dB",
        table.rows.len(),
        table.ssim_summary(&method),
        table.psnr_summary(&method)
    );
    if let Some(b) = &a.baseline {
        compare(&table, &ScoreTable::from_csv(&read_text(b)?)?, &a.tests)?;
    }
    Ok(())
}

fn compare(table: &ScoreTable, baseline: &ScoreTable, tests: &[TestKind]) -> Result<()> {
    let mut cur = (Vec::new(), Vec::new());
    let mut base = (Vec::new(), Vec::new());
    for r in &table.rows {
        let b = baseline
            .rows
            .iter()
            .find(|b| b.image == r.image)
            .ok_or_else(|| Error::Dataset(format!("baseline has no row for `{}`", r.image)))?;
        cur.0.push(r.ssim);
        cur.1.push(r.psnr);
        base.0.push(b.ssim);
        base.1.push(b.psnr);
    }
    for (metric, x, y) in [("SSIM", &cur.0, &base.0), ("PSNR", &cur.1, &base.1)] {
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            println!("{metric}: skipped paired tests (infinite values)");
            continue;
        }
        let r = paired_tests(x, y)?;
        let mut line = format!("{metric}: mean diff {:+.6} (n = {})", r.mean_diff, r.n);
        if tests.contains(&TestKind::T) {
            line += &format!("  t p = {:.3e} {}", r.t_p, stars(r.t_p));
        }
        if tests.contains(&TestKind::Wilcoxon) {
            line += &format!("  wilcoxon p = {:.3e} {} ({:?})", r.w_p, stars(r.w_p), r.w_method);
        }
        println!("{}", line.trim_end());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["mtrl", "degrade", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["mtrl"]), EXIT_USAGE);
        assert_eq!(run(["mtrl", "eval", "--help"]), EXIT_OK);
    }

    #[test]
    fn reference_names() {
        assert_eq!(reference_name("eye__d3"), "eye");
        assert_eq!(reference_name("eye"), "eye");
    }

    #[test]
    fn loss_log_next_to_checkpoint() {
        assert_eq!(loss_log_path(Path::new("runs/a.ckpt")), PathBuf::from("runs/a.ckpt.loss.csv"));
    }
}
