//! `elmformer` command-line tool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use elmformer::bayer::{read_raw, simple_isp, write_ppm, write_raw, IspParams, NoiseModel};
use elmformer::evaluation::{attention_sweep, attention_sweep_markdown, eval_pair, flops_model, model_flops_markdown};
use elmformer::kv::KeyValues;
use elmformer::network::{build, forward, load_checkpoint, save_checkpoint};
use elmformer::training::{train_with_progress, write_dataset, DatasetSpec, Manifest, TrainConfig};

const ERROR_PREFIX: &str = "elmformer-error:";

#[derive(Parser)]
#[command(name = "elmformer", version, about = "Raw Bayer denoising with a locally multiplicative window transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic clean/noisy raw pairs and a manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        size: usize,
        #[arg(long, value_parser = ["awgn", "uniform", "shotread"])]
        noise: String,
        /// Comma-separated `key=value` list, e.g. `sigma=0.1` or `shot=0.01,read=0.002`.
        #[arg(long, default_value = "")]
        params: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a generated dataset. Metrics go to `<out>.metrics.csv`.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Restore a raw mosaic with a checkpoint.
    Restore {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write an sRGB preview as PPM.
        #[arg(long)]
        render: Option<PathBuf>,
    },
    /// Print raw/raw and raw/sRGB metrics of a prediction.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// `r_gain=..,b_gain=..,gamma=..`; omitted keys keep their defaults.
        #[arg(long, default_value = "")]
        isp_params: String,
    },
    /// Print the FLOPs table of a model config.
    Flops {
        #[arg(long)]
        config: PathBuf,
        /// Raw input extents as `HxW`.
        #[arg(long)]
        input: String,
        /// Window sizes for an attention sweep, e.g. `M=2,4,8`.
        #[arg(long)]
        sweep: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{ERROR_PREFIX} {}", first.trim_start_matches("error: "));
            return ExitCode::FAILURE;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("{ERROR_PREFIX} {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { out, count, size, noise, params, seed } => gen_data(&out, count, size, &noise, &params, seed),
        Command::Train { data, config, steps, out, seed } => train(&data, &config, steps, &out, seed),
        Command::Restore { ckpt, input, out, render } => restore(&ckpt, &input, &out, render.as_deref()),
        Command::Eval { pred, gt, isp_params } => eval(&pred, &gt, &isp_params),
        Command::Flops { config, input, sweep } => flops(&config, &input, sweep.as_deref()),
    }
}

fn writable_parent(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        bail!("cannot write {}: directory {} does not exist", path.display(), parent.display());
    }
    if path.is_dir() {
        bail!("cannot write {}: it is a directory", path.display());
    }
    Ok(())
}

fn read_config(path: &Path, check: bool) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("config: cannot read {}", path.display()))?;
    let parsed = if check { TrainConfig::parse(&text) } else { TrainConfig::parse_unchecked(&text) };
    parsed.with_context(|| format!("config {}", path.display()))
}

fn gen_data(out: &Path, count: usize, size: usize, noise: &str, params: &str, seed: u64) -> Result<()> {
    let noise = NoiseModel::parse(noise, params).context("gen-data")?;
    let manifest = write_dataset(out, count, size, noise, seed).context("gen-data")?;
    println!("wrote {} pairs of {size}x{size} to {}", manifest.pairs.len(), out.display());
    Ok(())
}

fn metrics_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".metrics.csv");
    PathBuf::from(s)
}

fn train(data: &Path, config: &Path, steps: u64, out: &Path, seed: u64) -> Result<()> {
    let cfg = read_config(config, true)?;
    Manifest::read(data).context("dataset")?;
    writable_parent(out)?;
    let csv = metrics_path(out);
    writable_parent(&csv)?;

    let dataset = DatasetSpec::Files { dir: data.to_path_buf() };
    let outcome = train_with_progress(&cfg, &dataset, steps, seed, |row| {
        if let Some(v) = row.validation {
            eprintln!("step {} lr {:.3e} loss {:.6} psnr_rr {:.2}", row.step, row.lr, row.loss, v.psnr_rr);
        }
    })
    .context("train")?;
    save_checkpoint(out, &outcome.checkpoint)?;
    elmformer::training::write_metrics(&csv, &outcome.log)?;
    println!("checkpoint = {}", out.display());
    println!("metrics = {}", csv.display());
    if let Some(last) = outcome.log.last() {
        println!("final_loss = {}", last.loss);
    }
    Ok(())
}

fn restore(ckpt: &Path, input: &Path, out: &Path, render: Option<&Path>) -> Result<()> {
    let ck = load_checkpoint(ckpt)?;
    let raw = read_raw(input)?;
    writable_parent(out)?;
    if let Some(r) = render {
        writable_parent(r)?;
    }
    let weights = build(&ck.config)?.load(&ck).context("restore")?;
    let restored = forward(&raw, &weights).context("restore")?.clamped();
    write_raw(out, &restored)?;
    if let Some(r) = render {
        write_ppm(r, &simple_isp(&restored, &IspParams::default())?)?;
    }
    Ok(())
}

fn parse_isp(text: &str) -> Result<IspParams> {
    let mut kv = KeyValues::parse(&text.replace(',', "\n")).context("isp-params")?;
    let d = IspParams::default();
    let p = IspParams {
        r_gain: kv.take_or("r_gain", d.r_gain)?,
        b_gain: kv.take_or("b_gain", d.b_gain)?,
        gamma: kv.take_or("gamma", d.gamma)?,
    };
    kv.reject_unknown().context("isp-params")?;
    Ok(p)
}

fn eval(pred: &Path, gt: &Path, isp: &str) -> Result<()> {
    let isp = parse_isp(isp)?;
    let m = eval_pair(&read_raw(pred)?, &read_raw(gt)?, &isp).context("eval")?;
    println!("psnr_rr = {}", m.psnr_rr);
    println!("psnr_rs = {}", m.psnr_rs);
    println!("ssim_rr = {}", m.ssim_rr);
    println!("ssim_rs = {}", m.ssim_rs);
    Ok(())
}

fn parse_extents(text: &str) -> Result<(usize, usize)> {
    let parsed = text
        .split_once(['x', 'X'])
        .and_then(|(h, w)| Some((h.trim().parse().ok()?, w.trim().parse().ok()?)));
    match parsed {
        Some(hw) => Ok(hw),
        None => bail!("input must look like HxW, got {text:?}"),
    }
}

fn parse_sweep(text: &str) -> Result<Vec<usize>> {
    let list = text.trim().strip_prefix("M=").unwrap_or(text.trim());
    list.split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("sweep entry {s:?} is not a window size")))
        .collect()
}

fn flops(config: &Path, input: &str, sweep: Option<&str>) -> Result<()> {
    let model = read_config(config, false)?.model;
    let (h, w) = parse_extents(input)?;
    let report = flops_model(&model, h, w).context("flops")?;
    print!("{}", model_flops_markdown(&report));
    if let Some(s) = sweep {
        let windows = parse_sweep(s)?;
        let heads = model.heads_per_stage[0];
        let d_k = model.stage_channels(0) / heads;
        let rows = attention_sweep(d_k, heads, h, w, &windows).context("flops sweep")?;
        println!();
        print!("{}", attention_sweep_markdown(&rows));
    }
    Ok(())
}
