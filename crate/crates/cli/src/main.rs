use std::fmt::Write as _;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use copaint::brush::{BrushMode, Stamp, Texture, TextureBank};
use copaint::diff::{gradient_suite, optimize_strokes, GradCheckConfig, OptimConfig, ParamLayout, RenderSettings, Scene};
use copaint::io::{export_image, import_image, load_maps, save_plan, PngDepth};
use copaint::sequencer::{generate_dataset_entry, PlannedStamp, SequencerConfig, StrokePlan};
use copaint::session::{serve, SessionConfig};
use copaint::{metrics, Canvas};

#[derive(Parser)]
#[command(name = "copaint", version, about = "Stroke-based painting engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare analytic and finite-difference gradients on random scenes.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        scenes: usize,
    },
    /// Fit randomly initialized stamps to a target image.
    Optimize(OptimizeArgs),
    /// Plan stamps from label, normal and attention maps, then optimize them.
    Sequence(SequenceArgs),
    /// Print PSNR, SSIM and MSE between two images as one JSON line.
    Metrics { a: PathBuf, b: PathBuf },
    /// Run the painting session server (one session per connection).
    Serve {
        #[arg(long)]
        port: u16,
        /// Canvas size as WxH.
        #[arg(long, value_parser = parse_dims)]
        canvas: (usize, usize),
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Grayscale PNG brush tips made available to clients.
        #[arg(long = "tip")]
        tips: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct BrushArgs {
    /// gaussian, hard_round, or tip (requires --tip).
    #[arg(long, default_value = "gaussian")]
    mode: String,
    /// Grayscale PNG used as the brush tip in tip mode.
    #[arg(long)]
    tip: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    target: PathBuf,
    #[arg(long, short = 'n', default_value_t = 100)]
    stamps: usize,
    #[command(flatten)]
    brush: BrushArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    /// Output plan file.
    #[arg(long, short = 'o')]
    out: PathBuf,
    /// Loss trace CSV; defaults to the plan path with `.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write the painted result.
    #[arg(long)]
    render: Option<PathBuf>,
}

#[derive(Args)]
struct SequenceArgs {
    target: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    normals: PathBuf,
    #[arg(long)]
    attention: PathBuf,
    #[arg(long)]
    order: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    budget: usize,
    #[command(flatten)]
    brush: BrushArgs,
    #[arg(long, default_value_t = 30)]
    iterations: usize,
    /// Optimize one region at a time instead of all stamps jointly.
    #[arg(long)]
    per_region: bool,
    #[arg(long, short = 'o')]
    out: PathBuf,
    /// Directory for the canvas after every stamp.
    #[arg(long)]
    snapshots: Option<PathBuf>,
    /// Keep every k-th snapshot (the last one is always written).
    #[arg(long, default_value_t = 1)]
    snapshot_every: usize,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w: usize = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((w, h))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_image(path: &Path) -> Result<Canvas> {
    import_image(&read(path)?).with_context(|| format!("decoding {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn brush_mode(args: &BrushArgs, bank: &mut TextureBank) -> Result<BrushMode> {
    Ok(match args.mode.as_str() {
        "gaussian" | "gaussian2d" => BrushMode::Gaussian2d,
        "hard_round" => BrushMode::HardRound,
        "tip" => {
            let path = args.tip.as_ref().context("tip mode needs --tip PNG")?;
            let texture = Texture::from_png(&read(path)?)?;
            BrushMode::BrushTip {
                texture: bank.insert(texture),
            }
        }
        other => bail!("unknown brush mode `{other}` (gaussian, hard_round, tip)"),
    })
}

fn random_stamps(rng: &mut ChaCha8Rng, target: &Canvas, n: usize, mode: &BrushMode) -> Vec<Stamp> {
    let (w, h) = target.dims();
    let diag = (w as f64).hypot(h as f64);
    (0..n)
        .map(|_| {
            let (x, y) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
            let size = rng.gen_range(diag / 40.0..diag / 10.0).max(1.0);
            let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let color = target.pixel(x as usize, y as usize);
            Stamp::with_mode(mode, x, y, size, theta, 0.8, color)
        })
        .collect()
}

fn optimize(args: OptimizeArgs) -> Result<()> {
    let target = read_image(&args.target)?;
    let (w, h) = target.dims();
    let mut bank = TextureBank::new();
    let mode = brush_mode(&args.brush, &mut bank)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let init = random_stamps(&mut rng, &target, args.stamps, &mode);

    let background = Canvas::new(w, h, [1.0; 3]);
    let scene = Scene::new(&background, &bank).with_settings(RenderSettings::for_stamps(&init));
    let layout = ParamLayout::new(w, h, init)?;
    let cfg = OptimConfig {
        iterations: args.iterations,
        base_lr: args.lr,
        ..OptimConfig::default()
    };
    let (best, trace) = optimize_strokes(&layout.encode(), &layout, &scene, &target, &cfg)?;
    let stamps = layout.decode(&best)?;

    let plan = StrokePlan {
        mode,
        stamps: stamps
            .iter()
            .map(|s| PlannedStamp {
                stamp: s.clone(),
                label: None,
            })
            .collect(),
    };
    write(&args.out, &save_plan(&plan, Some((w, h)))?)?;

    let mut csv = String::from("iteration,loss,best\n");
    for (i, (loss, best)) in trace.losses.iter().zip(trace.running_min()).enumerate() {
        writeln!(csv, "{i},{loss},{best}")?;
    }
    let trace_path = args.trace.unwrap_or_else(|| args.out.with_extension("csv"));
    write(&trace_path, csv.as_bytes())?;

    if let Some(path) = &args.render {
        let mut canvas = background.clone();
        copaint::brush::render_painter(&mut canvas, &stamps, &bank, 0.0)?;
        write(path, &export_image(&canvas, PngDepth::Eight)?)?;
    }
    eprintln!(
        "loss {:.6} -> {:.6} after {} iterations",
        trace.initial(),
        trace.best(),
        trace.losses.len()
    );
    Ok(())
}

fn sequence(args: SequenceArgs) -> Result<()> {
    let target = read_image(&args.target)?;
    let order = fs::read_to_string(&args.order).with_context(|| format!("reading {}", args.order.display()))?;
    let (labels, normals, attn, table) =
        load_maps(&read(&args.labels)?, &read(&args.normals)?, &read(&args.attention)?, &order)?;
    let mut bank = TextureBank::new();
    let cfg = SequencerConfig {
        budget: args.budget,
        mode: brush_mode(&args.brush, &mut bank)?,
        optim: OptimConfig {
            iterations: args.iterations,
            ..OptimConfig::default()
        },
        joint: !args.per_region,
        ..SequencerConfig::default()
    };
    let probe = Stamp::with_mode(&cfg.mode, 0.0, 0.0, 1.0, 0.0, 1.0, [0.0; 3]);
    let cfg = SequencerConfig {
        render: RenderSettings::for_stamps(&[probe]),
        ..cfg
    };
    let entry = generate_dataset_entry(&target, &labels, &table, &normals, &attn, &bank, &cfg, args.seed)?;
    write(&args.out, &save_plan(&entry.plan, Some(target.dims()))?)?;

    if let Some(dir) = &args.snapshots {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let every = args.snapshot_every.max(1);
        let last = entry.snapshots.len().saturating_sub(1);
        for (i, snap) in entry.snapshots.iter().enumerate() {
            if (i + 1) % every == 0 || i == last {
                write(&dir.join(format!("{i:05}.png")), &export_image(snap, PngDepth::Eight)?)?;
            }
        }
    }
    if let Some(last) = entry.snapshots.last() {
        let m = metrics::report(last, &target)?;
        eprintln!("{} stamps, psnr {:.2} dB", entry.plan.len(), m.psnr);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gradcheck { seed, scenes } => {
            let cfg = GradCheckConfig {
                scenes,
                ..GradCheckConfig::default()
            };
            let report = gradient_suite(seed, &cfg)?;
            println!("{}", serde_json::to_string(&report)?);
            return Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Optimize(args) => optimize(args)?,
        Command::Sequence(args) => sequence(args)?,
        Command::Metrics { a, b } => {
            let report = metrics::report(&read_image(&a)?, &read_image(&b)?)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Serve {
            port,
            canvas: (w, h),
            host,
            tips,
        } => {
            let mut bank = TextureBank::new();
            for tip in &tips {
                let id = bank.insert(Texture::from_png(&read(tip)?)?);
                eprintln!("tip {} -> {id}", tip.display());
            }
            let listener = TcpListener::bind((host.as_str(), port)).with_context(|| format!("binding {host}:{port}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            serve(listener, w, h, SessionConfig::default(), Arc::new(bank))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
