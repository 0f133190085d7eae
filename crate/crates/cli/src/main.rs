use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use segmine::bundle::{load_gallery, VideoBundle};
use segmine::config::load_config;
use segmine::harness::{gen_scenario, video_report, write_scenario, ScenarioParams};
use segmine::mining::write_selection;
use segmine::motion::motion_saliency;
use segmine::pipeline::{bundle_initial_weights, mine, render_records, run, write_output, WeightInit};
use segmine::tensorio::{read_flo_file, read_tensor_file, write_tensor_file};
use segmine::transfer::TransferWeights;
use segmine::{Error, PipelineConfig64, Result, VideoBundle64};

#[derive(Parser)]
#[command(name = "segmine", version, about = "Self-learning video object segmentation")]
struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Motion saliency of one flow field.
    Saliency {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// One mining step with fixed transfer weights.
    Mine {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer weights from a source gallery.
    InitWeights {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full alternating pipeline.
    #[command(group(ArgGroup::new("init").required(true).multiple(false).args(["gallery", "category"])))]
    Run {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        gallery: Option<PathBuf>,
        /// Known category index (0-based) for one-hot initialization.
        #[arg(long)]
        category: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame and mean IoU of predicted masks against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Generate a synthetic scenario into OUT/bundle and OUT/gallery.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        /// Frame size as HxW.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        distractors: Option<usize>,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    let h: usize = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    Ok((h, w))
}

fn config(path: Option<&Path>) -> Result<PipelineConfig64> {
    match path {
        Some(p) => load_config(p),
        None => Ok(PipelineConfig64::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Saliency { flow, out, config: c } => {
            let cfg = config(c.as_deref())?;
            let f = read_flo_file::<f64>(&flow)?;
            write_tensor_file(&motion_saliency(&f, &cfg.motion), &out)
        }
        Command::Mine {
            bundle,
            config: c,
            weights,
            out,
        } => {
            let cfg = config(c.as_deref())?;
            let b = VideoBundle64::load(&bundle)?;
            let theta = TransferWeights::from_tensors(&read_tensor_file(&weights)?, None)?;
            let state = mine(&b, &theta, &cfg)?;
            let mut sink = create(&out)?;
            write_selection(&state.selection, &mut sink)?;
            sink.flush().map_err(Error::Stream)
        }
        Command::InitWeights {
            bundle,
            gallery,
            config: c,
            out,
        } => {
            let cfg = config(c.as_deref())?;
            let b: VideoBundle<f64> = VideoBundle::load(&bundle)?;
            let g = load_gallery(&gallery)?;
            let theta = bundle_initial_weights(&b, WeightInit::Gallery(&g), &cfg)?;
            write_tensor_file(&theta.mixing_tensor(), &out)
        }
        Command::Run {
            bundle,
            gallery,
            category,
            config: c,
            out,
        } => {
            let cfg = config(c.as_deref())?;
            let b = VideoBundle64::load(&bundle)?;
            let result = match (gallery, category) {
                (Some(dir), _) => run(&b, WeightInit::Gallery(&load_gallery(&dir)?), &cfg)?,
                (None, Some(k)) => run(&b, WeightInit::OneHot(k), &cfg)?,
                (None, None) => unreachable!("clap requires one initialization"),
            };
            write_output(&result, &out)?;
            print!("{}", render_records(&result));
            Ok(())
        }
        Command::Eval { pred, gt } => {
            print!("{}", video_report(&pred, &gt)?);
            Ok(())
        }
        Command::Synth {
            seed,
            out,
            frames,
            size,
            channels,
            distractors,
        } => {
            let mut params = ScenarioParams::default();
            if let Some(m) = frames {
                params.frames = m;
            }
            if let Some((h, w)) = size {
                params.height = h;
                params.width = w;
            }
            if let Some(c) = channels {
                params.channels = c;
                params.dsim = params.dsim.max(c + 2);
            }
            if let Some(d) = distractors {
                params.distractors = d;
            }
            let (_, bundle, gallery) = gen_scenario::<f64>(seed, &params)?;
            write_scenario(&bundle, &gallery, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("segmine: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("segmine: {e}");
            ExitCode::FAILURE
        }
    }
}
