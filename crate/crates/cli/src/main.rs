use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use imutok::evalbench::{heldout_corpus, render_report, run_noise_benchmark, BenchConfig};
use imutok::imusim::{
    apply_corruption, apply_drift, fit_norm_stats, read_imu, synthesize_imu, write_imu, write_norm_stats,
    ChannelSigmas, InertiaFrame, NoiseConfig, SensorPlacement, GRAVITY, INERTIA_DIM,
};
use imutok::motion::{
    build_motion_representation, generate_synthetic_motion, read_motion, write_motion, MotionSequence, MotionStyle,
    RawPoseTrack, Skeleton,
};
use imutok::stream::{decode_tokens, read_tokens, write_tokens, RootSmoothing, StreamState, TokenSequence};
use imutok::trainer::{
    pair_corpus, synthetic_motion_corpus, train_baseline, train_imu_tokenizer, train_motion_vqvae, BaselinePoser,
    ImuTokenizer, MotionTokenizer, TrainConfig, TrainReport,
};

#[derive(Parser)]
#[command(name = "imutok", version, about = "Jitter-reduced IMU tokenization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic motion clips.
    #[command(subcommand)]
    Motion(MotionCmd),
    /// Virtual IMU readings.
    #[command(subcommand)]
    Imu(ImuCmd),
    /// Model training.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Robustness benchmark.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Token streams.
    #[command(subcommand)]
    Stream(StreamCmd),
}

#[derive(Subcommand)]
enum MotionCmd {
    /// Generate one synthetic clip as an MJT1 file.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "walk")]
        style: MotionStyle,
        #[arg(long, default_value_t = 4.0)]
        duration: f64,
        #[arg(long, default_value_t = 60.0)]
        fps: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ImuCmd {
    /// Simulate six sensors from an MJT1 clip and write an MJI1 file.
    Simulate {
        #[arg(long)]
        motion: PathBuf,
        /// Sensor placement file; the standard placement when omitted.
        #[arg(long)]
        placement: Option<PathBuf>,
        /// Noise profile of `key = value` lines; default drift only when omitted.
        #[arg(long)]
        noise_profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write acceleration statistics of the output as an MJN1 file.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CorpusArgs {
    /// Flat `key = value` training config; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// MJT1 training clips; a synthetic corpus when none are given.
    #[arg(long = "motion", num_args = 1..)]
    motion: Vec<PathBuf>,
    /// Synthetic corpus size.
    #[arg(long, default_value_t = 32)]
    clips: usize,
    /// Synthetic clip length in seconds.
    #[arg(long, default_value_t = 4.0)]
    duration: f64,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Line-delimited per-step records; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Stage one: motion VQ-VAE.
    Motion(CorpusArgs),
    /// Stage two: IMU tokenizer against a frozen motion model.
    Imu {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        motion_ckpt: PathBuf,
    },
    /// Continuous regression baseline.
    Baseline(CorpusArgs),
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Noise-robustness benchmark on held-out synthetic clips.
    Noise {
        #[arg(long)]
        imu_ckpt: PathBuf,
        #[arg(long)]
        motion_ckpt: PathBuf,
        #[arg(long)]
        baseline_ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        levels: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Held-out corpus seed.
        #[arg(long, default_value_t = 1001)]
        corpus_seed: u64,
        #[arg(long, default_value_t = imutok::evalbench::DEFAULT_SEQUENCES)]
        sequences: usize,
        #[arg(long, default_value_t = 4.0)]
        duration: f64,
        /// Per-frame noise `orientation,acceleration,gyro`.
        #[arg(long, value_delimiter = ',')]
        gaussian: Option<Vec<f64>>,
        /// Extra random-walk drift `orientation,acceleration,gyro`.
        #[arg(long, value_delimiter = ',')]
        drift: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum StreamCmd {
    /// Tokenize a raw MJI1 file into an MJT2 token stream.
    Tokenize {
        #[arg(long)]
        imu: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode an MJT2 token stream to an MJT1 motion file.
    Decode {
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Exponential smoothing factor for the root states, off when omitted.
        #[arg(long)]
        smooth: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize stdin packets (`u32` frame count, then 72 `f32` per frame,
    /// little-endian; a zero count ends the stream) and answer each with a
    /// `u32` token count followed by `u16` tokens.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn sigmas(v: Option<Vec<f64>>, default: ChannelSigmas) -> Result<ChannelSigmas> {
    match v.as_deref() {
        None => Ok(default),
        Some(&[orientation, acceleration, gyro]) => Ok(ChannelSigmas { orientation, acceleration, gyro }),
        Some(other) => bail!("expected three comma-separated sigmas, got {}", other.len()),
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(TrainConfig::parse(&text)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn load_corpus(args: &CorpusArgs, cfg: &TrainConfig) -> Result<Vec<MotionSequence>> {
    if args.motion.is_empty() {
        return Ok(synthetic_motion_corpus(cfg.seed, args.clips, args.duration, cfg.fps)?);
    }
    args.motion.iter().map(|p| Ok(read_motion(open(p)?)?)).collect()
}

fn emit_report(report: &TrainReport, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => create(p)?.write_all(report.to_lines().as_bytes())?,
        None => print!("{}", report.to_lines()),
    }
    Ok(())
}

fn run_motion(cmd: MotionCmd) -> Result<()> {
    let MotionCmd::Gen { seed, style, duration, fps, out } = cmd;
    let track = generate_synthetic_motion(seed, duration, fps, style)?;
    let seq = build_motion_representation(&track, &Skeleton::standard())?;
    write_motion(create(&out)?, &seq)?;
    Ok(())
}

fn run_imu(cmd: ImuCmd) -> Result<()> {
    let ImuCmd::Simulate { motion, placement, noise_profile, out, stats } = cmd;
    let seq = read_motion(open(&motion)?)?;
    let place = match placement {
        Some(p) => SensorPlacement::parse(&std::fs::read_to_string(&p)?)?,
        None => SensorPlacement::standard(),
    };
    let noise = match noise_profile {
        Some(p) => NoiseConfig::parse(&std::fs::read_to_string(&p)?)?,
        None => NoiseConfig::default(),
    };
    let imu = synthesize_imu(&RawPoseTrack::from_motion(&seq), &Skeleton::standard(), &place, &GRAVITY)?;
    let imu = apply_corruption(&apply_drift(&imu, &noise)?, &noise)?;
    write_imu(create(&out)?, &imu)?;
    if let Some(p) = stats {
        write_norm_stats(create(&p)?, &fit_norm_stats(std::slice::from_ref(&imu))?)?;
    }
    Ok(())
}

fn run_train(cmd: TrainCmd) -> Result<()> {
    match cmd {
        TrainCmd::Motion(args) => {
            let cfg = load_config(args.config.as_deref())?;
            let corpus = load_corpus(&args, &cfg)?;
            let (model, report) = train_motion_vqvae(&corpus, &cfg)?;
            model.save(&args.out)?;
            emit_report(&report, args.report.as_deref())
        }
        TrainCmd::Imu { corpus: args, motion_ckpt } => {
            let cfg = load_config(args.config.as_deref())?;
            let motion = MotionTokenizer::load(&motion_ckpt)?;
            let paired = pair_corpus(&load_corpus(&args, &cfg)?, cfg.seed, None)?;
            let (model, report) = train_imu_tokenizer(&paired, &motion, &cfg)?;
            model.save(&args.out)?;
            emit_report(&report, args.report.as_deref())
        }
        TrainCmd::Baseline(args) => {
            let cfg = load_config(args.config.as_deref())?;
            let paired = pair_corpus(&load_corpus(&args, &cfg)?, cfg.seed, None)?;
            let (model, report) = train_baseline(&paired, &cfg)?;
            model.save(&args.out)?;
            emit_report(&report, args.report.as_deref())
        }
    }
}

fn run_bench(cmd: BenchCmd) -> Result<()> {
    let BenchCmd::Noise {
        imu_ckpt,
        motion_ckpt,
        baseline_ckpt,
        levels,
        seed,
        corpus_seed,
        sequences,
        duration,
        gaussian,
        drift,
        out,
    } = cmd;
    let imu = ImuTokenizer::load(&imu_ckpt)?;
    let motion = MotionTokenizer::load(&motion_ckpt)?;
    let baseline = BaselinePoser::load(&baseline_ckpt)?;
    let defaults = BenchConfig::default();
    let bench = BenchConfig {
        levels,
        gaussian: sigmas(gaussian, defaults.gaussian)?,
        drift: sigmas(drift, defaults.drift)?,
        seed,
        ..defaults
    };
    let corpus = heldout_corpus(corpus_seed, sequences, duration, imu.config.fps)?;
    let report = run_noise_benchmark(&imu, &motion, &baseline, &corpus, &bench)?;
    let (table, records) = render_report(&report);
    print!("{table}");
    create(&out)?.write_all(records.as_bytes())?;
    Ok(())
}

fn read_packet<R: Read>(r: &mut R) -> Result<Option<Vec<InertiaFrame>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_le_bytes(len) as usize;
    if n == 0 {
        return Ok(None);
    }
    let mut buf = vec![0u8; n * INERTIA_DIM * 4];
    r.read_exact(&mut buf).context("truncated frame packet")?;
    let values: Vec<f64> = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    values
        .chunks_exact(INERTIA_DIM)
        .map(|f| Ok(InertiaFrame::unflatten(f)?))
        .collect::<Result<_>>()
        .map(Some)
}

fn run_stream(cmd: StreamCmd) -> Result<()> {
    match cmd {
        StreamCmd::Tokenize { imu, ckpt, out } => {
            let tok = ImuTokenizer::load(&ckpt)?;
            let seq = read_imu(open(&imu)?)?;
            if seq.fps != tok.config.fps {
                bail!("input is {} fps, tokenizer expects {}", seq.fps, tok.config.fps);
            }
            let mut state = StreamState::for_tokenizer(&tok)?;
            let mut tokens = TokenSequence::for_tokenizer(&tok, 0);
            tokens.tokens = state.push_frames(&tok, &seq.frames)?;
            write_tokens(create(&out)?, &tokens)?;
            Ok(())
        }
        StreamCmd::Decode { tokens, ckpt, smooth, out } => {
            let tok = ImuTokenizer::load(&ckpt)?;
            let seq = read_tokens(open(&tokens)?)?;
            let smoothing = smooth.map(RootSmoothing::new).transpose()?;
            write_motion(create(&out)?, &decode_tokens(&seq, &tok, smoothing)?)?;
            Ok(())
        }
        StreamCmd::Serve { ckpt } => {
            let tok = ImuTokenizer::load(&ckpt)?;
            let mut state = StreamState::for_tokenizer(&tok)?;
            let mut input = std::io::stdin().lock();
            let mut output = std::io::stdout().lock();
            while let Some(frames) = read_packet(&mut input)? {
                let tokens = state.push_frames(&tok, &frames)?;
                output.write_all(&(tokens.len() as u32).to_le_bytes())?;
                for t in tokens {
                    output.write_all(&t.to_le_bytes())?;
                }
                output.flush()?;
            }
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Motion(c) => run_motion(c),
        Command::Imu(c) => run_imu(c),
        Command::Train(c) => run_train(c),
        Command::Bench(c) => run_bench(c),
        Command::Stream(c) => run_stream(c),
    }
}
