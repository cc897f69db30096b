use clap::{Args, Parser, Subcommand, ValueEnum};
use dichoptic::analysis::{
    self, AnalysisOptions, ExclusionRule, IngestMapping, QuantileMethod, SdConvention,
};
use dichoptic::compositor::{composite, write_frame, CompositeMode};
use dichoptic::experiment::{ExperimentConfig, ExperimentError, SessionLog};
use dichoptic::fixture;
use dichoptic::scene::ViewConfig;
use dichoptic::service::{Server, ServiceConfig, DEFAULT_PORT, PORT_ENV};
use dichoptic::{build_scene, render_stereo, OpacityState};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dichoptic",
    version,
    about = "Stereo occluder renderer, experiment service and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render composited stereo frames to image files.
    Render(RenderArgs),
    /// Run the experiment session service on localhost.
    Serve(ServeArgs),
    /// Analyse a selections CSV.
    Analyze(AnalyzeArgs),
    /// Re-run a session log headlessly.
    Replay(ReplayArgs),
    /// Generate a synthetic dataset with an expected-statistics sidecar.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct Size {
    /// Per-eye width in pixels.
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u32).range(1..=8192))]
    width: u32,
    /// Per-eye height in pixels.
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u32).range(1..=8192))]
    height: u32,
}

#[derive(Args)]
struct RenderArgs {
    /// Occluder alpha for the left eye (both eyes unless --dichoptic).
    #[arg(long, default_value_t = 1.0, value_parser = unit_interval)]
    left_alpha: f64,
    /// Occluder alpha for the right eye; defaults to --left-alpha.
    #[arg(long, value_parser = unit_interval)]
    right_alpha: Option<f64>,
    /// Give each eye its own alpha.
    #[arg(long)]
    dichoptic: bool,
    /// Scene time of the first frame, seconds.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    time: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    frames: u32,
    /// Frames per second of scene time between consecutive frames.
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value = "anaglyph", value_parser = parse_mode)]
    mode: CompositeMode,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[command(flatten)]
    size: Size,
    /// Scene and rig TOML.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Directory for session logs and records.
    #[arg(long, default_value = "sessions")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    tick_rate: f64,
    #[command(flatten)]
    size: Size,
    /// Experiment TOML (alpha_step, rng_seed, initial_alpha, [scene], [rig]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured T3 order seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Structured,
}

#[derive(Clone, Copy, ValueEnum)]
enum SdArg {
    Sample,
    Population,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantileArg {
    Linear,
    Hazen,
    Weibull,
    MedianUnbiased,
    NormalUnbiased,
    TukeyHinges,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExclusionArg {
    Both,
    Either,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// TOML mapping foreign column names onto the native schema.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SdArg::Sample)]
    sd: SdArg,
    #[arg(long, value_enum, default_value_t = QuantileArg::Linear)]
    quantile: QuantileArg,
    /// Which outlier flags must fire for a row to be excluded.
    #[arg(long, value_enum, default_value_t = ExclusionArg::Both)]
    exclusion: ExclusionArg,
    /// Also write the per-participant chart table (CSV) here.
    #[arg(long)]
    chart: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Where to write the final T1 and T2 renders; omitted means no images.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value = "anaglyph", value_parser = parse_mode)]
    mode: CompositeMode,
    #[command(flatten)]
    size: Size,
    /// Scene and rig TOML used for the renders.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// CSV path; the sidecar is written next to it as `<stem>.expected.json`.
    #[arg(long)]
    out: PathBuf,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_mode(s: &str) -> Result<CompositeMode, String> {
    s.parse()
}

enum Failure {
    Usage(String),
    Parse(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Parse(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Parse(m) | Failure::Internal(m) => m,
        }
    }
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn load_view(path: Option<&Path>) -> Result<ViewConfig, Failure> {
    match path {
        Some(p) => ViewConfig::load(p).map_err(|e| Failure::Parse(e.to_string())),
        None => Ok(ViewConfig::default()),
    }
}

fn load_experiment(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Parse(e.to_string())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn render(args: RenderArgs) -> Result<(), Failure> {
    if !(args.fps.is_finite() && args.fps > 0.0) {
        return Err(Failure::Usage("--fps must be positive".into()));
    }
    let view = load_view(args.config.as_deref())?;
    let scene = build_scene(&view.scene).map_err(|e| Failure::Parse(e.to_string()))?;
    let state = OpacityState::new(
        args.left_alpha,
        args.right_alpha.unwrap_or(args.left_alpha),
        args.dichoptic,
    );
    std::fs::create_dir_all(&args.out_dir).map_err(internal)?;
    for i in 0..args.frames {
        let t = args.time + i as f64 / args.fps;
        let frame = render_stereo(
            &scene,
            &view.rig,
            state,
            t,
            args.size.width as usize,
            args.size.height as usize,
        );
        for path in write_frame(&frame, args.mode, i as usize, &args.out_dir).map_err(internal)? {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let mut experiment = load_experiment(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        experiment.rng_seed = seed;
    }
    let config = ServiceConfig {
        experiment,
        port: args.port,
        tick_rate: args.tick_rate,
        width: args.size.width as usize,
        height: args.size.height as usize,
        out_dir: args.out_dir,
        ..ServiceConfig::default()
    };
    let server = Server::bind(config).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidInput => Failure::Usage(e.to_string()),
        _ => internal(e),
    })?;
    eprintln!("listening on {}", server.local_addr().map_err(internal)?);
    server.run().map_err(internal)
}

fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let mapping = match &args.mapping {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Parse(format!("{}: {e}", p.display())))?;
            IngestMapping::from_toml_str(&text).map_err(|e| Failure::Parse(e.to_string()))?
        }
        None => IngestMapping::default(),
    };
    let rows = analysis::load_csv(&args.input, &mapping)
        .map_err(|e| Failure::Parse(format!("{}: {e}", args.input.display())))?;
    let options = AnalysisOptions {
        sd: match args.sd {
            SdArg::Sample => SdConvention::Sample,
            SdArg::Population => SdConvention::Population,
        },
        quantile: match args.quantile {
            QuantileArg::Linear => QuantileMethod::Linear,
            QuantileArg::Hazen => QuantileMethod::Hazen,
            QuantileArg::Weibull => QuantileMethod::Weibull,
            QuantileArg::MedianUnbiased => QuantileMethod::MedianUnbiased,
            QuantileArg::NormalUnbiased => QuantileMethod::NormalUnbiased,
            QuantileArg::TukeyHinges => QuantileMethod::TukeyHinges,
        },
        exclusion: match args.exclusion {
            ExclusionArg::Both => ExclusionRule::Both,
            ExclusionArg::Either => ExclusionRule::Either,
        },
        ..AnalysisOptions::default()
    };
    let stats = analysis::analyze(&rows, &options).map_err(|e| Failure::Parse(e.to_string()))?;
    match args.format {
        Format::Text => print!("{}", analysis::render_report(&stats)),
        Format::Structured => println!("{}", stats.to_json()),
    }
    if let Some(path) = args.chart {
        std::fs::write(&path, analysis::chart_table_csv(&stats)).map_err(internal)?;
    }
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.log)
        .map_err(|e| Failure::Parse(format!("{}: {e}", args.log.display())))?;
    let log = SessionLog::parse(&text).map_err(|e| Failure::Parse(e.to_string()))?;
    let view = load_view(args.config.as_deref())?;
    let base = ExperimentConfig {
        scene: view.scene.clone(),
        rig: view.rig,
        ..ExperimentConfig::default()
    };
    let session = log
        .replay(&base)
        .map_err(|e| Failure::Parse(e.to_string()))?;
    let record = session.export().map_err(|e| match e {
        ExperimentError::IncompleteSession(_) => Failure::Parse(e.to_string()),
        other => internal(other),
    })?;
    println!("{}", record.to_json());

    if let Some(dir) = args.out_dir {
        std::fs::create_dir_all(&dir).map_err(internal)?;
        let scene = build_scene(&view.scene).map_err(|e| Failure::Parse(e.to_string()))?;
        let entered = |phase| {
            record
                .phase_timestamps
                .iter()
                .find(|p| p.phase == phase)
                .map(|p| p.entered_at)
                .unwrap_or(0.0)
        };
        use dichoptic::experiment::TaskPhase;
        let finals = [
            (
                "t1",
                record.non_dichoptic_setting(),
                entered(TaskPhase::T2Instructions),
            ),
            (
                "t2",
                record.dichoptic_setting(),
                entered(TaskPhase::T3Instructions),
            ),
        ];
        for (name, state, t) in finals {
            let frame = render_stereo(
                &scene,
                &view.rig,
                state,
                t,
                args.size.width as usize,
                args.size.height as usize,
            );
            for c in composite(&frame, args.mode) {
                let suffix = match c.role {
                    dichoptic::compositor::ImageRole::Combined => String::new(),
                    dichoptic::compositor::ImageRole::Eye(eye) => format!("_{}", eye.name()),
                };
                let path = dir.join(format!("replay_{name}_{}{suffix}.png", args.mode));
                c.image.write_png(&path).map_err(internal)?;
                eprintln!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn make_fixture(args: FixtureArgs) -> Result<(), Failure> {
    let f = fixture::generate(args.seed, args.n).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(internal)?;
    }
    let sidecar = fixture::write(&f, &args.out).map_err(internal)?;
    println!("{}", args.out.display());
    println!("{}", sidecar.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Cmd::Render(a) => render(a),
        Cmd::Serve(a) => serve(a),
        Cmd::Analyze(a) => analyze(a),
        Cmd::Replay(a) => replay(a),
        Cmd::Fixture(a) => make_fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
