//! `robusft`: command-line front end for template handling, synthetic
//! experiments, mismatch removal, shape inference and sequence tracking.
//!
//! Exit codes: 0 success, 2 configuration error, 3 IO or input-file error,
//! 4 algorithmic failure of a single-shot command.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use robusft::bench::{self, generate_frame, roc_csv, roc_sweep, run_scenario, ScenarioConfig};
use robusft::error::{BenchError, IoError, MismatchError, PipelineError, SftError};
use robusft::mesh::io::{mesh3d_to_json, read_mesh3d};
use robusft::mismatch::{matches_to_csv, my_neighbor, read_matches};
use robusft::pipeline::{
    build_template, import_template, run_sequence, timings_csv, PipelineConfig, SequenceSummary,
    Template,
};
use robusft::sft::{infer_shape, Camera, CameraIntrinsics, SightlineConstraint};

#[derive(Parser)]
#[command(
    name = "robusft",
    version,
    about = "Monocular shape tracking of deforming sheets"
)]
struct Cli {
    /// Config file (JSON, or TOML by `.toml` extension). Synthetic commands
    /// read a scenario config, the others a pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files; without it the main output goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Build, import or inspect templates.
    #[command(subcommand)]
    Template(TemplateCmd),
    /// Seeded synthetic data and experiments.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Mismatch removal.
    #[command(subcommand)]
    Mismatch(MismatchCmd),
    /// Shape inference.
    #[command(subcommand)]
    Sft(SftCmd),
    /// Frame-sequence tracking.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Subcommand)]
enum TemplateCmd {
    /// Planar rectangular template.
    Build(BuildArgs),
    /// Template from user-prepared mesh and intrinsics files.
    Import(ImportArgs),
    /// Summary of a template file.
    Show { template: PathBuf },
}

#[derive(Args)]
struct BuildArgs {
    /// Sheet width (m).
    #[arg(long)]
    width: f64,
    /// Sheet height (m).
    #[arg(long)]
    height: f64,
    #[arg(long, default_value_t = 6)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    /// Texturemap size as WIDTHxHEIGHT pixels.
    #[arg(long, value_parser = parse_size)]
    texture: [u32; 2],
    /// Intrinsics JSON; defaults to an 800 px focal length, 640x480 camera.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// 3D rest mesh (OBJ or JSON).
    #[arg(long)]
    mesh3d: PathBuf,
    /// 2D texturemap mesh (JSON).
    #[arg(long)]
    mesh2d: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long, value_parser = parse_size)]
    texture: Option<[u32; 2]>,
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Deformed mesh of one trial.
    Mesh {
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Match set and ground truth of one trial.
    Frame {
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Per-trial metrics of a scenario.
    Scenario,
    /// Mean TPR/FPR over a range of classification thresholds.
    Roc {
        /// Comma-separated threshold factors; defaults to 20 values from
        /// 0.02 to 1.0.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
}

#[derive(Subcommand)]
enum MismatchCmd {
    /// Classify the matches of one frame.
    Run {
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        matches: PathBuf,
    },
}

#[derive(Subcommand)]
enum SftCmd {
    /// Infer a shape from sightline constraints.
    Solve {
        #[arg(long)]
        template: Option<PathBuf>,
        /// JSON list of `{"vertex_index": i, "target": [u, v]}`.
        #[arg(long)]
        sightlines: PathBuf,
        /// Initial shape; defaults to the template's initial pose.
        #[arg(long)]
        init: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Track a sequence of match files.
    Run {
        #[arg(long)]
        template: Option<PathBuf>,
        /// Match files in frame order; defaults to the config's list.
        matches: Vec<PathBuf>,
    },
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Self {
            code: 3,
            message: e.to_string(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e {
            PipelineError::Config(_) | PipelineError::InvalidDimensions(_) => 2,
            PipelineError::Io(_)
            | PipelineError::TopologyMismatch(_)
            | PipelineError::Geometry(_) => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        let code = if matches!(e, BenchError::InvalidScenario(_)) {
            2
        } else {
            4
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<MismatchError> for Failure {
    fn from(e: MismatchError) -> Self {
        Self {
            code: 4,
            message: e.to_string(),
        }
    }
}

impl From<SftError> for Failure {
    fn from(e: SftError) -> Self {
        let code = if matches!(e, SftError::InvalidConstraint(_)) {
            3
        } else {
            4
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn parse_size(s: &str) -> Result<[u32; 2], String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let n = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok([n(w)?, n(h)?])
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::from(IoError::io(path, e)))?;
    let toml = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let parsed = if toml {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serialization is infallible");
    s.push('\n');
    s
}

/// Where outputs go: files under `--out`, or the primary output to stdout.
struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    fn new(dir: Option<PathBuf>) -> Result<Self, Failure> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Failure::from(IoError::io(d, e)))?;
        }
        Ok(Self { dir })
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    fn primary(&self, name: &str, content: &str) -> Result<(), Failure> {
        match self.path(name) {
            Some(p) => std::fs::write(&p, content).map_err(|e| IoError::io(&p, e).into()),
            None => match std::io::stdout().lock().write_all(content.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(IoError::io("stdout", e).into())
                }
                _ => Ok(()),
            },
        }
    }

    /// Written only when an output directory is given.
    fn secondary(&self, name: &str, content: &str) -> Result<(), Failure> {
        match self.path(name) {
            Some(p) => std::fs::write(&p, content).map_err(|e| IoError::io(&p, e).into()),
            None => Ok(()),
        }
    }
}

fn default_intrinsics() -> CameraIntrinsics {
    ScenarioConfig::default().intrinsics
}

fn template_path(arg: Option<PathBuf>, cfg: &PipelineConfig) -> Result<PathBuf, Failure> {
    arg.or_else(|| cfg.paths.template.clone())
        .ok_or_else(|| Failure::config("no template given (use --template or paths.template)"))
}

fn json_only(format: Format, what: &str) -> Result<(), Failure> {
    match format {
        Format::Json => Ok(()),
        Format::Csv => Err(Failure::config(format!("{what} has no CSV output"))),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let format = cli.format;
    let config = cli.config.as_deref();
    match cli.command {
        Command::Template(cmd) => {
            json_only(format, "template")?;
            let out = Output::new(cli.out)?;
            match cmd {
                TemplateCmd::Build(a) => {
                    let k = match a.intrinsics {
                        Some(p) => CameraIntrinsics::load(p)?,
                        None => default_intrinsics(),
                    };
                    let t = build_template(a.width, a.height, a.rows, a.cols, a.texture, k)?;
                    out.primary("template.json", &t.to_json())
                }
                TemplateCmd::Import(a) => {
                    let t = import_template(&a.mesh3d, &a.mesh2d, &a.intrinsics, a.texture)?;
                    out.primary("template.json", &t.to_json())
                }
                TemplateCmd::Show { template } => {
                    let t = Template::load(template)?;
                    let summary = serde_json::json!({
                        "vertices": t.rest_mesh().vertex_count(),
                        "triangles": t.rest_mesh().triangles().len(),
                        "edges": t.rest_mesh().edges().len(),
                        "diagonal_m": t.rest_mesh().diagonal(),
                        "texture_size": t.texture_size(),
                        "intrinsics": t.intrinsics(),
                    });
                    out.primary("summary.json", &json(&summary))
                }
            }
        }
        Command::Synth(cmd) => {
            let mut scenario: ScenarioConfig = load_config(config)?;
            if let Some(s) = cli.seed {
                scenario.seed = s;
            }
            scenario.validate()?;
            let out = Output::new(cli.out)?;
            match cmd {
                SynthCmd::Mesh { trial } => {
                    json_only(format, "synth mesh")?;
                    let frame = generate_frame(&scenario, trial)?;
                    out.primary("mesh.json", &mesh3d_to_json(&frame.deformed))
                }
                SynthCmd::Frame { trial } => {
                    let frame = generate_frame(&scenario, trial)?;
                    let csv = matches_to_csv(&frame.matches, Some(&frame.labels));
                    let truth = mesh3d_to_json(&frame.deformed);
                    match format {
                        Format::Csv => out.primary("matches.csv", &csv)?,
                        Format::Json => {
                            let doc = serde_json::json!({
                                "template_points": frame.matches.template_points(),
                                "image_points": frame.matches.image_points(),
                                "labels": frame.labels.is_correct,
                                "deformed": serde_json::from_str::<serde_json::Value>(&truth).expect("mesh JSON"),
                            });
                            out.primary("frame.json", &json(&doc))?;
                            out.secondary("matches.csv", &csv)?;
                        }
                    }
                    out.secondary("deformed.json", &truth)
                }
                SynthCmd::Scenario => {
                    let report = run_scenario(&scenario)?;
                    match format {
                        Format::Csv => out.primary("trials.csv", &report.trials_csv()),
                        Format::Json => {
                            out.primary("report.json", &json(&report))?;
                            out.secondary("trials.csv", &report.trials_csv())
                        }
                    }
                }
                SynthCmd::Roc { alphas } => {
                    let alphas = alphas.unwrap_or_else(|| {
                        (0..20).map(|i| 0.02 + 0.98 * i as f64 / 19.0).collect()
                    });
                    let points = roc_sweep(&scenario, &alphas)?;
                    match format {
                        Format::Csv => out.primary("roc.csv", &roc_csv(&points)),
                        Format::Json => out.primary("roc.json", &json(&points)),
                    }
                }
            }
        }
        Command::Mismatch(MismatchCmd::Run { template, matches }) => {
            let cfg: PipelineConfig = load_config(config)?;
            let t = Template::load(template_path(template, &cfg)?)?;
            cfg.validate(&t)?;
            let (set, labels) = read_matches(&matches)?;
            let out = Output::new(cli.out)?;
            let result = my_neighbor(&set, t.mesh2d(), &cfg.mismatch)?;
            let csv = result.classification.to_csv();
            match format {
                Format::Csv => out.primary("classification.csv", &csv)?,
                Format::Json => {
                    out.primary("diagnostics.json", &result.diagnostics_json())?;
                    out.secondary("classification.csv", &csv)?;
                }
            }
            if let Some(labels) = labels {
                let metrics = bench::evaluate_classification(&result.classification, &labels);
                out.secondary("metrics.json", &json(&metrics))?;
            }
            Ok(())
        }
        Command::Sft(SftCmd::Solve {
            template,
            sightlines,
            init,
        }) => {
            json_only(format, "sft solve")?;
            let cfg: PipelineConfig = load_config(config)?;
            let t = Template::load(template_path(template, &cfg)?)?;
            cfg.validate(&t)?;
            let text =
                std::fs::read_to_string(&sightlines).map_err(|e| IoError::io(&sightlines, e))?;
            let constraints: Vec<SightlineConstraint> = serde_json::from_str(&text)
                .map_err(|e| IoError::parse(format!("{}:{}", sightlines.display(), e.line()), e))?;
            let init = match init {
                Some(p) => {
                    let m = read_mesh3d(p)?;
                    t.rest_mesh()
                        .with_positions(m.vertices().to_vec())
                        .map_err(|e| Failure {
                            code: 3,
                            message: format!("initial shape: {e}"),
                        })?
                }
                None => t.initial_pose().clone(),
            };
            let out = Output::new(cli.out)?;
            let camera = Camera::new(*t.intrinsics());
            let (estimate, failure) = match infer_shape(
                t.rest_mesh(),
                &camera,
                &constraints,
                &cfg.known_points,
                &init,
                &cfg.solver,
            ) {
                Ok(e) => (e, None),
                Err(SftError::NoConvergence { estimate }) => {
                    let msg = format!(
                        "no convergence after {} outer iterations",
                        estimate.outer_iterations
                    );
                    (
                        *estimate,
                        Some(Failure {
                            code: 4,
                            message: msg,
                        }),
                    )
                }
                Err(e) => return Err(e.into()),
            };
            let report = serde_json::json!({
                "converged": estimate.converged,
                "outer_iterations": estimate.outer_iterations,
                "final_displacement": estimate.final_displacement,
                "max_edge_error": estimate.max_edge_error,
            });
            out.primary("shape.json", &mesh3d_to_json(&estimate.mesh))?;
            out.secondary("report.json", &json(&report))?;
            failure.map_or(Ok(()), Err)
        }
        Command::Pipeline(PipelineCmd::Run { template, matches }) => {
            json_only(format, "pipeline run")?;
            let cfg: PipelineConfig = load_config(config)?;
            let t = Template::load(template_path(template, &cfg)?)?;
            cfg.validate(&t)?;
            let files = if matches.is_empty() {
                cfg.paths.matches.clone()
            } else {
                matches
            };
            let out = Output::new(cli.out.or_else(|| cfg.paths.out.clone()))?;
            let results = match out.path("frames.jsonl") {
                Some(p) => {
                    let mut f = File::create(&p).map_err(|e| IoError::io(&p, e))?;
                    run_sequence(&t, &files, &cfg, Some(&mut f))?
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    let r = run_sequence(&t, &files, &cfg, Some(&mut lock))?;
                    lock.flush().map_err(|e| IoError::io("stdout", e))?;
                    r
                }
            };
            out.secondary("summary.json", &json(&SequenceSummary::new(&results)))?;
            out.secondary("timings.csv", &timings_csv(&results))?;
            if let Some(dir) = out.path("shapes") {
                std::fs::create_dir_all(&dir).map_err(|e| IoError::io(&dir, e))?;
                for r in &results {
                    let p = dir.join(format!("frame{:04}.json", r.frame_id));
                    std::fs::write(&p, mesh3d_to_json(&r.shape)).map_err(|e| IoError::io(&p, e))?;
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
