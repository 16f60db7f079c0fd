use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cmgn_cli::gradcheck::GradCheckSettings;
use cmgn_cli::{commands, exit_code};
use cmgn_core::LossVariant;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cmgn",
    version,
    about = "Curriculum-modulated margin losses: synthetic data, training, and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset from a JSON spec
    GenData {
        /// JSON generation spec
        #[arg(long)]
        spec: PathBuf,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one experiment config and write trace, metrics, and checkpoint
    Train {
        /// Experiment config JSON
        #[arg(long)]
        config: PathBuf,
        /// Dataset CSV (from gen-data)
        #[arg(long)]
        data: PathBuf,
        /// Directory for trace.csv, metrics.json, checkpoint.bin
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train several configs on the same data and tabulate the results
    Compare {
        /// Experiment config JSONs (one per run)
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        /// Dataset CSV shared by every run
        #[arg(long)]
        data: PathBuf,
        /// Output CSV table
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate the hard-branch negative transform over a cosine grid
    Trace {
        #[command(flatten)]
        variant: VariantSpec,
        /// Curriculum t values to trace (comma separated or repeated)
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        t_values: Vec<f64>,
        /// Cosine grid resolution over [-1, 1]
        #[arg(long, default_value_t = 201)]
        grid_points: usize,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients against central finite differences
    GradCheck {
        #[command(flatten)]
        variant: VariantSpec,
        /// Number of random batches to check
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Base RNG seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shift the curriculum t seen by the analytic path (diagnostic; a
        /// nonzero shift must make the check fail)
        #[arg(long, hide = true, default_value_t = 0.0, allow_hyphen_values = true)]
        inject_t_error: f64,
    },
}

#[derive(Args)]
struct VariantSpec {
    /// Loss variant
    #[arg(long, value_enum)]
    variant: VariantArg,
    /// Angular or additive margin m (ignored by normalized-softmax)
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    margin: f64,
    /// Logit scale s
    #[arg(long, default_value_t = 64.0, allow_hyphen_values = true)]
    scale: f64,
    /// Fixed t for mv-arc-softmax (its curriculum never adapts)
    #[arg(long, default_value_t = 1.2, allow_hyphen_values = true)]
    mv_t: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    NormalizedSoftmax,
    CosFace,
    ArcFace,
    MvArcSoftmax,
    CurricularFace,
}

impl VariantSpec {
    fn build(&self) -> LossVariant {
        match self.variant {
            VariantArg::NormalizedSoftmax => LossVariant::normalized_softmax(self.scale),
            VariantArg::CosFace => LossVariant::cos_face(self.margin, self.scale),
            VariantArg::ArcFace => LossVariant::arc_face(self.margin, self.scale),
            VariantArg::MvArcSoftmax => LossVariant::mv_arc_softmax(self.margin, self.scale, self.mv_t),
            VariantArg::CurricularFace => LossVariant::curricular_face(self.margin, self.scale),
        }
    }
}

fn run(cli: Cli) -> cmgn_core::Result<()> {
    match cli.command {
        Command::GenData { spec, out } => commands::cmd_gen_data(&spec, &out),
        Command::Train { config, data, out_dir } => commands::cmd_train(&config, &data, &out_dir),
        Command::Compare { configs, data, out } => commands::cmd_compare(&configs, &data, &out),
        Command::Trace { variant, t_values, grid_points, out } => {
            commands::cmd_trace(&variant.build(), &t_values, grid_points, &out)
        }
        Command::GradCheck { variant, trials, seed, inject_t_error } => {
            let mut settings = GradCheckSettings::new(variant.build(), trials, seed);
            settings.inject_t_error = inject_t_error;
            commands::cmd_grad_check(&settings)
        }
    }
}

fn main() -> ExitCode {
    // clap's own exit convention uses 2 for usage errors, which collides
    // with the numerical-failure code; normalize usage errors to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
