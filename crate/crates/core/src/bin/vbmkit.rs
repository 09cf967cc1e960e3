use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vbmkit::nifti::read_nifti;
use vbmkit::pipeline::{
    evaluate_files, register_files, run_pipeline, vbm_analysis, write_metrics_csv, write_phantom, NonlinearSection,
    PhantomKind, PhantomRequest, PipelineConfig, RegisterRequest, VbmSection,
};
use vbmkit::registration::ElasticityParams;
use vbmkit::vbm::DesignMatrix;
use vbmkit::{Error, Result};

#[derive(Parser)]
#[command(name = "vbmkit", version, about = "VBM preprocessing and statistics on NIfTI volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. `nonlinear.iterations=50`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Subjects processed in parallel.
        #[arg(long)]
        jobs: Option<usize>,
        /// Replaces run.output_dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a synthetic phantom.
    Phantom {
        #[arg(long, value_parser = parse_kind)]
        kind: PhantomKind,
        /// One value for a cube or three values.
        #[arg(long, num_args = 1..=3, default_values_t = [64])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Blob displacement in voxels.
        #[arg(long, default_value_t = 3.0)]
        offset: f64,
        /// Checkerboard block size in voxels.
        #[arg(long, default_value_t = 1)]
        period: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tissue-map metrics per case with median and standard deviation rows.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        truth: Vec<PathBuf>,
        /// Deformation fields for the LE column, one per case.
        #[arg(long, num_args = 1..)]
        field: Vec<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register a moving image to a fixed one.
    Register {
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        /// Brain mask of the moving image; with --fixed-mask runs an affine stage first.
        #[arg(long, requires = "fixed_mask")]
        moving_mask: Option<PathBuf>,
        #[arg(long, requires = "moving_mask")]
        fixed_mask: Option<PathBuf>,
        #[command(flatten)]
        nonlinear: NonlinearArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxel-wise GLM on a stack of maps.
    Vbm {
        /// One map per design row, in row order.
        #[arg(long, num_args = 1.., required = true)]
        maps: Vec<PathBuf>,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.001)]
        p: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct NonlinearArgs {
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Regularization weight; 0.01 per voxel when omitted.
    #[arg(long)]
    big_lambda: Option<f64>,
    #[arg(long, default_value_t = 7)]
    tau: u32,
    #[arg(long, default_value_t = 0.25)]
    step: f64,
    #[arg(long)]
    multiresolution: bool,
}

fn parse_kind(s: &str) -> std::result::Result<PhantomKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            overrides,
            jobs,
            output,
        } => {
            let mut cfg = PipelineConfig::load(&config, &overrides)?;
            if let Some(j) = jobs {
                if j == 0 {
                    return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
                }
                cfg.run.jobs = j;
            }
            if let Some(o) = output {
                cfg.run.output_dir = o;
            }
            let m = run_pipeline(&cfg)?;
            println!(
                "{} steps executed; manifest in {}",
                m.steps.len(),
                cfg.run.output_dir.join(vbmkit::pipeline::MANIFEST_NAME).display()
            );
            for s in &m.subjects {
                if let (Some(a), Some(b), Some(j)) = (s.initial_mse, s.final_mse, s.min_jacobian) {
                    println!("{}: mse {a:.6e} -> {b:.6e}, min jacobian {j:.4}", s.id);
                }
            }
        }
        Command::Phantom {
            kind,
            dims,
            spacing,
            seed,
            offset,
            period,
            out,
        } => {
            let dims = match dims[..] {
                [n] => [n; 3],
                [x, y, z] => [x, y, z],
                _ => return Err(Error::InvalidArgument("--dims takes one or three values".into())),
            };
            let req = PhantomRequest {
                kind,
                dims,
                spacing_mm: spacing,
                seed,
                offset_vox: offset,
                period,
            };
            for p in write_phantom(&req, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate {
            pred,
            truth,
            field,
            mu,
            lambda,
            out,
        } => {
            let params = ElasticityParams::new(mu, lambda, 0.0)?;
            let cases = evaluate_files(&pred, &truth, &field, &params)?;
            match out {
                Some(p) => {
                    let f = std::fs::File::create(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                    write_metrics_csv(&cases, f)?;
                }
                None => write_metrics_csv(&cases, std::io::stdout().lock())?,
            }
        }
        Command::Register {
            moving,
            fixed,
            moving_mask,
            fixed_mask,
            nonlinear,
            out,
        } => {
            let n = NonlinearSection {
                mu: nonlinear.mu,
                lambda: nonlinear.lambda,
                big_lambda: nonlinear.big_lambda,
                tau: nonlinear.tau,
                iterations: nonlinear.iterations,
                initial_step: nonlinear.step,
                multiresolution: nonlinear.multiresolution,
                reject_folding: true,
            };
            let req = RegisterRequest {
                moving,
                fixed,
                masks: moving_mask.zip(fixed_mask),
                nonlinear: n,
                out_dir: out,
            };
            let s = register_files(&req)?;
            println!(
                "mse {:.6e} -> {:.6e} ({:.1}%), min jacobian {:.4}, {} iterations in {:.1} s",
                s.initial_mse,
                s.final_mse,
                100.0 * s.final_mse / s.initial_mse.max(f64::MIN_POSITIVE),
                s.min_jacobian,
                s.iterations,
                s.seconds
            );
        }
        Command::Vbm {
            maps,
            design,
            target,
            mask,
            fraction,
            repeats,
            seed,
            p,
            out,
        } => {
            let design = DesignMatrix::from_csv_path(&design, &target)?;
            let maps = maps.iter().map(read_nifti).collect::<Result<Vec<_>>>()?;
            let mask = mask.map(read_nifti).transpose()?;
            let section = VbmSection {
                design: None,
                target,
                fraction,
                repeats,
                p_threshold: p,
                mask: None,
            };
            let (report, _) = vbm_analysis(&maps, &design, mask.as_ref(), &section, seed, &out, &out)?;
            let path = out.join("vbm.json");
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            std::fs::write(&path, text + "\n").map_err(|e| Error::Io { path: path.clone(), source: e })?;
            println!(
                "dof {}, max |t| {:.4}, {} voxels above threshold",
                report.dof, report.max_abs_t, report.supra_threshold
            );
        }
    }
    Ok(())
}
