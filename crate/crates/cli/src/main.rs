//! `rsplat` command-line workflows.
//!
//! Exit codes: 0 success, 1 numeric or convergence failure, 2 usage or
//! validation error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use rsplat::field::{sample_noise, IlluminationLatent};
use rsplat::gradcheck::{run_gradcheck, GradCheckConfig, Suite};
use rsplat::scene::{read_image, read_scene, write_image, PpmDepth};
use rsplat::synth::{make_dataset, Split, SynthDataset, SynthSpec};
use rsplat::train::{evaluate, run_training, TrainConfig, TrainState, Variant};
use rsplat::Error;

#[derive(Parser, Debug)]
#[command(name = "rsplat", version, about = "Uncertainty-aware Gaussian splatting with a shared illumination field")]
struct Cli {
    /// Seed for the command's randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-style dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        gaussians: usize,
        /// Training views.
        #[arg(long, default_value_t = 24)]
        views: usize,
        #[arg(long, default_value_t = 4)]
        test_views: usize,
        /// Styles beyond the identity style.
        #[arg(long, default_value_t = 3)]
        styles: usize,
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0.03)]
        jitter: f64,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train on a dataset and write a checkpoint directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Render one camera of a checkpoint.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        camera: usize,
        /// `from-image PATH`, `sample SEED` or `style-queue M`; `sample -`
        /// takes the seed from `--seed`.
        #[arg(long, num_args = 2, value_names = ["KIND", "VALUE"])]
        latent: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-view PSNR and SSIM as CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
    /// Run the finite-difference gradient suites.
    CheckGrad {
        #[arg(long, default_value = "all")]
        cases: String,
    },
    /// Summarize a checkpoint, dataset, scene or image.
    Inspect { path: PathBuf },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    let h = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    Ok((w, h))
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?}, expected train or test")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::NumericDomain(_) | Error::NonFinite { .. }) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth { out, gaussians, views, test_views, styles, size, jitter, force } => {
            if !force && out.exists() && out.read_dir()?.next().is_some() {
                bail!(Error::Validation(format!("{} is not empty; pass --force to overwrite", out.display())));
            }
            let spec = SynthSpec {
                gaussians,
                train_views: views,
                test_views,
                styles,
                width: size.0,
                height: size.1,
                jitter,
                seed: seed.unwrap_or(0),
                ..SynthSpec::default()
            };
            let data = make_dataset(&spec)?;
            data.write(&out)?;
            eprintln!("wrote {} views x {} styles to {}", data.cameras.len(), data.style_count(), out.display());
        }
        Command::Train { data, out, config, variant, iterations } => {
            let mut cfg = match &config {
                Some(path) => TrainConfig::read(path)?,
                None => TrainConfig::default(),
            };
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            cfg.validate()?;
            let data = SynthDataset::read(&data)?;
            eprintln!("training {} for {} iterations", cfg.variant, cfg.iterations);
            let outcome = run_training(cfg, &data)?;
            outcome.state.save(&out)?;
            std::fs::write(out.join("heldout.csv"), outcome.heldout.to_csv())?;
            println!(
                "gaussians {} heldout psnr {:.4} ssim {:.4}",
                outcome.state.scene.len(),
                outcome.heldout.psnr,
                outcome.heldout.ssim
            );
        }
        Command::Render { ckpt, camera, latent, out } => {
            let state = TrainState::load(&ckpt)?;
            let cam = state.cameras.get(camera).ok_or_else(|| {
                Error::Validation(format!("camera {camera} out of range; checkpoint has {}", state.cameras.len()))
            })?;
            let coeffs = if state.config.variant.neural_field() {
                let latent = resolve_latent(&state, latent.as_deref(), seed)?;
                let colors = state.field.view_shared_colors(&state.scene, &latent, state.cond_camera())?;
                eprintln!("colors {}", colors.digest());
                colors.coeffs
            } else {
                if latent.is_some() {
                    eprintln!("variant {} has no illumination field; --latent ignored", state.config.variant);
                }
                state.scene.sh_coefficients()
            };
            let img = state.render_with(cam, &coeffs)?.clamped();
            write_image(&out, &img, PpmDepth::Eight)?;
        }
        Command::Eval { ckpt, data, split } => {
            let state = TrainState::load(&ckpt)?;
            let data = SynthDataset::read(&data)?;
            let report = evaluate(&state, &data, split)?;
            print!("{}", report.to_csv());
        }
        Command::CheckGrad { cases } => {
            let suites = if cases.eq_ignore_ascii_case("all") {
                Suite::ALL.to_vec()
            } else {
                cases.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<Suite>, _>>()?
            };
            let cfg = GradCheckConfig {
                seed: seed.unwrap_or(0),
                corrupt: std::env::var("RSPLAT_CORRUPT_GRADIENT").ok(),
                ..GradCheckConfig::default()
            };
            let report = run_gradcheck(&suites, &cfg)?;
            println!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Inspect { path } => print!("{}", inspect(&path)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn resolve_latent(
    state: &TrainState,
    latent: Option<&[String]>,
    seed: Option<u64>,
) -> anyhow::Result<IlluminationLatent> {
    let Some([kind, value]) = latent else {
        bail!(Error::Validation("--latent is required for a checkpoint with an illumination field".into()));
    };
    let bad = |what: &str| anyhow!(Error::Validation(format!("--latent {kind}: bad {what} {value:?}")));
    match kind.as_str() {
        "from-image" => {
            let img = read_image(value).with_context(|| format!("reading {value}"))?;
            Ok(state.field.encode(&img)?)
        }
        "sample" => {
            let s = match value.as_str() {
                "-" => seed.unwrap_or(0),
                v => v.parse().map_err(|_| bad("seed"))?,
            };
            let noise = sample_noise(state.field.config(), s);
            Ok(state.field.generate_latent(&noise)?)
        }
        "style-queue" => {
            let m: usize = value.parse().map_err(|_| bad("style"))?;
            if m >= state.bank.styles() {
                bail!(Error::Validation(format!("style {m} out of range; checkpoint has {}", state.bank.styles())));
            }
            if state.bank.queue(m).len() == 0 {
                bail!(Error::Validation(format!("style {m} queue is empty")));
            }
            Ok(state.style_latent(m)?)
        }
        _ => bail!(Error::Validation(format!(
            "unknown latent kind {kind:?}, expected from-image, sample or style-queue"
        ))),
    }
}

fn inspect(path: &Path) -> anyhow::Result<String> {
    let mut out = String::new();
    if path.join("optimizer.bin").exists() {
        let s = TrainState::load(path)?;
        out += &format!("checkpoint {}\n", path.display());
        out += &format!("variant {}\niteration {}\n", s.config.variant, s.iteration);
        out += &format!(
            "gaussians {}\nsh_degree {}\nembed_dim {}\n",
            s.scene.len(),
            s.scene.sh_degree(),
            s.scene.embed_dim()
        );
        out += &format!("field_parameters {}\n", s.field.param_count());
        for m in 0..s.bank.styles() {
            out += &format!("queue {m} {}\n", s.bank.queue(m).len());
        }
        out += &format!("clean_pool {}\n", s.bank.clean_pool().len());
        if let Some(row) = s.metrics.last() {
            out += &format!(
                "last_metrics iteration {} l_rec {:.6} l_contra {:.6} l_ucn {:.6} psnr {:.4}\n",
                row.iteration, row.l_rec, row.l_contra, row.l_ucn, row.psnr
            );
        }
    } else if path.join("manifest.txt").exists() {
        let d = SynthDataset::read(path)?;
        out += &format!("dataset {}\n", path.display());
        out += &format!(
            "views {} train {} test {}\nstyles {}\nsize {}x{}\nclean_images {}\ngaussians {}\n",
            d.cameras.len(),
            d.views(Split::Train).len(),
            d.views(Split::Test).len(),
            d.style_count(),
            d.spec.width,
            d.spec.height,
            d.clean.len(),
            d.scene.len()
        );
    } else if path.extension().is_some_and(|e| e == "ppm") {
        let img = read_image(path)?;
        out += &format!("image {}x{}\n", img.width(), img.height());
    } else if path.is_file() {
        let s = read_scene(path)?;
        out += &format!("scene gaussians {} sh_degree {} embed_dim {}\n", s.len(), s.sh_degree(), s.embed_dim());
    } else {
        bail!(Error::Validation(format!("{} is not a checkpoint, dataset, scene or image", path.display())));
    }
    Ok(out)
}
