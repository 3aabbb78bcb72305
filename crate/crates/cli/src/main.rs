//! nowa: simulate a phase-mask camera, protect images with a null-space
//! watermark, and detect/localize tampering.

use clap::{Args, Parser, Subcommand};
use nowa_cli::config::Config;
use nowa_cli::error::{exit_code, CliError, Result};
use nowa_cli::{bench, io, pipeline, report};
use nowa_core::attacks::{apply_degradation, apply_tamper, DegradationSpec, TamperSpec};
use nowa_core::maskopt;
use nowa_core::optics::{height_profile, quantize_height};
use nowa_core::{Image, SecretKey};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nowa", version, about = "Null-space optical watermarking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML config; falls back to $NOWA_CONFIG, then defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a fresh 32-byte secret key from OS entropy.
    Keygen {
        /// Output .key path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the PSF for a mask design and export it.
    Psf {
        #[command(flatten)]
        config: ConfigArg,
        /// Mask design JSON {noll_index: coefficient_meters}.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Output .nwf tensor ([C,k,k] f32).
        #[arg(long)]
        out: PathBuf,
        /// Optional tone-mapped preview PNG.
        #[arg(long)]
        png: Option<PathBuf>,
        /// Optional operator export (.nwf c64 + JSON sidecar).
        #[arg(long)]
        operator_out: Option<PathBuf>,
    },
    /// Protect a scene: simulate capture, reconstruct, embed the signature.
    Protect {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Measured PSF (.nwf [C,k,k] f32); bypasses the wave-optics simulation.
        #[arg(long, conflicts_with = "mask")]
        psf: Option<PathBuf>,
        /// 32-byte key file.
        #[arg(long)]
        key: PathBuf,
        /// Input scene PNG (8- or 16-bit, grayscale or RGB).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output protected PNG (16-bit).
        #[arg(long)]
        out: PathBuf,
        /// Bundle metadata JSON.
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Capture-noise seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Verify an image; exit 0 when authentic, 10 when tampered.
    Verify {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Measured PSF (.nwf [C,k,k] f32); bypasses the wave-optics simulation.
        #[arg(long, conflicts_with = "mask")]
        psf: Option<PathBuf>,
        #[arg(long)]
        key: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Authenticity map PNG ([-1,1] mapped to [0,255]).
        #[arg(long)]
        map: Option<PathBuf>,
        /// Binary tamper mask PNG.
        #[arg(long)]
        mask_png: Option<PathBuf>,
        /// Ground-truth mask PNG; adds localization metrics to the report.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Report JSON (always written).
        #[arg(long)]
        report: PathBuf,
    },
    /// Apply a manifest of tamper/degradation specs, emitting image + mask pairs.
    Attack {
        #[arg(long = "in")]
        input: PathBuf,
        /// JSON array of tamper/degradation entries.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Seeded end-to-end benchmark over synthetic scenes.
    Bench {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Measured PSF (.nwf [C,k,k] f32); bypasses the wave-optics simulation.
        #[arg(long, conflicts_with = "mask")]
        psf: Option<PathBuf>,
        #[arg(long)]
        key: PathBuf,
        /// Number of evaluation scenes.
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Bench report JSON.
        #[arg(long)]
        report: PathBuf,
    },
    /// Derivative-free mask design; writes the best design JSON and a trace CSV.
    OptimizeMask {
        #[command(flatten)]
        config: ConfigArg,
        /// Evaluation budget per restart (default from config).
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Trace CSV (default: alongside --out).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Quantize a mask design to fabrication levels and export the height CSV.
    ExportMask {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        levels: usize,
        /// Level step in meters.
        #[arg(long, default_value_t = 200e-9)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(arg: &ConfigArg) -> Result<(Config, Option<PathBuf>)> {
    let (cfg, path) = Config::load(arg.config.as_deref())?;
    let dir = path.as_ref().and_then(|p| p.parent().map(Path::to_path_buf));
    Ok((cfg, dir))
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Keygen { out } => {
            let key = SecretKey::generate();
            io::save_key(&key, &out)?;
            println!(
                "key written to {} (fingerprint {})",
                out.display(),
                key.fingerprint()
            );
            Ok(exit_code::OK)
        }
        Command::Psf {
            config,
            mask,
            out,
            png,
            operator_out,
        } => {
            let (cfg, dir) = load_config(&config)?;
            let coeffs = cfg.mask_coeffs(mask.as_deref(), dir.as_deref())?;
            let psf = pipeline::build_psf(&cfg, &coeffs)?;
            io::write_psf(&psf, &out)?;
            let size = bench::BENCH_SIZE;
            let a = pipeline::build_operator(&cfg, &psf, (size, size))?;
            for c in 0..psf.channels() {
                println!(
                    "channel {c}: energy in crop {:.4}, kernel {}x{}",
                    psf.crop_energy[c],
                    psf.kernel_size(),
                    psf.kernel_size()
                );
            }
            println!(
                "null capacity at {size}x{size}: {:.4} (tau_rel {:.1e}, band {:?})",
                a.null_capacity(),
                a.tau_rel(),
                a.band().map(|b| [b.lo, b.hi])
            );
            println!("operator fingerprint: {}", a.fingerprint());
            if let Some(p) = png {
                save_psf_preview(&psf, &p)?;
            }
            if let Some(p) = operator_out {
                io::write_operator(&a, &p)?;
            }
            Ok(exit_code::OK)
        }
        Command::Protect {
            config,
            mask,
            psf,
            key,
            input,
            out,
            meta,
            seed,
        } => {
            let (cfg, dir) = load_config(&config)?;
            let key = io::load_key(&key)?;
            let scene = io::load_png(&input)?;
            let psf = resolve_psf(&cfg, mask.as_deref(), psf.as_deref(), dir.as_deref())?;
            let a = pipeline::build_operator(&cfg, &psf, (scene.height(), scene.width()))?;
            let bundle = pipeline::protect_image(&cfg, &a, &key, &scene, seed)?;
            io::save_png(&bundle.image, &out, 16)?;
            if let Some(p) = meta {
                let json = serde_json::to_vec_pretty(&bundle.meta).expect("meta serializes");
                std::fs::write(&p, json).map_err(|e| CliError::io(&p, e))?;
            }
            println!(
                "protected {} -> {} (alpha {:.3e}, leakage {:.3e}, psnr {:.1} dB)",
                input.display(),
                out.display(),
                bundle.meta.alpha,
                bundle.meta.leakage,
                bundle.meta.measured_psnr
            );
            Ok(exit_code::OK)
        }
        Command::Verify {
            config,
            mask,
            psf,
            key,
            input,
            map,
            mask_png,
            gt,
            report: report_path,
        } => {
            let (cfg, dir) = load_config(&config)?;
            let key = io::load_key(&key)?;
            let img = io::load_png(&input)?;
            let psf = resolve_psf(&cfg, mask.as_deref(), psf.as_deref(), dir.as_deref())?;
            let a = pipeline::build_operator(&cfg, &psf, (img.height(), img.width()))?;
            let gt_mask = match gt {
                Some(p) => {
                    let (m, h, w) = io::load_mask_png(&p)?;
                    if (h, w) != (img.height(), img.width()) {
                        return Err(CliError::Format(format!(
                            "{}: ground truth is {h}x{w}, image is {}x{}",
                            p.display(),
                            img.height(),
                            img.width()
                        )));
                    }
                    Some(m)
                }
                None => None,
            };
            let v = pipeline::verify_image(&cfg, &a, &key, &img, gt_mask.as_deref(), None)?;
            if let Some(p) = map {
                io::save_map_png(&v.map.scores, v.map.height, v.map.width, &p)?;
            }
            if let Some(p) = mask_png {
                io::save_mask_png(&v.report.mask, v.report.height, v.report.width, &p)?;
            }
            let rep = report::VerifyReport {
                schema_version: report::REPORT_SCHEMA_VERSION,
                global_score: v.report.global_score,
                authentic: v.verdict_authentic(),
                global_authentic: v.report.authentic,
                tampered_fraction: v.tampered_fraction(),
                theta_pix: v.report.theta_pix,
                theta_g: v.report.theta_global,
                metrics: v.metrics.as_ref().map(report::MetricsSummary::from),
                operator_fingerprint: a.fingerprint().to_string(),
                key_fingerprint: key.fingerprint(),
            };
            let json = serde_json::to_vec_pretty(&rep).expect("report serializes");
            std::fs::write(&report_path, json).map_err(|e| CliError::io(&report_path, e))?;
            let authentic = v.verdict_authentic();
            println!(
                "global score {:.4}, tampered area {:.1}% -> {}",
                v.report.global_score,
                100.0 * v.tampered_fraction(),
                if authentic { "authentic" } else { "tampered" }
            );
            Ok(if authentic {
                exit_code::OK
            } else {
                exit_code::TAMPERED
            })
        }
        Command::Attack {
            input,
            manifest,
            outdir,
        } => {
            let img = io::load_png(&input)?;
            let entries = load_manifest(&manifest)?;
            std::fs::create_dir_all(&outdir).map_err(|e| CliError::io(&outdir, e))?;
            for (i, entry) in entries.iter().enumerate() {
                let (out_img, mask) = match entry {
                    ManifestEntry::Tamper { spec, donor } => {
                        let donor_img = match donor {
                            Some(p) => Some(io::load_png(p)?),
                            None => None,
                        };
                        apply_tamper(&img, spec, donor_img.as_ref())?
                    }
                    ManifestEntry::Degradation(spec) => {
                        let out = apply_degradation(&img, spec)?;
                        let n = img.height() * img.width();
                        (out, vec![false; n])
                    }
                };
                let img_path = outdir.join(format!("{i:03}_image.png"));
                let mask_path = outdir.join(format!("{i:03}_mask.png"));
                io::save_png(&out_img, &img_path, 16)?;
                io::save_mask_png(&mask, img.height(), img.width(), &mask_path)?;
                println!("{} -> {}", i, img_path.display());
            }
            Ok(exit_code::OK)
        }
        Command::Bench {
            config,
            mask,
            psf,
            key,
            n,
            seed,
            report: report_path,
        } => {
            let (cfg, dir) = load_config(&config)?;
            let key = io::load_key(&key)?;
            let psf_data = resolve_psf(&cfg, mask.as_deref(), psf.as_deref(), dir.as_deref())?;
            let rep = bench::run_bench_with_psf(&cfg, &key, n, seed, &psf_data)?;
            let json = serde_json::to_vec_pretty(&rep).expect("report serializes");
            std::fs::write(&report_path, json).map_err(|e| CliError::io(&report_path, e))?;
            for c in &rep.conditions {
                println!(
                    "{:16} AUC {:.3}  IoU {:.3}  F1 {:.3}  verdicts {}/{} auth, {}/{} detected",
                    c.name,
                    c.auc,
                    c.iou,
                    c.f1,
                    c.authentic_pass,
                    c.scenes,
                    c.tampered_detected,
                    c.scenes
                );
            }
            println!("report written to {}", report_path.display());
            Ok(exit_code::OK)
        }
        Command::OptimizeMask {
            config,
            budget,
            out,
            trace,
        } => {
            let (cfg, dir) = load_config(&config)?;
            let obj = cfg.mask_objective()?;
            let initial = cfg.mask_coeffs(None, dir.as_deref())?;
            let budget = budget.unwrap_or(cfg.maskopt.budget);
            let result = maskopt::optimize(
                Some(&initial),
                &cfg.optical_config(),
                &obj,
                budget,
                cfg.maskopt.restarts,
                cfg.maskopt.seed,
            )?;
            io::save_mask_json(&result.best, &out)?;
            let trace_path = trace.unwrap_or_else(|| out.with_extension("trace.csv"));
            write_trace_csv(&result.trace, &trace_path)?;
            println!(
                "best objective {:.4} (capacity {:.4}, uniformity {:.3}, penalty {:.3}) after {} evaluations",
                result.objective,
                result.capacity,
                result.uniformity,
                result.penalty,
                result.evaluations
            );
            println!("design written to {}", out.display());
            Ok(exit_code::OK)
        }
        Command::ExportMask {
            config,
            mask,
            levels,
            step,
            out,
        } => {
            let (cfg, dir) = load_config(&config)?;
            let coeffs = cfg.mask_coeffs(mask.as_deref(), dir.as_deref())?;
            let optical = cfg.optical_config();
            let h = height_profile(&coeffs, &optical)?;
            let q = quantize_height(&h, levels, step)?;
            io::write_height_csv(&q.heights, optical.pupil_samples, &out)?;
            if q.quantization_loss {
                eprintln!(
                    "warning: height range exceeds the {levels}-level span by more than 50%; \
                     the quantized mask will differ substantially"
                );
            }
            println!("height map written to {}", out.display());
            Ok(exit_code::OK)
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ManifestEntry {
    Tamper {
        #[serde(flatten)]
        spec: TamperSpec,
        donor: Option<PathBuf>,
    },
    Degradation(DegradationSpec),
}

/// Measured PSF when given, otherwise the wave-optics simulation of the
/// configured mask design.
fn resolve_psf(
    cfg: &Config,
    mask: Option<&Path>,
    psf: Option<&Path>,
    config_dir: Option<&Path>,
) -> Result<nowa_core::Psf> {
    match psf {
        Some(p) => io::read_psf(p),
        None => {
            let coeffs = cfg.mask_coeffs(mask, config_dir)?;
            pipeline::build_psf(cfg, &coeffs)
        }
    }
}

fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Format(format!("{}: manifest: {e}", path.display())))
}

fn write_trace_csv(trace: &[maskopt::TraceEntry], path: &Path) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "eval_index,objective,capacity,uniformity,penalty")
        .map_err(|e| CliError::io(path, e))?;
    for t in trace {
        writeln!(
            w,
            "{},{:.9e},{:.9e},{:.9e},{:.9e}",
            t.eval, t.objective, t.capacity, t.uniformity, t.penalty
        )
        .map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

/// Tone-mapped preview: per-channel max-normalized, square-root compressed.
fn save_psf_preview(psf: &nowa_core::Psf, path: &Path) -> Result<()> {
    let k = psf.kernel_size();
    let c = psf.channels();
    let mut data = vec![0.0; c * k * k];
    for ch in 0..c {
        let kern = psf.channel(ch);
        let max = kern.iter().cloned().fold(0.0f64, f64::max).max(1e-30);
        for (o, &v) in data[ch * k * k..(ch + 1) * k * k].iter_mut().zip(kern) {
            *o = (v / max).sqrt();
        }
    }
    let img = Image::from_planar(c, k, k, data).map_err(CliError::Core)?;
    io::save_png(&img, path, 8)
}
