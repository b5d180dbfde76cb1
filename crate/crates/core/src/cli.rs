//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data
//! error (including a failed `selftest`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::dsp::{design_filterbank, segment_signal, AnalysisConfig, CochlearFilterbank};
use crate::error::Error;
use crate::fdlp::{am_test_signal, one_over_f_compensate, FdlpAnalyzer};
use crate::frontend::{
    load_weights, save_weights, ModulationWeights, SpectrogramExtractor, TrainOutput,
    TrainSchedule, Trainer, WeightMode,
};
use crate::infotheory::mi_analysis;
use crate::io::{check_sample_rate, config_hash, hz_label, read_wav, write_wav, CorpusManifest, ExportTable};
use crate::selftest::{carrier_sweep, default_carriers, two_path_deviation, Region};

/// Environment variable naming the default export directory.
pub const EXPORT_DIR_ENV: &str = "FDLP_EXPORT_DIR";

#[derive(Debug, Parser)]
#[command(name = "fdlp", version, about = "FDLP modulation-spectrum analysis")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every random initialization.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for exports.
    #[arg(long, global = true, env = EXPORT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Serialize)]
struct AnalysisArgs {
    /// Analysis window in seconds.
    #[arg(long, default_value_t = 1.5)]
    window: f64,
    /// Hop between windows in seconds.
    #[arg(long, default_value_t = 0.01)]
    hop: f64,
    /// Linear prediction order.
    #[arg(long, default_value_t = 80)]
    order: usize,
    /// Modulation coefficients per band.
    #[arg(long, default_value_t = 80)]
    ncoef: usize,
    /// Number of cochlear bands (default depends on the subcommand).
    #[arg(long)]
    bands: Option<usize>,
    /// Noise floor in dB relative to the window's mean power.
    #[arg(long, default_value_t = -40.0, allow_hyphen_values = true)]
    noise_floor_db: f64,
    /// Disable the noise floor.
    #[arg(long)]
    no_noise_floor: bool,
    /// Subtract each window's mean.
    #[arg(long)]
    remove_dc: bool,
    /// Pre-emphasis coefficient.
    #[arg(long)]
    pre_emphasis: Option<f64>,
}

impl AnalysisArgs {
    fn config(&self, default_bands: usize) -> AnalysisConfig {
        AnalysisConfig {
            window_len_s: self.window,
            hop_s: self.hop,
            model_order: self.order,
            n_mod_coeffs: self.ncoef,
            n_bands: self.bands.unwrap_or(default_bands),
            noise_floor_db: (!self.no_noise_floor).then_some(self.noise_floor_db),
            remove_dc: self.remove_dc,
            pre_emphasis: self.pre_emphasis,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Magnitude,
    RealImag,
}

impl From<ModeArg> for WeightMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Magnitude => WeightMode::Magnitude,
            ModeArg::RealImag => WeightMode::RealImag,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write an amplitude-modulated tone as 16-bit WAV.
    SynthAm {
        #[arg(long, default_value_t = 1000.0)]
        carrier: f64,
        #[arg(long = "mod-freq", default_value_t = 2.0)]
        mod_freq: f64,
        #[arg(long, default_value_t = 0.5)]
        depth: f64,
        #[arg(long, default_value_t = 1.5)]
        duration: f64,
        #[arg(long, default_value_t = 16000)]
        rate: u32,
        /// Peak amplitude of the unmodulated carrier.
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
        /// Output file (default: am.wav in the export directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Mean modulation magnitudes of one file, per band.
    Modspec {
        input: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// Multiply each bin by its modulation frequency.
        #[arg(long)]
        compensate: bool,
    },
    /// Mutual information between modulation magnitudes and frame labels.
    Mi {
        manifest: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long, default_value_t = 100)]
        bins: usize,
        #[arg(long, default_value_t = 48)]
        classes: usize,
    },
    /// Log-energy FDLP spectrogram at 100 frames per second.
    FdlpSpectrogram {
        input: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// Modulation weight file; band count defaults to the file's.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Learn modulation weights with a linear frame classifier.
    LearnWeights {
        manifest: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long, default_value_t = 48)]
        classes: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Magnitude)]
        mode: ModeArg,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
        /// Epochs with the weights held fixed.
        #[arg(long, default_value_t = 60)]
        freeze: usize,
        #[arg(long, default_value_t = 0.5)]
        lr_classifier: f64,
        #[arg(long, default_value_t = 2.0)]
        lr_weights: f64,
        /// Weight file to write (default: weights.bin in the export directory).
        #[arg(long)]
        weights_out: Option<PathBuf>,
    },
    /// Train a classifier on top of fixed, previously learned weights.
    ApplyWeights {
        manifest: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 48)]
        classes: usize,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        lr_classifier: f64,
    },
    /// Carrier sweep of a 2 Hz AM tone and the two-route modulation check.
    Selftest {
        /// Speech-like frames for the two-route check.
        #[arg(long, default_value_t = 10)]
        frames: usize,
    },
}

/// Distinguishes bad invocations from failures on the data.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Check(msg)) => {
            eprintln!("selftest failed: {msg}");
            2
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    if cli.jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    match &cli.command {
        Command::SynthAm {
            carrier,
            mod_freq,
            depth,
            duration,
            rate,
            scale,
            output,
        } => {
            if !(*scale > 0.0 && scale * (1.0 + depth) <= 1.0) {
                return Err(Failure::Usage(
                    "--scale must be positive and keep the peak within full scale".into(),
                ));
            }
            let sig = am_test_signal(*carrier, *mod_freq, *depth, *duration, *rate)
                .map_err(usage)?;
            let samples = sig.samples().iter().map(|x| x * scale).collect();
            let audio = crate::dsp::AudioBuffer::new(samples, *rate)?;
            let path = output.clone().unwrap_or_else(|| cli.out_dir.join("am.wav"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            write_wav(&path, &audio)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Modspec {
            input,
            analysis,
            compensate,
        } => modspec(cli, input, analysis, *compensate),
        Command::Mi {
            manifest,
            analysis,
            bins,
            classes,
        } => mi(cli, manifest, analysis, *bins, *classes),
        Command::FdlpSpectrogram {
            input,
            analysis,
            weights,
        } => spectrogram(cli, input, analysis, weights.as_deref()),
        Command::LearnWeights {
            manifest,
            analysis,
            classes,
            mode,
            epochs,
            freeze,
            lr_classifier,
            lr_weights,
            weights_out,
        } => {
            let sched = TrainSchedule {
                total_epochs: *epochs,
                freeze_epochs: *freeze,
                lr_classifier: *lr_classifier,
                lr_weights: *lr_weights,
            };
            sched.validate().map_err(usage)?;
            let cfg = analysis.config(50);
            let (trainer, _) = trainer_for(manifest, &cfg, *classes)?;
            let init = ModulationWeights::ones((*mode).into(), cfg.n_bands, cfg.n_mod_coeffs)?;
            let out = trainer.train(&sched, init, cli.seed)?;
            let path = weights_out
                .clone()
                .unwrap_or_else(|| cli.out_dir.join("weights.bin"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            save_weights(&out.weights, &path)?;
            println!("wrote {}", path.display());
            let hash = config_hash(&(&cfg, &sched, cli.seed, *classes, manifest));
            export_training(cli, &trainer, &out, &cfg, &hash, "learn_weights")?;
            Ok(())
        }
        Command::ApplyWeights {
            manifest,
            analysis,
            weights,
            classes,
            epochs,
            lr_classifier,
        } => {
            let loaded = load_weights(weights)?;
            let mut analysis_cfg = analysis.config(loaded.n_bands());
            if analysis.bands.is_none() && analysis.ncoef == 80 {
                analysis_cfg.n_mod_coeffs = loaded.n_coeffs();
            }
            loaded.check_dims(analysis_cfg.n_bands, analysis_cfg.n_mod_coeffs)?;
            let sched = TrainSchedule {
                total_epochs: *epochs,
                freeze_epochs: *epochs,
                lr_classifier: *lr_classifier,
                lr_weights: 0.0,
            };
            sched.validate().map_err(usage)?;
            let (trainer, _) = trainer_for(manifest, &analysis_cfg, *classes)?;
            let out = trainer.train(&sched, loaded.clone(), cli.seed)?;
            let unchanged = out
                .weights
                .params()
                .iter()
                .zip(loaded.params())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !unchanged {
                return Err(Failure::Check("transferred weights changed during training".into()));
            }
            let hash = config_hash(&(&analysis_cfg, &sched, cli.seed, *classes, manifest, loaded.params()));
            export_training(cli, &trainer, &out, &analysis_cfg, &hash, "apply_weights")?;
            Ok(())
        }
        Command::Selftest { frames } => selftest(*frames),
    }
}

fn usage(e: Error) -> Failure {
    match e {
        Error::InvalidArgument(msg) => Failure::Usage(msg),
        other => Failure::Data(other),
    }
}

fn filterbank_for(cfg: &AnalysisConfig, sample_rate: u32) -> std::result::Result<CochlearFilterbank, Failure> {
    cfg.validate(sample_rate).map_err(usage)?;
    design_filterbank(cfg.n_bands, cfg.window_samples(sample_rate), sample_rate).map_err(usage)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into())
}

fn report(paths: (PathBuf, PathBuf)) {
    println!("wrote {}", paths.0.display());
    println!("wrote {}", paths.1.display());
}

fn mod_columns(cfg: &AnalysisConfig) -> Vec<f64> {
    (0..cfg.n_mod_coeffs)
        .map(|n| n as f64 * cfg.resolution_hz())
        .collect()
}

fn band_rows(fb: &CochlearFilterbank) -> Vec<String> {
    fb.centers_hz().into_iter().map(hz_label).collect()
}

fn modspec(cli: &Cli, input: &Path, analysis: &AnalysisArgs, compensate: bool) -> Outcome {
    let audio = read_wav(input)?;
    check_sample_rate(input, audio.sample_rate())?;
    let cfg = analysis.config(20);
    let fb = filterbank_for(&cfg, audio.sample_rate())?;
    let analyzer = FdlpAnalyzer::new(fb.clone(), cfg.clone())?;
    let frames = segment_signal(&audio, &cfg)?;
    let spectra = frames
        .par_iter()
        .map(|f| analyzer.modulation_spectrum(f))
        .collect::<crate::Result<Vec<_>>>()?;
    let (nb, nm) = (cfg.n_bands, cfg.n_mod_coeffs);
    let mut sums = vec![vec![0.0; nm]; nb];
    let mut counts = vec![0usize; nb];
    for frame in &spectra {
        for (b, ms) in frame.bands.iter().enumerate() {
            let Some(ms) = ms else { continue };
            let ms = if compensate {
                one_over_f_compensate(ms)
            } else {
                ms.clone()
            };
            counts[b] += 1;
            sums[b]
                .iter_mut()
                .zip(ms.magnitudes())
                .for_each(|(s, m)| *s += m);
        }
    }
    let values = sums
        .into_iter()
        .zip(&counts)
        .map(|(row, &n)| {
            row.into_iter()
                .map(|s| if n > 0 { s / n as f64 } else { f64::NAN })
                .collect()
        })
        .collect();
    let hash = config_hash(&(&cfg, compensate, file_stem(input)));
    let table = ExportTable::new(
        "modulation-magnitude",
        hash,
        ("band_center_hz", band_rows(&fb)),
        ("modulation_hz", mod_columns(&cfg)),
        values,
    )?;
    report(table.write(&cli.out_dir, &format!("{}_modspec", file_stem(input)))?);
    println!("{} windows analysed", spectra.len());
    Ok(())
}

fn mi(cli: &Cli, manifest: &Path, analysis: &AnalysisArgs, bins: usize, classes: usize) -> Outcome {
    if bins < 2 {
        return Err(Failure::Usage("--bins must be at least 2".into()));
    }
    if classes < 1 {
        return Err(Failure::Usage("--classes must be at least 1".into()));
    }
    let cfg = analysis.config(20);
    let corpus = CorpusManifest::read(manifest)?.load(classes)?;
    let fb = filterbank_for(&cfg, corpus[0].audio.sample_rate())?;
    let m = mi_analysis(&corpus, &fb, &cfg, bins)?;
    let hash = config_hash(&(&cfg, bins, classes, manifest));
    let table = ExportTable::new(
        "mutual-information-bits",
        hash.clone(),
        ("band_center_hz", band_rows(&fb)),
        ("modulation_hz", mod_columns(&cfg)),
        m.mi.clone(),
    )?;
    report(table.write(&cli.out_dir, "mi")?);
    let avg = ExportTable::new(
        "mutual-information-average-bits",
        hash,
        ("band_center_hz", vec!["average".into()]),
        ("modulation_hz", mod_columns(&cfg)),
        vec![m.average_curve()],
    )?;
    report(avg.write(&cli.out_dir, "mi_average")?);
    println!("{} windows, max MI {:.4} bits", m.n_windows, m.max());
    Ok(())
}

fn spectrogram(cli: &Cli, input: &Path, analysis: &AnalysisArgs, weights: Option<&Path>) -> Outcome {
    let audio = read_wav(input)?;
    check_sample_rate(input, audio.sample_rate())?;
    let loaded = weights.map(load_weights).transpose()?;
    let mut cfg = analysis.config(loaded.as_ref().map_or(20, |w| w.n_bands()));
    let w = match loaded {
        Some(w) => {
            if analysis.ncoef == 80 {
                cfg.n_mod_coeffs = w.n_coeffs();
            }
            w.check_dims(cfg.n_bands, cfg.n_mod_coeffs)?;
            w
        }
        None => ModulationWeights::ones(WeightMode::Magnitude, cfg.n_bands, cfg.n_mod_coeffs)?,
    };
    let fb = filterbank_for(&cfg, audio.sample_rate())?;
    let ex = SpectrogramExtractor::new(&fb, &cfg).map_err(usage)?;
    let spec = ex.spectrogram(&ex.cepstra(&audio)?, &w)?;
    let times: Vec<String> = (0..spec.n_frames())
        .map(|f| hz_label(f as f64 / spec.frame_rate_hz))
        .collect();
    let hash = config_hash(&(&cfg, file_stem(input), w.params()));
    let table = ExportTable::new(
        "fdlp-spectrogram-log-energy",
        hash,
        ("frame_start_s", times),
        ("band_center_hz", fb.centers_hz()),
        spec.frames,
    )?;
    report(table.write(&cli.out_dir, &format!("{}_spectrogram", file_stem(input)))?);
    Ok(())
}

fn trainer_for(
    manifest: &Path,
    cfg: &AnalysisConfig,
    classes: usize,
) -> std::result::Result<(Trainer, CochlearFilterbank), Failure> {
    let corpus = CorpusManifest::read(manifest)?.load(classes)?;
    let fb = filterbank_for(cfg, corpus[0].audio.sample_rate())?;
    Ok((Trainer::new(&corpus, &fb, cfg).map_err(usage)?, fb))
}

fn export_training(
    cli: &Cli,
    trainer: &Trainer,
    out: &TrainOutput,
    cfg: &AnalysisConfig,
    hash: &str,
    stem: &str,
) -> Outcome {
    let epochs: Vec<f64> = (0..out.losses.len()).map(|e| e as f64).collect();
    let losses = ExportTable::new(
        "training-loss",
        hash.to_string(),
        ("series", vec!["cross_entropy".into()]),
        ("epoch", epochs),
        vec![out.losses.clone()],
    )?;
    report(losses.write(&cli.out_dir, &format!("{stem}_loss"))?);
    let w = &out.weights;
    let mut rows = band_rows(trainer.extractor().filterbank());
    let mut values: Vec<Vec<f64>> = (0..w.n_bands()).map(|b| w.band_real(b)).collect();
    if w.mode() == WeightMode::RealImag {
        rows = rows
            .iter()
            .flat_map(|r| [format!("{r}:re"), format!("{r}:im")])
            .collect();
        values = (0..w.n_bands())
            .flat_map(|b| {
                let (re, im): (Vec<f64>, Vec<f64>) =
                    (0..w.n_coeffs()).map(|n| w.node(b, n)).unzip();
                [re, im]
            })
            .collect();
    }
    let table = ExportTable::new(
        "modulation-weights",
        hash.to_string(),
        ("band_center_hz", rows),
        ("modulation_hz", mod_columns(cfg)),
        values,
    )?;
    report(table.write(&cli.out_dir, &format!("{stem}_weights"))?);
    let err = trainer.frame_error(&out.weights, &out.classifier);
    println!(
        "loss {:.6} -> {:.6}, frame error {:.4}",
        out.losses.first().copied().unwrap_or(f64::NAN),
        out.losses.last().copied().unwrap_or(f64::NAN),
        err
    );
    Ok(())
}

fn selftest(frames: usize) -> Outcome {
    let cfg = AnalysisConfig::default();
    let sweep = carrier_sweep(&cfg, 16000, 1000.0, 2.0, 0.5, &default_carriers())?;
    println!(
        "carrier sweep: band {} (centre {:.1} Hz), 2 Hz AM, depth 0.5",
        sweep.band, sweep.band_center_hz
    );
    println!("{:>10} {:>8} {:>11} {:>10}  result", "carrier_hz", "weight", "region", "mag_2hz");
    for row in &sweep.rows {
        let region = match row.region {
            Region::Passband => "passband",
            Region::Outside => "outside",
            Region::Transition => "transition",
        };
        println!(
            "{:>10.1} {:>8.3} {:>11} {:>10.4}  {}",
            row.carrier_hz,
            row.band_weight,
            region,
            row.magnitude,
            if row.passes(sweep.depth) { "pass" } else { "FAIL" }
        );
    }
    let dev = two_path_deviation(&cfg, 16000, frames, 16384, 0)?;
    let two_path_ok = dev < 1e-6;
    println!(
        "two-route agreement over {frames} frames x {} bands: max relative gap {dev:.3e}  {}",
        cfg.n_bands,
        if two_path_ok { "pass" } else { "FAIL" }
    );
    match (sweep.passes(), two_path_ok) {
        (true, true) => {
            println!("selftest passed");
            Ok(())
        }
        (false, _) => Err(Failure::Check("carrier sweep out of tolerance".into())),
        (_, false) => Err(Failure::Check(format!("two-route gap {dev:.3e}"))),
    }
}
