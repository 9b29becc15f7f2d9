use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use t3sc::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use t3sc::config::{ExperimentConfig, Normalization};
use t3sc::hsi::{self, HsiCube};
use t3sc::metrics::MetricReport;
use t3sc::model::T3sc;
use t3sc::noise::{self, NoiseSpec};
use t3sc::train::{ssl_denoise, ImagePair, SslDataset, SupervisedDataset, TrainMode, Trainer};
use t3sc::{Error, Result, Tensor};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "t3sc", version, about = "Hyperspectral denoising with trainable sparse coding")]
struct Cli {
    /// Worker threads; defaults to $T3SC_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add synthetic noise to a cube and record the drawn parameters.
    Simulate {
        #[arg(long = "in")]
        input: PathBuf,
        /// iid:S, band:MIN:MAX, correlated[:B:E] or stripes[:S]
        #[arg(long)]
        noise: NoiseSpec,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Sidecar text file; defaults to `<out>.noise.txt`.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Train a model from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; overrides output.checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides train.max_steps.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Denoise a cube with a trained checkpoint.
    Denoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Estimate per-band weights with the checkpoint's noise estimator.
        #[arg(long)]
        blind: bool,
        #[arg(long)]
        sensor: Option<String>,
        /// Masked-band inference with this many hidden bands per pass;
        /// defaults to train.ssl_n for self-supervised checkpoints.
        #[arg(long)]
        ssl_n: Option<usize>,
    },
    /// Compare a cube against a reference.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Human-readable report; the machine-readable one goes to `<out>.kv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Describe a cube or a checkpoint.
    Info {
        #[arg(long = "in", conflicts_with = "ckpt", required_unless_present = "ckpt")]
        input: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Convert a band-sequential raster to HSR.
    Import {
        #[arg(long)]
        header: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = NormArg::None)]
        normalize: NormArg,
        /// Reuse the percentile statistics stored in this cube.
        #[arg(long)]
        stats_from: Option<PathBuf>,
        #[arg(long)]
        sensor: Option<String>,
    },
    /// Write procedurally generated cubes with values in [0, 1].
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        bands: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        sensor: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Percentile,
    Global,
    None,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("T3SC_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Error::config("T3SC_THREADS", format!("not a thread count: {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::State(e.to_string()))?;
    }
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate {
            input,
            noise,
            seed,
            out,
            sidecar,
        } => simulate(&input, &noise, seed, &out, sidecar),
        Command::Train {
            config,
            out,
            resume,
            seed,
            max_steps,
        } => train(&config, out, resume, seed, max_steps),
        Command::Denoise {
            ckpt,
            input,
            out,
            blind,
            sensor,
            ssl_n,
        } => denoise(&ckpt, &input, &out, blind, sensor, ssl_n),
        Command::Eval { reference, test, out } => eval(&reference, &test, out),
        Command::Info { input, ckpt } => match (input, ckpt) {
            (Some(p), _) => info_cube(&p),
            (_, Some(p)) => info_ckpt(&p),
            _ => unreachable!("clap requires one of the two"),
        },
        Command::Import {
            header,
            data,
            out,
            normalize,
            stats_from,
            sensor,
        } => import(&header, &data, &out, normalize, stats_from, sensor),
        Command::Synth {
            out_dir,
            count,
            bands,
            size,
            seed,
            sensor,
        } => synth(&out_dir, count, bands, size, seed, sensor),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn simulate(input: &Path, spec: &NoiseSpec, seed: u64, out: &Path, sidecar: Option<PathBuf>) -> Result<()> {
    let cube = hsi::read_hsr(input)?;
    let (noisy, draw) = noise::apply(&cube.data, spec, seed)?;
    let mut result = cube.with_data(noisy)?;
    result.extra.insert("noise".into(), spec.to_string());
    result.extra.insert("noise_seed".into(), seed.to_string());
    hsi::write_hsr(out, &result)?;
    let sidecar = sidecar.unwrap_or_else(|| with_suffix(out, ".noise.txt"));
    fs::write(&sidecar, draw.to_text(spec, seed))?;
    println!("wrote {} and {}", out.display(), sidecar.display());
    Ok(())
}

/// Reads and normalizes the training cubes of `cfg`.
fn load_training_cubes(cfg: &ExperimentConfig, sensor: &str, bands: usize) -> Result<Vec<Tensor<f32>>> {
    let mut cubes = Vec::with_capacity(cfg.data.train.len());
    for (i, p) in cfg.data.train.iter().enumerate() {
        let cube = hsi::read_hsr(p)?;
        if let Some(id) = &cube.sensor_id {
            if id != sensor {
                log::warn!("{}: sensor_id {id:?} differs from {sensor:?}", p.display());
            }
        }
        if cube.bands() != bands {
            return Err(Error::config(
                format!("data.train[{i}]"),
                format!("{} has {} bands, sensor {sensor:?} has {bands}", p.display(), cube.bands()),
            ));
        }
        cubes.push(cube.data);
    }
    Ok(match cfg.data.normalization {
        Normalization::None => cubes,
        Normalization::Global => cubes.iter().map(|c| hsi::normalize_global(c).0).collect(),
        Normalization::Percentile => {
            let refs: Vec<&Tensor<f32>> = cubes.iter().collect();
            hsi::normalize_percentile(&refs)?.0
        }
    })
}

fn patches_of(cubes: &[Tensor<f32>], cfg: &ExperimentConfig) -> Result<Vec<Tensor<f32>>> {
    let pc = cfg.patch_config();
    let patches: Vec<Tensor<f32>> = cubes
        .iter()
        .enumerate()
        .flat_map(|(i, c)| hsi::extract_patches(c, i, &pc))
        .map(|p| p.data)
        .collect();
    if patches.is_empty() {
        return Err(Error::config("data.patch", "no training patch fits in the given cubes"));
    }
    Ok(patches)
}

fn train(
    config: &Path,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
    seed: Option<u64>,
    max_steps: Option<u64>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(m) = max_steps {
        cfg.train.max_steps = Some(m);
    }
    if let Some(o) = out {
        cfg.output.checkpoint = Some(o);
    }
    cfg.validate()?;
    let out = cfg
        .output
        .checkpoint
        .clone()
        .ok_or_else(|| Error::config("output.checkpoint", "required unless --out is given"))?;
    let sensor = cfg.sensor()?;
    let bands = cfg.model.sensor(&sensor).map(|s| s.bands).unwrap_or_default();
    let cubes = load_training_cubes(&cfg, &sensor, bands)?;

    let mut trainer = match &resume {
        Some(path) => {
            let ck = load_checkpoint::<f32>(path)?;
            if ck.model.config != cfg.model {
                return Err(Error::config("model", "differs from the model stored in the resumed checkpoint"));
            }
            ck.into_trainer(Some(cfg.train.clone()))?
        }
        None => Trainer::new(T3sc::new(cfg.model.clone(), cfg.train.seed)?, cfg.train.clone())?,
    };

    fs::write(with_suffix(&out, ".toml"), format!("# t3sc {VERSION}\n{}", cfg.to_toml()?))?;
    let log_path = with_suffix(&out, ".log");
    let mut log_file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)?
    } else {
        File::create(&log_path)?
    };
    let every = cfg.output.checkpoint_every;
    let start = trainer.step;
    let mut on_step = |rec: &t3sc::train::LogRecord, t: &Trainer<f32>| -> Result<()> {
        writeln!(log_file, "{}", rec.to_line())?;
        log_file.flush()?;
        if every.is_some_and(|n| t.step % n == 0) {
            save_checkpoint(&out, &Checkpoint::from_trainer(t))?;
        }
        Ok(())
    };
    let result = match cfg.train.mode {
        TrainMode::Supervised => {
            let data = SupervisedDataset {
                sensor: sensor.clone(),
                clean: patches_of(&cubes, &cfg)?,
            };
            trainer.run_supervised(&data, &mut on_step)
        }
        TrainMode::Ssl => {
            let noisy = if cfg.data.simulate_noise {
                ImagePair::simulate(&cubes, &cfg.train.noise, cfg.train.seed)?
                    .into_iter()
                    .map(|p| p.noisy)
                    .collect()
            } else {
                cubes
            };
            let data = SslDataset::from_noisy(sensor.clone(), patches_of(&noisy, &cfg)?);
            trainer.run_ssl(&data, &mut on_step)
        }
    };
    match result {
        Ok(log) => {
            save_checkpoint(&out, &Checkpoint::from_trainer(&trainer))?;
            let last = log.last().map(|r| r.loss).unwrap_or(f64::NAN);
            println!(
                "trained steps {start}..{} (final loss {last:.6e}); checkpoint {}",
                trainer.step,
                out.display()
            );
            Ok(())
        }
        Err(e @ Error::Divergence { .. }) => {
            save_checkpoint(&out, &Checkpoint::from_trainer(&trainer))?;
            eprintln!("last good state (step {}) saved to {}", trainer.step, out.display());
            Err(e)
        }
        Err(e) => Err(e),
    }
}

fn denoise(
    ckpt: &Path,
    input: &Path,
    out: &Path,
    blind: bool,
    sensor: Option<String>,
    ssl_n: Option<usize>,
) -> Result<()> {
    let ck = load_checkpoint::<f32>(ckpt)?;
    let model = &ck.model;
    if blind && model.estimator.is_none() {
        return Err(Error::State("--blind needs a checkpoint trained with a noise estimator".into()));
    }
    let cube = hsi::read_hsr(input)?;
    let sensor = match sensor.or_else(|| cube.sensor_id.clone()) {
        Some(s) => s,
        None => model
            .default_sensor()
            .map(str::to_string)
            .ok_or_else(|| Error::config("sensor", "cube has no sensor_id; pass --sensor"))?,
    };
    let ssl_n = ssl_n.or_else(|| {
        ck.train
            .as_ref()
            .filter(|t| t.mode == TrainMode::Ssl)
            .map(|t| t.ssl_n)
    });
    let x = match (ssl_n, blind) {
        (Some(_), true) => return Err(Error::config("blind", "not available with masked-band inference")),
        (Some(n), false) => ssl_denoise(model, &cube.data, &sensor, n)?,
        (None, true) => model.denoise_blind(&cube.data, &sensor)?,
        (None, false) => model.denoise(&cube.data, &sensor, None)?,
    };
    let mut result = cube.with_data(x)?;
    result.sensor_id = Some(sensor);
    hsi::write_hsr(out, &result)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn eval(reference: &Path, test: &Path, out: Option<PathBuf>) -> Result<()> {
    let x = hsi::read_hsr(reference)?;
    let y = hsi::read_hsr(test)?;
    if x.data.shape() != y.data.shape() {
        return Err(Error::Dimension {
            op: "eval",
            lhs: x.data.shape().to_vec(),
            rhs: y.data.shape().to_vec(),
        });
    }
    let report = MetricReport::compute(&x.data.cast::<f64>(), &y.data.cast::<f64>())?;
    let provenance = format!(
        "t3sc {VERSION}\nreference {}\ntest {}\n",
        reference.display(),
        test.display()
    );
    let human = format!("{provenance}{}", report.to_text());
    print!("{human}");
    if let Some(out) = out {
        fs::write(&out, &human)?;
        let machine = format!(
            "version {VERSION}\nreference {}\ntest {}\n{}",
            reference.display(),
            test.display(),
            report.to_machine()
        );
        fs::write(with_suffix(&out, ".kv"), machine)?;
    }
    Ok(())
}

fn info_cube(path: &Path) -> Result<()> {
    let cube = hsi::read_hsr(path)?;
    println!("cube {}", path.display());
    println!("bands {} height {} width {}", cube.bands(), cube.height(), cube.width());
    println!("sensor {}", cube.sensor_id.as_deref().unwrap_or("-"));
    for (k, v) in &cube.extra {
        println!("meta {k} {v}");
    }
    let plane = cube.height() * cube.width();
    println!("band min max mean");
    for b in 0..cube.bands() {
        let d = &cube.data.data()[b * plane..(b + 1) * plane];
        let (lo, hi) = d.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let mean = d.iter().map(|&v| v as f64).sum::<f64>() / plane.max(1) as f64;
        println!("{b} {lo} {hi} {mean:.6}");
    }
    if let Some(stats) = &cube.band_stats {
        println!("band p2 p98 min max");
        for (b, s) in stats.iter().enumerate() {
            println!("{b} {} {} {} {}", s.p2, s.p98, s.min, s.max);
        }
    }
    Ok(())
}

fn info_ckpt(path: &Path) -> Result<()> {
    let ck = load_checkpoint::<f32>(path)?;
    let m = &ck.model;
    let c = &m.config;
    println!("checkpoint {}", path.display());
    println!("step {}", ck.step);
    println!(
        "p1 {} p2 {} rank {} side {} t1 {} t2 {}",
        c.p1, c.p2, c.rank, c.side, c.t1, c.t2
    );
    if let Some(t) = &ck.train {
        let mode = match t.mode {
            TrainMode::Supervised => "supervised",
            TrainMode::Ssl => "ssl",
        };
        println!("mode {mode} noise {} seed {}", t.noise, t.seed);
    }
    let spatial = m.spatial.param_count();
    for (id, layer) in &m.spectral {
        let n = layer.param_count();
        println!("layer1 {id} bands {} params {n}", layer.bands());
    }
    println!("layer2 params {spatial}");
    match &m.estimator {
        Some(e) => println!("estimator params {}", e.param_count()),
        None => println!("estimator none"),
    }
    println!("total params {}", m.param_count());
    for (id, layer) in &m.spectral {
        println!("ratio layer2/layer1 {id} {:.1}", spatial as f64 / layer.param_count() as f64);
    }
    Ok(())
}

fn import(
    header: &Path,
    data: &Path,
    out: &Path,
    normalize: NormArg,
    stats_from: Option<PathBuf>,
    sensor: Option<String>,
) -> Result<()> {
    let mut cube = hsi::import_bsq(header, data)?;
    let stats = match &stats_from {
        Some(p) => Some(
            hsi::read_hsr(p)?
                .band_stats
                .ok_or_else(|| Error::Format(format!("{} carries no band_stats", p.display())))?,
        ),
        None => None,
    };
    cube = match (normalize, stats) {
        (NormArg::None, None) => cube,
        (NormArg::None, Some(_)) => return Err(Error::config("normalize", "--stats-from needs --normalize percentile")),
        (NormArg::Percentile, Some(s)) => {
            let mut c = cube.with_data(hsi::apply_percentile(&cube.data, &s)?)?;
            c.band_stats = Some(s);
            c
        }
        (NormArg::Percentile, None) => {
            let (mut v, s) = hsi::normalize_percentile(&[&cube.data])?;
            let mut c = cube.with_data(v.remove(0))?;
            c.band_stats = Some(s);
            c
        }
        (NormArg::Global, None) => {
            let (d, (lo, hi)) = hsi::normalize_global(&cube.data);
            let mut c = cube.with_data(d)?;
            c.extra.insert("global_min".into(), lo.to_string());
            c.extra.insert("global_max".into(), hi.to_string());
            c
        }
        (NormArg::Global, Some(_)) => return Err(Error::config("normalize", "--stats-from needs --normalize percentile")),
    };
    if sensor.is_some() {
        cube.sensor_id = sensor;
    }
    hsi::write_hsr(out, &cube)?;
    println!(
        "wrote {} ({} x {} x {})",
        out.display(),
        cube.bands(),
        cube.height(),
        cube.width()
    );
    Ok(())
}

fn synth(out_dir: &Path, count: usize, bands: usize, size: usize, seed: u64, sensor: Option<String>) -> Result<()> {
    if bands == 0 || size == 0 {
        return Err(Error::config("synth", "bands and size must be positive"));
    }
    fs::create_dir_all(out_dir)?;
    for (i, data) in t3sc::synth::synthetic_dataset(count, bands, size, seed).into_iter().enumerate() {
        let mut cube = HsiCube::new(data)?;
        cube.sensor_id = sensor.clone();
        hsi::write_hsr(out_dir.join(format!("cube_{i:04}.hsr")), &cube)?;
    }
    println!("wrote {count} cubes to {}", out_dir.display());
    Ok(())
}
