use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use randinv::harness::{self, NamedImage, SweepConfig, SweepKind, SweepResult};
use randinv::metrics::{min_max_normalize, pearson, ssim_reported, to_gray};
use randinv::network::{build_preset, build_preset_split, LayerSpec, PresetOptions};
use randinv::theory::{self, angle_degrees, derive_seed, sample_outputs};
use randinv::trainer::{self, TrainConfig};
use randinv::{format_float, DistributionSpec, Error, FeatureMaps, NetworkSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "randinv", version, about = "Random-weight CNN-DCN reconstruction and convergence experiments")]
struct Cli {
    /// Base seed; network and trial i use seed + i.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one image through a random network and score the reconstruction.
    #[command(after_help = "Writes reconstruction.png and reconstruct.csv (image,ssim,pearson).")]
    Reconstruct(ReconstructArgs),
    /// SSIM/Pearson statistics of rrVGG Conv1-DeConv1 over channel counts.
    #[command(after_help = SWEEP_HELP)]
    SweepChannels(SweepArgs<ChannelList>),
    /// SSIM/Pearson statistics of rrVGG Conv1_1-DeConv1_1 over kernel sizes.
    #[command(after_help = SWEEP_HELP)]
    SweepKernel(SweepArgs<KernelList>),
    /// Check a convergence or bound statement numerically.
    Verify {
        #[command(subcommand)]
        which: Verify,
    },
    /// Train a DCN to invert a fixed random CNN.
    #[command(after_help = "Writes loss.csv (iter,lr,loss) and dcn.ckpt.")]
    TrainDcn(TrainArgs),
    /// Grayscale Pearson correlation and SSIM between two images.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Write blurred gaussian-noise PNGs.
    GenData {
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Blur std per image, cycled by image index.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        smoothness: Vec<f64>,
    },
}

const SWEEP_HELP: &str = "Writes <name>_raw.csv (param,net,image,ssim,pearson) and \
<name>_summary.csv (param,ssim_mean,ssim_std,corr_mean,corr_std). Statistics are the mean \
and n-1 standard deviation of per-network averages. Floats carry 17 significant digits.";

#[derive(Args)]
struct NetSource {
    /// NetworkSpec JSON file.
    #[arg(long, conflicts_with = "preset")]
    net: Option<PathBuf>,
    /// Named architecture sized to the input.
    #[arg(long)]
    preset: Option<String>,
    /// Hidden channel override for presets.
    #[arg(long)]
    channels: Option<usize>,
    /// Kernel size override for presets.
    #[arg(long)]
    kernel: Option<usize>,
}

impl NetSource {
    fn options(&self) -> PresetOptions {
        PresetOptions { channels: self.channels, kernel: self.kernel, ..Default::default() }
    }

    fn build(&self, input: [usize; 3], default_preset: &str) -> randinv::Result<NetworkSpec> {
        match &self.net {
            Some(path) => NetworkSpec::from_json(&std::fs::read_to_string(path)?),
            None => build_preset(self.preset.as_deref().unwrap_or(default_preset), input, &self.options()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Normalize {
    /// Rescale only when the output leaves [0, 1].
    Auto,
    Always,
    Never,
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    source: NetSource,
    #[arg(long)]
    image: PathBuf,
    /// Weight distribution as family:scale (gaussian, uniform, logistic, laplace).
    #[arg(long, default_value = "gaussian:0.1")]
    dist: DistributionSpec,
    /// How the saved PNG is brought into [0, 1].
    #[arg(long, value_enum, default_value_t = Normalize::Auto)]
    normalize: Normalize,
}

trait SweepValues: Args {
    const KIND: SweepKind;
    const NAME: &'static str;
    fn values(&self) -> &[usize];
}

#[derive(Args)]
struct ChannelList {
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64,128,256,512")]
    channels: Vec<usize>,
}

impl SweepValues for ChannelList {
    const KIND: SweepKind = SweepKind::Channels;
    const NAME: &'static str = "sweep_channels";
    fn values(&self) -> &[usize] {
        &self.channels
    }
}

#[derive(Args)]
struct KernelList {
    #[arg(long, value_delimiter = ',', default_value = "3,5,7,9,11,13,15")]
    kernels: Vec<usize>,
}

impl SweepValues for KernelList {
    const KIND: SweepKind = SweepKind::Kernel;
    const NAME: &'static str = "sweep_kernel";
    fn values(&self) -> &[usize] {
        &self.kernels
    }
}

#[derive(Args)]
struct SweepArgs<V: SweepValues> {
    #[command(flatten)]
    values: V,
    #[arg(long, default_value_t = 10)]
    nets: usize,
    /// Directory of equally sized images, read in file-name order.
    #[arg(long)]
    images: PathBuf,
    /// Replace the last decoder conv with a channel mean.
    #[arg(long)]
    variant: bool,
    #[arg(long, default_value = "gaussian:0.1")]
    dist: DistributionSpec,
}

#[derive(Args)]
struct InputArgs {
    /// Input image; a synthetic one is generated from --seed otherwise.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 1.0)]
    smoothness: f64,
}

impl InputArgs {
    fn load(&self, seed: u64) -> randinv::Result<FeatureMaps> {
        match &self.image {
            Some(p) => harness::load_image(p),
            None => harness::synthetic_image(self.size, self.smoothness, seed, 0),
        }
    }
}

#[derive(Subcommand)]
enum Verify {
    /// Angle between sampled outputs and the l2-pooling convergence value.
    #[command(after_help = "Writes converge_l2_field.csv (pixel,row,col,z_star,f_star), \
converge_l2_trials.csv (channels,trial,angle_deg) and converge_l2_summary.csv \
(channels,trials,mean_angle_deg,max_angle_deg,mean_output_angle_deg). Exits 3 when the \
mean-output angle at the largest channel count exceeds --tolerance-deg.")]
    ConvergeL2(ConvergeArgs),
    /// Same for the average-pooling variant, via the Gram recurrence.
    #[command(after_help = "Writes converge_avg_field.csv, converge_avg_trials.csv and \
converge_avg_summary.csv with the converge-l2 columns.")]
    ConvergeAvg(ConvergeArgs),
    /// Monte-Carlo check of the variance bound.
    #[command(after_help = "Writes variance_trials.csv (trial,kind,bound,empirical,holds,layers,\
delta,n_bar,lambda_product,vacuous) and variance_summary.csv (kind,channels,trials,delta,bound,\
violation_fraction,median_sin,vacuous). Exits 3 when the violation fraction exceeds delta.")]
    Variance(VarianceArgs),
    /// Check the cosine bound on every image of a directory.
    #[command(after_help = "Writes cosine.csv (image,bound,cos_phi,slack,holds). Exits 3 unless \
the bound holds for every image.")]
    Cosine {
        #[arg(long)]
        images: PathBuf,
        /// Odd first-layer kernel size.
        #[arg(long, default_value_t = 3)]
        kernel: usize,
    },
}

#[derive(Args)]
struct ConvergeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// def51 NetworkSpec JSON; the built-in net is used per --channels otherwise.
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "64,256,1024")]
    channels: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value = "gaussian:1")]
    dist: DistributionSpec,
    #[arg(long, default_value_t = 2.0)]
    tolerance_deg: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum VarianceNet {
    /// conv 3x3 (stride 1, same padding), relu, mean.
    TwoLayer,
    /// Two stride-2 2x2 convs with relu, then the mean.
    ThreeLayer,
}

#[derive(Args)]
struct VarianceArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, conflicts_with = "layout")]
    net: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VarianceNet::TwoLayer)]
    layout: VarianceNet,
    #[arg(long, default_value_t = 1024)]
    channels: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value = "gaussian:1")]
    dist: DistributionSpec,
}

#[derive(Args)]
struct TrainArgs {
    /// Preset split into a fixed CNN and a trained DCN.
    #[arg(long, default_value = "rrvgg_conv1_deconv1")]
    preset: String,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    images: PathBuf,
    /// Distribution of the fixed CNN weights.
    #[arg(long, default_value = "gaussian:0.1")]
    dist: DistributionSpec,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 4e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 100)]
    checkpoint_every: usize,
    /// Resume from a checkpoint instead of an MSRA init.
    #[arg(long)]
    resume: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn create(dir: &Path, name: &str) -> randinv::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Verify(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    std::fs::create_dir_all(&cli.out)?;
    let (seed, out) = (cli.seed, cli.out.as_path());
    match cli.command {
        Command::Reconstruct(a) => reconstruct(a, seed, out),
        Command::SweepChannels(a) => sweep(a, seed, out),
        Command::SweepKernel(a) => sweep(a, seed, out),
        Command::Verify { which } => match which {
            Verify::ConvergeL2(a) => converge(a, seed, out, false),
            Verify::ConvergeAvg(a) => converge(a, seed, out, true),
            Verify::Variance(a) => variance(a, seed, out),
            Verify::Cosine { images, kernel } => cosine(&images, kernel, out),
        },
        Command::TrainDcn(a) => train(a, seed, out),
        Command::Metrics { a, b } => metrics(&a, &b),
        Command::GenData { count, size, smoothness } => gen_data(count, size, &smoothness, seed, out),
    }
}

fn reconstruct(a: ReconstructArgs, seed: u64, out: &Path) -> Outcome {
    let x = harness::load_image(&a.image)?;
    let (c, h, w) = x.dims();
    let spec = a.source.build([c, h, w], "rrvgg_conv1_deconv1")?;
    let trace: Vec<String> = std::iter::once(spec.input_dims())
        .chain(spec.dim_trace()?)
        .map(|d| format!("{}x{}x{}", d.channels, d.height, d.width))
        .collect();
    println!("dims={}", trace.join(" -> "));
    let bank = randinv::weights::sample_filterbank(&a.dist, &spec.conv_shapes()?, seed)?;
    let (y, score) = harness::reconstruct(&spec, &bank, &x)?;
    let inside = y.data().iter().all(|v| (0.0..=1.0).contains(v));
    let shown = match a.normalize {
        Normalize::Always => min_max_normalize(&y),
        Normalize::Auto if !inside => min_max_normalize(&y),
        _ => y,
    };
    if shown.channels() == 1 || shown.channels() == 3 {
        harness::save_image(&out.join("reconstruction.png"), &shown)?;
    }
    let mut csv = create(out, "reconstruct.csv")?;
    let name = a.image.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    use std::io::Write;
    writeln!(csv, "image,ssim,pearson\n{name},{},{}", format_float(score.ssim), format_float(score.pearson))?;
    csv.flush()?;
    println!("pearson={} ssim={}", score.pearson, score.ssim);
    Ok(())
}

fn sweep<V: SweepValues>(a: SweepArgs<V>, seed: u64, out: &Path) -> Outcome {
    let images: Vec<NamedImage> = harness::load_image_dir(&a.images)?;
    let config = SweepConfig {
        kind: V::KIND,
        values: a.values.values().to_vec(),
        nets: a.nets,
        seed,
        dist: a.dist,
        variant: a.variant,
    };
    let result: SweepResult = harness::run_sweep(&config, &images)?;
    harness::write_sweep_rows(&result.rows, create(out, &format!("{}_raw.csv", V::NAME))?)?;
    harness::write_sweep_summary(&result.aggregates, create(out, &format!("{}_summary.csv", V::NAME))?)?;
    for g in &result.aggregates {
        println!(
            "param={} ssim_mean={:.4} ssim_std={:.4} corr_mean={:.4} corr_std={:.4}",
            g.param, g.ssim_mean, g.ssim_std, g.corr_mean, g.corr_std
        );
    }
    Ok(())
}

fn default_converge_net(input: [usize; 3], n: usize, avg: bool) -> randinv::Result<NetworkSpec> {
    let layers = if avg {
        vec![
            LayerSpec::conv(3, 1, 1, n),
            LayerSpec::Relu,
            LayerSpec::AvgPool { kernel: 2, stride: Some(1), pad: 0 },
            LayerSpec::conv(3, 1, 1, n),
            LayerSpec::Relu,
            LayerSpec::ChannelMean,
        ]
    } else {
        vec![
            LayerSpec::conv(2, 2, 0, n),
            LayerSpec::Relu,
            LayerSpec::l2_pool(2),
            LayerSpec::conv(2, 2, 0, n),
            LayerSpec::Relu,
            LayerSpec::ChannelMean,
        ]
    };
    NetworkSpec::def51(input, layers)
}

fn converge(a: ConvergeArgs, seed: u64, out: &Path, avg: bool) -> Outcome {
    let x = a.input.load(seed)?;
    let (c, h, w) = x.dims();
    let specs: Vec<(usize, NetworkSpec)> = match &a.net {
        Some(p) => {
            let spec = NetworkSpec::from_json(&std::fs::read_to_string(p)?)?;
            vec![(spec.conv_shapes()?.first().map_or(0, |s| s.0), spec)]
        }
        None => a
            .channels
            .iter()
            .map(|&n| Ok((n, default_converge_net([c, h, w], n, avg)?)))
            .collect::<randinv::Result<_>>()?,
    };
    if specs.is_empty() || a.trials == 0 {
        return Err(Failure::Usage("need at least one channel count and one trial".into()));
    }
    let tag = if avg { "converge_avg" } else { "converge_l2" };
    let field = |spec: &NetworkSpec| -> randinv::Result<theory::ConvergenceField> {
        if avg {
            Ok(theory::convergence_field_avg(spec, &a.dist, &x)?.1)
        } else {
            theory::convergence_field_l2(spec, &a.dist, &x)
        }
    };
    field(&specs[0].1)?.write_csv(create(out, &format!("{tag}_field.csv"))?)?;

    let mut trials_csv = csv::Writer::from_writer(create(out, &format!("{tag}_trials.csv"))?);
    let mut summary_csv = csv::Writer::from_writer(create(out, &format!("{tag}_summary.csv"))?);
    trials_csv.write_record(["channels", "trial", "angle_deg"]).map_err(Error::from)?;
    summary_csv
        .write_record(["channels", "trials", "mean_angle_deg", "max_angle_deg", "mean_output_angle_deg"])
        .map_err(Error::from)?;
    let mut last_angle = f64::NAN;
    for (n, spec) in &specs {
        let f_star = field(spec)?.f_star;
        let outputs = sample_outputs(spec, &a.dist, &x, a.trials, seed)?;
        let angles: Vec<f64> = outputs.iter().map(|o| angle_degrees(o.data(), &f_star)).collect();
        let mut mean_out = vec![0.0; f_star.len()];
        for o in &outputs {
            for (m, v) in mean_out.iter_mut().zip(o.data()) {
                *m += v / a.trials as f64;
            }
        }
        last_angle = angle_degrees(&mean_out, &f_star);
        for (t, ang) in angles.iter().enumerate() {
            trials_csv.write_record([n.to_string(), t.to_string(), format_float(*ang)]).map_err(Error::from)?;
        }
        let mean = angles.iter().sum::<f64>() / angles.len() as f64;
        let max = angles.iter().copied().fold(0.0, f64::max);
        summary_csv
            .write_record([
                n.to_string(),
                a.trials.to_string(),
                format_float(mean),
                format_float(max),
                format_float(last_angle),
            ])
            .map_err(Error::from)?;
        println!("channels={n} mean_angle_deg={mean:.4} max_angle_deg={max:.4} mean_output_angle_deg={last_angle:.4}");
    }
    trials_csv.flush()?;
    summary_csv.flush()?;
    if !(last_angle < a.tolerance_deg) {
        return Err(Failure::Verify(format!(
            "mean output is {last_angle:.4} degrees from f*, tolerance {}",
            a.tolerance_deg
        )));
    }
    Ok(())
}

fn variance(a: VarianceArgs, seed: u64, out: &Path) -> Outcome {
    let x = a.input.load(seed)?;
    let (c, h, w) = x.dims();
    let spec = match &a.net {
        Some(p) => NetworkSpec::from_json(&std::fs::read_to_string(p)?)?,
        None => {
            let n = a.channels;
            let layers = match a.layout {
                VarianceNet::TwoLayer => vec![LayerSpec::conv(3, 1, 1, n), LayerSpec::Relu, LayerSpec::ChannelMean],
                VarianceNet::ThreeLayer => vec![
                    LayerSpec::conv(2, 2, 0, n),
                    LayerSpec::Relu,
                    LayerSpec::conv(2, 2, 0, n),
                    LayerSpec::Relu,
                    LayerSpec::ChannelMean,
                ],
            };
            NetworkSpec::def51([c, h, w], layers)?
        }
    };
    let report = theory::mc_verify(&spec, &a.dist, &x, a.trials, a.delta, seed)?;
    report.write_csv(create(out, "variance_trials.csv")?)?;
    let first = &report.reports[0];
    let channels = first.params.channels.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ");
    let mut summary = csv::Writer::from_writer(create(out, "variance_summary.csv")?);
    let fraction = report.violation_fraction();
    let median = report.median_sin();
    summary
        .write_record(["kind", "channels", "trials", "delta", "bound", "violation_fraction", "median_sin", "vacuous"])
        .map_err(Error::from)?;
    summary
        .write_record([
            first.kind.name().to_string(),
            channels,
            a.trials.to_string(),
            format_float(a.delta),
            format_float(report.bound()),
            format_float(fraction),
            format_float(median),
            first.is_vacuous().to_string(),
        ])
        .map_err(Error::from)?;
    summary.flush()?;
    println!("bound={:.6} violation_fraction={fraction} median_sin={median:.6}", report.bound());
    if fraction > a.delta {
        return Err(Failure::Verify(format!("violation fraction {fraction} exceeds delta {}", a.delta)));
    }
    Ok(())
}

fn cosine(images: &Path, kernel: usize, out: &Path) -> Outcome {
    let images = harness::load_image_dir(images)?;
    let mut csv = csv::Writer::from_writer(create(out, "cosine.csv")?);
    csv.write_record(["image", "bound", "cos_phi", "slack", "holds"]).map_err(Error::from)?;
    let mut failed = Vec::new();
    for img in &images {
        let gray = FeatureMaps::new(1, img.maps.height(), img.maps.width(), to_gray(&img.maps)?.values().to_vec())?;
        let r = theory::cosine_bound(&gray, kernel)?;
        let cos = r.empirical.expect("cosine reports carry cos phi");
        let holds = r.holds == Some(true);
        if !holds {
            failed.push(img.id.clone());
        }
        csv.write_record([
            img.id.clone(),
            format_float(r.bound),
            format_float(cos),
            format_float(cos - r.bound),
            holds.to_string(),
        ])
        .map_err(Error::from)?;
    }
    csv.flush()?;
    println!("images={} failures={}", images.len(), failed.len());
    if !failed.is_empty() {
        return Err(Failure::Verify(format!("bound fails on {}", failed.join(", "))));
    }
    Ok(())
}

fn train(a: TrainArgs, seed: u64, out: &Path) -> Outcome {
    let images = harness::load_image_dir(&a.images)?;
    let (c, h, w) = images[0].maps.dims();
    let opts = PresetOptions { channels: a.channels, ..Default::default() };
    let (cnn, dcn) = build_preset_split(&a.preset, [c, h, w], &opts)?;
    let bank = randinv::weights::sample_filterbank(&a.dist, &cnn.conv_shapes()?, seed)?;
    let config = TrainConfig {
        lr0: a.lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch,
        max_iters: a.iters,
        checkpoint_every: a.checkpoint_every,
        seed,
        ..Default::default()
    };
    let init = match &a.resume {
        Some(p) => Some(trainer::load_checkpoint(std::io::BufReader::new(File::open(p)?))?),
        None => None,
    };
    let data: Vec<FeatureMaps> = images.into_iter().map(|i| i.maps).collect();
    let outcome = trainer::train_dcn(&cnn, &bank, &dcn, &data, &config, init)?;
    trainer::write_loss_csv(&outcome.history, create(out, "loss.csv")?)?;
    trainer::save_checkpoint(&outcome.params, create(out, "dcn.ckpt")?)?;
    for r in &outcome.history {
        println!("iter={} lr={:e} loss={:.6}", r.iter, r.lr, r.loss);
    }
    Ok(())
}

fn metrics(a: &Path, b: &Path) -> Outcome {
    let ga = to_gray(&harness::load_image(a)?)?;
    let gb = to_gray(&harness::load_image(b)?)?;
    let r = pearson(&ga, &gb)?;
    let s = ssim_reported(&ga, &gb)?;
    println!("pearson={r} ssim={s}");
    Ok(())
}

fn gen_data(count: usize, size: usize, smoothness: &[f64], seed: u64, out: &Path) -> Outcome {
    if smoothness.is_empty() {
        return Err(Failure::Usage("need at least one smoothness value".into()));
    }
    for i in 0..count {
        let s = smoothness[i % smoothness.len()];
        let img = harness::synthetic_image(size, s, derive_seed(seed, 0), i as u64)?;
        harness::save_image(&out.join(format!("synth_{i:04}.png")), &img)?;
    }
    println!("wrote {count} images to {}", out.display());
    Ok(())
}
