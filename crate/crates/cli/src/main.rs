use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vmr::adaptation::gradcheck::{gradcheck, GradcheckReport, LOSSES};
use vmr::adaptation::{Adapter, AdaptConfig, Mode, WindowSchedule};
use vmr::evalbench::{
    evaluate_frames, make_synthetic_video, project_keypoints, FrameEval, Mask, MetricReport, SyntheticConfig,
};
use vmr::geometry::{load_obj, save_obj, TriMesh};
use vmr::io::{evaluate_sets, frame_file, load_problem, save_basis_set, save_problem, FrameSet};
use vmr::losses::KeypointSet;
use vmr::shape::kmeans_bases;

const FLAGS_HELP: &str = "\
Flags by command:
  synth        --seed --frames --res --out --mask-noise
  bases        --input --k --seed --out
  reconstruct  --problem --out --mode --window --stride --iters --weights --seed --ablate-invariance
  eval         --pred --gt --out
  gradcheck    --loss --seeds
  (global)     --threads, overridden by the VMR_THREADS environment variable";

#[derive(Parser)]
#[command(name = "vmr", version, about = "Mesh reconstruction from monocular video", after_help = FLAGS_HELP)]
struct Cli {
    /// Worker threads (default: available cores). VMR_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic problem directory.
    Synth(SynthArgs),
    /// Cluster topology-sharing meshes into a basis set.
    Bases(BasesArgs),
    /// Reconstruct every frame of a problem.
    Reconstruct(ReconstructArgs),
    /// Score a reconstruction against ground truth.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u64).range(1..))]
    frames: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(8..))]
    res: u64,
    /// Probability of flipping each mask pixel.
    #[arg(long, default_value_t = 0.0)]
    mask_noise: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BasesArgs {
    /// Directory of OBJ meshes sharing one topology.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Problem manifest.
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// weak or selfsup; defaults to the manifest's mode.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value_t = 50)]
    window: usize,
    #[arg(long, default_value_t = 10)]
    stride: usize,
    #[arg(long, default_value_t = 40)]
    iters: usize,
    /// `key = value` weight overrides applied on top of the manifest's.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop the part, texture-swap and base-swap terms.
    #[arg(long)]
    ablate_invariance: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Reconstruction directory.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth directory in the same layout.
    #[arg(long)]
    gt: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check a single loss.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("VMR_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("VMR_THREADS must be a count, got `{v}`"))?;
            Ok(Some(n))
        }
        Err(_) => Ok(flag),
    }
}

fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        seed: args.seed,
        num_frames: args.frames as usize,
        resolution: args.res as usize,
        mask_noise: args.mask_noise,
        ..SyntheticConfig::default()
    };
    let video = make_synthetic_video(&cfg)?;
    let t = &video.truth;
    let gt = FrameSet {
        topology: video.problem.topology.clone(),
        cameras: t.cameras.clone(),
        vertices: t.vertices.clone(),
        masks: t.masks.iter().map(|m| Mask::from_image(m, 0.5)).collect(),
        keypoints: Some(t.keypoints2d.clone()),
    };
    let manifest = save_problem(&args.out, &video.problem, &t.rest, Some(2), Some(&gt))
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("{}", manifest.display());
    Ok(())
}

fn bases(args: &BasesArgs) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "obj"));
    paths.sort();
    let meshes: Vec<TriMesh> = paths
        .iter()
        .map(|p| load_obj(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<_>>()?;
    let Some(first) = meshes.first() else {
        bail!("no OBJ files in {}", args.input.display());
    };
    for (p, m) in paths.iter().zip(&meshes) {
        if m.faces() != first.faces() {
            bail!("{} does not share the topology of {}", p.display(), paths[0].display());
        }
    }
    let topology = first.topology().clone();
    let shapes: Vec<_> = meshes.into_iter().map(|m| m.vertices).collect();
    let set = kmeans_bases(&shapes, args.k, args.seed)?;
    let manifest = save_basis_set(&args.out, &set, &topology)?;
    println!("{}", manifest.display());
    Ok(())
}

fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let loaded = load_problem(&args.problem)?;
    let mut problem = loaded.problem;
    if let Some(mode) = args.mode {
        problem.mode = mode;
    }
    if let Some(path) = &args.weights {
        problem.weights = problem.weights.load(path)?;
    }
    if args.ablate_invariance {
        problem.weights = problem.weights.without_invariance();
    }
    let cfg = AdaptConfig {
        schedule: WindowSchedule::new(args.window, args.stride, args.iters)?,
        seed: args.seed,
        ..AdaptConfig::default()
    };
    let adapter = Adapter::new(&problem, cfg)?;
    let result = adapter.run()?;
    let frames = adapter.reconstruct(&result.states)?;
    let masks = adapter.predicted_masks(&result.states)?;
    let (h, w) = (problem.frames[0].height(), problem.frames[0].width());

    let out = &args.out;
    std::fs::create_dir_all(out.join("textures")).with_context(|| format!("creating {}", out.display()))?;
    let keypoints = problem.keypoints3d.as_ref().map(|k3d| {
        frames
            .iter()
            .map(|f| {
                let points = project_keypoints(&f.vertices, problem.topology.faces(), k3d, &f.camera);
                KeypointSet { visible: vec![true; points.len()], points }
            })
            .collect::<Vec<_>>()
    });
    let pred = FrameSet {
        topology: problem.topology.clone(),
        cameras: frames.iter().map(|f| f.camera).collect(),
        vertices: frames.iter().map(|f| f.vertices.clone()).collect(),
        masks: masks.into_iter().map(|m| Mask::new(h, w, m)).collect::<vmr::Result<_>>()?,
        keypoints,
    };
    pred.save(out)?;
    for (k, f) in frames.iter().enumerate() {
        f.texture.write_pnm(out.join(frame_file("textures", k, "ppm")))?;
        let mesh = TriMesh::from_topology(problem.topology.clone(), f.vertices.clone())?;
        save_obj(out.join(frame_file("meshes", k, "obj")), &mesh, Some(&problem.chart))?;
    }
    let report = match &loaded.ground_truth {
        Some(gt) => evaluate_sets(&pred, &FrameSet::load(gt)?)?,
        None => against_input_masks(&pred, &problem.masks)?,
    };
    let text = report.to_text();
    std::fs::write(out.join("report.txt"), &text).with_context(|| format!("writing {}", out.display()))?;
    print!("{text}");
    Ok(())
}

fn against_input_masks(pred: &FrameSet, masks: &[vmr::image::Image]) -> Result<MetricReport> {
    let gt: Vec<Mask> = masks.iter().map(|m| Mask::from_image(m, 0.5)).collect();
    let evals: Vec<FrameEval> = (0..gt.len())
        .map(|k| FrameEval {
            pred_mask: &pred.masks[k],
            gt_mask: &gt[k],
            pred_keypoints: None,
            gt_keypoints: None,
            pred_vertices: None,
            gt_vertices: None,
        })
        .collect();
    Ok(evaluate_frames(&evals)?)
}

fn eval(args: &EvalArgs) -> Result<()> {
    let pred = FrameSet::load(&args.pred)?;
    let gt = FrameSet::load(&args.gt)?;
    let text = evaluate_sets(&pred, &gt)?.to_text();
    if let Some(path) = &args.out {
        std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{text}");
    Ok(())
}

fn gradcheck_cmd(args: &GradcheckArgs) -> Result<bool> {
    let names: Vec<&str> = match &args.loss {
        Some(l) => vec![l.as_str()],
        None => LOSSES.iter().map(|(n, _)| *n).collect(),
    };
    println!("{:<14} {:>6} {:>12} {:>10}  result", "loss", "seeds", "max_error", "tolerance");
    let mut all = true;
    for name in names {
        let reports: Vec<GradcheckReport> = (0..args.seeds).map(|s| gradcheck(name, s)).collect::<vmr::Result<_>>()?;
        let worst = reports.iter().map(GradcheckReport::max_error).fold(0.0, f64::max);
        let ok = reports.iter().all(GradcheckReport::passed);
        all &= ok;
        println!(
            "{name:<14} {:>6} {worst:>12.3e} {:>10.0e}  {}",
            args.seeds,
            reports[0].tolerance,
            if ok { "pass" } else { "FAIL" }
        );
    }
    Ok(all)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Bases(a) => bases(a)?,
        Command::Reconstruct(a) => reconstruct(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Gradcheck(a) => return gradcheck_cmd(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
