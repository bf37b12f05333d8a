//! `crowdtrack synth`: write a self-contained synthetic scenario directory
//! in the standard interchange formats.

use crate::config::RunConfig;
use crate::util::{atomic_write, flow_file_name, parse_wh, CliError, CliResult};
use clap::Args;
use crowdtrack::harness::{corrupt, generate, NoiseParams, OcclusionGap, ScenarioParams};
use crowdtrack::io::{
    write_embeddings, write_flo, write_gray_frame, write_mot_detections, write_mot_tracks,
    write_pose_records,
};
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for the scenario
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub agents: usize,
    #[arg(long, default_value_t = 30)]
    pub frames: i64,
    /// Arena size as WxH pixels
    #[arg(long, default_value = "128x128")]
    pub arena: String,
    /// Agent speed range in pixels/frame as lo:hi
    #[arg(long, default_value = "0.5:2.0")]
    pub speed: String,
    /// Box side-length range in pixels as lo:hi
    #[arg(long, default_value = "14:24")]
    pub box_size: String,
    #[arg(long, default_value_t = 5)]
    pub keypoints: usize,
    /// Embedding dimension
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub drop_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    pub fp_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub emb_noise: f64,
    /// Occlusion gap as agent:start_frame:length (repeatable)
    #[arg(long = "occlusion")]
    pub occlusions: Vec<String>,
    /// Also render and write per-frame gray images
    #[arg(long)]
    pub write_frames: bool,
    /// Skip writing the flows/ directory
    #[arg(long)]
    pub no_flows: bool,
}

fn parse_pair(raw: &str, sep: char, what: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = raw.split(sep).collect();
    if parts.len() != 2 {
        return Err(CliError::config(format!(
            "{what} must look like <lo>{sep}<hi>, got '{raw}'"
        )));
    }
    let lo = parts[0]
        .parse::<f64>()
        .map_err(|e| CliError::config(format!("{what}: bad '{}': {e}", parts[0])))?;
    let hi = parts[1]
        .parse::<f64>()
        .map_err(|e| CliError::config(format!("{what}: bad '{}': {e}", parts[1])))?;
    Ok((lo, hi))
}

pub fn run(args: SynthArgs) -> CliResult<()> {
    let (aw, ah) = parse_wh(&args.arena)?;
    let (speed_lo, speed_hi) = parse_pair(&args.speed, ':', "--speed")?;
    let (box_lo, box_hi) = parse_pair(&args.box_size, ':', "--box-size")?;
    let mut occlusion_gaps = Vec::new();
    for raw in &args.occlusions {
        let parts: Vec<&str> = raw.split(':').collect();
        if parts.len() != 3 {
            return Err(CliError::config(format!(
                "--occlusion must look like agent:start:length, got '{raw}'"
            )));
        }
        let num = |s: &str| {
            s.parse::<i64>()
                .map_err(|e| CliError::config(format!("--occlusion: bad '{s}': {e}")))
        };
        occlusion_gaps.push(OcclusionGap {
            agent: num(parts[0])? as usize,
            start_frame: num(parts[1])?,
            length: num(parts[2])?,
        });
    }

    let scenario_params = ScenarioParams {
        n_agents: args.agents,
        n_frames: args.frames,
        arena: (aw, ah),
        speed_range: (speed_lo, speed_hi),
        box_size_range: (box_lo, box_hi),
        k_keypoints: args.keypoints,
        embedding_dim: args.dim,
        seed: args.seed,
    };
    let noise_params = NoiseParams {
        drop_rate: args.drop_rate,
        jitter_std: args.jitter,
        fp_rate: args.fp_rate,
        occlusion_gaps,
        embedding_noise_std: args.emb_noise,
    };

    let scenario = generate(&scenario_params)?;
    let corrupted = corrupt(&scenario, &noise_params, args.seed)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", args.out.display())))?;

    atomic_write(
        &args.out.join("gt.txt"),
        write_mot_tracks(&scenario.gt_tracks).as_bytes(),
    )?;
    atomic_write(
        &args.out.join("det.txt"),
        write_mot_detections(&corrupted.detections).as_bytes(),
    )?;
    let embeddings: Vec<Vec<f32>> = corrupted
        .detections
        .iter()
        .map(|d| d.embedding.clone().expect("harness detections carry embeddings"))
        .collect();
    atomic_write(
        &args.out.join("emb.bin"),
        &write_embeddings(args.dim, &embeddings)?,
    )?;
    atomic_write(
        &args.out.join("poses.jsonl"),
        write_pose_records(&corrupted.poses).as_bytes(),
    )?;
    atomic_write(
        &args.out.join("gt_poses.jsonl"),
        write_pose_records(&scenario.gt_poses).as_bytes(),
    )?;

    let mut n_flow_files = 0usize;
    if !args.no_flows {
        let flow_dir = args.out.join("flows");
        for frame in 1..args.frames {
            for (from, to) in [(frame, frame + 1), (frame + 1, frame)] {
                let field = scenario.flow(from, to)?;
                atomic_write(&flow_dir.join(flow_file_name(from, to)), &write_flo(&field))?;
                n_flow_files += 1;
            }
        }
    }
    let mut n_frame_files = 0usize;
    if args.write_frames {
        let frame_dir = args.out.join("frames");
        for frame in 1..=args.frames {
            let img = scenario.frame_image(frame)?;
            atomic_write(
                &frame_dir.join(format!("frame_{frame:06}.gray")),
                &write_gray_frame(&img),
            )?;
            n_frame_files += 1;
        }
    }

    let mut manifest = String::new();
    let _ = writeln!(manifest, "scenario.n_agents = {}", scenario_params.n_agents);
    let _ = writeln!(manifest, "scenario.n_frames = {}", scenario_params.n_frames);
    let _ = writeln!(
        manifest,
        "scenario.arena = {}x{}",
        scenario_params.arena.0, scenario_params.arena.1
    );
    let _ = writeln!(
        manifest,
        "scenario.speed_range = {}:{}",
        scenario_params.speed_range.0, scenario_params.speed_range.1
    );
    let _ = writeln!(
        manifest,
        "scenario.box_size_range = {}:{}",
        scenario_params.box_size_range.0, scenario_params.box_size_range.1
    );
    let _ = writeln!(manifest, "scenario.k_keypoints = {}", scenario_params.k_keypoints);
    let _ = writeln!(manifest, "scenario.embedding_dim = {}", scenario_params.embedding_dim);
    let _ = writeln!(manifest, "scenario.seed = {}", scenario_params.seed);
    let _ = writeln!(manifest, "noise.drop_rate = {}", noise_params.drop_rate);
    let _ = writeln!(manifest, "noise.jitter_std = {}", noise_params.jitter_std);
    let _ = writeln!(manifest, "noise.fp_rate = {}", noise_params.fp_rate);
    let _ = writeln!(
        manifest,
        "noise.embedding_noise_std = {}",
        noise_params.embedding_noise_std
    );
    let _ = writeln!(manifest, "noise.occlusion_gaps = {}", noise_params.occlusion_gaps.len());
    let _ = writeln!(manifest, "file.gt.txt rows = {}", scenario.gt_tracks.len());
    let _ = writeln!(manifest, "file.det.txt rows = {}", corrupted.detections.len());
    let _ = writeln!(manifest, "file.emb.bin rows = {}", embeddings.len());
    let _ = writeln!(manifest, "file.poses.jsonl rows = {}", corrupted.poses.len());
    let _ = writeln!(manifest, "file.gt_poses.jsonl rows = {}", scenario.gt_poses.len());
    let _ = writeln!(manifest, "dir.flows files = {n_flow_files}");
    let _ = writeln!(manifest, "dir.frames files = {n_frame_files}");
    atomic_write(&args.out.join("manifest.txt"), manifest.as_bytes())?;

    let mut cfg = RunConfig::default();
    for (key, value) in [
        ("synth.agents", args.agents.to_string()),
        ("synth.frames", args.frames.to_string()),
        ("synth.arena", args.arena.clone()),
        ("synth.speed", args.speed.clone()),
        ("synth.box_size", args.box_size.clone()),
        ("synth.keypoints", args.keypoints.to_string()),
        ("synth.dim", args.dim.to_string()),
        ("synth.seed", args.seed.to_string()),
        ("synth.drop_rate", args.drop_rate.to_string()),
        ("synth.jitter", args.jitter.to_string()),
        ("synth.fp_rate", args.fp_rate.to_string()),
        ("synth.emb_noise", args.emb_noise.to_string()),
    ] {
        cfg.set(key, value);
    }
    atomic_write(&args.out.join("effective.config"), cfg.echo().as_bytes())?;

    println!(
        "synth: wrote {} ({} gt boxes, {} detections, {} flow files)",
        args.out.display(),
        scenario.gt_tracks.len(),
        corrupted.detections.len(),
        n_flow_files
    );
    Ok(())
}
