//! `crowdtrack gridsearch`: run the tracker over a parameter grid on
//! sequences with ground truth and keep the MOTA argmax.

use crate::config::RunConfig;
use crate::util::{atomic_write, load_detections_with_embeddings, read_text, CliError, CliResult};
use clap::Args;
use crowdtrack::io::parse_mot_tracks;
use crowdtrack::tracker::{format_grid_table, grid_search, ParamGrid, Sequence};
use std::path::PathBuf;

#[derive(Args)]
pub struct GridsearchArgs {
    /// Sequence directory containing det.txt, emb.bin and gt.txt (repeatable)
    #[arg(long = "seq", required = true)]
    pub sequences: Vec<PathBuf>,
    /// Grid file: `<param> = v1 v2 ...` lines over the five searched keys
    #[arg(long)]
    pub grid: PathBuf,
    /// Run configuration file (base tracker parameters, eval threshold)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file for the winning parameters (tracker config format)
    #[arg(long)]
    pub out_params: PathBuf,
    /// Optional output file for the full result table
    #[arg(long)]
    pub out_table: Option<PathBuf>,
}

fn parse_grid(text: &str, base: &ParamGrid) -> CliResult<ParamGrid> {
    let mut grid = base.clone();
    let mut any_axis = false;
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, values)) = line.split_once('=') else {
            return Err(CliError::config(format!(
                "grid line {}: expected '<param> = v1 v2 ...'",
                line_no + 1
            )));
        };
        let tokens: Vec<&str> = values
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        let parse_list = |out: &mut Vec<f64>| -> CliResult<()> {
            *out = tokens
                .iter()
                .map(|t| {
                    t.parse::<f64>().map_err(|e| {
                        CliError::config(format!("grid line {}: bad value '{t}': {e}", line_no + 1))
                    })
                })
                .collect::<CliResult<Vec<f64>>>()?;
            Ok(())
        };
        let parse_ints = |err_line: usize| -> CliResult<Vec<i64>> {
            tokens
                .iter()
                .map(|t| {
                    t.parse::<i64>().map_err(|e| {
                        CliError::config(format!("grid line {err_line}: bad value '{t}': {e}"))
                    })
                })
                .collect()
        };
        any_axis = true;
        match key.trim() {
            "max_cos_dis" => parse_list(&mut grid.max_cos_dis)?,
            "max_iou_dis" => parse_list(&mut grid.max_iou_dis)?,
            "nn_budget" => {
                grid.nn_budget = parse_ints(line_no + 1)?.into_iter().map(|v| v as usize).collect()
            }
            "max_age" => grid.max_age = parse_ints(line_no + 1)?,
            "n_init" => {
                grid.n_init = parse_ints(line_no + 1)?.into_iter().map(|v| v as u32).collect()
            }
            other => {
                return Err(CliError::config(format!(
                    "grid line {}: unknown parameter '{other}' (searchable: max_cos_dis, nn_budget, max_age, n_init, max_iou_dis)",
                    line_no + 1
                )))
            }
        }
    }
    if !any_axis {
        return Err(CliError::config("grid file defines no axes"));
    }
    Ok(grid)
}

pub fn run(args: GridsearchArgs) -> CliResult<()> {
    if !args.grid.exists() {
        return Err(CliError::input(format!(
            "missing input: {}",
            args.grid.display()
        )));
    }
    let cfg = RunConfig::load(args.config.as_deref())?;
    let base = cfg.tracker_params()?;
    let eval_iou = cfg.get_f64("deteval.iou_threshold", 0.5)?;
    let grid = parse_grid(&read_text(&args.grid)?, &ParamGrid::singleton(&base))?;

    let mut sequences = Vec::new();
    for dir in &args.sequences {
        for name in ["det.txt", "emb.bin", "gt.txt"] {
            if !dir.join(name).exists() {
                return Err(CliError::input(format!(
                    "missing input: {}",
                    dir.join(name).display()
                )));
            }
        }
        let detections = load_detections_with_embeddings(&dir.join("det.txt"), &dir.join("emb.bin"))?;
        let ground_truth = parse_mot_tracks(&read_text(&dir.join("gt.txt"))?)?;
        sequences.push(Sequence {
            detections,
            ground_truth,
        });
    }

    let (best, table) = grid_search(&sequences, &grid, &base, eval_iou)?;
    let rendered = format_grid_table(&table);
    print!("{rendered}");
    println!(
        "best: max_cos_dis {} nn_budget {} max_age {} n_init {} max_iou_dis {}",
        best.max_cos_dis, best.nn_budget, best.max_age, best.n_init, best.max_iou_dis
    );
    atomic_write(&args.out_params, best.to_config_string().as_bytes())?;
    if let Some(out_table) = &args.out_table {
        atomic_write(out_table, rendered.as_bytes())?;
    }
    Ok(())
}
