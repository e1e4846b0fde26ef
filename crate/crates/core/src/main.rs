use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use smikm::config::Config;
use smikm::harness::{
    bundle_for_image, evaluate_index, evaluate_map, load_list, load_wang, run_pipeline_with, PipelineOptions,
};
use smikm::image::open_image;
use smikm::retrieval::{load_index, query, save_index};

#[derive(Parser)]
#[command(name = "smikm", version, about = "Saliency-guided image retrieval with invariant Krawtchouk moments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from a dataset directory.
    Index {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Index only the root-relative paths listed in this file.
        #[arg(long)]
        train_list: Option<PathBuf>,
        #[arg(long)]
        skip_grayscale: bool,
        /// Write each image's saliency map as a PNG into this directory.
        #[arg(long)]
        debug_saliency: Option<PathBuf>,
    },
    /// Rank the index against one image.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Mean average precision of the index, leave-one-out or against a query set.
    Eval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, requires = "queries")]
        test_list: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Index {
            data,
            out,
            config,
            train_list,
            skip_grayscale,
            debug_saliency,
        } => {
            let mut cfg = match config {
                Some(path) => Config::load(&path).with_context(|| format!("reading {}", path.display()))?,
                None => Config::default(),
            };
            cfg.skip_grayscale |= skip_grayscale;
            let manifest = match train_list {
                Some(list) => load_list(&data, &list)?,
                None => load_wang(&data)?,
            };
            if manifest.class_count() < 2 {
                log::warn!("dataset has fewer than two classes; evaluation will be meaningless");
            }
            let output = run_pipeline_with(&manifest, &cfg, &PipelineOptions { debug_saliency })?;
            save_index(&output.index, &out).with_context(|| format!("writing {}", out.display()))?;
            let t = &output.timings;
            log::info!(
                "features {:.2}s (summed over images), clustering {:.2}s, wall {:.2}s",
                t.feature_extraction(),
                t.clustering,
                t.wall
            );
        }
        Command::Query { index, image, top } => {
            let index = load_index(&index).with_context(|| format!("reading {}", index.display()))?;
            let img = open_image(&image)?;
            let bundle = bundle_for_image(&img, &index)?;
            let ranked = query(&index, &bundle, None)?;
            for (rank, item) in ranked.ranked.iter().take(top).enumerate() {
                println!("{}\t{}\t{:.6}", rank + 1, item.image_id, item.distance);
            }
        }
        Command::Eval {
            index,
            queries,
            test_list,
            report,
        } => {
            let index = load_index(&index).with_context(|| format!("reading {}", index.display()))?;
            let result = match (queries, test_list) {
                (Some(dir), Some(list)) => evaluate_map(&index, &load_list(&dir, &list)?)?,
                (Some(dir), None) => evaluate_map(&index, &load_wang(&dir)?)?,
                (None, None) => evaluate_index(&index, &index.config.weights)?,
                (None, Some(_)) => bail!("--test-list needs --queries"),
            };
            std::fs::write(&report, result.to_json()?).with_context(|| format!("writing {}", report.display()))?;
            println!("overall mAP {:.4} over {} queries", result.overall_map, result.queries);
            for (class, map) in &result.per_class_map {
                println!("{class}\t{map:.4}");
            }
        }
    }
    Ok(())
}
