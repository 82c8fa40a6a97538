//! Config-driven runner for the profiling pipeline. Stages hand off through
//! files under the run directory, so any suffix of the pipeline can be rerun
//! on its own.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

use std::path::Path;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
pub use manifest::Manifest;
pub use stages::{RunLayout, Stage};

/// Run `stages` in canonical order, recording each in the manifest.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage]) -> Result<RunLayout> {
    cfg.validate()?;
    let layout = RunLayout::new(&cfg.output_dir);
    let mut order = stages.to_vec();
    order.sort();
    order.dedup();
    let mut manifest = Manifest::open(&layout.root, &cfg.hash(), cfg.seed)?;
    for stage in order {
        let written = match stage {
            Stage::Ingest => stages::ingest(cfg, &layout)?,
            Stage::TrainImage => stages::train_image(cfg, &layout)?,
            Stage::TrainText => stages::train_text(cfg, &layout)?,
            Stage::Features => stages::features(cfg, &layout)?,
            Stage::Stack => stages::stack(cfg, &layout)?,
            Stage::Fuse => stages::fuse(cfg, &layout)?,
            Stage::Evaluate => stages::evaluate(cfg, &layout)?,
            Stage::Report => stages::report(&layout)?,
        };
        manifest.record(&layout.root, stage.as_str(), &written)?;
        manifest.save(&layout.root)?;
    }
    Ok(layout)
}

/// Render reports for an existing run directory.
pub fn report_run(run_dir: &Path) -> Result<RunLayout> {
    let layout = RunLayout::new(run_dir);
    let written = stages::report(&layout)?;
    let mut manifest = Manifest::load(run_dir)?.unwrap_or_default();
    manifest.record(run_dir, Stage::Report.as_str(), &written)?;
    manifest.save(run_dir)?;
    Ok(layout)
}
