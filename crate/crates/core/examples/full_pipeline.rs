//! Every stage of the experiment pipeline, with a single-seed grid: dataset, teacher,
//! taildrop and fixed-rate autoencoders, Huffman tables, size sweep, the
//! scenario grid, the switching run and the report. Artifacts and run
//! manifests land in the directory given as the first argument.
//!
//! cargo run --release --example full_pipeline -- /tmp/pnc-small

use pnc::eval::{Pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "pnc-small".into());
    let mut cfg = PipelineConfig::default();
    cfg.grid.seeds = vec![1];
    cfg.grid.images_per_run = 60;
    cfg.vary.images = 60;

    let p = Pipeline::new(cfg, &out)?;
    p.run_all()?;
    for r in p.report()? {
        println!(
            "{:<32} accuracy {:.3}  fully offloaded {:.3}  mean channels {:.2}",
            r.condition, r.accuracy, r.fully_offloaded_fraction, r.mean_channels
        );
    }
    println!("artifacts in {out}");
    Ok(())
}
