//! Trains on the synthetic corpus and prints held-out retrieval tables.
//!
//! `cargo run --release --example desk_run [config.toml]`

use std::time::Instant;

use analog_retrieval::config::load_config;
use analog_retrieval::corpus::{generate_samples, Dataset, SynthConfig};
use analog_retrieval::curriculum::{train, TrainConfig, TrainMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config: TrainConfig = match std::env::args().nth(1) {
        Some(p) => load_config(p.as_ref())?,
        None => TrainConfig { batch_size: 32, ..TrainConfig::default() },
    };
    let synth = SynthConfig { seed: config.seed, feature_dim: config.model.image_dim, ..SynthConfig::default() };
    let data = Dataset::from_synth(&generate_samples(&synth)?, synth.feature_dim)?;
    for mode in [TrainMode::TriModal, TrainMode::TextImage] {
        let start = Instant::now();
        let out = train(&data, TrainConfig { mode, ..config.clone() }, std::io::sink())?;
        for h in &out.history {
            let r1 = h.eval.as_ref().map_or(f64::NAN, |r| r.avg_r1);
            println!("{mode:?} epoch {:2} phase {} L_align {:.4} L_cls {:.4} scale {:.2} avgR1 {:.3}", h.epoch, h.phase, h.l_align, h.l_cls, h.logit_scale, r1);
        }
        if let Some(r) = &out.final_report {
            println!("{mode:?} ({:.1}s)\n{}", start.elapsed().as_secs_f64(), r.to_table());
        }
    }
    Ok(())
}
