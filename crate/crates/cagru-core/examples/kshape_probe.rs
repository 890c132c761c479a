use cagru_core::pipeline::{run_pipeline, DataSource, RunConfig, Variant};
use cagru_core::synth::{ArchetypeName, ArchetypeSpec, Behavior, GeneratorConfig};
use std::time::Instant;

fn mix(seed: u64, frac: f64) -> GeneratorConfig {
    let uniform = vec![0.25; 4];
    GeneratorConfig {
        customers: 1500,
        shops: 4,
        days: 64,
        archetypes: vec![
            ArchetypeSpec { name: ArchetypeName::Periodic, population_fraction: frac,
                behavior: Behavior::Periodic { period: 6, phase_jitter: 0 }, shop_preference: uniform.clone() },
            ArchetypeSpec { name: ArchetypeName::Periodic, population_fraction: 1.0 - frac,
                behavior: Behavior::Periodic { period: 6, phase_jitter: 3 }, shop_preference: uniform },
        ],
        seed,
        interaction_target: None,
    }
}

fn main() {
    let t0 = Instant::now();
    for (frac, epochs, d, w) in [
        (0.7f64, 6usize, 8usize, 16usize),
        (0.6, 6, 4, 8),
        (0.7, 6, 4, 8),
        (0.6, 4, 4, 8),
    ] {
        let mut cagru = Vec::new();
        let mut gru = Vec::new();
        for seed in 0..3u64 {
            for variant in [Variant::Cagru, Variant::Gru] {
                let mut config = RunConfig::new(DataSource::Synth(mix(seed, frac)), 5);
                config.seed = seed;
                config.n_clusters = 2;
                config.variant = variant;
                config.model.embed_dim = d;
                config.model.hidden_dim = w;
                config.model.max_epochs = epochs;
                config.model.patience = 5;
                config.model.batch_size = 64;
                config.model.learning_rate = 3e-3;
                let f1 = run_pipeline(&config).unwrap().metrics.f1;
                match variant {
                    Variant::Cagru => cagru.push(f1),
                    _ => gru.push(f1),
                }
            }
        }
        let mc: f64 = cagru.iter().sum::<f64>() / 3.0;
        let mg: f64 = gru.iter().sum::<f64>() / 3.0;
        let per_seed: Vec<f64> = cagru.iter().zip(&gru).map(|(a, b)| ((a - b) * 1e4).round() / 1e4).collect();
        println!(
            "f{frac} e{epochs} d{d} w{w}: CAGRU {mc:.4} GRU {mg:.4} gap {:+.4} per-seed {per_seed:?} [{:.0}s]",
            mc - mg,
            t0.elapsed().as_secs_f64()
        );
    }
}
