//! Deterministic synthetic transaction-log generator.
//!
//! Customers are drawn from three archetypes — loyal (high daily purchase
//! rate), occasional (low rate), and periodic (a purchase every `period`
//! days with phase jitter) — so the resulting activeness distribution has
//! mass at both extremes and the planted group structure is recoverable by
//! the clustering stage. Each customer owns an independent RNG stream, so
//! per-customer output is independent of generation order.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::PurchaseEvent;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchetypeName {
    Loyal,
    Occasional,
    Periodic,
}

impl ArchetypeName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArchetypeName::Loyal => "loyal",
            ArchetypeName::Occasional => "occasional",
            ArchetypeName::Periodic => "periodic",
        }
    }
}

/// Temporal behavior of one archetype.
#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    /// Independent per-day purchase probability.
    DailyRate(f64),
    /// A purchase every `period` days, each displaced by a uniform
    /// integer jitter in `[-phase_jitter, phase_jitter]`.
    Periodic { period: u32, phase_jitter: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchetypeSpec {
    pub name: ArchetypeName,
    pub population_fraction: f64,
    pub behavior: Behavior,
    /// Probability of choosing each shop on a purchase day; sums to 1.
    pub shop_preference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub customers: u32,
    pub shops: u32,
    pub days: u32,
    pub archetypes: Vec<ArchetypeSpec>,
    pub seed: u64,
    /// Expected interaction count this config was solved for, if any.
    pub interaction_target: Option<f64>,
}

const FRACTION_TOLERANCE: f64 = 1e-9;

impl GeneratorConfig {
    /// The pinned default archetype mix: loyal 0.2 at rate 0.8, occasional
    /// 0.6 at rate 0.03, periodic 0.2 with period 7; uniform shop choice.
    pub fn with_default_mix(customers: u32, shops: u32, days: u32, seed: u64) -> Self {
        let uniform = vec![1.0 / shops as f64; shops as usize];
        GeneratorConfig {
            customers,
            shops,
            days,
            archetypes: vec![
                ArchetypeSpec {
                    name: ArchetypeName::Loyal,
                    population_fraction: 0.2,
                    behavior: Behavior::DailyRate(0.8),
                    shop_preference: uniform.clone(),
                },
                ArchetypeSpec {
                    name: ArchetypeName::Occasional,
                    population_fraction: 0.6,
                    behavior: Behavior::DailyRate(0.03),
                    shop_preference: uniform.clone(),
                },
                ArchetypeSpec {
                    name: ArchetypeName::Periodic,
                    population_fraction: 0.2,
                    behavior: Behavior::Periodic {
                        period: 7,
                        phase_jitter: 1,
                    },
                    shop_preference: uniform,
                },
            ],
            seed,
            interaction_target: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.customers == 0 || self.shops == 0 || self.days < 2 {
            return Err(Error::Config(
                "need customers >= 1, shops >= 1, days >= 2".into(),
            ));
        }
        if self.archetypes.is_empty() {
            return Err(Error::Config("at least one archetype required".into()));
        }
        let total: f64 = self.archetypes.iter().map(|a| a.population_fraction).sum();
        if (total - 1.0).abs() > FRACTION_TOLERANCE {
            return Err(Error::Config(format!(
                "archetype population fractions sum to {total}, expected 1"
            )));
        }
        for a in &self.archetypes {
            if !(0.0..=1.0).contains(&a.population_fraction) {
                return Err(Error::Config("population fraction outside [0, 1]".into()));
            }
            if a.shop_preference.len() != self.shops as usize {
                return Err(Error::Config(format!(
                    "shop preference has {} entries for {} shops",
                    a.shop_preference.len(),
                    self.shops
                )));
            }
            let pref_sum: f64 = a.shop_preference.iter().sum();
            if (pref_sum - 1.0).abs() > FRACTION_TOLERANCE
                || a.shop_preference.iter().any(|&p| p < 0.0)
            {
                return Err(Error::Config("shop preference is not a probability vector".into()));
            }
            match a.behavior {
                Behavior::DailyRate(r) => {
                    if !(0.0..=1.0).contains(&r) {
                        return Err(Error::Config(format!("daily rate {r} outside [0, 1]")));
                    }
                }
                Behavior::Periodic { period, .. } => {
                    if period == 0 || period >= self.days {
                        return Err(Error::Config(
                            "period must be positive and below the day count".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Expected interaction count under this config.
    pub fn expected_interactions(&self) -> f64 {
        let c = self.customers as f64;
        let d = self.days as f64;
        self.archetypes
            .iter()
            .map(|a| {
                let per_day = match a.behavior {
                    Behavior::DailyRate(r) => r,
                    Behavior::Periodic { period, .. } => 1.0 / period as f64,
                };
                a.population_fraction * c * d * per_day
            })
            .sum()
    }

    /// Re-solve the daily-rate archetypes for a different horizon while
    /// keeping the interaction target. Only valid on preset configs.
    pub fn with_days(mut self, days: u32) -> Result<Self> {
        let target = self.interaction_target.ok_or_else(|| {
            Error::Config("with_days requires a config with an interaction target".into())
        })?;
        self.days = days;
        solve_rates(&mut self, target)?;
        Ok(self)
    }
}

/// Scale the daily-rate archetypes so expected interactions hit `target`;
/// periodic archetypes are left untouched (their cadence is structural).
fn solve_rates(config: &mut GeneratorConfig, target: f64) -> Result<()> {
    let c = config.customers as f64;
    let d = config.days as f64;
    let periodic: f64 = config
        .archetypes
        .iter()
        .filter_map(|a| match a.behavior {
            Behavior::Periodic { period, .. } => {
                Some(a.population_fraction * c * d / period as f64)
            }
            Behavior::DailyRate(_) => None,
        })
        .sum();
    let rated: f64 = config
        .archetypes
        .iter()
        .filter_map(|a| match a.behavior {
            Behavior::DailyRate(r) => Some(a.population_fraction * c * d * r),
            Behavior::Periodic { .. } => None,
        })
        .sum();
    if periodic >= target {
        return Err(Error::Config(format!(
            "periodic archetypes alone produce {periodic:.0} expected interactions, above the {target:.0} target"
        )));
    }
    if rated <= 0.0 {
        return Err(Error::Config("no rate-based archetype to solve".into()));
    }
    let scale = (target - periodic) / rated;
    for a in &mut config.archetypes {
        if let Behavior::DailyRate(r) = &mut a.behavior {
            *r = (*r * scale).min(1.0);
        }
    }
    config.interaction_target = Some(target);
    Ok(())
}

/// Dataset-scale presets: customer counts and interaction targets at the
/// four reference sizes, over a 120-day horizon.
pub fn preset(name: &str) -> Result<GeneratorConfig> {
    let (customers, target) = match name {
        "16K" => (1500, 16_000.0),
        "20K" => (1600, 20_000.0),
        "25K" => (1800, 25_000.0),
        "30K" => (2000, 30_000.0),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}`, expected one of 16K, 20K, 25K, 30K"
            )))
        }
    };
    let mut config = GeneratorConfig::with_default_mix(customers, 5, 120, 7);
    solve_rates(&mut config, target)?;
    Ok(config)
}

/// Generate the event log and the ground-truth archetype label per customer.
///
/// Output is byte-identical for identical configs: every customer draws from
/// its own ChaCha stream keyed by `(seed, customer index)` and events are
/// canonically ordered afterwards.
pub fn generate(config: &GeneratorConfig) -> Result<(Vec<PurchaseEvent>, Vec<(String, ArchetypeName)>)> {
    config.validate()?;
    let assignment = archetype_assignment(config);
    let width = (config.customers as f64).log10().ceil().max(1.0) as usize + 1;

    let mut events = Vec::new();
    let mut labels = Vec::with_capacity(config.customers as usize);
    for (i, &arch_idx) in assignment.iter().enumerate() {
        let spec = &config.archetypes[arch_idx];
        let customer_id = format!("c{i:0width$}");
        labels.push((customer_id.clone(), spec.name));

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64 + 1);

        let mut purchase_days: Vec<u32> = match spec.behavior {
            Behavior::DailyRate(rate) => (0..config.days)
                .filter(|_| rng.random::<f64>() < rate)
                .collect(),
            Behavior::Periodic { period, phase_jitter } => {
                let phase = rng.random_range(0..period);
                let mut days = Vec::new();
                let mut base = phase as i64;
                while base < config.days as i64 {
                    let jitter = if phase_jitter > 0 {
                        rng.random_range(-(phase_jitter as i64)..=phase_jitter as i64)
                    } else {
                        0
                    };
                    let day = base + jitter;
                    if (0..config.days as i64).contains(&day) {
                        days.push(day as u32);
                    }
                    base += period as i64;
                }
                days.sort_unstable();
                days.dedup();
                days
            }
        };
        purchase_days.sort_unstable();

        for day in purchase_days {
            let shop = weighted_choice(&mut rng, &spec.shop_preference);
            events.push(PurchaseEvent {
                customer_id: customer_id.clone(),
                shop_id: format!("s{shop:02}"),
                day,
            });
        }
    }

    events.sort_by(|a, b| {
        (&a.customer_id, a.day, &a.shop_id).cmp(&(&b.customer_id, b.day, &b.shop_id))
    });
    events.dedup();
    Ok((events, labels))
}

/// Largest-remainder apportionment of customers to archetypes, then a
/// contiguous assignment by customer index.
fn archetype_assignment(config: &GeneratorConfig) -> Vec<usize> {
    let n = config.customers as usize;
    let mut counts: Vec<usize> = config
        .archetypes
        .iter()
        .map(|a| (a.population_fraction * n as f64).floor() as usize)
        .collect();
    let mut remainders: Vec<(usize, f64)> = config
        .archetypes
        .iter()
        .enumerate()
        .map(|(i, a)| (i, a.population_fraction * n as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut leftover = n - counts.iter().sum::<usize>();
    for (i, _) in remainders {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }

    let mut assignment = Vec::with_capacity(n);
    for (arch_idx, &count) in counts.iter().enumerate() {
        assignment.extend(std::iter::repeat_n(arch_idx, count));
    }
    assignment
}

fn weighted_choice(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if draw < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Sidecar ground-truth labels as CSV `customer_id,archetype`.
pub fn labels_to_csv(labels: &[(String, ArchetypeName)]) -> String {
    let mut out = String::from("customer_id,archetype\n");
    for (id, name) in labels {
        out.push_str(id);
        out.push(',');
        out.push_str(name.as_str());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_activity_matrix, catalog};
    use crate::survey;

    #[test]
    fn identical_seeds_identical_output() {
        let config = GeneratorConfig::with_default_mix(50, 3, 40, 99);
        let (a, _) = generate(&config).unwrap();
        let (b, _) = generate(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let mut config = GeneratorConfig::with_default_mix(50, 3, 40, 1);
        let (a, _) = generate(&config).unwrap();
        config.seed = 2;
        let (b, _) = generate(&config).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn degenerate_rate_one_purchases_every_day() {
        let config = GeneratorConfig {
            customers: 10,
            shops: 2,
            days: 15,
            archetypes: vec![ArchetypeSpec {
                name: ArchetypeName::Loyal,
                population_fraction: 1.0,
                behavior: Behavior::DailyRate(1.0),
                shop_preference: vec![0.5, 0.5],
            }],
            seed: 3,
            interaction_target: None,
        };
        let (events, _) = generate(&config).unwrap();
        let (customers, shops, days) = catalog(&events);
        let matrix = build_activity_matrix(&events, &customers, &shops, days).unwrap();
        for c in matrix.customers() {
            let a = survey::activeness(&matrix, c).unwrap();
            assert_eq!(a.value, 1.0);
        }
    }

    #[test]
    fn invalid_fractions_rejected() {
        let mut config = GeneratorConfig::with_default_mix(10, 2, 20, 0);
        config.archetypes[0].population_fraction = 0.5;
        assert!(matches!(generate(&config), Err(Error::Config(_))));
    }

    #[test]
    fn preset_scales_match_reference_counts() {
        assert_eq!(preset("16K").unwrap().customers, 1500);
        assert_eq!(preset("20K").unwrap().customers, 1600);
        assert_eq!(preset("25K").unwrap().customers, 1800);
        assert_eq!(preset("30K").unwrap().customers, 2000);
        assert!(matches!(preset("90K"), Err(Error::Config(_))));
    }

    #[test]
    fn preset_16k_interaction_count_within_15_percent() {
        let config = preset("16K").unwrap();
        let (events, _) = generate(&config).unwrap();
        let n = events.len() as f64;
        assert!(
            (n - 16_000.0).abs() <= 0.15 * 16_000.0,
            "generated {n} interactions"
        );
    }

    #[test]
    fn with_days_resolvess_rates_to_target() {
        let config = preset("16K").unwrap().with_days(90).unwrap();
        assert_eq!(config.days, 90);
        let expected = config.expected_interactions();
        assert!((expected - 16_000.0).abs() < 1.0, "expected {expected}");
    }

    #[test]
    fn periodic_customers_have_periodic_autocorrelation() {
        let config = GeneratorConfig::with_default_mix(60, 3, 120, 11);
        let (events, labels) = generate(&config).unwrap();
        let (customers, shops, days) = catalog(&events);
        let matrix = build_activity_matrix(&events, &customers, &shops, days).unwrap();

        // Mean binary autocorrelation over the periodic cohort.
        let lag_score = |lag: u32| -> f64 {
            let mut total = 0.0;
            let mut count = 0;
            for (id, name) in &labels {
                if *name != ArchetypeName::Periodic {
                    continue;
                }
                let Ok(u) = matrix.customer_index(id) else { continue };
                let bits: Vec<f64> = (0..days)
                    .map(|d| matrix.any_purchase(u, d) as u8 as f64)
                    .collect();
                let mean = bits.iter().sum::<f64>() / bits.len() as f64;
                let centered: Vec<f64> = bits.iter().map(|b| b - mean).collect();
                let num: f64 = centered
                    .iter()
                    .zip(&centered[lag as usize..])
                    .map(|(a, b)| a * b)
                    .sum();
                let den: f64 = centered.iter().map(|c| c * c).sum();
                if den > 0.0 {
                    total += num / den;
                    count += 1;
                }
            }
            total / count as f64
        };
        let at_period = lag_score(7);
        assert!(at_period > lag_score(5), "period vs period-2");
        assert!(at_period > lag_score(9), "period vs period+2");
    }

    #[test]
    fn labels_csv_round_trips_names() {
        let labels = vec![
            ("c1".to_string(), ArchetypeName::Loyal),
            ("c2".to_string(), ArchetypeName::Periodic),
        ];
        let csv = labels_to_csv(&labels);
        assert_eq!(csv, "customer_id,archetype\nc1,loyal\nc2,periodic\n");
    }
}
