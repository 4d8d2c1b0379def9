use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Reproducible random stream for one Monte Carlo replicate. Distinct
/// replicates of the same base seed use distinct ChaCha streams, so draws do
/// not depend on scheduling.
#[derive(Debug, Clone)]
pub struct RngStream {
    base_seed: u64,
    replicate: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(base_seed: u64, replicate: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(replicate);
        Self {
            base_seed,
            replicate,
            rng,
        }
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn replicate(&self) -> u64 {
        self.replicate
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// `count` draws from `N(mean, std²)`.
pub fn sample_normal(stream: &mut RngStream, mean: f64, std: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let z = stream.standard_normal();
            if std == 0.0 {
                mean
            } else {
                mean + std * z
            }
        })
        .collect()
}
