use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Standard deviation of He/Kaiming-normal initialization, `sqrt(2 / fan_in)`.
pub fn kaiming_std(fan_in: usize) -> f64 {
    assert!(fan_in >= 1, "fan_in must be at least 1");
    (2.0 / fan_in as f64).sqrt()
}

/// One zero-mean normal draw with [`kaiming_std`] deviation.
pub fn kaiming_init(fan_in: usize, rng: &mut impl Rng) -> f64 {
    Normal::new(0.0, kaiming_std(fan_in)).expect("positive std").sample(rng)
}
