//! Simulation time is an integer count of nanoseconds since scenario start.
//! Message timestamps are whole milliseconds.

pub type Nanos = u64;

pub const US: Nanos = 1_000;
pub const MS: Nanos = 1_000_000;
pub const SEC: Nanos = 1_000_000_000;

pub fn from_ms(ms: f64) -> Nanos {
    (ms * MS as f64).round() as Nanos
}

pub fn from_secs(s: f64) -> Nanos {
    (s * SEC as f64).round() as Nanos
}

/// Whole milliseconds, truncated, as carried in message timestamps.
pub fn to_ms(t: Nanos) -> u64 {
    t / MS
}

pub fn to_ms_f64(t: Nanos) -> f64 {
    t as f64 / MS as f64
}

pub fn to_secs_f64(t: Nanos) -> f64 {
    t as f64 / SEC as f64
}
