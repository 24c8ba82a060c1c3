//! Smart cooldown and transport retry schedules.

/// Upper bound on any cooldown, in seconds.
pub const MAX_COOLDOWN_SECS: u64 = 1800;

/// Delays between retries of a failed LLM call, in seconds.
pub const RETRY_DELAYS_SECS: [u64; 3] = [5, 15, 45];

/// `min(base * 2^burn_level, 1800)` seconds.
pub fn cooldown_secs(base: u64, burn_level: u32) -> u64 {
    let factor = 1u64.checked_shl(burn_level).unwrap_or(u64::MAX);
    base.saturating_mul(factor).min(MAX_COOLDOWN_SECS)
}
