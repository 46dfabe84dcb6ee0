/// Clamp range for velocity components, m/s.
pub const V_MAX: f64 = 16.0;

/// Maps a velocity to an 8-bit code; values are clamped to ±V_MAX first and
/// rounding is half-up.
pub fn quantize(v: f64) -> u8 {
    let c = v.clamp(-V_MAX, V_MAX);
    let scaled = (c + V_MAX) / (2.0 * V_MAX) * 255.0;
    (scaled + 0.5).floor() as u8
}

pub fn dequantize(q: u8) -> f64 {
    q as f64 / 255.0 * 2.0 * V_MAX - V_MAX
}
