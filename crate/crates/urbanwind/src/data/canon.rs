//! Rotation into the canonical inflow frame.
//!
//! A direction-d sample is rotated so the inflow always points along -y in
//! the model frame. Height maps and the scalar w plane resample spatially;
//! in-plane velocity vectors additionally rotate by the same angle. Multiples
//! of 90 degrees are exact index permutations; the 45-degree multiples use
//! bilinear resampling with zero fill outside the inscribed circle.

use crate::data::oracle::WindField;

struct Rotation {
    grid: usize,
    cos: f64,
    sin: f64,
    exact: bool,
}

impl Rotation {
    fn new(grid: usize, direction: usize) -> Self {
        let theta = direction as f64 * std::f64::consts::FRAC_PI_4;
        Rotation {
            grid,
            cos: theta.cos(),
            sin: theta.sin(),
            exact: direction % 2 == 0,
        }
    }

    /// World-grid sample position for a model-frame output cell.
    fn source(&self, i: usize, j: usize) -> (f64, f64, bool) {
        let c = (self.grid as f64 - 1.0) / 2.0;
        let x = j as f64 - c;
        let y = c - i as f64;
        let xs = self.cos * x + self.sin * y;
        let ys = -self.sin * x + self.cos * y;
        let inside = (x * x + y * y).sqrt() <= self.grid as f64 / 2.0 - 0.5;
        (c - ys, xs + c, inside)
    }

    fn sample(&self, plane: &[f64], iw: f64, jw: f64) -> f64 {
        let g = self.grid as i64;
        let get = |i: i64, j: i64| -> f64 {
            if i < 0 || j < 0 || i >= g || j >= g {
                0.0
            } else {
                plane[(i * g + j) as usize]
            }
        };
        if self.exact {
            return get(iw.round() as i64, jw.round() as i64);
        }
        let i0 = iw.floor();
        let j0 = jw.floor();
        let fi = iw - i0;
        let fj = jw - j0;
        let (i0, j0) = (i0 as i64, j0 as i64);
        get(i0, j0) * (1.0 - fi) * (1.0 - fj)
            + get(i0, j0 + 1) * (1.0 - fi) * fj
            + get(i0 + 1, j0) * fi * (1.0 - fj)
            + get(i0 + 1, j0 + 1) * fi * fj
    }

    fn rotate_plane(&self, plane: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let mut out = vec![0.0; g * g];
        for i in 0..g {
            for j in 0..g {
                let (iw, jw, inside) = self.source(i, j);
                if self.exact || inside {
                    out[i * g + j] = self.sample(plane, iw, jw);
                }
            }
        }
        out
    }
}

/// Rotates a height map into the canonical frame for direction d.
pub fn canonicalize_heights(grid: usize, heights: &[f64], direction: usize) -> Vec<f64> {
    Rotation::new(grid, direction).rotate_plane(heights)
}

/// Rotates heights and a world-frame wind field into the canonical frame;
/// the in-plane components are rotated as vectors, w resamples as a scalar.
pub fn canonicalize(
    grid: usize,
    heights: &[f64],
    field: &WindField,
    direction: usize,
) -> (Vec<f64>, WindField) {
    let rot = Rotation::new(grid, direction);
    let u_s = rot.rotate_plane(&field.u);
    let v_s = rot.rotate_plane(&field.v);
    let mut out = WindField::zeros(grid);
    for idx in 0..grid * grid {
        out.u[idx] = rot.cos * u_s[idx] - rot.sin * v_s[idx];
        out.v[idx] = rot.sin * u_s[idx] + rot.cos * v_s[idx];
    }
    out.w = rot.rotate_plane(&field.w);
    (rot.rotate_plane(heights), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::oracle::{wind_oracle, U_INF};
    use crate::data::scene::generate_scene;

    fn demo_field(grid: usize) -> WindField {
        let mut f = WindField::zeros(grid);
        for idx in 0..grid * grid {
            f.u[idx] = idx as f64 * 0.01;
            f.v[idx] = 3.0 - idx as f64 * 0.02;
            f.w[idx] = (idx % 7) as f64;
        }
        f
    }

    #[test]
    fn direction_zero_is_identity() {
        let s = generate_scene(1, 64, 1100.0).unwrap();
        let f = demo_field(64);
        let (h, r) = canonicalize(64, &s.heights, &f, 0);
        assert_eq!(h, s.heights);
        assert_eq!(r.u, f.u);
        assert_eq!(r.v, f.v);
        assert_eq!(r.w, f.w);
    }

    #[test]
    fn direction_four_flips_and_negates() {
        let g = 64usize;
        let s = generate_scene(2, g, 1100.0).unwrap();
        let f = demo_field(g);
        let (h, r) = canonicalize(g, &s.heights, &f, 4);
        for i in 0..g {
            for j in 0..g {
                let a = i * g + j;
                let b = (g - 1 - i) * g + (g - 1 - j);
                assert_eq!(h[a], s.heights[b]);
                assert!((r.u[a] + f.u[b]).abs() < 1e-12);
                assert!((r.v[a] + f.v[b]).abs() < 1e-12);
                assert_eq!(r.w[a], f.w[b]);
            }
        }
    }

    #[test]
    fn rotate_and_back_restores_right_angle_multiples() {
        let g = 64usize;
        let s = generate_scene(3, g, 1100.0).unwrap();
        let f = demo_field(g);
        for d in [2usize, 4, 6] {
            let (h1, f1) = canonicalize(g, &s.heights, &f, d);
            let (h2, f2) = canonicalize(g, &h1, &f1, 8 - d);
            for idx in 0..g * g {
                assert!((h2[idx] - s.heights[idx]).abs() < 1e-12);
                assert!((f2.u[idx] - f.u[idx]).abs() < 1e-10);
                assert!((f2.v[idx] - f.v[idx]).abs() < 1e-10);
                assert!((f2.w[idx] - f.w[idx]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn canonical_inflow_points_along_negative_y() {
        let empty = crate::data::Scene {
            id: 0,
            grid: 64,
            extent: 1100.0,
            seed: 0,
            heights: vec![0.0; 64 * 64],
        };
        for d in 0..8 {
            let f = wind_oracle(&empty, d).unwrap();
            let (_, c) = canonicalize(64, &empty.heights, &f, d);
            // interior cells away from the zero-filled rim
            for i in 20..44 {
                for j in 20..44 {
                    let idx = i * 64 + j;
                    assert!(c.u[idx].abs() < 1e-3, "d {d} u {}", c.u[idx]);
                    assert!((c.v[idx] + U_INF).abs() < 1e-3, "d {d} v {}", c.v[idx]);
                }
            }
        }
    }

    #[test]
    fn oracle_commutes_with_quarter_turn() {
        // rotating the scene by 90 degrees and shifting the inflow by two
        // steps must canonicalize to the same sample, at exact multiples
        let g = 64usize;
        let s = generate_scene(5, g, 1100.0).unwrap();
        let zero_field = WindField::zeros(g);
        for d in [0usize, 2, 4] {
            let f = wind_oracle(&s, d).unwrap();
            let (hc, fc) = canonicalize(g, &s.heights, &f, d);

            let (rot_heights, _) = canonicalize(g, &s.heights, &zero_field, 2);
            let rs = crate::data::Scene {
                id: 0,
                grid: g,
                extent: s.extent,
                seed: 0,
                heights: rot_heights,
            };
            let d2 = (d + 8 - 2) % 8;
            let f2 = wind_oracle(&rs, d2).unwrap();
            let (hc2, fc2) = canonicalize(g, &rs.heights, &f2, d2);
            let mut max = 0.0f64;
            for idx in 0..g * g {
                assert_eq!(hc[idx], hc2[idx]);
                max = max.max((fc.u[idx] - fc2.u[idx]).abs());
                max = max.max((fc.v[idx] - fc2.v[idx]).abs());
            }
            assert!(max < 5e-3, "d {d} max {max}");
        }
    }
}
