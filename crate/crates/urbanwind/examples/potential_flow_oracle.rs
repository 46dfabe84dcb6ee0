//! Generates one procedural urban scene and solves the 2-D potential-flow
//! proxy around its buildings for two wind directions.
//!
//! Run with: cargo run --release --example potential_flow_oracle

use urbanwind::data::{generate_scene, wind_oracle, U_INF};

fn main() -> urbanwind::Result<()> {
    let scene = generate_scene(7, 128, 1100.0)?;
    println!(
        "scene {}: {}x{} cells over {:.0} m, building coverage {:.1}%",
        scene.id,
        scene.grid,
        scene.grid,
        scene.extent,
        scene.coverage() * 100.0
    );

    for direction in [0, 3] {
        let field = wind_oracle(&scene, direction)?;
        let n = field.u.len();
        let mean_speed = (0..n)
            .map(|i| (field.u[i].powi(2) + field.v[i].powi(2)).sqrt())
            .sum::<f64>()
            / n as f64;
        let max_speed = (0..n)
            .map(|i| (field.u[i].powi(2) + field.v[i].powi(2)).sqrt())
            .fold(0.0f64, f64::max);
        println!(
            "direction {direction} ({}deg): mean speed {:.2} m/s, peak {:.2} m/s (inflow {U_INF}), \
             interior divergence {:.2e}",
            direction * 45,
            mean_speed,
            max_speed,
            field.interior_divergence
        );
    }

    // a small ASCII slice: obstacles as #, speed as 0-9
    let field = wind_oracle(&scene, 0)?;
    let step = scene.grid / 32;
    println!("\nspeed map (direction 0, {}x downsampled):", step);
    for i in (0..scene.grid).step_by(step) {
        let mut line = String::new();
        for j in (0..scene.grid).step_by(step) {
            let k = i * scene.grid + j;
            if scene.is_obstacle(i, j) {
                line.push('#');
            } else {
                let speed = (field.u[k].powi(2) + field.v[k].powi(2)).sqrt();
                let level = ((speed / (1.5 * U_INF)) * 9.0).clamp(0.0, 9.0) as u8;
                line.push(char::from(b'0' + level));
            }
        }
        println!("{line}");
    }
    Ok(())
}
