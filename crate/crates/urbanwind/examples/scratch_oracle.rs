use std::time::Instant;
use urbanwind::data::{generate_scene, wind_oracle};
fn main() {
    let scene = generate_scene(3, 128, 1100.0).unwrap();
    let t = Instant::now();
    for d in 0..8 { wind_oracle(&scene, d).unwrap(); }
    println!("8 solves at 128x128: {:?} ({:?}/solve)", t.elapsed(), t.elapsed() / 8);
    println!("163 scenes estimate: {:?}", t.elapsed() * 163);
}
