use std::time::Instant;

fn main() {
    let t = Instant::now();
    let d = ffens_core::synth::digits(2000, 7, "bench");
    println!("digits 2000: {:?} ({} imgs, dim {})", t.elapsed(), d.len(), d.dim());
    let t = Instant::now();
    let g = ffens_core::synth::garments(2000, 7, "bench");
    println!("garments 2000: {:?} ({} imgs)", t.elapsed(), g.len());
}
