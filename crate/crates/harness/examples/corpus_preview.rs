//! Prints a few corpus samples as ASCII art, for eyeballing the generator.

use patchshuffle_harness::synth::synthetic_pair;

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(10);
    let (train, _) = synthetic_pair(n.max(1), 1, 7);
    for b in 0..train.len() {
        let plane = train.images().plane(b, 0);
        println!("label {}", train.labels()[b]);
        for i in 0..28 {
            let row: String = (0..28)
                .map(|j| match plane[i * 28 + j] {
                    v if v > 0.75 => '#',
                    v if v > 0.35 => '+',
                    v if v > 0.0 => '.',
                    _ => ' ',
                })
                .collect();
            println!("{row}");
        }
    }
}
