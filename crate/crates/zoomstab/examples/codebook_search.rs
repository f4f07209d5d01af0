//! Local search for a binary block codebook minimizing the worst-case
//! message error under minimum-distance decoding with lowest-index
//! tie-breaking on a BSC. Used to pick the frozen codebook in the
//! protected-overflow acceptance experiment.
//!
//! Usage: cargo run --release --example codebook_search [messages] [n] [eps]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn worst_error(words: &[u16], n: u32, eps: f64) -> f64 {
    let m = words.len();
    let mut per_msg = vec![0.0f64; m];
    let outputs = 1u32 << n;
    for y in 0..outputs {
        // min-distance decode, lowest index wins ties
        let mut best = 0usize;
        let mut best_d = u32::MAX;
        for (i, &w) in words.iter().enumerate() {
            let d = (w as u32 ^ y).count_ones();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        for (i, &w) in words.iter().enumerate() {
            if i != best {
                let d = (w as u32 ^ y).count_ones();
                per_msg[i] += eps.powi(d as i32) * (1.0 - eps).powi((n - d) as i32);
            }
        }
    }
    per_msg.iter().cloned().fold(0.0, f64::max)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let m: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(6);
    let n: u32 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let eps: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let space = 1u32 << n;

    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let mut best_global: (f64, Vec<u16>) = (f64::INFINITY, vec![]);

    for restart in 0..200 {
        let mut words: Vec<u16> = (0..m).map(|_| (rng.random::<u32>() % space) as u16).collect();
        let mut cost = worst_error(&words, n, eps);
        let mut stale = 0;
        while stale < 4000 {
            let i = rng.random::<u32>() as usize % m;
            let old = words[i];
            // move: flip a random bit, or jump to a random word, or swap two
            // indices (tie-break order matters)
            match rng.random::<u32>() % 3 {
                0 => words[i] ^= 1 << (rng.random::<u32>() % n),
                1 => words[i] = (rng.random::<u32>() % space) as u16,
                _ => {
                    let j = rng.random::<u32>() as usize % m;
                    words.swap(i, j);
                    let c = worst_error(&words, n, eps);
                    if c < cost {
                        cost = c;
                        stale = 0;
                    } else {
                        words.swap(i, j);
                        stale += 1;
                    }
                    continue;
                }
            }
            let c = worst_error(&words, n, eps);
            if c < cost {
                cost = c;
                stale = 0;
            } else {
                words[i] = old;
                stale += 1;
            }
        }
        if cost < best_global.0 {
            best_global = (cost, words.clone());
            println!("restart {restart}: worst error {cost:.6e}  words {words:?}");
        }
    }

    let (cost, words) = best_global;
    println!("\nbest worst-case error: {cost:.6e}");
    println!("budget 1/1.5^16      : {:.6e}", 1.0 / 1.5f64.powi(16));
    for &w in &words {
        let bits: Vec<u32> = (0..n).rev().map(|b| (w as u32 >> b) & 1).collect();
        println!("{w:3}  {bits:?}");
    }
}
