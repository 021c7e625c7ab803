use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inputs never grow past this many bytes.
pub const MAX_INPUT_LEN: usize = 4096;

const INTERESTING: [u8; 9] = [0, 1, 0x7F, 0x80, 0xFF, 16, 32, 64, 100];

/// Stacked byte-level mutations: bit flips, byte overwrites, insertions,
/// deletions, splicing and dictionary tokens.
pub struct Havoc {
    rng: ChaCha8Rng,
    dictionary: Vec<Vec<u8>>,
}

impl Havoc {
    pub fn new(seed: u64, dictionary: Vec<Vec<u8>>) -> Self {
        Havoc {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dictionary: dictionary.into_iter().filter(|t| !t.is_empty()).collect(),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Produces a mutated copy of `base`; `other` is a splice partner.
    pub fn mutate(&mut self, base: &[u8], other: &[u8]) -> Vec<u8> {
        let mut out = base.to_vec();
        let rounds = 1usize << self.rng.gen_range(0..4);
        for _ in 0..rounds {
            self.step(&mut out, other);
        }
        out.truncate(MAX_INPUT_LEN);
        out
    }

    fn step(&mut self, buf: &mut Vec<u8>, other: &[u8]) {
        let rng = &mut self.rng;
        let choices = if self.dictionary.is_empty() { 7 } else { 8 };
        let op = if buf.is_empty() {
            2
        } else {
            rng.gen_range(0..choices)
        };
        match op {
            0 => {
                let bit = rng.gen_range(0..buf.len() * 8);
                buf[bit / 8] ^= 1 << (bit % 8);
            }
            1 => {
                let i = rng.gen_range(0..buf.len());
                buf[i] = rng.gen();
            }
            2 => {
                let at = rng.gen_range(0..=buf.len());
                let n = rng.gen_range(1..=4);
                let bytes: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
                buf.splice(at..at, bytes);
            }
            3 => {
                let at = rng.gen_range(0..buf.len());
                let n = rng.gen_range(1..=(buf.len() - at).min(4));
                buf.drain(at..at + n);
            }
            4 => {
                let i = rng.gen_range(0..buf.len());
                buf[i] = INTERESTING[rng.gen_range(0..INTERESTING.len())];
            }
            5 => {
                let i = rng.gen_range(0..buf.len());
                let delta = rng.gen_range(1..=16u8);
                buf[i] = if rng.gen() {
                    buf[i].wrapping_add(delta)
                } else {
                    buf[i].wrapping_sub(delta)
                };
            }
            6 => {
                if other.is_empty() {
                    return;
                }
                let cut = rng.gen_range(0..=buf.len());
                let from = rng.gen_range(0..other.len());
                buf.truncate(cut);
                buf.extend_from_slice(&other[from..]);
            }
            _ => {
                let token = &self.dictionary[rng.gen_range(0..self.dictionary.len())];
                let at = rng.gen_range(0..=buf.len());
                if rng.gen() {
                    buf.splice(at..at, token.iter().copied());
                } else {
                    let end = (at + token.len()).min(buf.len());
                    buf.splice(at..end, token.iter().copied());
                }
            }
        }
    }
}
