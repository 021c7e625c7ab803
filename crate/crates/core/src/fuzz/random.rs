use rand::Rng;

use super::{Executor, Fuzzer, Havoc};

/// Blind fuzzer: every input is a havoc mutation of a randomly chosen seed.
/// Coverage is recorded for the report but never steers input choice.
pub struct RandomFuzzer;

impl Fuzzer for RandomFuzzer {
    fn name(&self) -> &'static str {
        "random"
    }

    fn campaign(&self, exec: &mut Executor, seeds: &[Vec<u8>], havoc: &mut Havoc) {
        for s in seeds {
            if exec.exhausted() {
                return;
            }
            exec.run(s);
        }
        while !exec.exhausted() {
            let i = havoc.rng().gen_range(0..seeds.len());
            let j = havoc.rng().gen_range(0..seeds.len());
            let input = havoc.mutate(&seeds[i], &seeds[j]);
            exec.run(&input);
        }
    }
}
