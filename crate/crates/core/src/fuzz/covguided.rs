use rand::Rng;

use super::{Executor, Fuzzer, Havoc};

/// Queue-based coverage-guided fuzzer. Inputs that reach a new edge
/// (including comparison-progress pseudo-edges) join the queue, which is
/// cycled with a fixed number of havoc children per entry.
pub struct CovGuided {
    pub children_per_entry: u32,
}

impl Default for CovGuided {
    fn default() -> Self {
        CovGuided {
            children_per_entry: 64,
        }
    }
}

impl Fuzzer for CovGuided {
    fn name(&self) -> &'static str {
        "covguided"
    }

    fn campaign(&self, exec: &mut Executor, seeds: &[Vec<u8>], havoc: &mut Havoc) {
        let mut queue: Vec<Vec<u8>> = Vec::new();
        for s in seeds {
            if exec.exhausted() {
                return;
            }
            exec.run(s);
            queue.push(s.clone());
        }
        let mut cursor = 0;
        while !exec.exhausted() {
            let parent = queue[cursor].clone();
            for _ in 0..self.children_per_entry {
                if exec.exhausted() {
                    return;
                }
                let partner = havoc.rng().gen_range(0..queue.len());
                let child = havoc.mutate(&parent, &queue[partner]);
                if exec.run(&child).new_coverage {
                    queue.push(child);
                }
            }
            cursor = (cursor + 1) % queue.len();
        }
    }
}
