//! Criterion benchmarks for the interpreter, the mutation finder and the
//! supermutant scheduler live in `benches/`.
