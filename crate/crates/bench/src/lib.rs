//! Inputs shared by the benchmarks.

use gred_core::vectorlib::{Embedding, EntryKind, VectorLibrary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const QUERIES: &[&str] = &[
    "Visualize BAR SELECT Fname , Dept_ID FROM employees ORDER BY Dept_ID DESC",
    "Visualize PIE SELECT JOB_ID , COUNT(JOB_ID) FROM employees GROUP BY JOB_ID",
    "Visualize LINE SELECT hire_date , AVG(salary) FROM employees BIN hire_date BY YEAR",
    "Visualize BAR SELECT JOB_ID , SUM(DEPARTMENT_ID) FROM employees WHERE first_name LIKE '%D%' OR first_name LIKE '%S%' GROUP BY JOB_ID ORDER BY SUM(DEPARTMENT_ID)",
    "Visualize BAR SELECT JOB_ID , COUNT(JOB_ID) FROM employees AS T1 JOIN departments AS T2 ON T1.DEPARTMENT_ID = T2.DEPARTMENT_ID WHERE T2.DEPARTMENT_NAME = 'Finance' GROUP BY JOB_ID",
];

pub fn random_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

/// `n` NLQ entries of dimension `dim` plus a query vector.
pub fn random_library(n: usize, dim: usize, seed: u64) -> (VectorLibrary, Embedding) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lib = VectorLibrary::new("bench", dim);
    for i in 0..n {
        lib.insert(EntryKind::Nlq, format!("e{i}"), Embedding::new("bench", random_vector(&mut rng, dim)))
            .expect("random vectors are valid");
    }
    let query = Embedding::new("bench", random_vector(&mut rng, dim));
    (lib, query)
}
