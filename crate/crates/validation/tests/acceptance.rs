use std::time::Instant;

use sqs_validation::*;

fn main() {
    let mut results = Vec::new();
    results.push(report("1", "1D exactness", c1_one_dimensional_exactness));
    results.push(report("2", "2D checkerboard mean", c2_checkerboard_mean));
    let start = Instant::now();
    let (c3, c4) = c3_c4_table1();
    let secs = start.elapsed().as_secs_f64();
    results.push(report("3", "variance ratios at contrast 3", || c3));
    results.push(report("4", "contrast trend", || c4));
    println!("         (criteria 3 and 4 share one table run of {secs:.1} s)");
    results.push(report("5", "variance decay", c5_variance_decay));
    results.push(report("6", "boundary condition ordering", c6_boundary_ordering));
    results.push(report("7", "superposition", c7_superposition));
    results.push(report("8", "perturbation expansion", c8_perturbation));
    results.push(report("9", "exact conditioning (0D)", c9_exact_mean));
    results.push(report("10", "window conditioning (0D)", c10_window_mean));
    results.push(report("11", "1/x transform (1D)", c11_composite));
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
