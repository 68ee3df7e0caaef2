//! Runs every acceptance criterion and prints one line per criterion.

use synthgen::acceptance;

fn main() {
    let results = acceptance::run_all(0);
    for r in &results {
        println!("{r}");
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria passed", acceptance::COUNT);
    if passed != acceptance::COUNT as usize {
        std::process::exit(1);
    }
}
