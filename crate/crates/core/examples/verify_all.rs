//! Runs every acceptance criterion and prints one line each.

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let reports = bridgekit::verify::run_all(seed);
    for r in &reports {
        println!("{}", r.line());
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} of {} criteria passed", reports.len() - failed, reports.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
