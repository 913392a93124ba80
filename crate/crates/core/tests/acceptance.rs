//! One line per acceptance criterion. Set `ACCEPTANCE_STRICT=1` to turn any
//! failure into a non-zero exit status.

use otfs_chanpred::acceptance::{criteria, run};

fn main() {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut total = 0;
    for c in criteria() {
        if !only.is_empty() && !only.iter().any(|o| c.name.contains(o.as_str())) {
            continue;
        }
        let (v, secs) = run(&c);
        total += 1;
        if !v.pass {
            failed += 1;
        }
        println!("{} {}: {} [{secs:.1} s]", if v.pass { "PASS" } else { "FAIL" }, c.name, v.detail);
    }
    println!("acceptance: {}/{total} passed", total - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
