//! One line per acceptance criterion; exits non-zero if any fails.

use std::process::ExitCode;

fn main() -> ExitCode {
    // `cargo test` passes harness flags; a bare filter selects criteria, e.g. `-- 2 11`.
    let ids: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::env::args().any(|a| a == "--list") {
        for (id, title) in sdde_cli::suite::CRITERIA {
            println!("criterion_{id:02}_{}: test", title.replace(' ', "_"));
        }
        return ExitCode::SUCCESS;
    }
    let outcomes = sdde_cli::suite::run(&ids, None, |o| println!("{o}"));
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    println!(
        "\nacceptance: {} passed; {} failed",
        outcomes.len() - failed,
        failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
