//! Audits every differentiable op and model family against central finite
//! differences in double precision.
//!
//! ```text
//! cargo run --release --example gradcheck -- [ops|models|all]
//! ```

use foveal::gradcheck::{run, table, Scope};

fn main() -> foveal::Result<()> {
    let scope = match std::env::args().nth(1).as_deref() {
        Some("ops") => Scope::Ops,
        Some("models") => Scope::Models,
        _ => Scope::All,
    };
    let start = std::time::Instant::now();
    let results = run(scope)?;
    print!("{}", table(&results));
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} groups, {failed} failed, {:.1}s", results.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}
