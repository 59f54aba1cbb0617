use seplqg::harness::complexity_report;

fn main() -> seplqg::Result<()> {
    for (n_x, n_r) in [(100, 20), (200, 20), (100, 10), (10, 20)] {
        println!("{}", complexity_report(n_x, n_r)?);
    }
    Ok(())
}
