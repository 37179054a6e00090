//! Runs the evaluation matrix on a synthetic control corpus for several
//! seeds and prints one line per seed: free-running then teacher-forced
//! BLEU-1 for the cells SS SN NS NN, followed by the gap verdicts.
//!
//! cargo run --release -p noisegate --example control_sweep -- uninformative 5 [sentences] [readers]

use noisegate::config::{ControlConfig, RunConfig};
use noisegate::data::ControlKind;
use noisegate::harness::run_matrix;

fn main() -> noisegate::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: ControlKind = args.next().as_deref().unwrap_or("informative").parse()?;
    let mut number = |default: usize| args.next().map_or(default, |s| s.parse().expect("a number"));
    let (seeds, n_sentences, readers) = (number(3), number(50), number(8));

    for seed in 0..seeds as u64 {
        let mut config = RunConfig {
            control: Some(ControlConfig {
                kind,
                n_sentences,
                readers,
                ..ControlConfig::default()
            }),
            ..RunConfig::default()
        };
        config.set_seed(seed);
        let report = run_matrix(&config.load_split()?, &config.harness, "sweep", None)?;
        let bleu1: Vec<String> = report.cells.iter().map(|c| format!("{:5.1}", c.metrics.bleu[0])).collect();
        println!(
            "seed {seed}: {} | inflation {:.2} parity {} learns {} best epochs {:?}",
            bleu1.join(" "),
            report.gap.tf_inflation,
            report.gap.parity,
            report.gap.learns_from_input,
            report.best_epochs
        );
    }
    Ok(())
}
