//! All five methods on one synthetic dataset, reported against both the
//! empirical targets and the true mean and SD.
//!
//! ```text
//! cargo run --release --example full_benchmark -- [runs] [max_epochs]
//! ```

use std::collections::BTreeMap;

use uqr::{generate, run_benchmark, AffectDimension, BenchmarkConfig, Method, RatingScale, SynthConfig, TrainConfig};

fn main() -> uqr::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let runs = args.next().flatten().unwrap_or(3);
    let max_epochs = args.next().flatten().unwrap_or(30);

    let synth = generate(
        &SynthConfig {
            quantize: false,
            ..SynthConfig::default()
        },
        &RatingScale::likert9(),
    )?;
    let config = BenchmarkConfig {
        runs,
        train: TrainConfig {
            max_epochs,
            ..TrainConfig::default()
        },
        ..BenchmarkConfig::default()
    };
    for method in Method::ALL {
        let p = method.protocol();
        println!(
            "{method:<10} trains {:<13} multiple trainings: {:<5} multiple inferences: {}",
            p.loss.name(),
            p.multiple_training_runs,
            p.multiple_inference_runs
        );
    }
    let bench = run_benchmark(&synth.dataset, &Method::ALL, &AffectDimension::ALL, &config)?;
    println!(
        "\nagainst empirical targets\n{}",
        bench.report(&synth.dataset)?.to_table()
    );

    let truth: BTreeMap<_, _> = AffectDimension::ALL
        .iter()
        .map(|&dim| {
            let table = synth
                .oracle
                .iter()
                .map(|(id, o)| (id.clone(), o.dimension(dim)))
                .collect();
            (dim, table)
        })
        .collect();
    println!("against true mean and SD\n{}", bench.oracle_report(&truth)?.to_table());
    Ok(())
}
