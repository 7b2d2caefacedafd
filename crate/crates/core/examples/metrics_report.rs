//! Metric functions and the report layout, without any training.

use uqr::data::AffectDimension;
use uqr::metrics::{
    average_ranks, pearson, r2, spearman, MethodRow, MetricReport, MetricSummary, MetricValues, TargetKind,
};

fn main() -> uqr::Result<()> {
    println!("R²       {}", r2(&[0.0, 1.0, 2.0], &[2.0, 1.0, 0.0])?);
    println!("Pearson  {}", pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])?);
    println!("ranks    {:?}", average_ranks(&[1.0, 2.0, 2.0, 3.0]));
    println!("Spearman {}", spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 8.0, 27.0, 64.0])?);

    // Three hypothetical runs of one method, summarized as mean ± SD.
    let truth = [0.1, 0.4, -0.2, 0.3, -0.5];
    let runs: Vec<MetricValues> = [0.9, 1.0, 1.1]
        .iter()
        .map(|k| {
            let pred: Vec<f64> = truth.iter().map(|t| t * k + 0.02).collect();
            MetricValues::compute(&truth, &pred)
        })
        .collect::<uqr::Result<_>>()?;
    let mut row = MethodRow::new("example");
    for dim in AffectDimension::ALL {
        row.set(dim, TargetKind::Mean, MetricSummary::from_runs(&runs));
    }
    let report = MetricReport::new(vec![row]);
    println!("{}", report.to_table());
    Ok(())
}
