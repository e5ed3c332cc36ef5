use super::network::ElasticNetwork;
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DiversityReport {
    /// Eval accuracy per exit, shallowest first.
    pub accuracy: Vec<f64>,
    /// `accuracy[i + 1] - accuracy[i]`.
    pub deltas: Vec<f64>,
    /// 1-based segments whose accuracy gain over the previous exit is below
    /// the floor; these are the preferred compression targets.
    pub less_critical: Vec<usize>,
}

pub fn branch_diversity_report(net: &mut ElasticNetwork, eval: &Dataset, delta_floor: f64) -> Result<DiversityReport> {
    if eval.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let accuracy = net.exit_accuracies(eval.images(), eval.labels(), 200)?;
    let deltas: Vec<f64> = accuracy.windows(2).map(|w| w[1] - w[0]).collect();
    let less_critical = deltas
        .iter()
        .enumerate()
        .filter(|(_, d)| d.abs() < delta_floor)
        .map(|(i, _)| i + 2)
        .collect();
    Ok(DiversityReport {
        accuracy,
        deltas,
        less_critical,
    })
}
