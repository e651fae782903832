//! CSV exports for inspecting a trained model: variable-by-variable heatmaps
//! and ground truth versus prediction per variable.

use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

fn write(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a square `N×N` matrix with variable names on both axes.
pub fn write_heatmap(path: &Path, names: &[String], m: &Tensor<f64>) -> Result<()> {
    let n = names.len();
    if m.shape() != [n, n] {
        return Err(contract(format!("heatmap {:?} for {n} variables", m.shape())));
    }
    let mut s = format!("variable,{}\n", names.join(","));
    for (i, name) in names.iter().enumerate() {
        let row: Vec<String> = m.row(i).iter().map(f64::to_string).collect();
        s.push_str(&format!("{name},{}\n", row.join(",")));
    }
    write(path, s)
}

/// Pairwise relations between variable embeddings: `E·Eᵀ` for `N×D` input.
pub fn self_relation(e: &Tensor<f64>) -> Result<Tensor<f64>> {
    e.matmul(&e.transpose()?)
}

/// One variable's truth and forecast, step by step.
pub fn write_forecast_comparison(path: &Path, truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(contract("truth and prediction lengths differ"));
    }
    let mut s = String::from("step,truth,prediction\n");
    for (k, (t, p)) in truth.iter().zip(pred).enumerate() {
        s.push_str(&format!("{},{t},{p}\n", k + 1));
    }
    write(path, s)
}

/// An `M×N` forecast with one column per variable.
pub fn write_forecast(path: &Path, names: &[String], pred: &Tensor<f64>) -> Result<()> {
    if pred.cols() != names.len() {
        return Err(contract("forecast width differs from variable count"));
    }
    let mut s = format!("step,{}\n", names.join(","));
    for r in 0..pred.rows() {
        let row: Vec<String> = pred.row(r).iter().map(f64::to_string).collect();
        s.push_str(&format!("{},{}\n", r + 1, row.join(",")));
    }
    write(path, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let names = vec!["a".to_string(), "b".to_string()];
        write_heatmap(&p, &names, &Tensor::from_f64([2, 2], &[0.25, 0.75, 1.0, 0.0]).unwrap()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "variable,a,b\na,0.25,0.75\nb,1,0\n");
    }

    #[test]
    fn relation_is_gram_matrix() {
        let e = Tensor::from_f64([2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(self_relation(&e).unwrap().data(), &[5.0, 11.0, 11.0, 25.0]);
    }
}
