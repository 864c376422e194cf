//! Stratified k-fold search over C, gamma and class weighting, on a
//! subsample so it finishes quickly.

use iis_core::classifier::{default_grid, grid_search, ClassWeight, Gamma, SvmParams};
use iis_core::synthgen::Generator;
use iis_core::workflow::labeled_matrix;
use ndarray::Axis;

fn main() -> iis_core::Result<()> {
    let recordings = Generator::default().recordings(20, 2);
    let (x, y) = labeled_matrix(&recordings)?;
    let rows: Vec<usize> = (0..y.len()).step_by(4).collect();
    let x = x.select(Axis(0), &rows);
    let y: Vec<_> = rows.iter().map(|&i| y[i]).collect();

    println!("default grid has {} candidates", default_grid().len());
    let grid: Vec<SvmParams> = [0.1, 1.0, 10.0]
        .into_iter()
        .flat_map(|c| {
            [ClassWeight::Balanced, ClassWeight::Uniform].map(|class_weight| SvmParams {
                c,
                gamma: Gamma::Scale,
                class_weight,
                ..SvmParams::default()
            })
        })
        .collect();
    let search = grid_search(x.view(), &y, &grid, 5, 2)?;
    print!("{}", search.to_csv());
    let best = search.best_params();
    println!(
        "best C={} gamma={} weights={}, refit on {} frames with {} support vectors",
        best.c,
        best.gamma,
        best.class_weight,
        y.len(),
        search.model.n_support()
    );
    Ok(())
}
