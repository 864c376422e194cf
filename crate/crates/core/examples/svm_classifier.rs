//! Trains the RBF support vector classifier on per-frame features and
//! prints its held-out report.

use iis_core::classifier::{train_svm, SvmParams};
use iis_core::metrics::{confusion, report};
use iis_core::synthgen::Generator;
use iis_core::windows::split_dataset;
use iis_core::workflow::labeled_matrix;

fn main() -> iis_core::Result<()> {
    let recordings = Generator::default().recordings(50, 21);
    let split = split_dataset(&recordings, 0.2, 21)?;
    let (x, y) = labeled_matrix(&split.train)?;
    let (xt, yt) = labeled_matrix(&split.test)?;

    let model = train_svm(x.view(), &y, &SvmParams::default())?;
    println!(
        "{} training frames, {} support vectors, gamma {:.5}, class weights {:?}",
        x.nrows(),
        model.n_support(),
        model.gamma,
        model.class_weights
    );
    for pair in &model.pairs {
        println!(
            "{} vs {}: {} SVs, rho {:.4}",
            pair.pos,
            pair.neg,
            pair.sv.len(),
            pair.rho
        );
    }

    let predictions = model.predict_rows(xt.view())?;
    let first = &predictions[0];
    println!(
        "frame 0: {} votes {:?} margins {:?}",
        first.label, first.votes, first.margins
    );
    let predicted: Vec<_> = predictions.iter().map(|p| p.label).collect();
    let cm = confusion(&predicted, &yt)?;
    println!("{cm}\n{}", report(&cm));
    Ok(())
}
