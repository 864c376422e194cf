//! Balanced random forest as the alternative action classifier.

use iis_core::classifier::{train_forest, ActionClassifier, ForestParams};
use iis_core::metrics::{confusion, report};
use iis_core::synthgen::Generator;
use iis_core::windows::split_dataset;
use iis_core::workflow::labeled_matrix;

fn main() -> iis_core::Result<()> {
    let recordings = Generator::default().recordings(50, 21);
    let split = split_dataset(&recordings, 0.2, 21)?;
    let (x, y) = labeled_matrix(&split.train)?;
    let (xt, yt) = labeled_matrix(&split.test)?;

    let params = ForestParams {
        n_estimators: 40,
        seed: 21,
        ..ForestParams::default()
    };
    let forest = train_forest(x.view(), &y, &params)?;
    let depths: Vec<usize> = forest.trees.iter().map(|t| t.depth()).collect();
    println!(
        "{} trees, depth {}..{}, {} leaves in tree 0",
        forest.trees.len(),
        depths.iter().min().unwrap(),
        depths.iter().max().unwrap(),
        forest.trees[0].n_leaves()
    );
    println!(
        "class probabilities of test frame 0: {:?}",
        forest.proba(xt.row(0).as_slice().unwrap())?
    );

    let predicted = forest.classify_rows(xt.view())?;
    let cm = confusion(&predicted, &yt)?;
    println!("{cm}\n{}", report(&cm));
    Ok(())
}
