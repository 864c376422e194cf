//! Saves and reloads models in the binary container format and shows that
//! a dimension mismatch is refused at load time.

use iis_core::classifier::{train_svm, ActionModel, SvmParams};
use iis_core::forecaster::{Architecture, CellKind, ForecastModel};
use iis_core::model_io::{
    load_action_model, load_forecaster, load_model, save_action_model, save_forecaster, SavedModel,
};
use iis_core::synthgen::Generator;
use iis_core::workflow::labeled_matrix;

fn main() -> iis_core::Result<()> {
    let dir = std::env::temp_dir().join("iis-model-files");
    std::fs::create_dir_all(&dir)?;

    let arch = Architecture {
        dim: 1682,
        hidden: 24,
        layers: 2,
        cell: CellKind::Gru,
        input_len: 10,
        output_len: 5,
    };
    let forecaster = ForecastModel::init(arch, 1)?;
    let path = dir.join("forecaster.iism");
    save_forecaster(&path, &forecaster)?;
    let back = load_forecaster(&path, Some(1682))?;
    println!(
        "forecaster: {} bytes, {} params, identical {}",
        std::fs::metadata(&path)?.len(),
        back.num_params(),
        back.params == forecaster.params
    );

    let recordings = Generator::default().recordings(10, 1);
    let (x, y) = labeled_matrix(&recordings)?;
    let svm = train_svm(x.view(), &y, &SvmParams::default())?;
    let path = dir.join("classifier.iism");
    save_action_model(&path, &ActionModel::Svm(svm))?;
    match load_model(&path, None)? {
        SavedModel::Action(m) => println!(
            "classifier kind {} dim {}",
            m.kind(),
            iis_core::classifier::ActionClassifier::dim(&m)
        ),
        SavedModel::Forecaster(_) => unreachable!(),
    }
    match load_action_model(&path, Some(99)) {
        Err(e) => println!("expected refusal: {e}"),
        Ok(_) => println!("unexpectedly loaded"),
    }
    Ok(())
}
