//! Trains a small block recurrent forecaster, checks its gradient against
//! finite differences and reports held-out RMSE.
//!
//!     cargo run --release --example train_forecaster -- gru

use iis_core::forecaster::{forecast_rmse, gradient_check, CellKind, TrainConfig};
use iis_core::synthgen::Generator;
use iis_core::windows::{split_dataset, WindowSet, WindowSource, INPUT_LEN, OUTPUT_LEN};

fn main() -> iis_core::Result<()> {
    let cell: CellKind = std::env::args()
        .nth(1)
        .as_deref()
        .unwrap_or("tanh")
        .parse()?;
    let recordings = Generator::default().recordings(40, 5);
    let split = split_dataset(&recordings, 0.2, 5)?;
    let train = WindowSet::from_recordings(&split.train, INPUT_LEN, OUTPUT_LEN, 3)?;
    let test = WindowSet::from_recordings(&split.test, INPUT_LEN, OUTPUT_LEN, 1)?;

    let config = TrainConfig {
        epochs: 8,
        hidden: 32,
        cell,
        seed: 5,
        ..TrainConfig::default()
    };
    let model = iis_core::forecaster::train_forecaster(&train, &config)?;
    for (epoch, loss) in model.log.epoch_loss.iter().enumerate() {
        println!("epoch {epoch:>2} loss {loss:.6}");
    }
    println!(
        "{} parameters, test RMSE {:.4}",
        model.num_params(),
        forecast_rmse(&model, &test)?
    );

    let err = gradient_check(&model, test.input(0), test.target(0), 1e-6)?;
    println!("gradient check max relative error {err:.2e}");

    let forecast = model.forecast(test.input(0))?;
    println!("forecast shape {:?}", forecast.dim());
    Ok(())
}
